//! Training objectives and their exact gradients.
//!
//! All reductions are means over pixels and both flow components, so magnitudes do not
//! depend on resolution. Every `*_grad` function returns the loss value together with
//! its gradient w.r.t. the predictions.

use ndarray::{Array3, Array4, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flow_to_seg, make_weight_mask, sobel, sobel_adjoint, FlowMap, SegMask, WeightMask};
use crate::msunet::SegLogits;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the Sobel (gradient) flow term, in both supervised and consistency losses.
    pub lambda1: f64,
    /// Weight of the segmentation cross-entropy in the supervised loss.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and >= 0, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Which consistency terms of the unsupervised loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnsupervisedTerms {
    pub rc: bool,
    pub drc: bool,
}

impl Default for UnsupervisedTerms {
    fn default() -> Self {
        Self { rc: true, drc: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SupervisedLoss {
    pub total: f64,
    pub m1: f64,
    pub ms: f64,
    pub ce: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UnsupervisedLoss {
    pub total: f64,
    pub rc_m1: f64,
    pub rc_ms: f64,
    pub drc1: f64,
    pub drc2: f64,
}

fn check_flows(a: &FlowMap, b: &FlowMap) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return Err(Error::shape(
            format!("{:?}", a.data().dim()),
            format!("{:?}", b.data().dim()),
        ));
    }
    Ok(())
}

fn check_mask(f: &FlowMap, m: &WeightMask) -> Result<()> {
    if m.dim() != (f.height(), f.width()) {
        return Err(Error::shape(
            format!("mask {}×{}", f.height(), f.width()),
            format!("{:?}", m.dim()),
        ));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_m1(pred: &FlowMap, reference: &FlowMap, mask: &WeightMask) -> Result<f64> {
    loss_m1_grad(pred, reference, mask).map(|(l, _)| l)
}

/// Mask-weighted mean absolute flow error.
pub fn loss_m1_grad(pred: &FlowMap, reference: &FlowMap, mask: &WeightMask) -> Result<(f64, Array3<f64>)> {
    check_flows(pred, reference)?;
    check_mask(pred, mask)?;
    let n = pred.data().len() as f64;
    let m = mask.data();
    let mut grad = Array3::zeros(pred.data().dim());
    let mut sum = 0.0;
    Zip::indexed(&mut grad)
        .and(pred.data())
        .and(reference.data())
        .for_each(|(_, i, j), g, &p, &r| {
            let d = p - r;
            sum += d.abs() * m[[i, j]];
            *g = sign(d) * m[[i, j]] / n;
        });
    Ok((sum / n, grad))
}

pub fn loss_ms(pred: &FlowMap, reference: &FlowMap, mask: &WeightMask) -> Result<f64> {
    loss_ms_grad(pred, reference, mask).map(|(l, _)| l)
}

/// Mask-weighted mean absolute difference of horizontal and vertical Sobel responses.
pub fn loss_ms_grad(pred: &FlowMap, reference: &FlowMap, mask: &WeightMask) -> Result<(f64, Array3<f64>)> {
    check_flows(pred, reference)?;
    check_mask(pred, mask)?;
    // Sobel is linear, so the response difference is the response of the difference.
    let diff = pred.data() - reference.data();
    let (gx, gy) = sobel(diff.view())?;
    let n = diff.len() as f64;
    let m = mask.data();
    let mut sum = 0.0;
    let mut ux = Array3::zeros(diff.dim());
    let mut uy = Array3::zeros(diff.dim());
    Zip::indexed(&mut ux)
        .and(&mut uy)
        .and(&gx)
        .and(&gy)
        .for_each(|(_, i, j), ux, uy, &x, &y| {
            let w = m[[i, j]];
            sum += (x.abs() + y.abs()) * w;
            *ux = sign(x) * w / n;
            *uy = sign(y) * w / n;
        });
    Ok((sum / n, sobel_adjoint(ux.view(), uy.view())?))
}

pub fn loss_ce(logits: &SegLogits, target: &SegMask) -> Result<f64> {
    loss_ce_grad(logits, target).map(|(l, _)| l)
}

/// Mean categorical cross-entropy over pixels and both component groups.
pub fn loss_ce_grad(logits: &SegLogits, target: &SegMask) -> Result<(f64, Array4<f64>)> {
    let (h, w) = (logits.height(), logits.width());
    if target.data().dim() != (2, h, w) {
        return Err(Error::shape(
            format!("target 2×{h}×{w}"),
            format!("{:?}", target.data().dim()),
        ));
    }
    let l = logits.data();
    let t = target.data();
    let n = (2 * h * w) as f64;
    let mut grad = Array4::zeros(l.dim());
    let mut sum = 0.0;
    for g in 0..2 {
        for i in 0..h {
            for j in 0..w {
                let cls = t[[g, i, j]] as usize;
                if cls > 2 {
                    return Err(Error::InvalidInput(format!("target class {cls} outside 0..3")));
                }
                let z = [l[[g, 0, i, j]], l[[g, 1, i, j]], l[[g, 2, i, j]]];
                let mx = z[0].max(z[1]).max(z[2]);
                let e = z.map(|v| (v - mx).exp());
                let s: f64 = e.iter().sum();
                sum += s.ln() + mx - z[cls];
                for c in 0..3 {
                    let onehot = if c == cls { 1.0 } else { 0.0 };
                    grad[[g, c, i, j]] = (e[c] / s - onehot) / n;
                }
            }
        }
    }
    Ok((sum / n, grad))
}

/// `L_m1 + λ₁·L_ms + λ₂·L_ce` with targets derived from the ground-truth flow.
pub fn loss_supervised(
    pred: &FlowMap,
    logits: &SegLogits,
    gt: &FlowMap,
    face_mask: ArrayView2<u8>,
    weights: &LossWeights,
    delta: f64,
) -> Result<SupervisedLoss> {
    loss_supervised_grad(pred, logits, gt, face_mask, weights, delta).map(|(l, _, _)| l)
}

pub fn loss_supervised_grad(
    pred: &FlowMap,
    logits: &SegLogits,
    gt: &FlowMap,
    face_mask: ArrayView2<u8>,
    weights: &LossWeights,
    delta: f64,
) -> Result<(SupervisedLoss, Array3<f64>, Array4<f64>)> {
    weights.validate()?;
    let mask = make_weight_mask(face_mask, crate::geometry::DEFAULT_W_FACE, crate::geometry::DEFAULT_W_BG)?;
    let target = flow_to_seg(gt, delta)?;
    let (m1, g_m1) = loss_m1_grad(pred, gt, &mask)?;
    let (ms, g_ms) = loss_ms_grad(pred, gt, &mask)?;
    let (ce, g_ce) = loss_ce_grad(logits, &target)?;
    let total = m1 + weights.lambda1 * ms + weights.lambda2 * ce;
    let d_flow = g_m1 + &(g_ms * weights.lambda1);
    let d_logits = g_ce * weights.lambda2;
    Ok((SupervisedLoss { total, m1, ms, ce }, d_flow, d_logits))
}

/// Regression consistency between the two branches plus each branch's
/// direction-and-range consistency against its own thresholded flow.
pub fn loss_unsupervised(
    flows: [&FlowMap; 2],
    logits: [&SegLogits; 2],
    weights: &LossWeights,
    delta: f64,
) -> Result<UnsupervisedLoss> {
    loss_unsupervised_grad(flows, logits, weights, delta, UnsupervisedTerms::default()).map(|r| r.0)
}

/// Gradients w.r.t. both flows and both logit maps. Pseudo-labels are constants, so the
/// DRC terms contribute nothing to the flow gradients.
#[allow(clippy::type_complexity)]
pub fn loss_unsupervised_grad(
    flows: [&FlowMap; 2],
    logits: [&SegLogits; 2],
    weights: &LossWeights,
    delta: f64,
    terms: UnsupervisedTerms,
) -> Result<(UnsupervisedLoss, [Array3<f64>; 2], [Array4<f64>; 2])> {
    weights.validate()?;
    check_flows(flows[0], flows[1])?;
    let (h, w) = (flows[0].height(), flows[0].width());
    let mut out = UnsupervisedLoss::default();
    let mut d_flows = [Array3::zeros((2, h, w)), Array3::zeros((2, h, w))];
    let mut d_logits = [Array4::zeros((2, 3, h, w)), Array4::zeros((2, 3, h, w))];
    if terms.rc {
        let ones = WeightMask::uniform(h, w, 1.0)?;
        let (m1, g_m1) = loss_m1_grad(flows[0], flows[1], &ones)?;
        let (ms, g_ms) = loss_ms_grad(flows[0], flows[1], &ones)?;
        out.rc_m1 = m1;
        out.rc_ms = ms;
        // The residual is F1 − F2, so the second branch sees the negated gradient.
        let g = g_m1 + &(g_ms * weights.lambda1);
        d_flows[1] = -&g;
        d_flows[0] = g;
    }
    if terms.drc {
        for b in 0..2 {
            let pseudo = flow_to_seg(flows[b], delta)?;
            let (ce, g) = loss_ce_grad(logits[b], &pseudo)?;
            if b == 0 {
                out.drc1 = ce;
            } else {
                out.drc2 = ce;
            }
            d_logits[b] = g;
        }
    }
    out.total = out.rc_m1 + weights.lambda1 * out.rc_ms + out.drc1 + out.drc2;
    Ok((out, d_flows, d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> FlowMap {
        FlowMap::new(Array3::from_shape_fn((2, h, w), |_| rng.random_range(-scale..scale))).unwrap()
    }

    fn rand_logits(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SegLogits {
        SegLogits::new(Array4::from_shape_fn((2, 3, h, w), |_| rng.random_range(-2.0..2.0))).unwrap()
    }

    fn peaked(mask: &SegMask, margin: f64) -> SegLogits {
        let d = mask.data();
        let (_, h, w) = d.dim();
        SegLogits::new(Array4::from_shape_fn((2, 3, h, w), |(g, c, i, j)| {
            if d[[g, i, j]] as usize == c {
                margin
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn m1_hand_values() {
        let ones = WeightMask::uniform(4, 5, 1.0).unwrap();
        let a = FlowMap::zeros(4, 5);
        let b = FlowMap::constant(4, 5, 2.0, -2.0);
        assert_eq!(loss_m1(&a, &a, &ones).unwrap(), 0.0);
        assert_eq!(loss_m1(&a, &b, &ones).unwrap(), 2.0);
        let twos = WeightMask::uniform(4, 5, 2.0).unwrap();
        assert_eq!(loss_m1(&a, &b, &twos).unwrap(), 4.0);
    }

    #[test]
    fn ms_ignores_constant_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = rand_flow(&mut rng, 5, 6, 3.0);
        let g = FlowMap::new(f.data() + 4.5).unwrap();
        let ones = WeightMask::uniform(5, 6, 1.0).unwrap();
        assert!(loss_ms(&f, &g, &ones).unwrap() < 1e-12);
    }

    #[test]
    fn ms_ramp_matches_hand_convolution() {
        // x-channel ramp f = j on a 4×4 grid, y-channel flat.
        let f = FlowMap::new(Array3::from_shape_fn((2, 4, 4), |(c, _, j)| if c == 0 { j as f64 } else { 0.0 }))
            .unwrap();
        let ones = WeightMask::uniform(4, 4, 1.0).unwrap();
        // Gx per row: borders 4, interior 8 → row sum 4+8+8+4 = 24; Gy = 0.
        let expected = (4.0 * 24.0) / 32.0;
        assert!((loss_ms(&f, &FlowMap::zeros(4, 4), &ones).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ce_closed_forms() {
        let target = SegMask::new(Array3::from_elem((2, 3, 3), 1u8)).unwrap();
        let zero = SegLogits::new(Array4::zeros((2, 3, 3, 3))).unwrap();
        assert!((loss_ce(&zero, &target).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(loss_ce(&peaked(&target, 20.0), &target).unwrap() < 1e-8);
    }

    #[test]
    fn supervised_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, gt) = (rand_flow(&mut rng, 6, 5, 8.0), rand_flow(&mut rng, 6, 5, 8.0));
        let logits = rand_logits(&mut rng, 6, 5);
        let face = Array2::from_shape_fn((6, 5), |(i, _)| (i < 3) as u8);
        let w = LossWeights::default();
        let l = loss_supervised(&p, &logits, &gt, face.view(), &w, 5.0).unwrap();
        let m = make_weight_mask(face.view(), 3.0, 1.0).unwrap();
        let s = flow_to_seg(&gt, 5.0).unwrap();
        let recomposed = loss_m1(&p, &gt, &m).unwrap()
            + 10.0 * loss_ms(&p, &gt, &m).unwrap()
            + 10.0 * loss_ce(&logits, &s).unwrap();
        assert!((l.total - recomposed).abs() <= 1e-10 * recomposed.abs());
        let only_m1 = LossWeights { lambda1: 0.0, lambda2: 0.0 };
        let l0 = loss_supervised(&p, &logits, &gt, face.view(), &only_m1, 5.0).unwrap();
        assert_eq!(l0.total, loss_m1(&p, &gt, &m).unwrap());
    }

    #[test]
    fn perfect_supervised_prediction_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = rand_flow(&mut rng, 4, 4, 8.0);
        let logits = peaked(&flow_to_seg(&gt, 5.0).unwrap(), 40.0);
        let l = loss_supervised(&gt, &logits, &gt, Array2::zeros((4, 4)).view(), &LossWeights::default(), 5.0)
            .unwrap();
        assert!(l.total < 1e-15);
    }

    #[test]
    fn unsupervised_symmetry_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (f1, f2) = (rand_flow(&mut rng, 5, 5, 8.0), rand_flow(&mut rng, 5, 5, 8.0));
        let (l1, l2) = (rand_logits(&mut rng, 5, 5), rand_logits(&mut rng, 5, 5));
        let w = LossWeights::default();
        let a = loss_unsupervised([&f1, &f2], [&l1, &l2], &w, 5.0).unwrap();
        let b = loss_unsupervised([&f2, &f1], [&l2, &l1], &w, 5.0).unwrap();
        assert_eq!(a.rc_m1, b.rc_m1);
        assert!((a.rc_ms - b.rc_ms).abs() < 1e-15);
        let p = peaked(&flow_to_seg(&f1, 5.0).unwrap(), 40.0);
        let z = loss_unsupervised([&f1, &f1], [&p, &p], &w, 5.0).unwrap();
        assert!(z.total < 1e-15);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let ones = WeightMask::uniform(4, 4, 1.0).unwrap();
        assert!(loss_m1(&FlowMap::zeros(4, 4), &FlowMap::zeros(4, 5), &ones).is_err());
        assert!(loss_m1(&FlowMap::zeros(4, 5), &FlowMap::zeros(4, 5), &ones).is_err());
    }
}
