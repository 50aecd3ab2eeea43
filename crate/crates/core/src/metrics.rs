//! Line straightness (LineAcc), face shape fidelity (ShapeAcc) and end-point error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{invert_flow_at_points, FlowMap, InvertOptions};
use crate::msunet::{forward, ModelConfig, ModelWeights};
use crate::synth::Sample;

/// Minimum horizontal extent of a segment before its slope is considered undefined.
pub const MIN_DX: f64 = 1e-6;

/// Fixed-point settings used when mapping annotations into corrected coordinates.
pub const EVAL_INVERT: InvertOptions = InvertOptions {
    max_iters: 200,
    tol: 1e-10,
};

/// 100 × (1 − mean |segment slope − reference slope|). Point sets whose reference is
/// steeper than 45° are rotated by 90° first so slopes stay bounded.
pub fn line_acc(points: &[(f64, f64)], reference: ((f64, f64), (f64, f64))) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!("line needs >= 3 points, got {}", points.len())));
    }
    let (g0, g1) = reference;
    let (rdx, rdy) = (g1.0 - g0.0, g1.1 - g0.1);
    if rdx.abs() < MIN_DX && rdy.abs() < MIN_DX {
        return Err(Error::InvalidInput("reference endpoints coincide".into()));
    }
    let steep = rdy.abs() > rdx.abs();
    // (x, y) ↦ (y, −x) maps slope s to −1/s.
    let rot = |(x, y): (f64, f64)| if steep { (y, -x) } else { (x, y) };
    let (a, b) = (rot(g0), rot(g1));
    let ref_slope = (b.1 - a.1) / (b.0 - a.0);
    let mut sum = 0.0;
    for pair in points.windows(2) {
        let (p, q) = (rot(pair[0]), rot(pair[1]));
        let dx = q.0 - p.0;
        if dx.abs() < MIN_DX {
            return Err(Error::InvalidInput(format!(
                "degenerate segment from ({:.3}, {:.3}) to ({:.3}, {:.3})",
                pair[0].0, pair[0].1, pair[1].0, pair[1].1
            )));
        }
        sum += ((q.1 - p.1) / dx - ref_slope).abs();
    }
    Ok(100.0 * (1.0 - sum / (points.len() - 1) as f64))
}

fn normalized(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let centered: Vec<(f64, f64)> = points.iter().map(|p| (p.0 - cx, p.1 - cy)).collect();
    let ms = centered.iter().map(|v| v.0 * v.0 + v.1 * v.1).sum::<f64>() / n;
    if !(ms > 1e-18) {
        return Err(Error::InvalidInput("landmarks are all coincident".into()));
    }
    let s = ms.sqrt();
    Ok(centered.into_iter().map(|v| (v.0 / s, v.1 / s)).collect())
}

/// 100 × mean dot product of corresponding landmark vectors, after centering each set
/// on its centroid and scaling it to unit mean squared norm.
pub fn shape_acc(corrected: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<f64> {
    if corrected.len() != reference.len() {
        return Err(Error::shape(
            format!("{} landmarks", reference.len()),
            corrected.len().to_string(),
        ));
    }
    if corrected.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "face needs >= 3 landmarks, got {}",
            corrected.len()
        )));
    }
    let d = normalized(corrected)?;
    let g = normalized(reference)?;
    let dot: f64 = d.iter().zip(&g).map(|(a, b)| a.0 * b.0 + a.1 * b.1).sum();
    Ok(100.0 * dot / d.len() as f64)
}

/// Mean Euclidean distance between predicted and ground-truth flow vectors.
pub fn epe(pred: &FlowMap, gt: &FlowMap) -> Result<f64> {
    if pred.data().dim() != gt.data().dim() {
        return Err(Error::shape(
            format!("{:?}", gt.data().dim()),
            format!("{:?}", pred.data().dim()),
        ));
    }
    let (_, h, w) = pred.data().dim();
    let (p, g) = (pred.data(), gt.data());
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            let dx = p[[0, i, j]] - g[[0, i, j]];
            let dy = p[[1, i, j]] - g[[1, i, j]];
            sum += (dx * dx + dy * dy).sqrt();
        }
    }
    Ok(sum / (h * w) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub lineacc: Option<f64>,
    pub shapeacc: Option<f64>,
    pub epe: Option<f64>,
    pub lines: usize,
    pub faces: usize,
    pub skipped: usize,
    pub unconverged_points: usize,
}

/// Dataset-level metrics: LineAcc and ShapeAcc average over every evaluated line and
/// face, EPE over every sample with ground truth. `None` when nothing was measurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub lineacc: Option<f64>,
    pub shapeacc: Option<f64>,
    pub epe: Option<f64>,
    pub num_samples: usize,
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("id,lineacc,shapeacc,epe,lines,faces,skipped\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.id,
                fmt(s.lineacc),
                fmt(s.shapeacc),
                fmt(s.epe),
                s.lines,
                s.faces,
                s.skipped
            ));
        }
        out
    }
}

struct SampleScores {
    metrics: SampleMetrics,
    line_scores: Vec<f64>,
    face_scores: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn score_sample(sample: &Sample, flow: &FlowMap) -> Result<SampleScores> {
    let mut line_scores = Vec::new();
    let mut face_scores = Vec::new();
    let mut skipped = 0;
    let mut unconverged = 0;
    let mut correct = |pts: &[(f64, f64)]| -> Result<Vec<(f64, f64)>> {
        let inv = invert_flow_at_points(flow, pts, EVAL_INVERT)?;
        unconverged += inv.iter().filter(|p| !p.converged).count();
        Ok(inv.iter().map(|p| (p.x, p.y)).collect())
    };
    match &sample.annotations {
        Some(anno) => {
            for line in &anno.lines {
                let scored = correct(&line.distorted).and_then(|pts| {
                    let g = (line.reference[0], line.reference[line.reference.len().max(1) - 1]);
                    line_acc(&pts, g)
                });
                match scored {
                    Ok(v) => line_scores.push(v),
                    Err(e) => {
                        log::warn!("sample {}: skipping line: {e}", sample.id);
                        skipped += 1;
                    }
                }
            }
            for face in &anno.faces {
                match correct(&face.distorted).and_then(|pts| shape_acc(&pts, &face.reference)) {
                    Ok(v) => face_scores.push(v),
                    Err(e) => {
                        log::warn!("sample {}: skipping face: {e}", sample.id);
                        skipped += 1;
                    }
                }
            }
        }
        None => log::warn!("sample {} has no annotations; line and shape metrics skipped", sample.id),
    }
    let epe = sample.flow_gt.as_ref().map(|gt| epe(flow, gt)).transpose()?;
    Ok(SampleScores {
        metrics: SampleMetrics {
            id: sample.id.clone(),
            lineacc: mean(&line_scores),
            shapeacc: mean(&face_scores),
            epe,
            lines: line_scores.len(),
            faces: face_scores.len(),
            skipped,
            unconverged_points: unconverged,
        },
        line_scores,
        face_scores,
    })
}

/// Scores given flows against the samples' annotations and ground truth.
pub fn evaluate_flows(samples: &[Sample], flows: &[FlowMap]) -> Result<MetricReport> {
    if samples.len() != flows.len() {
        return Err(Error::shape(
            format!("{} flows", samples.len()),
            flows.len().to_string(),
        ));
    }
    let scored: Vec<SampleScores> = samples
        .iter()
        .zip(flows)
        .map(|(s, f)| score_sample(s, f))
        .collect::<Result<_>>()?;
    // Reducing in id order makes the aggregates independent of sample order.
    let mut order: Vec<&SampleScores> = scored.iter().collect();
    order.sort_by(|a, b| a.metrics.id.cmp(&b.metrics.id));
    let lines: Vec<f64> = order.iter().flat_map(|s| s.line_scores.iter().copied()).collect();
    let faces: Vec<f64> = order.iter().flat_map(|s| s.face_scores.iter().copied()).collect();
    let epes: Vec<f64> = order.iter().filter_map(|s| s.metrics.epe).collect();
    Ok(MetricReport {
        lineacc: mean(&lines),
        shapeacc: mean(&faces),
        epe: mean(&epes),
        num_samples: samples.len(),
        samples: scored.into_iter().map(|s| s.metrics).collect(),
    })
}

/// Flow predictions for `samples`, computed `batch_size` images at a time.
pub fn predict_flows(
    samples: &[Sample],
    weights: &ModelWeights,
    config: &ModelConfig,
    batch_size: usize,
) -> Result<Vec<FlowMap>> {
    let mut flows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<_> = chunk.iter().map(|s| s.distorted.clone()).collect();
        flows.extend(forward(weights, config, &images)?.flows);
    }
    Ok(flows)
}

/// Predicts a flow for every sample with the network and scores it.
pub fn evaluate_dataset(samples: &[Sample], weights: &ModelWeights, config: &ModelConfig) -> Result<MetricReport> {
    let flows = predict_flows(samples, weights, config, 8)?;
    evaluate_flows(samples, &flows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, GenOptions};
    use proptest::prelude::*;

    #[test]
    fn line_acc_hand_values() {
        let on_line: Vec<_> = (0..5).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        // steep reference: rotated frame
        assert!((line_acc(&on_line, ((0.0, 1.0), (4.0, 9.0))).unwrap() - 100.0).abs() < 1e-12);
        let pts = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.2)];
        assert!((line_acc(&pts, ((0.0, 0.0), (2.0, 0.0))).unwrap() - 90.0).abs() < 1e-12);
        let rev: Vec<_> = pts.iter().rev().copied().collect();
        assert!((line_acc(&rev, ((2.0, 0.0), (0.0, 0.0))).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn line_acc_rejects_degenerate_input() {
        assert!(line_acc(&[(0.0, 0.0), (1.0, 0.0)], ((0.0, 0.0), (1.0, 0.0))).is_err());
        assert!(line_acc(&[(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)], ((0.0, 0.0), (1.0, 0.0))).is_err());
        assert!(line_acc(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], ((1.0, 1.0), (1.0, 1.0))).is_err());
    }

    #[test]
    fn shape_acc_hand_values() {
        let pts: Vec<_> = (0..8)
            .map(|k| {
                let a = k as f64 * 0.7;
                (3.0 * a.cos() + 0.3 * k as f64, 2.0 * a.sin())
            })
            .collect();
        assert!((shape_acc(&pts, &pts).unwrap() - 100.0).abs() < 1e-12);
        let rotated: Vec<_> = pts.iter().map(|&(x, y)| (-y, x)).collect();
        assert!(shape_acc(&rotated, &pts).unwrap().abs() < 1e-12);
        assert!(shape_acc(&[(1.0, 1.0); 4], &pts[..4]).is_err());
    }

    #[test]
    fn shape_acc_matches_dot_product_oracle() {
        let reference: Vec<(f64, f64)> = (0..16).map(|k| ((k as f64).cos() * 6.0, (k as f64 * 1.3).sin() * 5.0)).collect();
        let corrected: Vec<(f64, f64)> = reference
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| (x + 0.5 * (k as f64 * 0.9).sin(), y + 0.5 * (k as f64 * 0.4).cos()))
            .collect();
        // Independent arithmetic, written out long-hand.
        let norm = |v: &[(f64, f64)]| -> Vec<(f64, f64)> {
            let (mut sx, mut sy) = (0.0, 0.0);
            for p in v {
                sx += p.0;
                sy += p.1;
            }
            let (mx, my) = (sx / 16.0, sy / 16.0);
            let mut ss = 0.0;
            for p in v {
                ss += (p.0 - mx) * (p.0 - mx) + (p.1 - my) * (p.1 - my);
            }
            let scale = (ss / 16.0).sqrt();
            v.iter().map(|p| ((p.0 - mx) / scale, (p.1 - my) / scale)).collect()
        };
        let (a, b) = (norm(&corrected), norm(&reference));
        let mut fc = 0.0;
        for k in 0..16 {
            let la = (a[k].0 * a[k].0 + a[k].1 * a[k].1).sqrt();
            let lb = (b[k].0 * b[k].0 + b[k].1 * b[k].1).sqrt();
            let cos = (a[k].0 * b[k].0 + a[k].1 * b[k].1) / (la * lb);
            fc += la * lb * cos;
        }
        let expected = 100.0 * fc / 16.0;
        assert!((shape_acc(&corrected, &reference).unwrap() - expected).abs() < 1e-10);
        assert!(expected < 100.0);
    }

    #[test]
    fn ground_truth_flow_scores_perfectly_and_zero_flow_does_not() {
        let samples = generate_dataset(4, 1.0, 21, &GenOptions::new(64, 48)).unwrap();
        let gt: Vec<FlowMap> = samples.iter().map(|s| s.flow_gt.clone().unwrap()).collect();
        let r = evaluate_flows(&samples, &gt).unwrap();
        assert!((r.lineacc.unwrap() - 100.0).abs() < 1e-4);
        assert!((r.shapeacc.unwrap() - 100.0).abs() < 1e-4);
        assert_eq!(r.epe.unwrap(), 0.0);
        let zero: Vec<FlowMap> = samples.iter().map(|_| FlowMap::zeros(64, 48)).collect();
        let z = evaluate_flows(&samples, &zero).unwrap();
        assert!(z.lineacc.unwrap() < r.lineacc.unwrap());
        assert!(z.shapeacc.unwrap() < r.shapeacc.unwrap());
        let one = evaluate_flows(&samples[..1], &gt[..1]).unwrap();
        assert_eq!(one.lineacc, one.samples[0].lineacc);
    }

    proptest! {
        #[test]
        fn metrics_are_translation_invariant(tx in -20.0f64..20.0, ty in -20.0f64..20.0, s in 0.2f64..5.0) {
            let line: Vec<_> = (0..6).map(|i| (i as f64, 0.1 * (i * i) as f64)).collect();
            let g = ((0.0, 0.0), (5.0, 0.5));
            let moved: Vec<_> = line.iter().map(|&(x, y)| (x + tx, y + ty)).collect();
            let gm = ((g.0 .0 + tx, g.0 .1 + ty), (g.1 .0 + tx, g.1 .1 + ty));
            prop_assert!((line_acc(&line, g).unwrap() - line_acc(&moved, gm).unwrap()).abs() < 1e-9);
            let face: Vec<_> = (0..7).map(|k| ((k as f64).cos() * 4.0, (k as f64).sin() * 3.0 + 0.2 * k as f64)).collect();
            let other: Vec<_> = face.iter().map(|&(x, y)| (x * 1.1, y)).collect();
            let moved_scaled: Vec<_> = other.iter().map(|&(x, y)| (s * x + tx, s * y + ty)).collect();
            prop_assert!((shape_acc(&other, &face).unwrap() - shape_acc(&moved_scaled, &face).unwrap()).abs() < 1e-9);
            prop_assert!(shape_acc(&other, &face).unwrap() <= 100.0 + 1e-9);
        }
    }
}
