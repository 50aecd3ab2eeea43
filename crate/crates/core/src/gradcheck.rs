//! Finite-difference verification of every analytic backward pass.
//!
//! Each check builds a small random problem, contracts the op output with a fixed random
//! tensor to get a scalar, and compares analytic gradients against central differences.

use ndarray::{Array2, Array3, Array4, ArrayD, IxDyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{flow_to_seg, make_weight_mask, sobel, FlowMap, Image};
use crate::losses::{
    loss_ce_grad, loss_m1_grad, loss_ms_grad, loss_supervised_grad, loss_unsupervised_grad,
    LossWeights, UnsupervisedTerms,
};
use crate::msunet::block::{mstb_backward, mstb_forward};
use crate::msunet::layers::{
    dcm_backward, dcm_forward, patch_embed_backward, patch_embed_forward, patch_expand_backward,
    patch_expand_forward, patch_merge_backward, patch_merge_forward, sfb_backward, sfb_forward,
    window_attention, window_attention_backward,
};
use crate::msunet::weights::{push_block, push_dcm, push_linear};
use crate::msunet::{
    backward, forward_with_tape, BlockPlan, FeatureMap, InitKind, ModelConfig, ModelWeights,
    ParamSpec, SegLogits,
};

pub const EPSILON: f64 = 1e-3;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const ABS_FLOOR: f64 = 1e-6;

/// Names accepted by [`run`].
pub const MODULES: &[&str] = &[
    "dcm",
    "msa",
    "mstb_pair",
    "sfb",
    "patch_embed",
    "patch_merge",
    "patch_expand",
    "model",
    "loss_m1",
    "loss_ms",
    "loss_ce",
    "loss_supervised",
    "loss_unsupervised",
];

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub module: String,
    pub max_rel_error: f64,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Running maximum of relative errors.
#[derive(Default)]
struct Tally {
    max: f64,
    count: usize,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        // NaN must never pass silently.
        self.max = if e.is_nan() { f64::INFINITY } else { self.max.max(e) };
        self.count += 1;
    }

    fn finish(self, module: &str, tolerance: f64) -> GradCheckResult {
        GradCheckResult {
            module: module.to_string(),
            max_rel_error: self.max,
            entries_checked: self.count,
            tolerance,
        }
    }
}

fn central<F: FnMut(f64) -> f64>(mut f: F) -> f64 {
    (f(EPSILON) - f(-EPSILON)) / (2.0 * EPSILON)
}

/// Indices to probe: all of them when few, otherwise a seeded sample of `limit`.
fn probe_indices(rng: &mut ChaCha8Rng, len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, limit).into_vec();
        v.sort_unstable();
        v
    }
}

/// Checks `grad` against central differences of `loss` around `x`.
fn check_array<F>(tally: &mut Tally, rng: &mut ChaCha8Rng, x: &ArrayD<f64>, grad: &ArrayD<f64>, limit: usize, mut loss: F)
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    assert_eq!(x.shape(), grad.shape());
    let x = x.as_standard_layout().into_owned();
    let flat_grad: Vec<f64> = grad.iter().copied().collect();
    for idx in probe_indices(rng, x.len(), limit) {
        let base = x.as_slice().unwrap()[idx];
        let mut probe = x.clone();
        let numeric = central(|d| {
            probe.as_slice_mut().unwrap()[idx] = base + d;
            loss(&probe)
        });
        tally.add(flat_grad[idx], numeric);
    }
}

/// Checks sampled entries of every parameter tensor.
fn check_params<F>(tally: &mut Tally, rng: &mut ChaCha8Rng, w: &ModelWeights, grads: &ModelWeights, per_tensor: usize, mut loss: F)
where
    F: FnMut(&ModelWeights) -> f64,
{
    let names: Vec<String> = w.names().cloned().collect();
    for name in names {
        let t = w.get(&name);
        let g: Vec<f64> = grads.get(&name).iter().copied().collect();
        let base: Vec<f64> = t.iter().copied().collect();
        for idx in probe_indices(rng, t.len(), per_tensor) {
            let mut probe = w.clone();
            let numeric = central(|d| {
                probe.get_mut(&name).as_slice_mut().expect("contiguous")[idx] = base[idx] + d;
                loss(&probe)
            });
            tally.add(g[idx], numeric);
        }
    }
}

fn random_weights(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> ModelWeights {
    let mut w = ModelWeights::new();
    for s in specs {
        let t = ArrayD::from_shape_fn(IxDyn(&s.shape), |_| match s.init {
            InitKind::Ones => rng.random_range(0.5..1.5),
            _ => rng.random_range(-0.5..0.5),
        });
        w.insert(s.name.clone(), t);
    }
    w
}

fn random2(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-scale..scale))
}

fn dot2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

fn check_dcm(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let (batch, grid, c, g) = (2, (4, 5), 8, 2);
    let mut specs = Vec::new();
    push_dcm(&mut specs, "dcm", c, g);
    let w = random_weights(&specs, rng);
    let x = random2(rng, (batch * grid.0 * grid.1, c), 1.0);
    let r = random2(rng, x.dim(), 1.0);
    let (_, cache) = dcm_forward(&w, "dcm", &x, batch, grid);
    let mut grads = w.zeros_like();
    let dx = dcm_backward(&w, &mut grads, "dcm", &cache, &r);
    let mut t = Tally::default();
    check_array(&mut t, rng, &x.clone().into_dyn(), &dx.into_dyn(), 40, |p| {
        let p = p.clone().into_dimensionality().unwrap();
        dot2(&dcm_forward(&w, "dcm", &p, batch, grid).0, &r)
    });
    check_params(&mut t, rng, &w, &grads, 12, |w| dot2(&dcm_forward(w, "dcm", &x, batch, grid).0, &r));
    Ok(t.finish("dcm", OP_TOLERANCE))
}

fn check_msa(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let (win, heads, windows, c) = ((2, 3), 2, 3, 8);
    let rows = windows * win.0 * win.1;
    let q = random2(rng, (rows, c), 1.0);
    let k = random2(rng, (rows, c), 1.0);
    let v = random2(rng, (rows, c), 1.0);
    let table = random2(rng, ((2 * win.0 - 1) * (2 * win.1 - 1), heads), 1.0);
    let r = random2(rng, (rows, c), 1.0);
    let f = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, t: &Array2<f64>| {
        let (out, _) = window_attention(q.clone(), k.clone(), v.clone(), t.view(), heads, win).unwrap();
        dot2(&out, &r)
    };
    let (_, cache) = window_attention(q.clone(), k.clone(), v.clone(), table.view(), heads, win)?;
    let (dq, dk, dv, dt) = window_attention_backward(&cache, &r);
    let mut t = Tally::default();
    let d2 = |a: &ArrayD<f64>| a.clone().into_dimensionality::<ndarray::Ix2>().unwrap();
    check_array(&mut t, rng, &q.clone().into_dyn(), &dq.into_dyn(), 40, |p| f(&d2(p), &k, &v, &table));
    check_array(&mut t, rng, &k.clone().into_dyn(), &dk.into_dyn(), 40, |p| f(&q, &d2(p), &v, &table));
    check_array(&mut t, rng, &v.clone().into_dyn(), &dv.into_dyn(), 40, |p| f(&q, &k, &d2(p), &table));
    check_array(&mut t, rng, &table.clone().into_dyn(), &dt.into_dyn(), 40, |p| f(&q, &k, &v, &d2(p)));
    Ok(t.finish("msa", OP_TOLERANCE))
}

fn check_mstb_pair(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let (batch, grid, c) = (2, (4, 4), 8);
    let plan = |shift| BlockPlan {
        channels: c,
        heads: 2,
        window: (2, 2),
        shift,
        growth: 2,
        hidden: 16,
    };
    let plans = [plan((0, 0)), plan((1, 1))];
    let mut specs = Vec::new();
    for (b, p) in plans.iter().enumerate() {
        push_block(&mut specs, &format!("blk{b}"), p);
    }
    let w = random_weights(&specs, rng);
    let x = random2(rng, (batch * grid.0 * grid.1, c), 1.0);
    let r = random2(rng, x.dim(), 1.0);
    let run = |w: &ModelWeights, x: &Array2<f64>| {
        let fm = FeatureMap::grid(x.clone(), batch, grid).unwrap();
        let (y0, c0) = mstb_forward(w, "blk0", &fm, &plans[0]).unwrap();
        let (y1, c1) = mstb_forward(w, "blk1", &y0, &plans[1]).unwrap();
        (y1.data, c0, c1)
    };
    let (_, c0, c1) = run(&w, &x);
    let mut grads = w.zeros_like();
    let d = mstb_backward(&w, &mut grads, "blk1", &c1, &r);
    let dx = mstb_backward(&w, &mut grads, "blk0", &c0, &d);
    let mut t = Tally::default();
    check_array(&mut t, rng, &x.clone().into_dyn(), &dx.into_dyn(), 40, |p| {
        dot2(&run(&w, &p.clone().into_dimensionality().unwrap()).0, &r)
    });
    check_params(&mut t, rng, &w, &grads, 6, |w| dot2(&run(w, &x).0, &r));
    Ok(t.finish("mstb_pair", OP_TOLERANCE))
}

fn check_sfb(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let (rows, c) = (12, 6);
    let mut specs = Vec::new();
    push_linear(&mut specs, "sfb", 2 * c, c);
    let w = random_weights(&specs, rng);
    let enc = random2(rng, (rows, c), 1.0);
    let dec = random2(rng, (rows, c), 1.0);
    let r = random2(rng, (rows, c), 1.0);
    let (_, cat) = sfb_forward(&w, "sfb", &enc, &dec)?;
    let mut grads = w.zeros_like();
    let (d_enc, d_dec) = sfb_backward(&w, &mut grads, "sfb", &cat, &r);
    let f = |w: &ModelWeights, e: &Array2<f64>, d: &Array2<f64>| dot2(&sfb_forward(w, "sfb", e, d).unwrap().0, &r);
    let mut t = Tally::default();
    check_array(&mut t, rng, &enc.clone().into_dyn(), &d_enc.into_dyn(), 40, |p| {
        f(&w, &p.clone().into_dimensionality().unwrap(), &dec)
    });
    check_array(&mut t, rng, &dec.clone().into_dyn(), &d_dec.into_dyn(), 40, |p| {
        f(&w, &enc, &p.clone().into_dimensionality().unwrap())
    });
    check_params(&mut t, rng, &w, &grads, 20, |w| f(w, &enc, &dec));
    Ok(t.finish("sfb", OP_TOLERANCE))
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Vec<Image> {
    (0..n)
        .map(|_| Image::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(0.0..1.0))).unwrap())
        .collect()
}

fn check_patch_embed(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let (p, c_in, c) = (2, 3, 5);
    let mut specs = Vec::new();
    push_linear(&mut specs, "embed", p * p * c_in, c);
    let w = random_weights(&specs, rng);
    let images = random_images(rng, 2, c_in, 4, 6);
    let r = random2(rng, (2 * 2 * 3, c), 1.0);
    let (_, patches) = patch_embed_forward(&w, "embed", &images, p)?;
    let mut grads = w.zeros_like();
    patch_embed_backward(&w, &mut grads, "embed", &patches, &r);
    let mut t = Tally::default();
    check_params(&mut t, rng, &w, &grads, 30, |w| {
        dot2(&patch_embed_forward(w, "embed", &images, p).unwrap().0.data, &r)
    });
    Ok(t.finish("patch_embed", OP_TOLERANCE))
}

fn check_patch_merge(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let (batch, grid, c) = (2, (4, 6), 3);
    let mut specs = Vec::new();
    push_linear(&mut specs, "merge", 4 * c, 2 * c);
    let w = random_weights(&specs, rng);
    let x = random2(rng, (batch * grid.0 * grid.1, c), 1.0);
    let r = random2(rng, (batch * 2 * 3, 2 * c), 1.0);
    let f = |w: &ModelWeights, x: &Array2<f64>| {
        let fm = FeatureMap::grid(x.clone(), batch, grid).unwrap();
        dot2(&patch_merge_forward(w, "merge", &fm).unwrap().0.data, &r)
    };
    let (_, gathered) = patch_merge_forward(&w, "merge", &FeatureMap::grid(x.clone(), batch, grid)?)?;
    let mut grads = w.zeros_like();
    let dx = patch_merge_backward(&w, &mut grads, "merge", &gathered, &r, batch, grid);
    let mut t = Tally::default();
    check_array(&mut t, rng, &x.clone().into_dyn(), &dx.into_dyn(), 60, |p| {
        f(&w, &p.clone().into_dimensionality().unwrap())
    });
    check_params(&mut t, rng, &w, &grads, 20, |w| f(w, &x));
    Ok(t.finish("patch_merge", OP_TOLERANCE))
}

fn check_patch_expand(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut t = Tally::default();
    for factor in [2, 3] {
        let (batch, grid, c) = (2, (2, 3), 4);
        let c_out = 2;
        let mut specs = Vec::new();
        push_linear(&mut specs, "expand", c, factor * factor * c_out);
        let w = random_weights(&specs, rng);
        let x = random2(rng, (batch * grid.0 * grid.1, c), 1.0);
        let r = random2(rng, (batch * grid.0 * grid.1 * factor * factor, c_out), 1.0);
        let f = |w: &ModelWeights, x: &Array2<f64>| {
            let fm = FeatureMap::grid(x.clone(), batch, grid).unwrap();
            dot2(&patch_expand_forward(w, "expand", &fm, factor).unwrap().data, &r)
        };
        let fm = FeatureMap::grid(x.clone(), batch, grid)?;
        let mut grads = w.zeros_like();
        let dx = patch_expand_backward(&w, &mut grads, "expand", &fm, factor, &r);
        check_array(&mut t, rng, &x.clone().into_dyn(), &dx.into_dyn(), 48, |p| {
            f(&w, &p.clone().into_dimensionality().unwrap())
        });
        check_params(&mut t, rng, &w, &grads, 20, |w| f(w, &x));
    }
    Ok(t.finish("patch_expand", OP_TOLERANCE))
}

fn check_model(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let config = ModelConfig::tiny();
    let specs = crate::msunet::param_schema(&config)?;
    let w = random_weights(&specs, rng);
    let images = random_images(rng, 2, config.in_channels, config.input_h, config.input_w);
    let (h, wd) = (config.input_h, config.input_w);
    let rf: Vec<Array3<f64>> = (0..2)
        .map(|_| Array3::from_shape_fn((2, h, wd), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let rs: Vec<Array4<f64>> = (0..2)
        .map(|_| Array4::from_shape_fn((2, 3, h, wd), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let objective = |w: &ModelWeights| {
        let (pred, _) = forward_with_tape(w, &config, &images).unwrap();
        let mut s = 0.0;
        for b in 0..2 {
            s += (pred.flows[b].data() * &rf[b]).sum();
            s += (pred.seg_logits[b].data() * &rs[b]).sum();
        }
        s
    };
    let (_, tape) = forward_with_tape(&w, &config, &images)?;
    let grads = backward(&w, &config, &tape, &rf, Some(&rs))?;
    let mut t = Tally::default();
    check_params(&mut t, rng, &w, &grads, 3, objective);
    Ok(t.finish("model", END_TO_END_TOLERANCE))
}

fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> FlowMap {
    FlowMap::new(Array3::from_shape_fn((2, h, w), |_| rng.random_range(-scale..scale))).unwrap()
}

/// Margin that keeps every absolute-value argument away from its kink under a probe.
const KINK_MARGIN: f64 = 8.0 * EPSILON;

/// Draws prediction/reference pairs until no residual (nor Sobel residual) sits near zero.
fn smooth_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (FlowMap, FlowMap) {
    loop {
        let a = random_flow(rng, h, w, 8.0);
        let b = random_flow(rng, h, w, 8.0);
        let diff = a.data() - b.data();
        let (gx, gy) = sobel(diff.view()).unwrap();
        if diff.iter().chain(gx.iter()).chain(gy.iter()).all(|v| v.abs() > KINK_MARGIN) {
            return (a, b);
        }
    }
}

fn flow_fd<F>(t: &mut Tally, rng: &mut ChaCha8Rng, f: &FlowMap, grad: &Array3<f64>, mut loss: F)
where
    F: FnMut(&FlowMap) -> f64,
{
    check_array(t, rng, &f.data().clone().into_dyn(), &grad.clone().into_dyn(), 60, |p| {
        loss(&FlowMap::new(p.clone().into_dimensionality().unwrap()).unwrap())
    });
}

fn check_loss_m1(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut t = Tally::default();
    for _ in 0..10 {
        let (a, b) = smooth_pair(rng, 5, 6);
        let face = Array2::from_shape_fn((5, 6), |_| rng.random_range(0..2u8));
        let m = make_weight_mask(face.view(), 3.0, 1.0)?;
        let (_, g) = loss_m1_grad(&a, &b, &m)?;
        flow_fd(&mut t, rng, &a, &g, |p| loss_m1_grad(p, &b, &m).unwrap().0);
    }
    Ok(t.finish("loss_m1", OP_TOLERANCE))
}

fn check_loss_ms(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut t = Tally::default();
    for _ in 0..10 {
        let (a, b) = smooth_pair(rng, 5, 6);
        let face = Array2::from_shape_fn((5, 6), |_| rng.random_range(0..2u8));
        let m = make_weight_mask(face.view(), 3.0, 1.0)?;
        let (_, g) = loss_ms_grad(&a, &b, &m)?;
        flow_fd(&mut t, rng, &a, &g, |p| loss_ms_grad(p, &b, &m).unwrap().0);
    }
    Ok(t.finish("loss_ms", OP_TOLERANCE))
}

fn random_logits(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SegLogits {
    SegLogits::new(Array4::from_shape_fn((2, 3, h, w), |_| rng.random_range(-3.0..3.0))).unwrap()
}

fn logits_fd<F>(t: &mut Tally, rng: &mut ChaCha8Rng, l: &SegLogits, grad: &Array4<f64>, mut loss: F)
where
    F: FnMut(&SegLogits) -> f64,
{
    check_array(t, rng, &l.data().clone().into_dyn(), &grad.clone().into_dyn(), 60, |p| {
        loss(&SegLogits::new(p.clone().into_dimensionality().unwrap()).unwrap())
    });
}

fn check_loss_ce(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut t = Tally::default();
    for _ in 0..10 {
        let l = random_logits(rng, 4, 5);
        let target = flow_to_seg(&random_flow(rng, 4, 5, 10.0), 5.0)?;
        let (_, g) = loss_ce_grad(&l, &target)?;
        logits_fd(&mut t, rng, &l, &g, |p| loss_ce_grad(p, &target).unwrap().0);
    }
    Ok(t.finish("loss_ce", OP_TOLERANCE))
}

fn check_loss_supervised(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut t = Tally::default();
    let lw = LossWeights::default();
    for _ in 0..10 {
        let (pred, gt) = smooth_pair(rng, 5, 6);
        let l = random_logits(rng, 5, 6);
        let face = Array2::from_shape_fn((5, 6), |_| rng.random_range(0..2u8));
        let (_, df, dl) = loss_supervised_grad(&pred, &l, &gt, face.view(), &lw, 5.0)?;
        flow_fd(&mut t, rng, &pred, &df, |p| {
            loss_supervised_grad(p, &l, &gt, face.view(), &lw, 5.0).unwrap().0.total
        });
        logits_fd(&mut t, rng, &l, &dl, |p| {
            loss_supervised_grad(&pred, p, &gt, face.view(), &lw, 5.0).unwrap().0.total
        });
    }
    Ok(t.finish("loss_supervised", OP_TOLERANCE))
}

fn check_loss_unsupervised(rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut t = Tally::default();
    let lw = LossWeights::default();
    let delta = 5.0;
    let terms = UnsupervisedTerms::default();
    for _ in 0..10 {
        // Keep flows off the thresholds so probes never flip a pseudo-label.
        let (f1, f2) = loop {
            let (a, b) = smooth_pair(rng, 5, 6);
            let clear = |f: &FlowMap| f.data().iter().all(|v| (v.abs() - delta).abs() > KINK_MARGIN);
            if clear(&a) && clear(&b) {
                break (a, b);
            }
        };
        let (l1, l2) = (random_logits(rng, 5, 6), random_logits(rng, 5, 6));
        let (_, df, dl) = loss_unsupervised_grad([&f1, &f2], [&l1, &l2], &lw, delta, terms)?;
        let total = |a: &FlowMap, b: &FlowMap, x: &SegLogits, y: &SegLogits| {
            loss_unsupervised_grad([a, b], [x, y], &lw, delta, terms).unwrap().0.total
        };
        flow_fd(&mut t, rng, &f1, &df[0], |p| total(p, &f2, &l1, &l2));
        flow_fd(&mut t, rng, &f2, &df[1], |p| total(&f1, p, &l1, &l2));
        logits_fd(&mut t, rng, &l1, &dl[0], |p| total(&f1, &f2, p, &l2));
        logits_fd(&mut t, rng, &l2, &dl[1], |p| total(&f1, &f2, &l1, p));
    }
    Ok(t.finish("loss_unsupervised", OP_TOLERANCE))
}

/// Runs one named check, or every check when `module` is `None`.
pub fn run(module: Option<&str>, seed: u64) -> Result<Vec<GradCheckResult>> {
    let selected: Vec<&str> = match module {
        Some(m) if MODULES.contains(&m) => vec![m],
        Some(m) => {
            return Err(Error::InvalidInput(format!(
                "unknown gradcheck module {m:?}; expected one of {}",
                MODULES.join(", ")
            )))
        }
        None => MODULES.to_vec(),
    };
    let mut out = Vec::with_capacity(selected.len());
    for name in selected {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(name));
        let r = match name {
            "dcm" => check_dcm(&mut rng),
            "msa" => check_msa(&mut rng),
            "mstb_pair" => check_mstb_pair(&mut rng),
            "sfb" => check_sfb(&mut rng),
            "patch_embed" => check_patch_embed(&mut rng),
            "patch_merge" => check_patch_merge(&mut rng),
            "patch_expand" => check_patch_expand(&mut rng),
            "model" => check_model(&mut rng),
            "loss_m1" => check_loss_m1(&mut rng),
            "loss_ms" => check_loss_ms(&mut rng),
            "loss_ce" => check_loss_ce(&mut rng),
            "loss_supervised" => check_loss_supervised(&mut rng),
            "loss_unsupervised" => check_loss_unsupervised(&mut rng),
            _ => unreachable!(),
        }?;
        log::info!("gradcheck {}: max rel error {:.3e}", r.module, r.max_rel_error);
        out.push(r);
    }
    Ok(out)
}

/// Stable per-name seed offset.
fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_module_passes() {
        for r in run(None, 0).unwrap() {
            println!("{:<18} {:.3e} over {} entries", r.module, r.max_rel_error, r.entries_checked);
            assert!(r.passed(), "{} failed: {:.3e}", r.module, r.max_rel_error);
        }
    }

    #[test]
    fn unknown_module_is_rejected() {
        assert!(run(Some("nope"), 0).is_err());
    }
}
