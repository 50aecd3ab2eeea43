//! Multi-scale Swin transformer block (MSTB).
//!
//! Queries come from the LayerNormed tokens; keys and values come from the same tokens
//! after the dense connection module, so attention mixes long-range context with
//! dilated local features:
//!
//! ```text
//! y   = x + WR(MSA(Q(WP(LN1 x)), K(WP(DCM(LN1 x))), V(WP(DCM(LN1 x)))))
//! out = y + MLP(LN2 y)
//! ```
//!
//! Even-indexed blocks use plain window partitioning, odd-indexed blocks shift by half
//! a window. The shift is a pure cyclic roll without an attention mask.

use ndarray::Array2;

use super::config::{BlockPlan, ModelConfig};
use super::feature::FeatureMap;
use super::layers::{
    dcm_backward, dcm_forward, gelu, gelu_backward, layer_norm_backward, layer_norm_forward,
    linear_backward, linear_forward, window_attention, window_attention_backward, AttentionCache,
    DcmCache, LayerNormCache, WindowIndex,
};
use super::weights::block_prefix;
use super::ModelWeights;
use crate::error::Result;

pub struct BlockCache {
    ln1: LayerNormCache,
    normed: Array2<f64>,
    dcm: DcmCache,
    local: Array2<f64>,
    index: WindowIndex,
    attn: AttentionCache,
    attended: Array2<f64>,
    ln2: LayerNormCache,
    normed2: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

pub fn mstb_forward(
    w: &ModelWeights,
    prefix: &str,
    x: &FeatureMap,
    plan: &BlockPlan,
) -> Result<(FeatureMap, BlockCache)> {
    x.expect_grid()?;
    let p = |s: &str| format!("{prefix}.{s}");
    let index = WindowIndex::new(x.batch, x.grid, plan.window, plan.shift)?;
    let (normed, ln1) = layer_norm_forward(w, &p("ln1"), &x.data);
    let q = index.gather(&linear_forward(w, &p("q"), &normed));
    let (local, dcm) = dcm_forward(w, &p("dcm"), &normed, x.batch, x.grid);
    let k = index.gather(&linear_forward(w, &p("k"), &local));
    let v = index.gather(&linear_forward(w, &p("v"), &local));
    let (attended, attn) = window_attention(q, k, v, w.mat(&p("rel_bias")), plan.heads, plan.window)?;
    let projected = linear_forward(w, &p("proj"), &attended);
    let y = &x.data + &index.scatter(&projected);
    let (normed2, ln2) = layer_norm_forward(w, &p("ln2"), &y);
    let hidden_pre = linear_forward(w, &p("fc1"), &normed2);
    let hidden = gelu(&hidden_pre);
    let out = y + linear_forward(w, &p("fc2"), &hidden);
    Ok((
        FeatureMap::grid(out, x.batch, x.grid)?,
        BlockCache {
            ln1,
            normed,
            dcm,
            local,
            index,
            attn,
            attended,
            ln2,
            normed2,
            hidden_pre,
            hidden,
        },
    ))
}

pub fn mstb_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    prefix: &str,
    cache: &BlockCache,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let p = |s: &str| format!("{prefix}.{s}");
    let d_hidden = linear_backward(w, grads, &p("fc2"), &cache.hidden, d_out);
    let d_hidden_pre = gelu_backward(&cache.hidden_pre, &d_hidden);
    let d_normed2 = linear_backward(w, grads, &p("fc1"), &cache.normed2, &d_hidden_pre);
    let d_y = d_out + &layer_norm_backward(w, grads, &p("ln2"), &cache.ln2, &d_normed2);

    let d_projected = cache.index.gather(&d_y);
    let d_attended = linear_backward(w, grads, &p("proj"), &cache.attended, &d_projected);
    let (dq, dk, dv, d_table) = window_attention_backward(&cache.attn, &d_attended);
    grads.mat_mut(&p("rel_bias")).scaled_add(1.0, &d_table);

    let mut d_local = linear_backward(w, grads, &p("k"), &cache.local, &cache.index.scatter(&dk));
    d_local += &linear_backward(w, grads, &p("v"), &cache.local, &cache.index.scatter(&dv));
    let mut d_normed = linear_backward(w, grads, &p("q"), &cache.normed, &cache.index.scatter(&dq));
    d_normed += &dcm_backward(w, grads, &p("dcm"), &cache.dcm, &d_local);
    d_y + layer_norm_backward(w, grads, &p("ln1"), &cache.ln1, &d_normed)
}

/// All MSTBs of one stage (`depth` blocks, alternating WP and SWP).
pub fn stage_forward(
    w: &ModelWeights,
    config: &ModelConfig,
    section: &str,
    level: usize,
    depth: usize,
    x: FeatureMap,
) -> Result<(FeatureMap, Vec<BlockCache>)> {
    let mut caches = Vec::with_capacity(depth);
    let mut x = x;
    for b in 0..depth {
        let (y, cache) = mstb_forward(w, &block_prefix(section, b), &x, &config.block_plan(level, b))?;
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

pub fn stage_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    section: &str,
    caches: &[BlockCache],
    d_out: Array2<f64>,
) -> Array2<f64> {
    let mut d = d_out;
    for (b, cache) in caches.iter().enumerate().rev() {
        d = mstb_backward(w, grads, &block_prefix(section, b), cache, &d);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msunet::weights::{push_block, ParamSpec};
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_block(plan: &BlockPlan, seed: u64) -> ModelWeights {
        let mut specs: Vec<ParamSpec> = Vec::new();
        push_block(&mut specs, "b", plan);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut w = ModelWeights::new();
        for s in specs {
            let n = s.shape.iter().product();
            let vals = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            w.insert(s.name, ArrayD::from_shape_vec(IxDyn(&s.shape), vals).unwrap());
        }
        w
    }

    fn plan() -> BlockPlan {
        BlockPlan {
            channels: 8,
            heads: 2,
            window: (4, 4),
            shift: (2, 2),
            growth: 2,
            hidden: 16,
        }
    }

    #[test]
    fn preserves_shape() {
        let w = random_block(&plan(), 1);
        let x = FeatureMap::grid(Array2::from_elem((2 * 64, 8), 0.3), 2, (8, 8)).unwrap();
        let (y, _) = mstb_forward(&w, "b", &x, &plan()).unwrap();
        assert_eq!(y.data.dim(), x.data.dim());
    }

    #[test]
    fn zero_output_projections_give_identity() {
        let mut w = random_block(&plan(), 2);
        for name in ["b.proj.weight", "b.proj.bias", "b.fc2.weight", "b.fc2.bias"] {
            w.get_mut(name).fill(0.0);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((64, 8), |_| rng.random_range(-2.0..2.0));
        let x = FeatureMap::grid(data, 1, (8, 8)).unwrap();
        let (y, _) = mstb_forward(&w, "b", &x, &plan()).unwrap();
        assert_eq!(y, x);
    }
}
