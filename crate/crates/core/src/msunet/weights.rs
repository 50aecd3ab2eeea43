use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, IxDyn, Ix1, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::{BlockPlan, ModelConfig};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelWeights {
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn mat(&self, name: &str) -> ArrayView2<'_, f64> {
        self.get(name).view().into_dimensionality::<Ix2>().expect("2-d parameter")
    }

    pub fn vec(&self, name: &str) -> ArrayView1<'_, f64> {
        self.get(name).view().into_dimensionality::<Ix1>().expect("1-d parameter")
    }

    pub fn mat_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-d parameter")
    }

    pub fn vec_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("1-d parameter")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    /// `self += scale · other`, matching tensors by name.
    pub fn add_scaled(&mut self, other: &ModelWeights, scale: f64) {
        for (name, t) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(name) {
                t.scaled_add(scale, o);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over names, shapes and the exact f64 bit patterns.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex_digest(&h.finalize())
    }

    /// Checks names and shapes against the config-derived schema.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let schema = param_schema(config)?;
        if schema.len() != self.tensors.len() {
            return Err(Error::InvalidInput(format!(
                "weights hold {} tensors, schema expects {}",
                self.tensors.len(),
                schema.len()
            )));
        }
        for spec in &schema {
            let t = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| Error::InvalidInput(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape(
                    format!("{} {:?}", spec.name, spec.shape),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        if !self.all_finite() {
            return Err(Error::InvalidInput("weights contain non-finite values".into()));
        }
        Ok(())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn push(out: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: InitKind) {
    out.push(ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    });
}

/// Weight `[in, out]` plus bias `[out]`.
pub(crate) fn push_linear(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    push(out, format!("{prefix}.weight"), &[fan_in, fan_out], InitKind::TruncNormal);
    push(out, format!("{prefix}.bias"), &[fan_out], InitKind::Zeros);
}

pub(crate) fn push_layer_norm(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    push(out, format!("{prefix}.gamma"), &[dim], InitKind::Ones);
    push(out, format!("{prefix}.beta"), &[dim], InitKind::Zeros);
}

pub(crate) fn push_dcm(out: &mut Vec<ParamSpec>, prefix: &str, channels: usize, growth: usize) {
    push_linear(out, &format!("{prefix}.in"), channels, growth);
    for r in 1..=3 {
        let ch = growth * r;
        push(out, format!("{prefix}.dw{r}.weight"), &[ch, 9], InitKind::TruncNormal);
        push(out, format!("{prefix}.dw{r}.bias"), &[ch], InitKind::Zeros);
        push_linear(out, &format!("{prefix}.pw{r}"), ch, growth);
    }
    push_linear(out, &format!("{prefix}.out"), 4 * growth, channels);
}

pub(crate) fn push_block(out: &mut Vec<ParamSpec>, prefix: &str, plan: &BlockPlan) {
    let c = plan.channels;
    push_layer_norm(out, &format!("{prefix}.ln1"), c);
    push_linear(out, &format!("{prefix}.q"), c, c);
    push_dcm(out, &format!("{prefix}.dcm"), c, plan.growth);
    push_linear(out, &format!("{prefix}.k"), c, c);
    push_linear(out, &format!("{prefix}.v"), c, c);
    push(
        out,
        format!("{prefix}.rel_bias"),
        &[plan.bias_table_len(), plan.heads],
        InitKind::Zeros,
    );
    push_linear(out, &format!("{prefix}.proj"), c, c);
    push_layer_norm(out, &format!("{prefix}.ln2"), c);
    push_linear(out, &format!("{prefix}.fc1"), c, plan.hidden);
    push_linear(out, &format!("{prefix}.fc2"), plan.hidden, c);
}

pub(crate) fn block_prefix(section: &str, index: usize) -> String {
    format!("{section}.blk{index}")
}

pub(crate) fn enc_section(level: usize) -> String {
    format!("enc{level}")
}

pub(crate) fn dec_section(level: usize) -> String {
    format!("dec{level}")
}

pub(crate) const BOTTLENECK: &str = "bottleneck";

/// Every parameter of the network for `config`, in a deterministic order.
pub fn param_schema(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let mut out = Vec::new();
    let p = config.patch_size;
    let c0 = config.base_channels;
    let stages = config.num_stages();
    push_linear(&mut out, "embed", p * p * config.in_channels, c0);
    for (level, &depth) in config.stage_depths.iter().enumerate() {
        let section = enc_section(level);
        for b in 0..depth {
            push_block(&mut out, &block_prefix(&section, b), &config.block_plan(level, b));
        }
        let c = config.channels(level);
        push_linear(&mut out, &format!("{section}.merge"), 4 * c, 2 * c);
    }
    for b in 0..config.bottleneck_depth {
        push_block(&mut out, &block_prefix(BOTTLENECK, b), &config.block_plan(stages, b));
    }
    for level in (0..stages).rev() {
        let section = dec_section(level);
        let c_up = config.channels(level + 1);
        let c = config.channels(level);
        push_linear(&mut out, &format!("{section}.expand"), c_up, 2 * c_up);
        push_linear(&mut out, &format!("{section}.sfb"), 2 * c, c);
        for b in 0..config.stage_depths[level] {
            push_block(&mut out, &block_prefix(&section, b), &config.block_plan(level, b));
        }
    }
    push_linear(&mut out, "final_expand", c0, p * p * c0);
    push_linear(&mut out, "head.flow", c0, config.flow_channels);
    push_linear(&mut out, "head.seg", c0, config.flow_channels * config.seg_classes);
    Ok(out)
}

/// Deterministic initialisation: truncated normal (±2σ, σ = 0.02) for weight matrices
/// and kernels, zero biases and relative-position tables, unit LayerNorm scales.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let schema = param_schema(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut weights = ModelWeights::new();
    for spec in schema {
        let n: usize = spec.shape.iter().product();
        let values: Vec<f64> = match spec.init {
            InitKind::Zeros => vec![0.0; n],
            InitKind::Ones => vec![1.0; n],
            InitKind::TruncNormal => (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * INIT_STD {
                        break v;
                    }
                })
                .collect(),
        };
        let t = ArrayD::from_shape_vec(IxDyn(&spec.shape), values).expect("schema shape");
        weights.insert(spec.name, t);
    }
    Ok(weights)
}
