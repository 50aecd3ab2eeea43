use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many attention heads each stage gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSpec {
    /// Same head count `k` at every stage.
    Fixed(usize),
    /// `k = C_stage / head_dim`.
    PerDim(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    /// Channel count `C` of the first stage; doubles at every merge.
    pub base_channels: usize,
    /// Number of MSTBs per encoder stage (even: blocks come in WP/SWP pairs).
    pub stage_depths: Vec<usize>,
    pub bottleneck_depth: usize,
    pub heads: HeadSpec,
    /// Requested attention window `(h, w)` in tokens.
    pub window: (usize, usize),
    pub mlp_ratio: f64,
    /// DCM growth is `g = C_stage / dcm_growth_divisor`.
    pub dcm_growth_divisor: usize,
    pub seg_classes: usize,
    pub flow_channels: usize,
}

impl ModelConfig {
    /// 64×48 input, C = 32, two stages of one MSTB pair each, bottleneck pair, window 4×4, k = 4.
    pub fn desk() -> Self {
        Self {
            input_h: 64,
            input_w: 48,
            in_channels: 3,
            patch_size: 4,
            base_channels: 32,
            stage_depths: vec![2, 2],
            bottleneck_depth: 2,
            heads: HeadSpec::Fixed(4),
            window: (4, 4),
            mlp_ratio: 4.0,
            dcm_growth_divisor: 4,
            seg_classes: 3,
            flow_channels: 2,
        }
    }

    /// 512×384 input, C = 96, three stages, window 8×8, 32 channels per head.
    pub fn paper_scale() -> Self {
        Self {
            input_h: 512,
            input_w: 384,
            in_channels: 3,
            patch_size: 4,
            base_channels: 96,
            stage_depths: vec![2, 2, 2],
            bottleneck_depth: 2,
            heads: HeadSpec::PerDim(32),
            window: (8, 8),
            mlp_ratio: 4.0,
            dcm_growth_divisor: 4,
            seg_classes: 3,
            flow_channels: 2,
        }
    }

    /// Small network used by the gradient checks: 16×16 input, patch 2, C = 8.
    pub fn tiny() -> Self {
        Self {
            input_h: 16,
            input_w: 16,
            in_channels: 3,
            patch_size: 2,
            base_channels: 8,
            stage_depths: vec![2],
            bottleneck_depth: 2,
            heads: HeadSpec::Fixed(2),
            window: (4, 4),
            mlp_ratio: 2.0,
            dcm_growth_divisor: 4,
            seg_classes: 3,
            flow_channels: 2,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_depths.len()
    }

    pub fn mlp_hidden(&self, channels: usize) -> usize {
        ((channels as f64) * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seg_classes != 3 {
            return bad(format!("seg_classes must be 3, got {}", self.seg_classes));
        }
        if self.flow_channels != 2 {
            return bad(format!("flow_channels must be 2, got {}", self.flow_channels));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return bad(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.patch_size == 0 || self.base_channels == 0 {
            return bad("patch_size and base_channels must be positive".into());
        }
        if self.window.0 == 0 || self.window.1 == 0 {
            return bad("window must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive".into());
        }
        if self.stage_depths.is_empty() {
            return bad("need at least one encoder stage".into());
        }
        for &d in self.stage_depths.iter().chain(std::iter::once(&self.bottleneck_depth)) {
            if d == 0 || d % 2 != 0 {
                return bad(format!("stage depth {d} must be a positive even number"));
            }
        }
        let div = self.patch_size << self.num_stages();
        if self.input_h % div != 0 || self.input_w % div != 0 {
            return bad(format!(
                "input {}×{} must be divisible by patch·2^stages = {div}",
                self.input_h, self.input_w
            ));
        }
        for level in 0..=self.num_stages() {
            let c = self.channels(level);
            let g = self.dcm_growth(level);
            if self.dcm_growth_divisor == 0 || c % self.dcm_growth_divisor != 0 || g == 0 {
                return bad(format!("channels {c} not divisible by dcm_growth_divisor"));
            }
            let k = match self.heads {
                HeadSpec::Fixed(k) => k,
                HeadSpec::PerDim(d) if d > 0 && c % d == 0 => c / d,
                HeadSpec::PerDim(d) => return bad(format!("channels {c} not divisible by head dim {d}")),
            };
            if k == 0 || c % k != 0 {
                return bad(format!("channels {c} not divisible by head count {k}"));
            }
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn dcm_growth(&self, level: usize) -> usize {
        self.channels(level) / self.dcm_growth_divisor.max(1)
    }

    pub fn heads_at(&self, level: usize) -> usize {
        match self.heads {
            HeadSpec::Fixed(k) => k,
            HeadSpec::PerDim(d) => self.channels(level) / d,
        }
    }

    pub fn grid(&self, level: usize) -> (usize, usize) {
        (
            self.input_h / self.patch_size >> level,
            self.input_w / self.patch_size >> level,
        )
    }

    /// Attention geometry of block `index` at `level`.
    pub fn block_plan(&self, level: usize, index: usize) -> BlockPlan {
        let (gh, gw) = self.grid(level);
        let window = (effective_window(gh, self.window.0), effective_window(gw, self.window.1));
        let shifted = index % 2 == 1;
        let shift = |g: usize, win: usize| if shifted && win < g { win / 2 } else { 0 };
        BlockPlan {
            channels: self.channels(level),
            heads: self.heads_at(level),
            window,
            shift: (shift(gh, window.0), shift(gw, window.1)),
            growth: self.dcm_growth(level),
            hidden: self.mlp_hidden(self.channels(level)),
        }
    }
}

/// Largest divisor of `grid` that does not exceed `requested`.
pub fn effective_window(grid: usize, requested: usize) -> usize {
    (1..=requested.min(grid)).rev().find(|w| grid % w == 0).unwrap_or(1)
}

/// Per-block attention and width settings derived from [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub channels: usize,
    pub heads: usize,
    pub window: (usize, usize),
    pub shift: (usize, usize),
    pub growth: usize,
    pub hidden: usize,
}

impl BlockPlan {
    pub fn bias_table_len(&self) -> usize {
        (2 * self.window.0 - 1) * (2 * self.window.1 - 1)
    }
}
