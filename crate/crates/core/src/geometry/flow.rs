use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Threshold separating "slight movement" from directed movement in the surrogate mask.
pub const DEFAULT_DELTA: f64 = 5.0;

/// Per-pixel backward sampling offsets, shape `2×H×W` (channel 0 = Δx, channel 1 = Δy).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    data: Array3<f64>,
}

impl FlowMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 2 || h == 0 || w == 0 {
            return Err(Error::shape("2×H×W with H, W > 0", format!("{c}×{h}×{w}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("flow map has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((2, height, width)),
        }
    }

    /// Constant offset `(dx, dy)` at every pixel.
    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let mut data = Array3::zeros((2, height, width));
        data.index_axis_mut(ndarray::Axis(0), 0).fill(dx);
        data.index_axis_mut(ndarray::Axis(0), 1).fill(dy);
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Offset at pixel `(i, j)` as `(dx, dy)`.
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        (self.data[[0, i, j]], self.data[[1, i, j]])
    }
}

/// Per-component three-class mask, shape `2×H×W`, values in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    data: Array3<u8>,
}

impl SegMask {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        if data.dim().0 != 2 {
            return Err(Error::shape("2×H×W", format!("{:?}", data.dim())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 2) {
            return Err(Error::InvalidInput(format!("mask class {v} outside {{0,1,2}}")));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// Number of entries of each class across both components.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for &v in self.data.iter() {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// Thresholds each flow component into {0: ≤ −δ, 1: strictly inside (−δ, δ), 2: ≥ δ}.
pub fn flow_to_seg(flow: &FlowMap, delta: f64) -> Result<SegMask> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    let data = flow.data.mapv(|f| {
        if f <= -delta {
            0u8
        } else if f >= delta {
            2
        } else {
            1
        }
    });
    Ok(SegMask { data })
}

/// Bilinear lookup in one plane with coordinates clamped to the frame.
#[inline]
fn bilinear(plane: &ndarray::ArrayView2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = plane.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
    let bottom = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Backward-warps arbitrary `K×H×W` planes. Values are not range-checked.
pub fn warp_planes(planes: ArrayView3<f64>, flow: &FlowMap) -> Result<Array3<f64>> {
    let (k, h, w) = planes.dim();
    if (h, w) != (flow.height(), flow.width()) {
        return Err(Error::shape(
            format!("{}×{}", flow.height(), flow.width()),
            format!("{h}×{w}"),
        ));
    }
    let mut out = Array3::zeros((k, h, w));
    for c in 0..k {
        let plane = planes.index_axis(ndarray::Axis(0), c);
        for i in 0..h {
            for j in 0..w {
                let (dx, dy) = flow.at(i, j);
                out[[c, i, j]] = bilinear(&plane, j as f64 + dx, i as f64 + dy);
            }
        }
    }
    Ok(out)
}

/// Resamples `image` so that output pixel `p` takes the input value at `p + F(p)`.
pub fn warp_image(image: &Image, flow: &FlowMap) -> Result<Image> {
    let out = warp_planes(image.data().view(), flow)?;
    // Bilinear weights are convex, so the range is preserved up to rounding.
    Image::from_clamped(out)
}

/// Bilinearly interpolated flow at a real-valued location (clamped to the frame).
pub fn sample_flow(flow: &FlowMap, x: f64, y: f64) -> (f64, f64) {
    let dx = bilinear(&flow.data.index_axis(ndarray::Axis(0), 0), x, y);
    let dy = bilinear(&flow.data.index_axis(ndarray::Axis(0), 1), x, y);
    (dx, dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvertOptions {
    pub max_iters: usize,
    /// Stop once successive iterates move less than this many pixels.
    pub tol: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            max_iters: 25,
            tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertedPoint {
    pub x: f64,
    pub y: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Maps distorted-image points `q` to corrected coordinates `p` with `p + F(p) ≈ q`.
///
/// Uses the fixed-point iteration `p ← q − F(p)` starting from `p = q`. Points that do
/// not converge keep their last iterate and are flagged.
pub fn invert_flow_at_points(
    flow: &FlowMap,
    points: &[(f64, f64)],
    opts: InvertOptions,
) -> Result<Vec<InvertedPoint>> {
    let (h, w) = (flow.height() as f64, flow.width() as f64);
    points
        .iter()
        .map(|&(qx, qy)| {
            if !(qx.is_finite() && qy.is_finite())
                || qx < 0.0
                || qy < 0.0
                || qx > w - 1.0
                || qy > h - 1.0
            {
                return Err(Error::InvalidInput(format!(
                    "point ({qx}, {qy}) outside the {w}×{h} frame"
                )));
            }
            let (mut px, mut py) = (qx, qy);
            let mut converged = false;
            let mut iterations = 0;
            while iterations < opts.max_iters {
                let (fx, fy) = sample_flow(flow, px, py);
                let (nx, ny) = (qx - fx, qy - fy);
                let step = ((nx - px).powi(2) + (ny - py).powi(2)).sqrt();
                px = nx;
                py = ny;
                iterations += 1;
                if step < opts.tol {
                    converged = true;
                    break;
                }
            }
            Ok(InvertedPoint {
                x: px,
                y: py,
                converged,
                iterations,
            })
        })
        .collect()
}
