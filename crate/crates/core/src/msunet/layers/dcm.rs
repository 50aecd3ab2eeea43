//! Dense connection module: a 1×1 reduction to `g` channels, three densely connected
//! 3×3 depthwise-separable convolutions (dilations 1, 2, 3), and a 1×1 fusion back to
//! `C` channels. Convolutions run on grid-ordered token rows with zero padding.

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};

use super::linear::{linear_backward, linear_forward};
use crate::msunet::ModelWeights;

const TAPS: usize = 9;

fn tap_offset(tap: usize, dilation: usize) -> (isize, isize) {
    let d = dilation as isize;
    ((tap / 3) as isize * d - d, (tap % 3) as isize * d - d)
}

/// Grid row of the source token for `(b, i, j)` shifted by `(di, dj)`, if inside.
#[inline]
fn source_row(b: usize, i: usize, j: usize, di: isize, dj: isize, grid: (usize, usize)) -> Option<usize> {
    let si = i as isize + di;
    let sj = j as isize + dj;
    if si < 0 || sj < 0 || si >= grid.0 as isize || sj >= grid.1 as isize {
        None
    } else {
        Some(b * grid.0 * grid.1 + si as usize * grid.1 + sj as usize)
    }
}

/// 3×3 depthwise convolution with `weight: [ch, 9]` (row-major taps) and `bias: [ch]`.
pub fn depthwise_conv(
    x: &Array2<f64>,
    batch: usize,
    grid: (usize, usize),
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    dilation: usize,
) -> Array2<f64> {
    let ch = x.ncols();
    let wt = weight.t().as_standard_layout().into_owned();
    let mut out = Array2::zeros(x.raw_dim());
    out += &bias;
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("contiguous");
    let ws = wt.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    for b in 0..batch {
        for i in 0..grid.0 {
            for j in 0..grid.1 {
                let row = b * grid.0 * grid.1 + i * grid.1 + j;
                let dst = &mut os[row * ch..(row + 1) * ch];
                for tap in 0..TAPS {
                    let (di, dj) = tap_offset(tap, dilation);
                    if let Some(src) = source_row(b, i, j, di, dj, grid) {
                        let xr = &xs[src * ch..(src + 1) * ch];
                        let wr = &ws[tap * ch..(tap + 1) * ch];
                        for c in 0..ch {
                            dst[c] += wr[c] * xr[c];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, d_weight [ch, 9], d_bias [ch])`.
pub fn depthwise_conv_backward(
    x: &Array2<f64>,
    batch: usize,
    grid: (usize, usize),
    weight: ArrayView2<f64>,
    dilation: usize,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let ch = x.ncols();
    let wt = weight.t().as_standard_layout().into_owned();
    let mut dx = Array2::<f64>::zeros(x.raw_dim());
    let mut dwt = Array2::<f64>::zeros((TAPS, ch));
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("contiguous");
    let dys = dy.as_standard_layout();
    let dys = dys.as_slice().expect("contiguous");
    let ws = wt.as_slice().expect("contiguous");
    {
        let dxs = dx.as_slice_mut().expect("contiguous");
        let dws = dwt.as_slice_mut().expect("contiguous");
        for b in 0..batch {
            for i in 0..grid.0 {
                for j in 0..grid.1 {
                    let row = b * grid.0 * grid.1 + i * grid.1 + j;
                    let g = &dys[row * ch..(row + 1) * ch];
                    for tap in 0..TAPS {
                        let (di, dj) = tap_offset(tap, dilation);
                        if let Some(src) = source_row(b, i, j, di, dj, grid) {
                            let xr = &xs[src * ch..(src + 1) * ch];
                            let wr = &ws[tap * ch..(tap + 1) * ch];
                            let dxr = &mut dxs[src * ch..(src + 1) * ch];
                            let dwr = &mut dws[tap * ch..(tap + 1) * ch];
                            for c in 0..ch {
                                dxr[c] += wr[c] * g[c];
                                dwr[c] += xr[c] * g[c];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dwt.t().to_owned(), db)
}

pub struct DcmCache {
    x: Array2<f64>,
    /// Concatenated input of the r-th depthwise-separable conv (`g·r` channels).
    conv_inputs: Vec<Array2<f64>>,
    /// Depthwise outputs feeding the r-th pointwise conv.
    depthwise_outputs: Vec<Array2<f64>>,
    concat_all: Array2<f64>,
    batch: usize,
    grid: (usize, usize),
    growth: usize,
}

impl DcmCache {
    /// Channel counts seen by the three depthwise convolutions.
    pub fn conv_input_channels(&self) -> Vec<usize> {
        self.conv_inputs.iter().map(|a| a.ncols()).collect()
    }
}

fn concat_cols(parts: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(1), &views).expect("equal row counts")
}

pub fn dcm_forward(
    w: &ModelWeights,
    prefix: &str,
    x: &Array2<f64>,
    batch: usize,
    grid: (usize, usize),
) -> (Array2<f64>, DcmCache) {
    let x0 = linear_forward(w, &format!("{prefix}.in"), x);
    let growth = x0.ncols();
    let mut feats = vec![x0];
    let mut conv_inputs = Vec::with_capacity(3);
    let mut depthwise_outputs = Vec::with_capacity(3);
    for r in 1..=3 {
        let input = concat_cols(&feats);
        let dw = depthwise_conv(
            &input,
            batch,
            grid,
            w.mat(&format!("{prefix}.dw{r}.weight")),
            w.vec(&format!("{prefix}.dw{r}.bias")),
            r,
        );
        let xr = linear_forward(w, &format!("{prefix}.pw{r}"), &dw);
        conv_inputs.push(input);
        depthwise_outputs.push(dw);
        feats.push(xr);
    }
    let concat_all = concat_cols(&feats);
    let out = linear_forward(w, &format!("{prefix}.out"), &concat_all);
    (
        out,
        DcmCache {
            x: x.clone(),
            conv_inputs,
            depthwise_outputs,
            concat_all,
            batch,
            grid,
            growth,
        },
    )
}

pub fn dcm_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    prefix: &str,
    cache: &DcmCache,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let g = cache.growth;
    let d_cat = linear_backward(w, grads, &format!("{prefix}.out"), &cache.concat_all, d_out);
    let mut d_feats: Vec<Array2<f64>> = (0..4)
        .map(|f| d_cat.slice(s![.., f * g..(f + 1) * g]).to_owned())
        .collect();
    for r in (1..=3).rev() {
        let d_dw = linear_backward(
            w,
            grads,
            &format!("{prefix}.pw{r}"),
            &cache.depthwise_outputs[r - 1],
            &d_feats[r],
        );
        let wname = format!("{prefix}.dw{r}.weight");
        let (d_in, d_weight, d_bias) = depthwise_conv_backward(
            &cache.conv_inputs[r - 1],
            cache.batch,
            cache.grid,
            w.mat(&wname),
            r,
            &d_dw,
        );
        grads.mat_mut(&wname).scaled_add(1.0, &d_weight);
        grads
            .vec_mut(&format!("{prefix}.dw{r}.bias"))
            .scaled_add(1.0, &d_bias.row(0));
        for (f, d_feat) in d_feats.iter_mut().enumerate().take(r) {
            d_feat.scaled_add(1.0, &d_in.slice(s![.., f * g..(f + 1) * g]));
        }
    }
    linear_backward(w, grads, &format!("{prefix}.in"), &cache.x, &d_feats[0])
}
