//! Patch embedding, 2×2 patch merging and patch expanding.

use ndarray::{s, Array2};

use super::linear::{linear_backward, linear_forward};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::msunet::feature::FeatureMap;
use crate::msunet::ModelWeights;

/// Flattens non-overlapping `p×p` patches into rows ordered `(batch, row, col)`;
/// columns are ordered `(channel, dy, dx)`.
pub fn patchify(images: &[Image], patch: usize) -> Result<(Array2<f64>, (usize, usize))> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
    let (c, h, w) = first.data().dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidInput(format!(
            "image {h}×{w} not divisible by patch size {patch}"
        )));
    }
    if let Some(bad) = images.iter().find(|im| im.data().dim() != (c, h, w)) {
        return Err(Error::shape(
            format!("{c}×{h}×{w}"),
            format!("{:?}", bad.data().dim()),
        ));
    }
    let (gh, gw) = (h / patch, w / patch);
    let cols = c * patch * patch;
    let mut out = Array2::zeros((images.len() * gh * gw, cols));
    for (b, im) in images.iter().enumerate() {
        let d = im.data();
        for i in 0..gh {
            for j in 0..gw {
                let mut row = out.row_mut(b * gh * gw + i * gw + j);
                let mut k = 0;
                for ch in 0..c {
                    for a in 0..patch {
                        for e in 0..patch {
                            row[k] = d[[ch, i * patch + a, j * patch + e]];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((out, (gh, gw)))
}

/// Linear projection of flattened patches to `C` channels.
pub fn patch_embed_forward(
    w: &ModelWeights,
    name: &str,
    images: &[Image],
    patch: usize,
) -> Result<(FeatureMap, Array2<f64>)> {
    let (patches, grid) = patchify(images, patch)?;
    let expected = w.mat(&format!("{name}.weight")).nrows();
    if patches.ncols() != expected {
        return Err(Error::shape(
            format!("{expected} values per patch"),
            format!("{}", patches.ncols()),
        ));
    }
    let y = linear_forward(w, name, &patches);
    Ok((FeatureMap::grid(y, images.len(), grid)?, patches))
}

/// Accumulates parameter gradients; image gradients are not needed.
pub fn patch_embed_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    name: &str,
    patches: &Array2<f64>,
    dy: &Array2<f64>,
) {
    let _ = linear_backward(w, grads, name, patches, dy);
}

fn merge_gather(x: &FeatureMap) -> Array2<f64> {
    let (gh, gw) = x.grid;
    let (oh, ow) = (gh / 2, gw / 2);
    let c = x.channels();
    let mut out = Array2::zeros((x.batch * oh * ow, 4 * c));
    for b in 0..x.batch {
        for i in 0..oh {
            for j in 0..ow {
                let r = b * oh * ow + i * ow + j;
                for (q, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    let src = b * gh * gw + (2 * i + di) * gw + 2 * j + dj;
                    out.slice_mut(s![r, q * c..(q + 1) * c]).assign(&x.data.row(src));
                }
            }
        }
    }
    out
}

/// Concatenates each 2×2 neighbourhood (`4C`) and projects to `2C`, halving the grid.
pub fn patch_merge_forward(
    w: &ModelWeights,
    name: &str,
    x: &FeatureMap,
) -> Result<(FeatureMap, Array2<f64>)> {
    x.expect_grid()?;
    let (gh, gw) = x.grid;
    if gh % 2 != 0 || gw % 2 != 0 {
        return Err(Error::InvalidInput(format!("cannot merge odd grid {gh}×{gw}")));
    }
    let gathered = merge_gather(x);
    let y = linear_forward(w, name, &gathered);
    Ok((FeatureMap::grid(y, x.batch, (gh / 2, gw / 2))?, gathered))
}

/// Returns the gradient on the un-merged grid `in_grid`.
pub fn patch_merge_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    name: &str,
    gathered: &Array2<f64>,
    dy: &Array2<f64>,
    batch: usize,
    in_grid: (usize, usize),
) -> Array2<f64> {
    let d_gathered = linear_backward(w, grads, name, gathered, dy);
    let (gh, gw) = in_grid;
    let (oh, ow) = (gh / 2, gw / 2);
    let c = d_gathered.ncols() / 4;
    let mut dx = Array2::zeros((batch * gh * gw, c));
    for b in 0..batch {
        for i in 0..oh {
            for j in 0..ow {
                let r = b * oh * ow + i * ow + j;
                for (q, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    let dst = b * gh * gw + (2 * i + di) * gw + 2 * j + dj;
                    dx.row_mut(dst).assign(&d_gathered.slice(s![r, q * c..(q + 1) * c]));
                }
            }
        }
    }
    dx
}

/// Projects each token then spreads its channels over a `factor×factor` block:
/// `(g_h×g_w, C) → (factor·g_h × factor·g_w, C_out)` with `C_out = out_dim / factor²`.
pub fn patch_expand_forward(
    w: &ModelWeights,
    name: &str,
    x: &FeatureMap,
    factor: usize,
) -> Result<FeatureMap> {
    x.expect_grid()?;
    let y = linear_forward(w, name, &x.data);
    let f2 = factor * factor;
    if factor == 0 || y.ncols() % f2 != 0 {
        return Err(Error::shape(
            format!("projection width divisible by {f2}"),
            y.ncols().to_string(),
        ));
    }
    let c_out = y.ncols() / f2;
    let (gh, gw) = x.grid;
    let (oh, ow) = (gh * factor, gw * factor);
    let mut out = Array2::zeros((x.batch * oh * ow, c_out));
    for b in 0..x.batch {
        for i in 0..gh {
            for j in 0..gw {
                let src = b * gh * gw + i * gw + j;
                for a in 0..factor {
                    for e in 0..factor {
                        let dst = b * oh * ow + (i * factor + a) * ow + j * factor + e;
                        let q = a * factor + e;
                        out.row_mut(dst).assign(&y.slice(s![src, q * c_out..(q + 1) * c_out]));
                    }
                }
            }
        }
    }
    FeatureMap::grid(out, x.batch, (oh, ow))
}

/// `x` is the forward input on the coarse grid.
pub fn patch_expand_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    name: &str,
    x: &FeatureMap,
    factor: usize,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let c_out = dy.ncols();
    let (gh, gw) = x.grid;
    let (oh, ow) = (gh * factor, gw * factor);
    let mut d_proj = Array2::zeros((x.data.nrows(), c_out * factor * factor));
    for b in 0..x.batch {
        for i in 0..gh {
            for j in 0..gw {
                let src = b * gh * gw + i * gw + j;
                for a in 0..factor {
                    for e in 0..factor {
                        let dst = b * oh * ow + (i * factor + a) * ow + j * factor + e;
                        let q = a * factor + e;
                        d_proj
                            .slice_mut(s![src, q * c_out..(q + 1) * c_out])
                            .assign(&dy.row(dst));
                    }
                }
            }
        }
    }
    linear_backward(w, grads, name, &x.data, &d_proj)
}
