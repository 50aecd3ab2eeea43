use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};

/// Horizontal Sobel kernel, applied as a correlation. The vertical kernel is its transpose.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

#[inline]
fn kx(a: usize, b: usize) -> f64 {
    SOBEL_X[a][b]
}

#[inline]
fn ky(a: usize, b: usize) -> f64 {
    SOBEL_X[b][a]
}

#[inline]
fn clamp_idx(i: usize, d: usize, n: usize) -> usize {
    // d ∈ {0,1,2} encodes the offset d − 1
    (i + d).saturating_sub(1).min(n - 1)
}

fn check(field: &ArrayView3<f64>) -> Result<()> {
    let (_, h, w) = field.dim();
    if h < 3 || w < 3 {
        return Err(Error::InvalidInput(format!(
            "sobel needs H, W >= 3, got {h}×{w}"
        )));
    }
    Ok(())
}

/// Per-channel Sobel responses `(Gx, Gy)` with replicate padding.
pub fn sobel(field: ArrayView3<f64>) -> Result<(Array3<f64>, Array3<f64>)> {
    check(&field)?;
    let (k, h, w) = field.dim();
    let mut gx = Array3::zeros((k, h, w));
    let mut gy = Array3::zeros((k, h, w));
    for c in 0..k {
        for i in 0..h {
            for j in 0..w {
                let mut sx = 0.0;
                let mut sy = 0.0;
                for a in 0..3 {
                    let ii = clamp_idx(i, a, h);
                    for b in 0..3 {
                        let v = field[[c, ii, clamp_idx(j, b, w)]];
                        sx += kx(a, b) * v;
                        sy += ky(a, b) * v;
                    }
                }
                gx[[c, i, j]] = sx;
                gy[[c, i, j]] = sy;
            }
        }
    }
    Ok((gx, gy))
}

/// Adjoint of [`sobel`]: maps gradients w.r.t. `(Gx, Gy)` back onto the field.
pub fn sobel_adjoint(grad_x: ArrayView3<f64>, grad_y: ArrayView3<f64>) -> Result<Array3<f64>> {
    check(&grad_x)?;
    if grad_x.dim() != grad_y.dim() {
        return Err(Error::shape(
            format!("{:?}", grad_x.dim()),
            format!("{:?}", grad_y.dim()),
        ));
    }
    let (k, h, w) = grad_x.dim();
    let mut out = Array3::zeros((k, h, w));
    for c in 0..k {
        for i in 0..h {
            for j in 0..w {
                let gx = grad_x[[c, i, j]];
                let gy = grad_y[[c, i, j]];
                for a in 0..3 {
                    let ii = clamp_idx(i, a, h);
                    for b in 0..3 {
                        out[[c, ii, clamp_idx(j, b, w)]] += kx(a, b) * gx + ky(a, b) * gy;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_field_has_zero_response() {
        let f = Array3::from_elem((2, 5, 6), 3.25);
        let (gx, gy) = sobel(f.view()).unwrap();
        assert!(gx.iter().chain(gy.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp_interior_response() {
        let f = Array3::from_shape_fn((1, 5, 7), |(_, _, j)| j as f64);
        let (gx, gy) = sobel(f.view()).unwrap();
        for i in 0..5 {
            for j in 1..6 {
                assert_eq!(gx[[0, i, j]], 8.0);
            }
            // one-sided difference at the replicated borders
            assert_eq!(gx[[0, i, 0]], 4.0);
            assert_eq!(gx[[0, i, 6]], 4.0);
        }
        assert!(gy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_function_has_constant_interior_response() {
        let f = Array3::from_shape_fn((1, 6, 6), |(_, i, j)| 0.5 * j as f64 - 1.5 * i as f64 + 2.0);
        let (gx, gy) = sobel(f.view()).unwrap();
        for i in 1..5 {
            for j in 1..5 {
                assert!((gx[[0, i, j]] - 4.0).abs() < 1e-12);
                assert!((gy[[0, i, j]] + 12.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_small_fields() {
        assert!(sobel(Array3::zeros((1, 2, 5)).view()).is_err());
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f = Array3::from_shape_fn((2, 5, 4), |_| rng.random_range(-1.0..1.0));
        let u = Array3::from_shape_fn((2, 5, 4), |_| rng.random_range(-1.0..1.0));
        let v = Array3::from_shape_fn((2, 5, 4), |_| rng.random_range(-1.0..1.0));
        let (gx, gy) = sobel(f.view()).unwrap();
        let lhs = (&gx * &u).sum() + (&gy * &v).sum();
        let adj = sobel_adjoint(u.view(), v.view()).unwrap();
        let rhs = (&f * &adj).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
