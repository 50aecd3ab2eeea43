use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Image;

/// Upper bounds of the photometric perturbations; each view draws its own values
/// uniformly from `[0, max]`. A drawn value of zero skips that operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub sharpen_amount: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.03,
            blur_sigma: 1.2,
            sharpen_amount: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            sharpen_amount: 0.0,
        }
    }
}

/// Radius of the blur used inside the unsharp mask.
const SHARPEN_SIGMA: f64 = 1.0;

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur_plane(plane: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let k = kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = plane.dim();
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let rows: Array2<f64> = Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * plane[[i, clamp(j as i64 + t as i64 - r, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * rows[[clamp(i as i64 + t as i64 - r, h), j]])
            .sum::<f64>()
    })
}

/// Separable Gaussian blur with replicate borders.
pub fn gaussian_blur(data: &Array3<f64>, sigma: f64) -> Array3<f64> {
    let mut out = data.clone();
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(data.axis_iter(Axis(0))) {
        dst.assign(&blur_plane(&src.to_owned(), sigma));
    }
    out
}

/// One photometric view drawn from `rng`: blur, then unsharp masking, then noise.
pub fn augment(image: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Image {
    let draw = |rng: &mut ChaCha8Rng, max: f64| if max > 0.0 { rng.random_range(0.0..=max) } else { 0.0 };
    let blur = draw(rng, cfg.blur_sigma);
    let amount = draw(rng, cfg.sharpen_amount);
    let noise = draw(rng, cfg.noise_sigma);
    let mut x = image.data().clone();
    if blur > 0.0 {
        x = gaussian_blur(&x, blur);
    }
    if amount > 0.0 {
        let low = gaussian_blur(&x, SHARPEN_SIGMA);
        x = &x + &((&x - &low) * amount);
    }
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).expect("valid sigma");
        x.mapv_inplace(|v| v + n.sample(rng));
    }
    Image::from_clamped(x).expect("augmented image keeps its shape")
}

/// Two independently augmented views of one image. Geometry is never altered, so both
/// views share the same correct flow.
pub fn augment_pair(image: &Image, cfg: &AugmentConfig, seed: u64) -> (Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = augment(image, cfg, &mut rng);
    let b = augment(image, cfg, &mut rng);
    (a, b)
}
