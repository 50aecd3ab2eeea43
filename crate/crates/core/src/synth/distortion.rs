use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{Error, Result};

/// Local radial push centred on a face: `s·(p − c)·exp(−|p − c|² / 2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBulge {
    pub center: (f64, f64),
    pub strength: f64,
    pub sigma: f64,
}

/// Analytic map `D` from ideal to distorted coordinates:
/// `D(p) = c + v·(1 + k0 + k1·ρ² + k2·ρ⁴) + Σ bulges`, with `v = p − c` and
/// `ρ = |v| / norm_radius`. The correction flow at `p` is `D(p) − p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    /// Global scale offset; negative values pull content towards the centre.
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub center: (f64, f64),
    pub norm_radius: f64,
    pub bulges: Vec<FaceBulge>,
}

impl DistortionParams {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            k0: 0.0,
            k1: 0.0,
            k2: 0.0,
            center: frame_center(height, width),
            norm_radius: half_diagonal(height, width),
            bulges: Vec::new(),
        }
    }

    /// `D(p)` and its Jacobian `[[∂x'/∂x, ∂x'/∂y], [∂y'/∂x, ∂y'/∂y]]`.
    pub fn map_with_jacobian(&self, x: f64, y: f64) -> ((f64, f64), [[f64; 2]; 2]) {
        let (vx, vy) = (x - self.center.0, y - self.center.1);
        let r2 = self.norm_radius * self.norm_radius;
        let u = (vx * vx + vy * vy) / r2;
        let s = 1.0 + self.k0 + self.k1 * u + self.k2 * u * u;
        // ∂s/∂v = (k1 + 2·k2·u)·2v/R²
        let ds = (self.k1 + 2.0 * self.k2 * u) * 2.0 / r2;
        let mut out = (self.center.0 + vx * s, self.center.1 + vy * s);
        let mut j = [
            [s + vx * ds * vx, vx * ds * vy],
            [vy * ds * vx, s + vy * ds * vy],
        ];
        for b in &self.bulges {
            let (dx, dy) = (x - b.center.0, y - b.center.1);
            let inv = 1.0 / (b.sigma * b.sigma);
            let e = (-0.5 * (dx * dx + dy * dy) * inv).exp();
            let k = b.strength * e;
            out.0 += k * dx;
            out.1 += k * dy;
            j[0][0] += k * (1.0 - dx * dx * inv);
            j[0][1] -= k * dx * dy * inv;
            j[1][0] -= k * dx * dy * inv;
            j[1][1] += k * (1.0 - dy * dy * inv);
        }
        (out, j)
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        self.map_with_jacobian(x, y).0
    }

    /// Solves `D(p) = q` by Newton's method starting from `q`.
    pub fn invert(&self, qx: f64, qy: f64) -> Result<(f64, f64)> {
        let (mut px, mut py) = (qx, qy);
        for _ in 0..60 {
            let ((mx, my), j) = self.map_with_jacobian(px, py);
            let (rx, ry) = (mx - qx, my - qy);
            if rx.abs() < 1e-11 && ry.abs() < 1e-11 {
                return Ok((px, py));
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det > 0.0) {
                break;
            }
            let sx = (j[1][1] * rx - j[0][1] * ry) / det;
            let sy = (-j[1][0] * rx + j[0][0] * ry) / det;
            // Damp very large steps so a bad start cannot jump across the frame.
            let norm = (sx * sx + sy * sy).sqrt();
            let damp = if norm > 8.0 { 8.0 / norm } else { 1.0 };
            px -= damp * sx;
            py -= damp * sy;
        }
        Err(Error::InvalidInput(format!(
            "distortion inverse did not converge at ({qx}, {qy})"
        )))
    }

    /// Checks that every frame pixel has a preimage and that `D` preserves orientation
    /// on the region those preimages span.
    pub fn check_invertible(&self, height: usize, width: usize) -> Result<()> {
        let finite = [self.k0, self.k1, self.k2, self.center.0, self.center.1, self.norm_radius]
            .into_iter()
            .chain(self.bulges.iter().flat_map(|b| [b.center.0, b.center.1, b.strength, b.sigma]))
            .all(f64::is_finite);
        if !finite || !(self.norm_radius > 0.0) || self.bulges.iter().any(|b| !(b.sigma > 0.0)) {
            return Err(Error::InvalidInput("distortion parameters must be finite with positive radii".into()));
        }
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..height {
            for jx in 0..width {
                let (x, y) = (jx as f64, i as f64);
                let (px, py) = self.invert(x, y)?;
                lo = (lo.0.min(px), lo.1.min(py));
                hi = (hi.0.max(px), hi.1.max(py));
            }
        }
        // Orientation must be preserved on the whole preimage region, not only at pixels.
        let (x0, y0) = (lo.0 - 2.0, lo.1 - 2.0);
        let (sx, sy) = (hi.0 - lo.0 + 4.0, hi.1 - lo.1 + 4.0);
        let steps = 4 * height.max(width);
        for a in 0..=steps {
            for b in 0..=steps {
                let x = x0 + sx * a as f64 / steps as f64;
                let y = y0 + sy * b as f64 / steps as f64;
                let (_, j) = self.map_with_jacobian(x, y);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                if !(det > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "distortion folds over near ({x:.1}, {y:.1}): jacobian determinant {det:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn frame_center(height: usize, width: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

pub fn half_diagonal(height: usize, width: usize) -> f64 {
    let (cx, cy) = frame_center(height, width);
    (cx * cx + cy * cy).sqrt()
}

/// Ranges used by [`random_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionRanges {
    pub k0: (f64, f64),
    pub k1: (f64, f64),
    pub k2: (f64, f64),
    pub bulge_strength: (f64, f64),
    /// Bulge σ as a multiple of the face radius.
    pub bulge_sigma_scale: f64,
    /// Maximum offset of the distortion centre from the frame centre, in pixels.
    pub center_jitter: f64,
}

impl Default for DistortionRanges {
    fn default() -> Self {
        Self {
            k0: (-0.18, -0.12),
            k1: (-0.15, -0.08),
            k2: (0.02, 0.04),
            bulge_strength: (0.08, 0.2),
            bulge_sigma_scale: 1.0,
            center_jitter: 1.5,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random barrel-type distortion with one bulge per scene face.
pub fn random_params(scene: &Scene, ranges: &DistortionRanges, seed: u64, index: u64) -> DistortionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd157_0b7e_a5ed_0001);
    rng.set_stream(index);
    let (cx, cy) = frame_center(scene.height, scene.width);
    let j = ranges.center_jitter;
    DistortionParams {
        k0: draw(&mut rng, ranges.k0),
        k1: draw(&mut rng, ranges.k1),
        k2: draw(&mut rng, ranges.k2),
        center: (cx + draw(&mut rng, (-j, j)), cy + draw(&mut rng, (-j, j))),
        norm_radius: half_diagonal(scene.height, scene.width),
        bulges: scene
            .faces
            .iter()
            .map(|f| FaceBulge {
                center: f.center,
                strength: draw(&mut rng, ranges.bulge_strength),
                sigma: f.radius * ranges.bulge_sigma_scale,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::gen_scene;

    #[test]
    fn jacobian_matches_finite_differences() {
        let scene = gen_scene(3, 0, 64, 48).unwrap();
        let p = random_params(&scene, &DistortionRanges::default(), 3, 0);
        let h = 1e-6;
        for &(x, y) in &[(3.0, 5.0), (20.5, 31.0), (47.0, 63.0), (-10.0, 70.0)] {
            let (_, j) = p.map_with_jacobian(x, y);
            let (ax, ay) = p.map(x + h, y);
            let (bx, by) = p.map(x - h, y);
            let (cx, cy) = p.map(x, y + h);
            let (dx, dy) = p.map(x, y - h);
            let num = [[(ax - bx) / (2.0 * h), (cx - dx) / (2.0 * h)], [(ay - by) / (2.0 * h), (cy - dy) / (2.0 * h)]];
            for r in 0..2 {
                for c in 0..2 {
                    assert!((j[r][c] - num[r][c]).abs() < 1e-6, "{r}{c}: {} vs {}", j[r][c], num[r][c]);
                }
            }
        }
    }

    #[test]
    fn default_ranges_are_invertible() {
        for idx in 0..20 {
            let scene = gen_scene(9, idx, 64, 48).unwrap();
            let p = random_params(&scene, &DistortionRanges::default(), 9, idx);
            p.check_invertible(64, 48).unwrap();
            let (x, y) = p.invert(10.25, 50.5).unwrap();
            let (mx, my) = p.map(x, y);
            assert!((mx - 10.25).abs() < 1e-9 && (my - 50.5).abs() < 1e-9);
        }
    }

    #[test]
    fn folding_map_is_rejected() {
        let mut p = DistortionParams::identity(64, 48);
        p.k1 = -0.9;
        assert!(p.check_invertible(64, 48).is_err());
    }
}
