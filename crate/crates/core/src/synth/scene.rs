use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Image;

/// Annotated points per line (fewer on frames too small to hold them).
pub const LINE_POINTS: usize = 32;
/// Landmarks per face: boundary points first, then interior features.
pub const FACE_LANDMARKS: usize = 16;
const FACE_BOUNDARY: usize = 12;
/// Minimum gap between a face disk and the frame edge, in pixels.
pub const FACE_MARGIN: f64 = 4.0;

const LINE_SIGMA: f64 = 1.8;
const EDGE_SOFTNESS: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Horizontal,
    Vertical,
    Diagonal,
    AntiDiagonal,
}

impl LineKind {
    fn step(self) -> (i64, i64) {
        match self {
            LineKind::Horizontal => (1, 0),
            LineKind::Vertical => (0, 1),
            LineKind::Diagonal => (1, 1),
            LineKind::AntiDiagonal => (1, -1),
        }
    }
}

/// A straight scene line; the annotated points are consecutive integer pixels on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLine {
    pub kind: LineKind,
    pub start: (i64, i64),
    pub points: usize,
    pub color: [f64; 3],
}

impl SceneLine {
    pub fn ideal_points(&self) -> Vec<(f64, f64)> {
        let (dx, dy) = self.kind.step();
        (0..self.points as i64)
            .map(|k| ((self.start.0 + k * dx) as f64, (self.start.1 + k * dy) as f64))
            .collect()
    }

    /// Distance from `(x, y)` to the segment, extended a little past its annotated ends.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = self.kind.step();
        let len = ((dx * dx + dy * dy) as f64).sqrt();
        let (ux, uy) = (dx as f64 / len, dy as f64 / len);
        let (px, py) = (x - self.start.0 as f64, y - self.start.1 as f64);
        let span = (self.points - 1) as f64 * len;
        let t = (px * ux + py * uy).clamp(-4.0, span + 4.0);
        ((px - t * ux).powi(2) + (py - t * uy).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFace {
    pub center: (f64, f64),
    pub radius: f64,
    pub skin: [f64; 3],
}

impl SceneFace {
    /// Boundary points on the circle, then eyes, nose and mouth, rounded to integer pixels.
    pub fn ideal_landmarks(&self) -> Vec<(f64, f64)> {
        let (cx, cy) = self.center;
        let r = self.radius;
        let mut pts: Vec<(f64, f64)> = (0..FACE_BOUNDARY)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / FACE_BOUNDARY as f64;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        pts.extend([
            (cx - 0.4 * r, cy - 0.3 * r),
            (cx + 0.4 * r, cy - 0.3 * r),
            (cx, cy + 0.1 * r),
            (cx, cy + 0.5 * r),
        ]);
        pts.into_iter().map(|(x, y)| (x.round(), y.round())).collect()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center.0).powi(2) + (y - self.center.1).powi(2) <= self.radius * self.radius
    }
}

/// A procedurally generated scene that can be sampled at any real coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub top: [f64; 3],
    pub bottom: [f64; 3],
    pub lines: Vec<SceneLine>,
    pub faces: Vec<SceneFace>,
}

fn smoothstep_edge(d: f64) -> f64 {
    // 1 inside (d < 0), 0 outside, logistic transition of width EDGE_SOFTNESS.
    1.0 / (1.0 + (d / (0.5 * EDGE_SOFTNESS)).exp())
}

fn blend(base: &mut [f64; 3], color: [f64; 3], alpha: f64) {
    for c in 0..3 {
        base[c] = base[c] * (1.0 - alpha) + color[c] * alpha;
    }
}

impl Scene {
    /// RGB value at `(x, y)`; defined everywhere, including outside the frame.
    pub fn color_at(&self, x: f64, y: f64) -> [f64; 3] {
        let t = (y / self.height.max(1) as f64).clamp(-0.5, 1.5);
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            rgb[c] = (self.top[c] * (1.0 - t) + self.bottom[c] * t).clamp(0.0, 1.0);
        }
        for line in &self.lines {
            let d = line.distance(x, y);
            let alpha = 0.85 * (-0.5 * (d / LINE_SIGMA).powi(2)).exp();
            blend(&mut rgb, line.color, alpha);
        }
        for face in &self.faces {
            let (cx, cy) = face.center;
            let r = face.radius;
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r;
            blend(&mut rgb, face.skin, smoothstep_edge(d));
            let feature = [0.15, 0.1, 0.1];
            for (ex, ey, er) in [
                (cx - 0.4 * r, cy - 0.3 * r, 0.18 * r),
                (cx + 0.4 * r, cy - 0.3 * r, 0.18 * r),
                (cx, cy + 0.5 * r, 0.15 * r),
            ] {
                let d = ((x - ex).powi(2) + (y - ey).powi(2)).sqrt() - er;
                blend(&mut rgb, feature, 0.8 * smoothstep_edge(d));
            }
        }
        rgb
    }

    pub fn render(&self) -> Image {
        let data = Array3::from_shape_fn((3, self.height, self.width), |(c, i, j)| {
            self.color_at(j as f64, i as f64)[c]
        });
        Image::from_clamped(data).expect("valid render")
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn random_line(rng: &mut ChaCha8Rng, height: usize, width: usize) -> SceneLine {
    let kinds = [LineKind::Horizontal, LineKind::Vertical, LineKind::Diagonal, LineKind::AntiDiagonal];
    let kind = kinds[rng.random_range(0..kinds.len())];
    let (h, w) = (height as i64, width as i64);
    // Keep annotated points two pixels inside the frame.
    let inner = |n: i64| (n - 4).max(1);
    let points = match kind {
        LineKind::Horizontal => inner(w),
        LineKind::Vertical => inner(h),
        _ => inner(h.min(w)),
    }
    .min(LINE_POINTS as i64) as usize;
    let len = points as i64 - 1;
    let pick = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let start = match kind {
        LineKind::Horizontal => (pick(rng, 2, w - 3 - len), pick(rng, 2, h - 3)),
        LineKind::Vertical => (pick(rng, 2, w - 3), pick(rng, 2, h - 3 - len)),
        LineKind::Diagonal => (pick(rng, 2, w - 3 - len), pick(rng, 2, h - 3 - len)),
        LineKind::AntiDiagonal => (pick(rng, 2, w - 3 - len), pick(rng, 2 + len, h - 3)),
    };
    SceneLine {
        kind,
        start,
        points,
        color: random_color(rng, 0.0, 0.35),
    }
}

fn random_faces(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<SceneFace> {
    let (h, w) = (height as f64, width as f64);
    let max_r = ((h.min(w) - 1.0) / 2.0 - FACE_MARGIN - 0.5).min(8.0);
    if max_r < 2.0 {
        return Vec::new();
    }
    let min_r = (0.6 * max_r).max(2.0);
    let wanted = rng.random_range(1..=3);
    let mut faces: Vec<SceneFace> = Vec::new();
    for _ in 0..50 {
        if faces.len() == wanted {
            break;
        }
        let r = rng.random_range(min_r..=max_r);
        let lo = r + FACE_MARGIN;
        let cx = rng.random_range(lo..=w - 1.0 - lo);
        let cy = rng.random_range(lo..=h - 1.0 - lo);
        let clear = faces.iter().all(|f| {
            ((f.center.0 - cx).powi(2) + (f.center.1 - cy).powi(2)).sqrt() > f.radius + r + 3.0
        });
        if clear {
            faces.push(SceneFace {
                center: (cx, cy),
                radius: r,
                skin: [
                    rng.random_range(0.7..0.95),
                    rng.random_range(0.5..0.75),
                    rng.random_range(0.4..0.6),
                ],
            });
        }
    }
    faces
}

/// Random scene for `(seed, index)`: a two-tone background, 3–5 lines and 1–3 faces.
pub fn gen_scene(seed: u64, index: u64, height: usize, width: usize) -> Result<Scene> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidInput(format!("scene size {height}×{width} below 8×8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let top = random_color(&mut rng, 0.45, 0.95);
    let bottom = random_color(&mut rng, 0.45, 0.95);
    let n_lines = rng.random_range(3..=5);
    let lines = (0..n_lines).map(|_| random_line(&mut rng, height, width)).collect();
    let faces = random_faces(&mut rng, height, width);
    Ok(Scene {
        height,
        width,
        top,
        bottom,
        lines,
        faces,
    })
}
