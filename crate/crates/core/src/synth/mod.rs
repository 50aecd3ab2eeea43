//! Synthetic wide-angle scenes with exact labels: ground-truth correction flow, face
//! masks, and line/landmark annotations in both distorted and ideal coordinates.

pub mod dataset;
pub mod distortion;
pub mod scene;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flow_to_seg, FlowMap, Image, DEFAULT_DELTA};

pub use dataset::{
    decode_annotations, decode_manifest, read_dataset, write_dataset, DatasetManifest,
    ManifestEntry, DATASET_VERSION,
};
pub use distortion::{random_params, DistortionParams, DistortionRanges, FaceBulge};
pub use scene::{gen_scene, LineKind, Scene, SceneFace, SceneLine, FACE_LANDMARKS, LINE_POINTS};

/// A point sequence in distorted-image coordinates with its ideal counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub distorted: Vec<(f64, f64)>,
    pub reference: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotations {
    pub lines: Vec<PointSet>,
    pub faces: Vec<PointSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<DistortionParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub distorted: Image,
    pub flow_gt: Option<FlowMap>,
    pub face_mask: Option<Array2<u8>>,
    pub annotations: Option<Annotations>,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.flow_gt.is_some() && self.face_mask.is_some()
    }

    /// Drops every label, keeping only the image.
    pub fn into_unlabeled(self) -> Self {
        Self {
            flow_gt: None,
            face_mask: None,
            annotations: None,
            ..self
        }
    }

    pub fn require_labels(&self) -> Result<(&FlowMap, &Array2<u8>)> {
        match (&self.flow_gt, &self.face_mask) {
            (Some(f), Some(m)) => Ok((f, m)),
            _ => Err(Error::MissingLabels {
                id: self.id.clone(),
                what: "flow and face mask".into(),
            }),
        }
    }
}

/// Renders the distorted view of `scene` and derives every label from the analytic map.
///
/// The flow is `D(p) − p` at integer pixels, rounded to `f32`. Annotated ideal points
/// sit on integer pixels, so their distorted positions are taken as `p + F(p)` with the
/// stored flow; correcting with the ground-truth flow then returns them exactly.
pub fn gen_distortion(scene: &Scene, params: &DistortionParams) -> Result<Sample> {
    let (h, w) = (scene.height, scene.width);
    params.check_invertible(h, w)?;
    let flow = Array3::from_shape_fn((2, h, w), |(c, i, j)| {
        let (mx, my) = params.map(j as f64, i as f64);
        let d = if c == 0 { mx - j as f64 } else { my - i as f64 };
        d as f32 as f64
    });
    let flow = FlowMap::new(flow)?;
    let mut rgb = Array3::zeros((3, h, w));
    let mut mask = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let (px, py) = params.invert(j as f64, i as f64)?;
            let c = scene.color_at(px, py);
            for k in 0..3 {
                rgb[[k, i, j]] = c[k];
            }
            mask[[i, j]] = scene.faces.iter().any(|f| f.contains(px, py)) as u8;
        }
    }
    let distorted = Image::from_clamped(rgb)?.quantized_u8();
    let map_points = |pts: Vec<(f64, f64)>| -> Result<PointSet> {
        let distorted = pts
            .iter()
            .map(|&(x, y)| {
                let (fx, fy) = flow.at(y as usize, x as usize);
                let q = (x + fx, y + fy);
                if q.0 < 0.0 || q.1 < 0.0 || q.0 > (w - 1) as f64 || q.1 > (h - 1) as f64 {
                    return Err(Error::InvalidInput(format!(
                        "annotation ({x}, {y}) maps outside the frame"
                    )));
                }
                Ok(q)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PointSet {
            distorted,
            reference: pts,
        })
    };
    let lines = scene
        .lines
        .iter()
        .map(|l| map_points(l.ideal_points()))
        .collect::<Result<_>>()?;
    let faces = scene
        .faces
        .iter()
        .map(|f| map_points(f.ideal_landmarks()))
        .collect::<Result<_>>()?;
    Ok(Sample {
        id: String::new(),
        distorted,
        flow_gt: Some(flow),
        face_mask: Some(mask),
        annotations: Some(Annotations {
            lines,
            faces,
            params: Some(params.clone()),
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub height: usize,
    pub width: usize,
    pub ranges: DistortionRanges,
    /// Resample until the ground-truth flow produces all three segmentation classes.
    pub require_all_classes: bool,
}

impl GenOptions {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ranges: DistortionRanges::default(),
            require_all_classes: true,
        }
    }
}

const MAX_ATTEMPTS: u64 = 64;

/// Labeled sample number `index` of the stream identified by `seed`.
pub fn generate_sample(seed: u64, index: u64, opts: &GenOptions) -> Result<Sample> {
    generate_with_scene(seed, index, opts).map(|(_, s)| s)
}

/// Like [`generate_sample`], also returning the undistorted scene it was rendered from.
pub fn generate_with_scene(seed: u64, index: u64, opts: &GenOptions) -> Result<(Scene, Sample)> {
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let sub = seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let scene = gen_scene(sub, index, opts.height, opts.width)?;
        let params = random_params(&scene, &opts.ranges, sub, index);
        match gen_distortion(&scene, &params) {
            Ok(mut s) => {
                let flow = s.flow_gt.as_ref().expect("generated samples are labeled");
                if opts.require_all_classes
                    && flow_to_seg(flow, DEFAULT_DELTA)?.class_counts().contains(&0)
                {
                    last_err = Some(Error::InvalidInput(
                        "distortion too weak to produce all flow classes".into(),
                    ));
                    continue;
                }
                s.id = format!("{index:06}");
                return Ok((scene, s));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::InvalidInput(format!(
        "could not generate sample {index} in {MAX_ATTEMPTS} attempts: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// `count` samples; the first `round(count · labeled_frac)` keep their labels.
pub fn generate_dataset(count: usize, labeled_frac: f64, seed: u64, opts: &GenOptions) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&labeled_frac) {
        return Err(Error::InvalidInput(format!("labeled fraction {labeled_frac} outside [0, 1]")));
    }
    let labeled = (count as f64 * labeled_frac).round() as usize;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = generate_sample(seed, i as u64, opts)?;
            Ok(if i < labeled { s } else { s.into_unlabeled() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::warp_image;

    #[test]
    fn identity_distortion_is_exact() {
        let scene = gen_scene(4, 1, 64, 48).unwrap();
        let s = gen_distortion(&scene, &DistortionParams::identity(64, 48)).unwrap();
        assert!(s.flow_gt.unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(s.distorted, scene.render().quantized_u8());
    }

    #[test]
    fn ground_truth_flow_reconstructs_scene() {
        let opts = GenOptions::new(64, 48);
        for idx in 0..6 {
            let (scene, s) = generate_with_scene(11, idx, &opts).unwrap();
            let corrected = warp_image(&s.distorted, s.flow_gt.as_ref().unwrap()).unwrap();
            let ideal = scene.render();
            let psnr = corrected.psnr(&ideal, 4).unwrap();
            assert!(psnr > 35.0, "sample {idx}: PSNR {psnr:.2}");
        }
    }

    #[test]
    fn default_distortions_produce_all_classes_and_in_frame_annotations() {
        let opts = GenOptions::new(64, 48);
        for idx in 0..10 {
            let s = generate_sample(2, idx, &opts).unwrap();
            let counts = flow_to_seg(s.flow_gt.as_ref().unwrap(), DEFAULT_DELTA).unwrap().class_counts();
            assert!(counts.iter().all(|&c| c > 0));
            for set in s.annotations.unwrap().lines {
                assert!(set.distorted.iter().all(|&(x, y)| (0.0..=47.0).contains(&x) && (0.0..=63.0).contains(&y)));
            }
        }
    }

    #[test]
    fn radial_term_bends_lines() {
        let mut scene = gen_scene(0, 0, 64, 48).unwrap();
        scene.faces.clear();
        scene.lines = vec![SceneLine {
            kind: LineKind::Horizontal,
            start: (8, 2),
            points: LINE_POINTS,
            color: [0.0; 3],
        }];
        let mut params = DistortionParams::identity(64, 48);
        params.k1 = -0.15;
        params.k2 = 0.02;
        let s = gen_distortion(&scene, &params).unwrap();
        let pts = &s.annotations.unwrap().lines[0].distorted;
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let max_dev = pts
            .iter()
            .map(|&(x, y)| ((b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)).abs() / len)
            .fold(0.0, f64::max);
        assert!(max_dev > 0.5, "max deviation {max_dev}");
    }

    #[test]
    fn generation_is_deterministic_and_splits_labels() {
        let opts = GenOptions::new(64, 48);
        let a = generate_dataset(5, 0.4, 7, &opts).unwrap();
        let b = generate_dataset(5, 0.4, 7, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| s.is_labeled()).count(), 2);
        assert!(a[0].is_labeled() && !a[4].is_labeled());
        assert!(a[4].annotations.is_none());
    }
}
