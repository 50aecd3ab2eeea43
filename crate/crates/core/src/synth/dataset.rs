//! Directory layout: `<id>.png` (distorted image), `<id>.flo` (ground-truth flow),
//! `<id>.mask.png` (binary face mask), `<id>.anno.json` (lines, landmarks, distortion
//! parameters) and `manifest.json` listing every id with its labeled flag.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Annotations, PointSet, Sample};
use crate::error::{Error, Result};
use crate::io::flo::{read_flo, write_flo};
use crate::io::png::{read_image, read_mask, write_image, write_mask};
use crate::io::{read_bytes, write_bytes, DecodeError};

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    version: u32,
    #[serde(flatten)]
    annotations: Annotations,
}

fn corrupt(reason: impl Into<String>) -> DecodeError {
    DecodeError::Corrupt(reason.into())
}

fn check_version(bytes: &[u8]) -> std::result::Result<(), DecodeError> {
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(|e| corrupt(format!("bad json: {e}")))?;
    if probe.version != DATASET_VERSION {
        return Err(DecodeError::Version {
            found: probe.version,
            expected: DATASET_VERSION,
        });
    }
    Ok(())
}

/// Ids become file names, so they are restricted to a safe character set.
fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub fn decode_manifest(bytes: &[u8]) -> std::result::Result<DatasetManifest, DecodeError> {
    check_version(bytes)?;
    let m: DatasetManifest = serde_json::from_slice(bytes).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    let mut seen = HashSet::new();
    for e in &m.samples {
        if !valid_id(&e.id) {
            return Err(corrupt(format!("invalid sample id {:?}", e.id)));
        }
        if !seen.insert(e.id.as_str()) {
            return Err(corrupt(format!("duplicate sample id {:?}", e.id)));
        }
    }
    Ok(m)
}

fn check_point_set(kind: &str, set: &PointSet) -> std::result::Result<(), DecodeError> {
    if set.distorted.len() != set.reference.len() {
        return Err(corrupt(format!(
            "{kind} has {} distorted but {} reference points",
            set.distorted.len(),
            set.reference.len()
        )));
    }
    let finite = set
        .distorted
        .iter()
        .chain(set.reference.iter())
        .all(|(x, y)| x.is_finite() && y.is_finite());
    if !finite {
        return Err(corrupt(format!("{kind} has non-finite coordinates")));
    }
    Ok(())
}

pub fn decode_annotations(bytes: &[u8]) -> std::result::Result<Annotations, DecodeError> {
    check_version(bytes)?;
    let file: AnnotationFile = serde_json::from_slice(bytes).map_err(|e| corrupt(format!("bad annotations: {e}")))?;
    for set in &file.annotations.lines {
        check_point_set("line", set)?;
    }
    for set in &file.annotations.faces {
        check_point_set("face", set)?;
    }
    Ok(file.annotations)
}

pub fn encode_annotations(annotations: &Annotations) -> Vec<u8> {
    serde_json::to_vec_pretty(&AnnotationFile {
        version: DATASET_VERSION,
        annotations: annotations.clone(),
    })
    .expect("annotations serialize")
}

pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if !valid_id(&s.id) {
            return Err(Error::InvalidInput(format!("invalid sample id {:?}", s.id)));
        }
        write_image(&dir.join(format!("{}.png", s.id)), &s.distorted)?;
        if let Some(flow) = &s.flow_gt {
            write_flo(&dir.join(format!("{}.flo", s.id)), flow)?;
        }
        if let Some(mask) = &s.face_mask {
            write_mask(&dir.join(format!("{}.mask.png", s.id)), mask)?;
        }
        if let Some(anno) = &s.annotations {
            write_bytes(&dir.join(format!("{}.anno.json", s.id)), &encode_annotations(anno))?;
        }
        entries.push(ManifestEntry {
            id: s.id.clone(),
            labeled: s.is_labeled(),
        });
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        samples: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_bytes(&dir.join(MANIFEST_FILE), &json)
}

/// Reads every sample listed in the manifest. Labeled samples must have their flow and
/// mask files; annotation files are optional for unlabeled samples.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = decode_manifest(&read_bytes(&manifest_path)?).map_err(|e| e.at(&manifest_path))?;
    let mut out = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let id = &entry.id;
        let image_path = dir.join(format!("{id}.png"));
        let distorted = read_image(&image_path)?;
        let dims = (distorted.height(), distorted.width());
        let anno_path = dir.join(format!("{id}.anno.json"));
        let (flow_gt, face_mask) = if entry.labeled {
            let flow_path = dir.join(format!("{id}.flo"));
            let flow = read_flo(&flow_path)?;
            if (flow.height(), flow.width()) != dims {
                return Err(Error::corrupt(&flow_path, format!("flow size does not match image {dims:?}")));
            }
            let mask_path = dir.join(format!("{id}.mask.png"));
            let mask = read_mask(&mask_path)?;
            if mask.dim() != dims {
                return Err(Error::corrupt(&mask_path, format!("mask size does not match image {dims:?}")));
            }
            if mask.iter().any(|&v| v > 1) {
                return Err(Error::corrupt(&mask_path, "face mask is not binary"));
            }
            (Some(flow), Some(mask))
        } else {
            (None, None)
        };
        let annotations = if entry.labeled || anno_path.exists() {
            Some(decode_annotations(&read_bytes(&anno_path)?).map_err(|e| e.at(&anno_path))?)
        } else {
            None
        };
        out.push(Sample {
            id: id.clone(),
            distorted,
            flow_gt,
            face_mask,
            annotations,
        });
    }
    Ok(out)
}
