use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_W_FACE: f64 = 3.0;
pub const DEFAULT_W_BG: f64 = 1.0;

/// Strictly positive per-pixel loss weights, heavier on faces.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    data: Array2<f64>,
}

impl WeightMask {
    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidInput(format!("weight {value} must be positive")));
        }
        Ok(Self {
            data: Array2::from_elem((height, width), value),
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Face pixels get `w_face`, everything else `w_bg`.
pub fn make_weight_mask(face_mask: ArrayView2<u8>, w_face: f64, w_bg: f64) -> Result<WeightMask> {
    if !(w_bg > 0.0) || !(w_face >= w_bg) || !w_face.is_finite() {
        return Err(Error::InvalidInput(format!(
            "need w_face >= w_bg > 0, got w_face={w_face}, w_bg={w_bg}"
        )));
    }
    if let Some(v) = face_mask.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidInput(format!("face mask value {v} is not binary")));
    }
    Ok(WeightMask {
        data: face_mask.mapv(|v| if v == 1 { w_face } else { w_bg }),
    })
}
