use ndarray::Array3;

use crate::error::{Error, Result};

/// A `C×H×W` image with `C ∈ {1, 3}` and values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let c = data.dim().0;
        if c != 1 && c != 3 {
            return Err(Error::InvalidInput(format!(
                "image must have 1 or 3 channels, got {c}"
            )));
        }
        if data.dim().1 == 0 || data.dim().2 == 0 {
            return Err(Error::InvalidInput("image has an empty dimension".into()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Builds an image by clamping every value into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(data)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(Array3::zeros((channels, height, width))).expect("valid zero image")
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
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

    /// Rounds every value to the nearest multiple of 1/255 so 8-bit PNG storage is exact.
    pub fn quantized_u8(&self) -> Self {
        Self {
            data: self.data.mapv(|v| (v * 255.0).round() / 255.0),
        }
    }

    /// Peak signal-to-noise ratio in dB against `other`, over pixels at least `border`
    /// away from every edge.
    pub fn psnr(&self, other: &Image, border: usize) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::shape(
                format!("{:?}", self.data.dim()),
                format!("{:?}", other.data.dim()),
            ));
        }
        let (c, h, w) = self.data.dim();
        if 2 * border >= h || 2 * border >= w {
            return Err(Error::InvalidInput("border leaves no pixels".into()));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for ch in 0..c {
            for i in border..h - border {
                for j in border..w - border {
                    let d = self.data[[ch, i, j]] - other.data[[ch, i, j]];
                    sum += d * d;
                    count += 1;
                }
            }
        }
        let mse = sum / count as f64;
        Ok(if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (1.0 / mse).log10()
        })
    }
}
