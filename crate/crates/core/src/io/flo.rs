//! Middlebury `.flo`: f32 magic 202021.25, i32 width, i32 height, then row-major
//! interleaved `(Δx, Δy)` f32 pairs, all little-endian.

use std::path::Path;

use ndarray::Array3;

use super::FormatError;
use crate::error::Result;
use crate::geometry::FlowMap;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

pub fn encode_flo(flow: &FlowMap) -> Vec<u8> {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    let data = flow.data();
    for i in 0..h {
        for j in 0..w {
            out.extend_from_slice(&(data[[0, i, j]] as f32).to_le_bytes());
            out.extend_from_slice(&(data[[1, i, j]] as f32).to_le_bytes());
        }
    }
    out
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode_flo(bytes: &[u8]) -> std::result::Result<FlowMap, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    let magic = le_f32(&bytes[0..4]);
    if magic != FLO_MAGIC {
        return Err(FormatError(format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let height = i32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if width <= 0 || height <= 0 {
        return Err(FormatError(format!("invalid dimensions {width}×{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| FormatError(format!("dimensions {w}×{h} overflow")))?;
    if bytes.len() != expected {
        return Err(FormatError(format!(
            "payload length {} does not match {w}×{h} flow ({expected} bytes expected)",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let mut data = Array3::zeros((2, h, w));
    for (k, pair) in payload.chunks_exact(8).enumerate() {
        let (i, j) = (k / w, k % w);
        data[[0, i, j]] = le_f32(&pair[0..4]) as f64;
        data[[1, i, j]] = le_f32(&pair[4..8]) as f64;
    }
    FlowMap::new(data).map_err(|e| FormatError(e.to_string()))
}

pub fn write_flo(path: &Path, flow: &FlowMap) -> Result<()> {
    super::write_bytes(path, &encode_flo(flow))
}

pub fn read_flo(path: &Path) -> Result<FlowMap> {
    let bytes = super::read_bytes(path)?;
    decode_flo(&bytes).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode_flo(&FlowMap::constant(2, 3, 1.0, -0.5));
        assert_eq!(bytes.len(), 12 + 2 * 3 * 8);
        assert_eq!(&bytes[0..4], &202021.25f32.to_le_bytes());
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(le_f32(&bytes[12..16]), 1.0);
        assert_eq!(le_f32(&bytes[16..20]), -0.5);
    }

    #[test]
    fn rejects_truncation_magic_and_dims() {
        let good = encode_flo(&FlowMap::zeros(3, 3));
        assert!(decode_flo(&good[..good.len() - 1]).is_err());
        assert!(decode_flo(&good[..5]).is_err());
        let mut bad = good.clone();
        bad[0] ^= 0xff;
        assert!(decode_flo(&bad).is_err());
        let mut neg = good.clone();
        neg[4..8].copy_from_slice(&(-3i32).to_le_bytes());
        assert!(decode_flo(&neg).is_err());
        let mut huge = good;
        huge[4..8].copy_from_slice(&i32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&i32::MAX.to_le_bytes());
        assert!(decode_flo(&huge).is_err());
    }

    #[test]
    fn rejects_nan_payload() {
        let mut bytes = encode_flo(&FlowMap::zeros(1, 1));
        bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_flo(&bytes).is_err());
    }

    #[test]
    fn read_reports_path_of_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.flo");
        let bytes = encode_flo(&FlowMap::zeros(4, 4));
        std::fs::write(&path, &bytes[..20]).unwrap();
        let err = read_flo(&path).unwrap_err();
        assert!(err.to_string().contains("x.flo"), "{err}");
        assert!(matches!(err, crate::Error::CorruptFile { .. }));
    }

    proptest! {
        #[test]
        fn roundtrip_is_float32_exact(
            h in 1usize..6,
            w in 1usize..6,
            vals in proptest::collection::vec(-100.0f32..100.0, 72),
        ) {
            let data = Array3::from_shape_fn((2, h, w), |(c, i, j)| vals[(c * h + i) * w + j] as f64);
            let flow = FlowMap::new(data).unwrap();
            let back = decode_flo(&encode_flo(&flow)).unwrap();
            prop_assert_eq!(back, flow);
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_flo(&bytes);
        }
    }
}
