//! Binary parameter checkpoints.
//!
//! Layout: `u32` count of layer widths, that many `u32` widths
//! (`input, hidden…, classes`), then every parameter as an `f64`, all
//! little-endian, in the flat order of [`ModelParams::values`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelLayout, ModelParams};
use crate::scalar::Scalar;

pub fn encode_checkpoint<T: Scalar>(p: &ModelParams<T>) -> Vec<u8> {
    let dims = p.layout().dims();
    let mut out = Vec::with_capacity(4 * (dims.len() + 1) + 8 * p.len());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in p.values() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            message: "truncated layout descriptor".into(),
        })
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let count = read_u32(bytes, 0)? as usize;
    let mut dims = Vec::with_capacity(count);
    for i in 0..count {
        dims.push(read_u32(bytes, 4 + 4 * i)? as usize);
    }
    let layout = ModelLayout::from_dims(&dims).map_err(|e| Error::Format {
        offset: 4,
        message: e.to_string(),
    })?;
    let start = 4 * (count + 1);
    let payload = &bytes[start.min(bytes.len())..];
    let expected = 8 * layout.param_count();
    if payload.len() != expected {
        return Err(Error::Format {
            offset: start + payload.len().min(expected),
            message: format!("{} parameter bytes, layout needs {expected}", payload.len()),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    ModelParams::from_values(layout, values)
}

pub fn save_checkpoint<T: Scalar>(p: &ModelParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn header_layout() {
        let p = ModelParams::<f64>::zeros(ModelLayout::new(3, vec![2], 4));
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 8 * p.len());
    }

    #[test]
    fn round_trip_through_file() {
        let p: ModelParams<f64> = init_params(&ModelLayout::new(5, vec![4, 3], 2), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&p, &path).unwrap();
        let q: ModelParams<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(
            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(p.layout(), q.layout());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let p = ModelParams::<f64>::zeros(ModelLayout::new(2, vec![], 2));
        let bytes = encode_checkpoint(&p);
        assert!(matches!(
            decode_checkpoint::<f64>(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        assert!(decode_checkpoint::<f64>(&[1, 0]).is_err());
    }
}
