//! `.arr` binary array files.
//!
//! Layout: magic `NDAR`, `u8` version (1), `u8` dtype code, `u8` ndim,
//! `ndim` little-endian `u32` dims, then the row-major payload.
//!
//! Dtype 0 is little-endian `f32` and is what dataset arrays use. Dtype 1 is
//! little-endian `f64`; checkpoints use it so weights survive a save/load
//! cycle bit-for-bit.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NDAR";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Serializes an array. Values are narrowed to `f32` when `dtype` is [`DType::F32`].
pub fn encode(array: &ArrayD<f64>, dtype: DType) -> Vec<u8> {
    let shape = array.shape();
    let mut out = Vec::with_capacity(7 + 4 * shape.len() + array.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    // iter() on a standard-layout view walks row-major; as_standard_layout
    // covers transposed inputs.
    let std = array.as_standard_layout();
    match dtype {
        DType::F32 => {
            for &v in std.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in std.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Parses an `.arr` byte buffer. Returns the array widened to `f64` and the stored dtype.
pub fn decode(bytes: &[u8]) -> Result<(ArrayD<f64>, DType)> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing NDAR magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])?;
    let ndim = bytes[6] as usize;
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != count * dtype.width() {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for dims {:?}",
            payload.len(),
            count * dtype.width(),
            dims
        )));
    }
    let values: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    let array = ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((array, dtype))
}

pub fn write(path: &Path, array: &ArrayD<f64>, dtype: DType) -> Result<()> {
    fs::write(path, encode(array, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map(|(a, _)| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_layout_is_bit_exact() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]].into_dyn();
        let bytes = encode(&a, DType::F32);
        assert_eq!(&bytes[..4], b"NDAR");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &3u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 6 * 4);
    }

    #[test]
    fn transposed_input_is_written_row_major() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let t = a.t().to_owned().into_dyn();
        let (back, _) = decode(&encode(&a.t().into_dyn().to_owned(), DType::F64)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_rows_are_allowed() {
        let a = ArrayD::<f64>::zeros(IxDyn(&[0, 4]));
        let (back, dt) = decode(&encode(&a, DType::F32)).unwrap();
        assert_eq!(back.shape(), &[0, 4]);
        assert_eq!(dt, DType::F32);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"NDAX\x01\x00\x00").is_err());
        let a = array![1.0, 2.0].into_dyn();
        let mut bytes = encode(&a, DType::F32);
        bytes.pop();
        assert!(decode(&bytes).is_err());
    }

    proptest::proptest! {
        #[test]
        fn f64_round_trip_is_exact(rows in 0usize..5, cols in 1usize..5, seed in proptest::prelude::any::<u64>()) {
            let vals: Vec<f64> = (0..rows * cols)
                .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64)) as f64).sin() * 1e3)
                .collect();
            let a = ArrayD::from_shape_vec(IxDyn(&[rows, cols]), vals).unwrap();
            let bytes = encode(&a, DType::F64);
            let (back, _) = decode(&bytes).unwrap();
            proptest::prop_assert_eq!(&back, &a);
            proptest::prop_assert_eq!(encode(&back, DType::F64), bytes);
        }
    }
}
