//! `FBTN` tensor container: magic, `u32` version, `u32` rank, `u32` dims,
//! then the `f32` payload. Everything little-endian, row-major.

use std::path::Path;

use thiserror::Error;

use crate::projection::{BevTensor, FeatureMapSet, ProjectionError};

const MAGIC: &[u8; 4] = b"FBTN";
const VERSION: u32 = 1;
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("version mismatch: found {found}, supported {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("rank must be ≥1")]
    ZeroRank,
    #[error("truncated tensor: need {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("dims overflow: {dims:?} exceeds 2^31 elements")]
    DimsOverflow { dims: Vec<u32> },
    #[error("dims {dims:?} describe {expected} elements but data has {actual}")]
    LengthMismatch { dims: Vec<u32>, expected: u64, actual: usize },
    #[error("tensor shape: {0}")]
    Shape(#[from] ProjectionError),
    #[error("io: {0}")]
    Io(String),
}

fn element_count(dims: &[u32]) -> Result<u64, TensorError> {
    if dims.is_empty() {
        return Err(TensorError::ZeroRank);
    }
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64).filter(|&n| n <= MAX_ELEMENTS))
        .ok_or_else(|| TensorError::DimsOverflow { dims: dims.to_vec() })
}

pub fn encode_tensor(dims: &[u32], data: &[f32]) -> Result<Vec<u8>, TensorError> {
    let n = element_count(dims)?;
    if n != data.len() as u64 {
        return Err(TensorError::LengthMismatch {
            dims: dims.to_vec(),
            expected: n,
            actual: data.len(),
        });
    }
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<u32>, Vec<f32>), TensorError> {
    let truncated = |expected: u64| TensorError::Truncated {
        expected,
        actual: bytes.len() as u64,
    };
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if bytes.len() < 4 {
        return Err(truncated(12));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let version = word(4);
    if version != VERSION {
        return Err(TensorError::VersionMismatch { found: version });
    }
    let rank = word(8) as u64;
    if rank == 0 {
        return Err(TensorError::ZeroRank);
    }
    let header = 12 + 4 * rank;
    if (bytes.len() as u64) < header {
        return Err(truncated(header));
    }
    let dims: Vec<u32> = (0..rank as usize).map(|r| word(12 + 4 * r)).collect();
    let n = element_count(&dims)?;
    let total = header + 4 * n;
    if (bytes.len() as u64) < total {
        return Err(truncated(total));
    }
    if bytes.len() as u64 > total {
        return Err(TensorError::TrailingBytes(bytes.len() as u64 - total));
    }
    let data = bytes[header as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[u32], data: &[f32]) -> Result<(), TensorError> {
    let bytes = encode_tensor(dims, data)?;
    std::fs::write(path, bytes).map_err(|e| TensorError::Io(e.to_string()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Vec<u32>, Vec<f32>), TensorError> {
    let bytes = std::fs::read(path).map_err(|e| TensorError::Io(e.to_string()))?;
    decode_tensor(&bytes)
}

/// Feature maps as a rank-4 `(cameras, H_f, W_f, C)` tensor.
pub fn write_features(path: impl AsRef<Path>, feats: &FeatureMapSet) -> Result<(), TensorError> {
    let dims = feats.shape().map(|d| d as u32);
    write_tensor(path, &dims, feats.data())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMapSet, TensorError> {
    let (dims, data) = read_tensor(path)?;
    match dims[..] {
        [n, h, w, c] => Ok(FeatureMapSet::new(n as usize, h as usize, w as usize, c as usize, data)?),
        _ => Err(TensorError::Shape(ProjectionError::Shape {
            what: "feature tensor rank",
            expected: "4 (cameras, H_f, W_f, C)".into(),
            got: format!("{dims:?}"),
        })),
    }
}

/// BEV tensor as a rank-4 `(Nx, Ny, Nz, C)` tensor.
pub fn write_bev(path: impl AsRef<Path>, bev: &BevTensor) -> Result<(), TensorError> {
    let [nx, ny, nz] = bev.dims();
    write_tensor(path, &[nx as u32, ny as u32, nz as u32, bev.channels() as u32], bev.data())
}

pub fn read_bev(path: impl AsRef<Path>) -> Result<BevTensor, TensorError> {
    let (dims, data) = read_tensor(path)?;
    match dims[..] {
        [nx, ny, nz, c] => Ok(BevTensor::from_data([nx as usize, ny as usize, nz as usize], c as usize, data)?),
        _ => Err(TensorError::Shape(ProjectionError::Shape {
            what: "bev tensor rank",
            expected: "4 (Nx, Ny, Nz, C)".into(),
            got: format!("{dims:?}"),
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_rank_rejected() {
        assert_eq!(encode_tensor(&[], &[]), Err(TensorError::ZeroRank));
        let mut bytes = encode_tensor(&[1], &[0.0]).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        let err = decode_tensor(&bytes).unwrap_err();
        assert_eq!(err, TensorError::ZeroRank);
        assert_eq!(err.to_string(), "rank must be ≥1");
    }

    #[test]
    fn non_finite_values_pass_through() {
        let weird = [
            f32::NAN,
            f32::from_bits(0x7fc0_1234),
            f32::from_bits(0xffa0_0001),
            f32::INFINITY,
            f32::NEG_INFINITY,
            -0.0,
            f32::MIN_POSITIVE / 2.0,
        ];
        let bytes = encode_tensor(&[7], &weird).unwrap();
        let (dims, back) = decode_tensor(&bytes).unwrap();
        assert_eq!(dims, vec![7]);
        let bits: Vec<u32> = back.iter().map(|x| x.to_bits()).collect();
        let want: Vec<u32> = weird.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn decode_errors() {
        let good = encode_tensor(&[2, 3], &[1.0; 6]).unwrap();
        let mut bad = good.clone();
        bad[3] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(TensorError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode_tensor(&bad), Err(TensorError::VersionMismatch { found: 9 }));
        assert!(matches!(decode_tensor(&good[..good.len() - 2]), Err(TensorError::Truncated { .. })));
        assert!(matches!(decode_tensor(&good[..14]), Err(TensorError::Truncated { .. })));
        let mut bad = good.clone();
        bad.extend_from_slice(&[0, 0, 0, 0]);
        assert_eq!(decode_tensor(&bad), Err(TensorError::TrailingBytes(4)));

        let mut huge = Vec::new();
        huge.extend_from_slice(b"FBTN");
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.extend_from_slice(&2u32.to_le_bytes());
        huge.extend_from_slice(&65536u32.to_le_bytes());
        huge.extend_from_slice(&32769u32.to_le_bytes());
        assert!(matches!(decode_tensor(&huge), Err(TensorError::DimsOverflow { .. })));
        assert!(matches!(
            encode_tensor(&[2, 2], &[0.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn exactly_two_pow_31_elements_is_allowed() {
        assert_eq!(element_count(&[1 << 16, 1 << 15]).unwrap(), 1 << 31);
        assert!(element_count(&[1 << 16, (1 << 15) + 1]).is_err());
    }

    #[test]
    fn file_roundtrip_of_typed_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let feats = FeatureMapSet::new(2, 2, 3, 2, (0..24).map(|i| i as f32 * 0.5).collect()).unwrap();
        write_features(dir.path().join("f.fbtn"), &feats).unwrap();
        assert_eq!(read_features(dir.path().join("f.fbtn")).unwrap(), feats);
        let bev = BevTensor::from_data([2, 1, 3], 2, (0..12).map(|i| -(i as f32)).collect()).unwrap();
        write_bev(dir.path().join("b.fbtn"), &bev).unwrap();
        assert_eq!(read_bev(dir.path().join("b.fbtn")).unwrap(), bev);
        assert!(matches!(read_bev(dir.path().join("missing")), Err(TensorError::Io(_))));
        write_tensor(dir.path().join("r2.fbtn"), &[3, 4], &[0.0; 12]).unwrap();
        assert!(matches!(read_bev(dir.path().join("r2.fbtn")), Err(TensorError::Shape(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(dims in prop::collection::vec(1u32..6, 1..4), seed in any::<u64>()) {
            let n: u32 = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i.wrapping_mul(40503))))
                .collect();
            let bytes = encode_tensor(&dims, &data).unwrap();
            let (d2, data2) = decode_tensor(&bytes).unwrap();
            prop_assert_eq!(d2, dims.clone());
            prop_assert_eq!(encode_tensor(&dims, &data2).unwrap(), bytes);
        }
    }
}
