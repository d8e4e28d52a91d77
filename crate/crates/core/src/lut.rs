//! Static projection look-up table.
//!
//! Camera placement is fixed once the rig is built, so the voxel → feature
//! mapping is computed once and reused for every frame. Each voxel stores a
//! single fused index `camera·H_f·W_f + v·W_f + u` into the stacked camera
//! feature maps, or [`INVALID`] when no camera sees the voxel center.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{CameraCalibration, GeometryError, Projector, VoxelGridSpec, NEAR_CLIP};

pub const INVALID: i32 = -1;

const MAGIC: &[u8; 4] = b"FBLT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LutError {
    #[error("rig has no cameras")]
    EmptyRig,
    #[error("camera ids must be exactly 0..{num_cameras}, got {ids:?}")]
    BadCameraIds { num_cameras: usize, ids: Vec<u32> },
    #[error("rig configuration: camera {camera_id} has image {width}x{height}, expected {expected_width}x{expected_height}")]
    MismatchedImageDims {
        camera_id: u32,
        width: u32,
        height: u32,
        expected_width: u32,
        expected_height: u32,
    },
    #[error("configuration: {0}")]
    Stride(#[from] GeometryError),
    #[error("camera_priority {priority:?} is not a permutation of the rig's camera ids")]
    BadPriority { priority: Vec<u32> },
    #[error("feature index space {0} does not fit a 32-bit entry")]
    IndexOverflow(u64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LutDecodeError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("version mismatch: found {found}, supported {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated stream: need {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after entries")]
    TrailingBytes(usize),
    #[error("header has zero-sized dimension: {0:?}")]
    ZeroDimension([u32; 6]),
    #[error("entry out of range at voxel {index}: {value} (limit {limit})")]
    EntryOutOfRange { index: usize, value: i32, limit: i64 },
    #[error("io: {0}")]
    Io(String),
}

/// Build policy for [`build_lut`].
#[derive(Debug, Clone, PartialEq)]
pub struct LutBuildConfig {
    pub feature_stride: u32,
    /// Cameras tried in this order; the first that sees a voxel claims it.
    pub camera_priority: Vec<u32>,
    pub near_clip: f64,
}

impl LutBuildConfig {
    /// Priority in ascending camera id, default near clip.
    pub fn for_rig(rig: &[CameraCalibration], feature_stride: u32) -> Self {
        let mut camera_priority: Vec<u32> = rig.iter().map(|c| c.camera_id).collect();
        camera_priority.sort_unstable();
        Self {
            feature_stride,
            camera_priority,
            near_clip: NEAR_CLIP,
        }
    }
}

/// Shape shared by every camera of a validated rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RigLayout {
    pub num_cameras: usize,
    pub feature_h: usize,
    pub feature_w: usize,
}

impl RigLayout {
    pub fn cells_per_camera(&self) -> usize {
        self.feature_h * self.feature_w
    }
}

/// Checks the rig/config preconditions shared by the LUT and the sparse
/// baseline.
pub fn validate_rig(rig: &[CameraCalibration], cfg: &LutBuildConfig) -> Result<RigLayout, LutError> {
    let first = rig.first().ok_or(LutError::EmptyRig)?;
    let n = rig.len();
    let ids: HashSet<u32> = rig.iter().map(|c| c.camera_id).collect();
    if ids.len() != n || rig.iter().any(|c| c.camera_id as usize >= n) {
        return Err(LutError::BadCameraIds {
            num_cameras: n,
            ids: rig.iter().map(|c| c.camera_id).collect(),
        });
    }
    for c in rig {
        if c.image_width != first.image_width || c.image_height != first.image_height {
            return Err(LutError::MismatchedImageDims {
                camera_id: c.camera_id,
                width: c.image_width,
                height: c.image_height,
                expected_width: first.image_width,
                expected_height: first.image_height,
            });
        }
    }
    let (feature_h, feature_w) = first.feature_dims(cfg.feature_stride)?;
    let prio: HashSet<u32> = cfg.camera_priority.iter().copied().collect();
    if cfg.camera_priority.len() != n || prio != ids {
        return Err(LutError::BadPriority {
            priority: cfg.camera_priority.clone(),
        });
    }
    let space = (n * feature_h * feature_w) as u64;
    if space > i32::MAX as u64 {
        return Err(LutError::IndexOverflow(space));
    }
    Ok(RigLayout {
        num_cameras: n,
        feature_h,
        feature_w,
    })
}

/// Per-camera projectors in priority order.
pub(crate) fn priority_projectors(
    rig: &[CameraCalibration],
    cfg: &LutBuildConfig,
) -> Vec<(u32, Projector)> {
    cfg.camera_priority
        .iter()
        .map(|&id| {
            let cam = rig.iter().find(|c| c.camera_id == id).expect("validated priority");
            (id, Projector::new(cam, cfg.feature_stride, cfg.near_clip))
        })
        .collect()
}

/// Precomputed voxel → feature gather table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionLut {
    dims: [usize; 3],
    feature_dims: (usize, usize),
    num_cameras: usize,
    entries: Vec<i32>,
}

impl ProjectionLut {
    /// Assembles a table from raw entries, checking every invariant.
    pub fn from_entries(
        dims: [usize; 3],
        feature_dims: (usize, usize),
        num_cameras: usize,
        entries: Vec<i32>,
    ) -> Result<Self, LutDecodeError> {
        let expected = dims[0] * dims[1] * dims[2];
        if entries.len() != expected {
            return Err(LutDecodeError::Truncated {
                expected,
                actual: entries.len(),
            });
        }
        let limit = (num_cameras * feature_dims.0 * feature_dims.1) as i64;
        if let Some((index, &value)) = entries
            .iter()
            .enumerate()
            .find(|(_, &e)| e < INVALID || e as i64 >= limit)
        {
            return Err(LutDecodeError::EntryOutOfRange { index, value, limit });
        }
        Ok(Self {
            dims,
            feature_dims,
            num_cameras,
            entries,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// `(H_f, W_f)`.
    pub fn feature_dims(&self) -> (usize, usize) {
        self.feature_dims
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    pub fn num_voxels(&self) -> usize {
        self.entries.len()
    }

    pub fn size_bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<i32>()
    }

    /// Camera that owns a fused entry.
    pub fn camera_of(&self, entry: i32) -> Option<usize> {
        (entry >= 0).then(|| entry as usize / (self.feature_dims.0 * self.feature_dims.1))
    }

    /// Decodes a fused entry into `(camera, u, v)`.
    pub fn decode_entry(&self, entry: i32) -> Option<(usize, usize, usize)> {
        let (h, w) = self.feature_dims;
        (entry >= 0).then(|| {
            let e = entry as usize;
            (e / (h * w), e % w, (e / w) % h)
        })
    }
}

/// Builds the table: each voxel center is claimed by the first camera in
/// `cfg.camera_priority` that projects it inside its image.
pub fn build_lut(
    rig: &[CameraCalibration],
    grid: &VoxelGridSpec,
    cfg: &LutBuildConfig,
) -> Result<ProjectionLut, LutError> {
    let layout = validate_rig(rig, cfg)?;
    let projectors = priority_projectors(rig, cfg);
    let [_, ny, nz] = grid.dims();
    let cells = layout.cells_per_camera();
    let w_f = layout.feature_w;

    let mut entries = vec![INVALID; grid.num_voxels()];
    entries
        .par_chunks_mut(ny * nz)
        .enumerate()
        .for_each(|(i, slab)| {
            for j in 0..ny {
                for k in 0..nz {
                    let [x, y, z] = grid.center(i, j, k);
                    let hit = projectors.iter().find_map(|(id, p)| {
                        p.project(x, y, z)
                            .map(|f| *id as usize * cells + f.v as usize * w_f + f.u as usize)
                    });
                    if let Some(idx) = hit {
                        slab[j * nz + k] = idx as i32;
                    }
                }
            }
        });

    Ok(ProjectionLut {
        dims: grid.dims(),
        feature_dims: (layout.feature_h, layout.feature_w),
        num_cameras: layout.num_cameras,
        entries,
    })
}

/// Occupancy counts of a table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyReport {
    pub total_voxels: usize,
    pub valid_count: usize,
    pub per_camera: Vec<usize>,
    pub valid_fraction: f64,
}

impl OccupancyReport {
    pub fn camera_fraction(&self, camera: usize) -> f64 {
        if self.total_voxels == 0 {
            0.0
        } else {
            self.per_camera[camera] as f64 / self.total_voxels as f64
        }
    }

    pub fn camera_fractions(&self) -> Vec<f64> {
        (0..self.per_camera.len()).map(|c| self.camera_fraction(c)).collect()
    }
}

pub fn lut_stats(lut: &ProjectionLut) -> OccupancyReport {
    let mut per_camera = vec![0usize; lut.num_cameras];
    let cells = lut.feature_dims.0 * lut.feature_dims.1;
    for &e in &lut.entries {
        if e >= 0 {
            per_camera[e as usize / cells] += 1;
        }
    }
    let valid_count: usize = per_camera.iter().sum();
    let total_voxels = lut.entries.len();
    OccupancyReport {
        total_voxels,
        valid_count,
        per_camera,
        valid_fraction: if total_voxels == 0 {
            0.0
        } else {
            valid_count as f64 / total_voxels as f64
        },
    }
}

/// Little-endian `FBLT` v1 encoding.
pub fn serialize_lut(lut: &ProjectionLut) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + lut.size_bytes());
    out.extend_from_slice(MAGIC);
    let header = [
        VERSION,
        lut.dims[0] as u32,
        lut.dims[1] as u32,
        lut.dims[2] as u32,
        lut.feature_dims.0 as u32,
        lut.feature_dims.1 as u32,
        lut.num_cameras as u32,
    ];
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for e in &lut.entries {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out
}

pub fn deserialize_lut(bytes: &[u8]) -> Result<ProjectionLut, LutDecodeError> {
    if bytes.len() < 4 {
        return Err(LutDecodeError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(LutDecodeError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LutDecodeError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |n: usize| u32::from_le_bytes(bytes[4 + 4 * n..8 + 4 * n].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(LutDecodeError::VersionMismatch { found: version });
    }
    let h = [word(1), word(2), word(3), word(4), word(5), word(6)];
    if h.iter().any(|&d| d == 0) {
        return Err(LutDecodeError::ZeroDimension(h));
    }
    let count = h[..3].iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let expected = count
        .and_then(|c| c.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(LutDecodeError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(LutDecodeError::TrailingBytes(bytes.len() - expected));
    }
    let entries = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ProjectionLut::from_entries(
        [h[0] as usize, h[1] as usize, h[2] as usize],
        (h[3] as usize, h[4] as usize),
        h[5] as usize,
        entries,
    )
}

pub fn write_lut(path: impl AsRef<Path>, lut: &ProjectionLut) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&serialize_lut(lut))?;
    f.flush()
}

pub fn read_lut(path: impl AsRef<Path>) -> Result<ProjectionLut, LutDecodeError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| LutDecodeError::Io(e.to_string()))?;
    deserialize_lut(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Extrinsics, Intrinsics};

    fn forward_cam(id: u32) -> CameraCalibration {
        CameraCalibration::new(
            id,
            "fwd",
            Intrinsics::new(50.0, 50.0, 32.0, 32.0).unwrap(),
            Extrinsics::identity(),
            64,
            64,
        )
        .unwrap()
    }

    fn small_lut() -> ProjectionLut {
        let grid = VoxelGridSpec::new([-2.0, -2.0, 2.0], [1.0, 1.0, 1.0], [4, 4, 3]).unwrap();
        let rig = [forward_cam(0)];
        build_lut(&rig, &grid, &LutBuildConfig::for_rig(&rig, 4)).unwrap()
    }

    #[test]
    fn grid_behind_camera_is_all_invalid() {
        let grid = VoxelGridSpec::new([-3.0, -3.0, -10.0], [1.0, 1.0, 1.0], [7, 7, 5]).unwrap();
        let rig = [forward_cam(0)];
        let lut = build_lut(&rig, &grid, &LutBuildConfig::for_rig(&rig, 1)).unwrap();
        assert!(lut.entries().iter().all(|&e| e == INVALID));
        let stats = lut_stats(&lut);
        assert_eq!(stats.valid_fraction, 0.0);
        assert_eq!(stats.valid_count, 0);
    }

    #[test]
    fn counting_stats() {
        let lut = ProjectionLut::from_entries([2, 2, 2], (2, 2), 2, vec![-1, 0, -1, 5, -1, -1, 7, -1])
            .unwrap();
        let s = lut_stats(&lut);
        assert_eq!(s.total_voxels, 8);
        assert_eq!(s.valid_count, 3);
        assert_eq!(s.per_camera, vec![1, 2]);
        assert_eq!(s.valid_fraction, 0.375);
    }

    #[test]
    fn decode_entry_splits_index() {
        let lut = ProjectionLut::from_entries([1, 1, 1], (3, 5), 2, vec![-1]).unwrap();
        let e = (15 + 2 * 5 + 4) as i32;
        assert_eq!(lut.decode_entry(e), Some((1, 4, 2)));
        assert_eq!(lut.camera_of(e), Some(1));
        assert_eq!(lut.decode_entry(-1), None);
    }

    #[test]
    fn rejects_bad_rigs() {
        let grid = VoxelGridSpec::new([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        let mut odd = forward_cam(1);
        odd.image_width = 32;
        let rig = [forward_cam(0), odd];
        let err = build_lut(&rig, &grid, &LutBuildConfig::for_rig(&rig, 1)).unwrap_err();
        assert!(matches!(err, LutError::MismatchedImageDims { camera_id: 1, .. }));

        let rig = [forward_cam(0)];
        let err = build_lut(&rig, &grid, &LutBuildConfig::for_rig(&rig, 5)).unwrap_err();
        assert!(matches!(err, LutError::Stride(GeometryError::StrideMismatch { .. })));

        let rig = [forward_cam(0), forward_cam(0)];
        assert!(matches!(
            build_lut(&rig, &grid, &LutBuildConfig::for_rig(&rig, 1)),
            Err(LutError::BadCameraIds { .. })
        ));

        let rig = [forward_cam(0), forward_cam(1)];
        let mut cfg = LutBuildConfig::for_rig(&rig, 1);
        cfg.camera_priority = vec![1, 1];
        assert!(matches!(build_lut(&rig, &grid, &cfg), Err(LutError::BadPriority { .. })));

        assert_eq!(build_lut(&[], &grid, &cfg), Err(LutError::EmptyRig));
    }

    #[test]
    fn first_write_wins_in_priority_order() {
        let grid = VoxelGridSpec::new([-1.0, -1.0, 4.0], [1.0, 1.0, 1.0], [3, 3, 2]).unwrap();
        let rig = [forward_cam(0), forward_cam(1)];
        let mut cfg = LutBuildConfig::for_rig(&rig, 4);
        let a = build_lut(&rig, &grid, &cfg).unwrap();
        cfg.camera_priority = vec![1, 0];
        let b = build_lut(&rig, &grid, &cfg).unwrap();
        let cells = 16 * 16;
        for (ea, eb) in a.entries().iter().zip(b.entries()) {
            assert!(*ea >= 0 && (*ea as usize) < cells);
            assert_eq!(*eb as usize, *ea as usize + cells);
        }
    }

    #[test]
    fn serialization_roundtrip_is_bit_exact() {
        let lut = small_lut();
        let bytes = serialize_lut(&lut);
        assert_eq!(&bytes[..4], b"FBLT");
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 48);
        let back = deserialize_lut(&bytes).unwrap();
        assert_eq!(back, lut);
        assert_eq!(serialize_lut(&back), bytes);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let lut = small_lut();
        let good = serialize_lut(&lut);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_lut(&bad), Err(LutDecodeError::BadMagic(_))));
        assert!(deserialize_lut(&bad).unwrap_err().to_string().contains("bad magic"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(
            deserialize_lut(&bad),
            Err(LutDecodeError::VersionMismatch { found: 2 })
        );

        assert!(matches!(
            deserialize_lut(&good[..good.len() - 1]),
            Err(LutDecodeError::Truncated { .. })
        ));
        assert!(matches!(deserialize_lut(&good[..10]), Err(LutDecodeError::Truncated { .. })));

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(deserialize_lut(&bad), Err(LutDecodeError::TrailingBytes(1)));

        // one past the largest valid fused index
        let limit = (lut.num_cameras() * 16 * 16) as i32;
        let mut bad = good.clone();
        bad[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&limit.to_le_bytes());
        let err = deserialize_lut(&bad).unwrap_err();
        assert!(matches!(err, LutDecodeError::EntryOutOfRange { index: 0, .. }));
        assert!(err.to_string().contains("entry out of range"));

        let mut bad = good;
        bad[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&(-2i32).to_le_bytes());
        assert!(matches!(
            deserialize_lut(&bad),
            Err(LutDecodeError::EntryOutOfRange { value: -2, .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let a = small_lut();
        let b = small_lut();
        assert_eq!(serialize_lut(&a), serialize_lut(&b));
    }
}
