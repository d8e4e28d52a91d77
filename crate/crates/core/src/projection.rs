//! Image-to-BEV view transformation.
//!
//! Two execution paths produce the same tensor:
//!
//! * [`project_dense`]: every camera writes into one shared voxel tensor
//!   through the precomputed [`ProjectionLut`]; the hot loop is a pure gather.
//! * [`project_sparse_baseline`] + [`aggregate`]: projection indices are
//!   recomputed on every call, each camera fills its own mostly-empty voxel
//!   tensor, and the per-camera tensors are merged afterwards.
//!
//! Overlapping cameras resolve by priority order on both paths, so the
//! outputs agree bit for bit.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraCalibration, VoxelGridSpec};
use crate::stream;
use crate::lut::{priority_projectors, validate_rig, LutBuildConfig, LutError, ProjectionLut};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error(transparent)]
    Rig(#[from] LutError),
}

fn shape_err(what: &'static str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> ProjectionError {
    ProjectionError::Shape {
        what,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

/// Stacked per-camera feature maps, each row-major `H_f × W_f × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    num_cameras: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMapSet {
    pub fn new(
        num_cameras: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, ProjectionError> {
        let expected = num_cameras * height * width * channels;
        if data.len() != expected || channels == 0 {
            return Err(shape_err(
                "feature data length",
                (num_cameras, height, width, channels, expected),
                data.len(),
            ));
        }
        Ok(Self {
            num_cameras,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(num_cameras: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            num_cameras,
            height,
            width,
            channels,
            data: vec![0.0; num_cameras * height * width * channels],
        }
    }

    /// `(num_cameras, H_f, W_f, C)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.num_cameras, self.height, self.width, self.channels]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn offset(&self, camera: usize, v: usize, u: usize) -> usize {
        ((camera * self.height + v) * self.width + u) * self.channels
    }

    pub fn vector(&self, camera: usize, v: usize, u: usize) -> &[f32] {
        let o = self.offset(camera, v, u);
        &self.data[o..o + self.channels]
    }

    pub fn vector_mut(&mut self, camera: usize, v: usize, u: usize) -> &mut [f32] {
        let o = self.offset(camera, v, u);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn scaled(&self, a: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= a);
        out
    }
}

/// BEV feature volume, row-major `Nx × Ny × (Nz·C)`; within a cell the
/// channels run z-major then c.
#[derive(Debug, Clone, PartialEq)]
pub struct BevTensor {
    nx: usize,
    ny: usize,
    nz: usize,
    channels: usize,
    data: Vec<f32>,
}

impl BevTensor {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        Self {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            channels,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        }
    }

    pub fn from_data(dims: [usize; 3], channels: usize, data: Vec<f32>) -> Result<Self, ProjectionError> {
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(shape_err("bev data length", expected, data.len()));
        }
        Ok(Self {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            channels,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Channels per BEV cell, `Nz·C`.
    pub fn cell_channels(&self) -> usize {
        self.nz * self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// All `Nz·C` channels of BEV cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> &[f32] {
        let n = self.cell_channels();
        let o = (i * self.ny + j) * n;
        &self.data[o..o + n]
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> &[f32] {
        let o = ((i * self.ny + j) * self.nz + k) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Per-camera voxel tensors with one validity bit per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelSet {
    cameras: Vec<BevTensor>,
    masks: Vec<Vec<u64>>,
    num_voxels: usize,
}

impl SparseVoxelSet {
    pub fn new(cameras: Vec<BevTensor>, masks: Vec<Vec<u64>>) -> Result<Self, ProjectionError> {
        let first = cameras.first().ok_or_else(|| shape_err("sparse camera count", ">= 1", 0))?;
        let num_voxels = first.nx * first.ny * first.nz;
        if masks.len() != cameras.len() {
            return Err(shape_err("sparse mask count", cameras.len(), masks.len()));
        }
        for (t, m) in cameras.iter().zip(&masks) {
            if t.dims() != first.dims() || t.channels != first.channels {
                return Err(shape_err("sparse camera tensor", (first.dims(), first.channels), (t.dims(), t.channels)));
            }
            if m.len() != num_voxels.div_ceil(64) {
                return Err(shape_err("sparse mask words", num_voxels.div_ceil(64), m.len()));
            }
        }
        Ok(Self {
            cameras,
            masks,
            num_voxels,
        })
    }

    /// All-clear set sized for `num_cameras` cameras over `dims` voxels.
    pub fn empty(num_cameras: usize, dims: [usize; 3], channels: usize) -> Self {
        let num_voxels = dims[0] * dims[1] * dims[2];
        Self {
            cameras: (0..num_cameras.max(1)).map(|_| BevTensor::zeros(dims, channels)).collect(),
            masks: (0..num_cameras.max(1)).map(|_| vec![0; num_voxels.div_ceil(64)]).collect(),
            num_voxels,
        }
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_voxels(&self) -> usize {
        self.num_voxels
    }

    pub fn camera(&self, camera: usize) -> &BevTensor {
        &self.cameras[camera]
    }

    #[inline]
    pub fn is_set(&self, camera: usize, voxel: usize) -> bool {
        self.masks[camera][voxel / 64] >> (voxel % 64) & 1 == 1
    }

    pub fn mask_count(&self, camera: usize) -> usize {
        self.masks[camera].iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn mask_density(&self, camera: usize) -> f64 {
        self.mask_count(camera) as f64 / self.num_voxels as f64
    }
}

fn check_lut_feats(lut: &ProjectionLut, feats: &FeatureMapSet) -> Result<(), ProjectionError> {
    let (h, w) = lut.feature_dims();
    let want = [lut.num_cameras(), h, w];
    let got = [feats.num_cameras, feats.height, feats.width];
    if want != got {
        return Err(shape_err("features vs lut (cameras, H_f, W_f)", want, got));
    }
    Ok(())
}

/// How many LUT entries ahead the gather prefetches its source vectors.
const PREFETCH_AHEAD: usize = 8;

#[inline]
fn gather_row(entries: &[i32], feats: &[f32], c: usize, out: &mut [f32], zero_fill: bool) {
    for (n, (&e, dst)) in entries.iter().zip(out.chunks_exact_mut(c)).enumerate() {
        if let Some(&ahead) = entries.get(n + PREFETCH_AHEAD) {
            if ahead >= 0 {
                stream::prefetch(&feats[ahead as usize * c..(ahead as usize + 1) * c]);
            }
        }
        if e >= 0 {
            let s = e as usize * c;
            stream::copy(dst, &feats[s..s + c]);
        } else if zero_fill {
            stream::zero(dst);
        }
    }
    stream::fence();
}

/// Dense LUT projection into a fresh tensor.
pub fn project_dense(lut: &ProjectionLut, feats: &FeatureMapSet) -> Result<BevTensor, ProjectionError> {
    check_lut_feats(lut, feats)?;
    let mut out = BevTensor::zeros(lut.dims(), feats.channels);
    gather_row(lut.entries(), &feats.data, feats.channels, &mut out.data, false);
    Ok(out)
}

/// Dense LUT projection into a caller-owned tensor (every voxel is written).
pub fn project_dense_into(
    lut: &ProjectionLut,
    feats: &FeatureMapSet,
    out: &mut BevTensor,
) -> Result<(), ProjectionError> {
    check_lut_feats(lut, feats)?;
    if out.dims() != lut.dims() || out.channels != feats.channels {
        return Err(shape_err("output bev", (lut.dims(), feats.channels), (out.dims(), out.channels)));
    }
    gather_row(lut.entries(), &feats.data, feats.channels, &mut out.data, true);
    Ok(())
}

/// [`project_dense_into`] sharded over BEV rows on the current rayon pool.
pub fn project_dense_sharded_into(
    lut: &ProjectionLut,
    feats: &FeatureMapSet,
    out: &mut BevTensor,
) -> Result<(), ProjectionError> {
    check_lut_feats(lut, feats)?;
    if out.dims() != lut.dims() || out.channels != feats.channels {
        return Err(shape_err("output bev", (lut.dims(), feats.channels), (out.dims(), out.channels)));
    }
    let [_, ny, nz] = lut.dims();
    let c = feats.channels;
    out.data
        .par_chunks_mut(ny * nz * c)
        .zip(lut.entries().par_chunks(ny * nz))
        .for_each(|(dst, entries)| gather_row(entries, &feats.data, c, dst, true));
    Ok(())
}

pub fn project_dense_sharded(lut: &ProjectionLut, feats: &FeatureMapSet) -> Result<BevTensor, ProjectionError> {
    let mut out = BevTensor::zeros(lut.dims(), feats.channels);
    project_dense_sharded_into(lut, feats, &mut out)?;
    Ok(out)
}

/// Per-camera projection that recomputes every voxel's projection from the
/// calibration on each call.
pub fn project_sparse_baseline(
    rig: &[CameraCalibration],
    grid: &VoxelGridSpec,
    cfg: &LutBuildConfig,
    feats: &FeatureMapSet,
) -> Result<SparseVoxelSet, ProjectionError> {
    let mut out = SparseVoxelSet::empty(rig.len(), grid.dims(), feats.channels);
    fill_sparse(rig, grid, cfg, feats, &mut out, false)?;
    Ok(out)
}

/// [`project_sparse_baseline`] reusing the per-camera buffers of `out`,
/// which are cleared first.
pub fn project_sparse_baseline_into(
    rig: &[CameraCalibration],
    grid: &VoxelGridSpec,
    cfg: &LutBuildConfig,
    feats: &FeatureMapSet,
    out: &mut SparseVoxelSet,
) -> Result<(), ProjectionError> {
    fill_sparse(rig, grid, cfg, feats, out, true)
}

fn fill_sparse(
    rig: &[CameraCalibration],
    grid: &VoxelGridSpec,
    cfg: &LutBuildConfig,
    feats: &FeatureMapSet,
    out: &mut SparseVoxelSet,
    clear: bool,
) -> Result<(), ProjectionError> {
    let layout = validate_rig(rig, cfg)?;
    let want = [layout.num_cameras, layout.feature_h, layout.feature_w];
    let got = [feats.num_cameras, feats.height, feats.width];
    if want != got {
        return Err(shape_err("features vs rig (cameras, H_f, W_f)", want, got));
    }
    let c = feats.channels;
    if out.num_cameras() != rig.len() || out.cameras[0].dims() != grid.dims() || out.cameras[0].channels != c {
        return Err(shape_err(
            "sparse output (cameras, dims, C)",
            (rig.len(), grid.dims(), c),
            (out.num_cameras(), out.cameras[0].dims(), out.cameras[0].channels),
        ));
    }
    let [nx, ny, nz] = grid.dims();

    let mut projectors = priority_projectors(rig, cfg);
    projectors.sort_by_key(|(id, _)| *id);

    for ((id, proj), (vol, mask)) in projectors.iter().zip(out.cameras.iter_mut().zip(out.masks.iter_mut())) {
        if clear {
            stream::zero(&mut vol.data);
            mask.fill(0);
        }
        let mut v = 0usize;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let [x, y, z] = grid.center(i, j, k);
                    if let Some(f) = proj.project(x, y, z) {
                        let src = feats.vector(*id as usize, f.v as usize, f.u as usize);
                        stream::copy(&mut vol.data[v * c..(v + 1) * c], src);
                        mask[v / 64] |= 1 << (v % 64);
                    }
                    v += 1;
                }
            }
        }
    }
    stream::fence();
    Ok(())
}

fn check_priority(priority: &[u32], n_cam: usize) -> Result<(), ProjectionError> {
    let mut seen = vec![false; n_cam];
    let valid = priority.len() == n_cam
        && priority
            .iter()
            .all(|&p| (p as usize) < n_cam && !std::mem::replace(&mut seen[p as usize], true));
    if valid {
        Ok(())
    } else {
        Err(ProjectionError::Rig(LutError::BadPriority {
            priority: priority.to_vec(),
        }))
    }
}

/// Merges per-camera voxels: the first camera in `priority` whose mask bit is
/// set supplies the voxel.
pub fn aggregate(sparse: &SparseVoxelSet, priority: &[u32]) -> Result<BevTensor, ProjectionError> {
    let first = &sparse.cameras[0];
    let mut out = BevTensor::zeros(first.dims(), first.channels);
    aggregate_into(sparse, priority, &mut out)?;
    Ok(out)
}

/// [`aggregate`] into a caller-owned tensor (every voxel is written).
pub fn aggregate_into(sparse: &SparseVoxelSet, priority: &[u32], out: &mut BevTensor) -> Result<(), ProjectionError> {
    check_priority(priority, sparse.num_cameras())?;
    let first = &sparse.cameras[0];
    let c = first.channels;
    if out.dims() != first.dims() || out.channels != c {
        return Err(shape_err("aggregate output", (first.dims(), c), (out.dims(), out.channels)));
    }
    for (v, dst) in out.data.chunks_exact_mut(c).enumerate() {
        match priority.iter().find(|&&p| sparse.is_set(p as usize, v)) {
            Some(&cam) => stream::copy(dst, &sparse.cameras[cam as usize].data[v * c..(v + 1) * c]),
            None => stream::zero(dst),
        }
    }
    stream::fence();
    Ok(())
}
