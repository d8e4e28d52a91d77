//! Temporal BEV fusion: warp history BEV tensors into the current ego frame
//! and stack them along the channel axis.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{relative_planar_pose, EgoPose, PlanarPose, VoxelGridSpec};
use crate::projection::BevTensor;

/// Most frames fused at once (current plus three history keyframes).
pub const MAX_FRAMES: usize = 4;

// Fractional cell coordinates this close to an integer are treated as exact.
const SNAP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("bev dims {got:?} do not match grid dims {expected:?}")]
    DimsMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("channel count {got} differs from {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("frame count {0} outside 1..={MAX_FRAMES}")]
    FrameCount(usize),
    #[error("duplicate frame_offset {0}")]
    DuplicateOffset(u32),
    #[error("current_index {index} out of range for {len} frames")]
    BadCurrentIndex { index: usize, len: usize },
}

/// One frame's BEV tensor with the ego pose it was produced at.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub bev: BevTensor,
    pub pose: EgoPose,
    /// 0 for the current frame, 1.. for history keyframes.
    pub frame_offset: u32,
}

#[inline]
fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < SNAP {
        r
    } else {
        f
    }
}

/// Inverse-warps a history tensor into the current frame.
///
/// `rel` is the current-from-past motion (see
/// [`relative_planar_pose`]). Every current cell center is mapped back into
/// the history frame and sampled bilinearly over all `Nz·C` channels; samples
/// outside the grid read as zero.
pub fn align_bev(
    history: &BevTensor,
    rel: &PlanarPose,
    grid: &VoxelGridSpec,
) -> Result<BevTensor, TemporalError> {
    if history.dims() != grid.dims() {
        return Err(TemporalError::DimsMismatch {
            expected: grid.dims(),
            got: history.dims(),
        });
    }
    let [nx, ny, _] = grid.dims();
    let [x0, y0, _] = grid.origin();
    let [dx, dy, _] = grid.cell();
    let past_from_current = rel.inverse();
    let n = history.cell_channels();
    let mut out = BevTensor::zeros(grid.dims(), history.channels());
    if n == 0 {
        return Ok(out);
    }

    out.data_mut()
        .par_chunks_mut(ny * n)
        .enumerate()
        .for_each(|(i, row)| {
            for (j, dst) in row.chunks_exact_mut(n).enumerate() {
                let x = x0 + i as f64 * dx;
                let y = y0 + j as f64 * dy;
                let (xp, yp) = past_from_current.apply(x, y);
                let fi = snap((xp - x0) / dx);
                let fj = snap((yp - y0) / dy);
                if !(fi > -1.0 && fj > -1.0 && fi < nx as f64 && fj < ny as f64) {
                    continue;
                }
                let (i0, j0) = (fi.floor(), fj.floor());
                let (ti, tj) = (fi - i0, fj - j0);
                let taps = [
                    (i0, j0, (1.0 - ti) * (1.0 - tj)),
                    (i0 + 1.0, j0, ti * (1.0 - tj)),
                    (i0, j0 + 1.0, (1.0 - ti) * tj),
                    (i0 + 1.0, j0 + 1.0, ti * tj),
                ];
                for (si, sj, w) in taps {
                    if w == 0.0 || si < 0.0 || sj < 0.0 || si >= nx as f64 || sj >= ny as f64 {
                        continue;
                    }
                    let src = history.cell(si as usize, sj as usize);
                    let w = w as f32;
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        });
    Ok(out)
}

/// Aligns every history frame to `bundles[current_index]` and concatenates
/// all frames along the channel axis, current frame first, then ascending
/// `frame_offset`.
///
/// The result has `F·Nz` z-slices of `C` channels, i.e. `F·Nz·C` channels per
/// BEV cell.
pub fn fuse_frames(
    bundles: &[FrameBundle],
    current_index: usize,
    grid: &VoxelGridSpec,
) -> Result<BevTensor, TemporalError> {
    if bundles.is_empty() || bundles.len() > MAX_FRAMES {
        return Err(TemporalError::FrameCount(bundles.len()));
    }
    let current = bundles.get(current_index).ok_or(TemporalError::BadCurrentIndex {
        index: current_index,
        len: bundles.len(),
    })?;
    let c = current.bev.channels();
    for b in bundles {
        if b.bev.dims() != grid.dims() {
            return Err(TemporalError::DimsMismatch {
                expected: grid.dims(),
                got: b.bev.dims(),
            });
        }
        if b.bev.channels() != c {
            return Err(TemporalError::ChannelMismatch {
                expected: c,
                got: b.bev.channels(),
            });
        }
    }
    let mut offsets: Vec<u32> = bundles.iter().map(|b| b.frame_offset).collect();
    offsets.sort_unstable();
    if let Some(w) = offsets.windows(2).find(|w| w[0] == w[1]) {
        return Err(TemporalError::DuplicateOffset(w[0]));
    }

    let mut order: Vec<usize> = (0..bundles.len()).filter(|&i| i != current_index).collect();
    order.sort_by_key(|&i| bundles[i].frame_offset);
    order.insert(0, current_index);

    let aligned: Vec<std::borrow::Cow<'_, BevTensor>> = order
        .iter()
        .map(|&i| {
            if i == current_index {
                Ok(std::borrow::Cow::Borrowed(&bundles[i].bev))
            } else {
                let rel = relative_planar_pose(&bundles[i].pose, &current.pose);
                align_bev(&bundles[i].bev, &rel, grid).map(std::borrow::Cow::Owned)
            }
        })
        .collect::<Result<_, _>>()?;

    let [nx, ny, nz] = grid.dims();
    let per_frame = nz * c;
    let f = aligned.len();
    let mut data = Vec::with_capacity(nx * ny * f * per_frame);
    for i in 0..nx {
        for j in 0..ny {
            for t in &aligned {
                data.extend_from_slice(t.cell(i, j));
            }
        }
    }
    Ok(BevTensor::from_data([nx, ny, f * nz], c, data).expect("fused length"))
}
