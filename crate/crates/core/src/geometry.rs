//! Camera and rigid-body math.
//!
//! Conventions used throughout the crate:
//!
//! * ego frame: x forward, y left, z up (meters);
//! * camera frame: x right, y down, z along the optical axis;
//! * extrinsics are stored camera-from-ego, so a point is projected with
//!   `p_cam = E * p_ego` and no inversion happens on the hot path;
//! * ego poses are stored global-from-ego.
//!
//! Projection follows the uniform-depth model: a voxel is assigned the feature
//! cell its center projects to, and depth is only used to reject points behind
//! (or too close to) the camera.

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Homogeneous 4x4 transform.
pub type Transform = Matrix4<f64>;

/// Points closer than this to the image plane (camera z, meters) never project.
pub const NEAR_CLIP: f64 = 0.1;

const RIGID_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-positive focal length (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("intrinsic matrix is not upper-triangular with bottom row (0,0,1)")]
    NotPinhole,
    #[error("pixel transform is not invertible")]
    SingularIntrinsics,
    #[error("bottom row of homogeneous transform must be exactly (0,0,0,1)")]
    BadBottomRow,
    #[error("rotation block is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation block has determinant {0}, expected +1")]
    NotProperRotation(f64),
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("voxel cell size must be positive, got {0:?}")]
    BadCellSize([f64; 3]),
    #[error("voxel grid dims must all be >= 1, got {0:?}")]
    EmptyGrid([usize; 3]),
    #[error("feature stride {stride} does not divide image size {width}x{height}")]
    StrideMismatch { stride: u32, width: u32, height: u32 },
}

/// Pinhole intrinsics as a 3x3 pixel-from-normalized-camera matrix.
///
/// Calibrated cameras are upper-triangular with positive focal lengths.
/// Image-space augmentation may produce a general affine pixel map (a flip
/// makes `fx` negative, a rotation fills the lower-left block); such matrices
/// are only reachable through [`Intrinsics::from_affine`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    k: Matrix3<f64>,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    /// Strict pinhole matrix: upper-triangular, positive focal lengths.
    pub fn from_matrix(k: Matrix3<f64>) -> Result<Self, GeometryError> {
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(GeometryError::NotPinhole);
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(GeometryError::NonPositiveFocal {
                fx: k[(0, 0)],
                fy: k[(1, 1)],
            });
        }
        Ok(Self { k })
    }

    /// Any invertible affine pixel map with bottom row (0,0,1).
    pub fn from_affine(k: Matrix3<f64>) -> Result<Self, GeometryError> {
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(GeometryError::NotPinhole);
        }
        let det = Matrix2::new(k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]).determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(GeometryError::SingularIntrinsics);
        }
        Ok(Self { k })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }
}

fn check_homogeneous(m: &Transform, allow_reflection: bool) -> Result<(), GeometryError> {
    if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
        return Err(GeometryError::BadBottomRow);
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= RIGID_TOL) {
        return Err(GeometryError::NotOrthonormal(err));
    }
    let det = r.determinant();
    let ok = if allow_reflection {
        (det.abs() - 1.0).abs() <= RIGID_TOL
    } else {
        (det - 1.0).abs() <= RIGID_TOL
    };
    if !ok {
        return Err(GeometryError::NotProperRotation(det));
    }
    Ok(())
}

/// Camera-from-ego rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    m: Transform,
}

impl Extrinsics {
    pub fn new(camera_from_ego: Transform) -> Result<Self, GeometryError> {
        check_homogeneous(&camera_from_ego, false)?;
        Ok(Self { m: camera_from_ego })
    }

    /// Builds from an ego-from-camera (sensor mounting) transform.
    pub fn from_ego_from_camera(ego_from_camera: Transform) -> Result<Self, GeometryError> {
        check_homogeneous(&ego_from_camera, false)?;
        Ok(Self {
            m: invert_rigid(&ego_from_camera),
        })
    }

    /// Like [`Extrinsics::new`] but accepts a mirrored frame (det = -1), which
    /// is what a flipped BEV augmentation produces.
    pub fn new_allow_reflection(camera_from_ego: Transform) -> Result<Self, GeometryError> {
        check_homogeneous(&camera_from_ego, true)?;
        Ok(Self { m: camera_from_ego })
    }

    pub fn identity() -> Self {
        Self {
            m: Transform::identity(),
        }
    }

    pub fn matrix(&self) -> &Transform {
        &self.m
    }

    pub fn ego_from_camera(&self) -> Transform {
        invert_rigid(&self.m)
    }
}

/// One camera of the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub camera_id: u32,
    pub name: String,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraCalibration {
    pub fn new(
        camera_id: u32,
        name: impl Into<String>,
        intrinsics: Intrinsics,
        extrinsics: Extrinsics,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, GeometryError> {
        if image_width == 0 || image_height == 0 {
            return Err(GeometryError::EmptyImage {
                width: image_width,
                height: image_height,
            });
        }
        Ok(Self {
            camera_id,
            name: name.into(),
            intrinsics,
            extrinsics,
            image_width,
            image_height,
        })
    }

    /// Feature-map size `(H_f, W_f)` at the given stride.
    pub fn feature_dims(&self, stride: u32) -> Result<(usize, usize), GeometryError> {
        if stride == 0 || self.image_width % stride != 0 || self.image_height % stride != 0 {
            return Err(GeometryError::StrideMismatch {
                stride,
                width: self.image_width,
                height: self.image_height,
            });
        }
        Ok((
            (self.image_height / stride) as usize,
            (self.image_width / stride) as usize,
        ))
    }

    /// Continuous pixel coordinates `(u, v, depth)` of an ego-frame point,
    /// gated by depth only (no image-bounds check).
    pub fn project_pixel(&self, p_ego: &Vector3<f64>, near_clip: f64) -> Option<(f64, f64, f64)> {
        Projector::new(self, 1, near_clip).pixel(p_ego.x, p_ego.y, p_ego.z)
    }
}

/// Integer feature-map location of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureProjection {
    pub u: u32,
    pub v: u32,
    pub depth: f64,
}

/// Projects an ego-frame point to feature-map coordinates with the default
/// near clip. Returns `None` when the point is behind the near plane or falls
/// outside the image.
pub fn project_point(
    calib: &CameraCalibration,
    p_ego: &Vector3<f64>,
    feature_stride: u32,
) -> Option<FeatureProjection> {
    Projector::new(calib, feature_stride, NEAR_CLIP).project(p_ego.x, p_ego.y, p_ego.z)
}

/// Flattened per-camera projection state, hoisted out of voxel loops.
///
/// Every projection in the crate (LUT build, sparse baseline, beacon
/// rendering) goes through this type so all paths share one arithmetic order.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    e: [[f64; 4]; 3],
    k: [[f64; 3]; 2],
    width: f64,
    height: f64,
    stride: f64,
    w_f: u32,
    h_f: u32,
    near_clip: f64,
}

impl Projector {
    pub fn new(calib: &CameraCalibration, stride: u32, near_clip: f64) -> Self {
        let e = calib.extrinsics.matrix();
        let k = calib.intrinsics.matrix();
        let row4 = |r: usize| [e[(r, 0)], e[(r, 1)], e[(r, 2)], e[(r, 3)]];
        let row3 = |r: usize| [k[(r, 0)], k[(r, 1)], k[(r, 2)]];
        let stride = stride.max(1);
        Self {
            e: [row4(0), row4(1), row4(2)],
            k: [row3(0), row3(1)],
            width: calib.image_width as f64,
            height: calib.image_height as f64,
            stride: stride as f64,
            w_f: calib.image_width / stride,
            h_f: calib.image_height / stride,
            near_clip,
        }
    }

    #[inline]
    pub fn pixel(&self, x: f64, y: f64, z: f64) -> Option<(f64, f64, f64)> {
        let e = &self.e;
        let zc = e[2][0] * x + e[2][1] * y + e[2][2] * z + e[2][3];
        if !(zc > self.near_clip) {
            return None;
        }
        let xc = e[0][0] * x + e[0][1] * y + e[0][2] * z + e[0][3];
        let yc = e[1][0] * x + e[1][1] * y + e[1][2] * z + e[1][3];
        let xn = xc / zc;
        let yn = yc / zc;
        let u = self.k[0][0] * xn + self.k[0][1] * yn + self.k[0][2];
        let v = self.k[1][0] * xn + self.k[1][1] * yn + self.k[1][2];
        Some((u, v, zc))
    }

    #[inline]
    pub fn project(&self, x: f64, y: f64, z: f64) -> Option<FeatureProjection> {
        let (u, v, depth) = self.pixel(x, y, z)?;
        if !(u >= 0.0 && u < self.width && v >= 0.0 && v < self.height) {
            return None;
        }
        let uf = (u / self.stride).floor() as u32;
        let vf = (v / self.stride).floor() as u32;
        // u < width can still round up to w_f after the division
        if uf >= self.w_f || vf >= self.h_f {
            return None;
        }
        Some(FeatureProjection { u: uf, v: vf, depth })
    }
}

/// Ego pose at a timestamp, global-from-ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    global_from_ego: Transform,
    pub timestamp: f64,
}

impl EgoPose {
    pub fn new(global_from_ego: Transform, timestamp: f64) -> Result<Self, GeometryError> {
        check_homogeneous(&global_from_ego, false)?;
        Ok(Self {
            global_from_ego,
            timestamp,
        })
    }

    /// Planar pose: position `(x, y)`, heading `yaw` about global z.
    pub fn planar(x: f64, y: f64, yaw: f64, timestamp: f64) -> Self {
        Self {
            global_from_ego: PlanarPose { tx: x, ty: y, yaw }.to_matrix(),
            timestamp,
        }
    }

    pub fn matrix(&self) -> &Transform {
        &self.global_from_ego
    }
}

/// Matrix product `a * b` of two homogeneous transforms.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    a * b
}

/// Closed-form inverse of a rigid (or mirrored-rigid) transform.
pub fn invert_rigid(t: &Transform) -> Transform {
    let r_t = t.fixed_view::<3, 3>(0, 0).transpose();
    let trans = -(r_t * t.fixed_view::<3, 1>(0, 3));
    let mut out = Transform::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_t);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&trans);
    out
}

/// SE(2) transform in the BEV plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarPose {
    pub tx: f64,
    pub ty: f64,
    pub yaw: f64,
}

impl PlanarPose {
    pub fn to_matrix(&self) -> Transform {
        let (s, c) = self.yaw.sin_cos();
        Transform::new(
            c, -s, 0.0, self.tx, //
            s, c, 0.0, self.ty, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    /// Applies the transform to a planar point.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self {
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
            yaw: -self.yaw,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &PlanarPose) -> Self {
        let (tx, ty) = self.apply(other.tx, other.ty);
        Self {
            tx,
            ty,
            yaw: self.yaw + other.yaw,
        }
    }
}

/// Current-from-past planar motion. Roll and pitch of the relative pose are
/// dropped.
pub fn relative_planar_pose(past: &EgoPose, current: &EgoPose) -> PlanarPose {
    if past.global_from_ego == current.global_from_ego {
        return PlanarPose::default();
    }
    let rel = invert_rigid(&current.global_from_ego) * past.global_from_ego;
    PlanarPose {
        tx: rel[(0, 3)],
        ty: rel[(1, 3)],
        yaw: rel[(1, 0)].atan2(rel[(0, 0)]),
    }
}

/// Regular 3D sampling lattice. `origin` is the center of cell `(0,0,0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    origin: [f64; 3],
    cell: [f64; 3],
    dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: [f64; 3], cell: [f64; 3], dims: [usize; 3]) -> Result<Self, GeometryError> {
        if !cell.iter().all(|&c| c > 0.0 && c.is_finite()) {
            return Err(GeometryError::BadCellSize(cell));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(GeometryError::EmptyGrid(dims));
        }
        Ok(Self { origin, cell, dims })
    }

    /// Grid spanning the axis-aligned box `[min, max]`, cells of equal size.
    pub fn from_range(min: [f64; 3], max: [f64; 3], dims: [usize; 3]) -> Result<Self, GeometryError> {
        let cell = [0, 1, 2].map(|a| (max[a] - min[a]) / dims[a].max(1) as f64);
        let origin = [0, 1, 2].map(|a| min[a] + 0.5 * cell[a]);
        Self::new(origin, cell, dims)
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn cell(&self) -> [f64; 3] {
        self.cell
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat index with `k` fastest and `i` slowest.
    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.cell[0],
            self.origin[1] + j as f64 * self.cell[1],
            self.origin[2] + k as f64 * self.cell[2],
        ]
    }
}
