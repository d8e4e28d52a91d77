//! Calibration-consistent augmentation.
//!
//! Image-space augmentations (flip, resize, rotate, crop) are one 3x3 pixel
//! transform `A` folded into the intrinsics: `K' = A·K`. BEV-space
//! augmentations (flip, rotate about ego z, scale) are one 4x4 ego transform
//! `B` folded into every camera's extrinsics and applied to the boxes, so a
//! point moved by `B` still projects to the same pixel. Augmented rigs go
//! through the regular LUT path.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraCalibration, Extrinsics, GeometryError, Intrinsics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("augmentation scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("augmented image would be empty ({0}x{1})")]
    EmptyImage(i64, i64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Image-space augmentation.
///
/// Applied in this order to pixel coordinates: horizontal flip
/// (`u → W−1−u`), uniform resize by `scale`, rotation by `rotation` radians
/// about the center of the resized image, then a crop that removes
/// `crop_offset` pixels from the left/top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageAug {
    pub flip_horizontal: bool,
    pub rotation: f64,
    pub scale: f64,
    pub crop_offset: (f64, f64),
    /// Final image size; defaults to the resized size minus the crop offset.
    pub output_size: Option<(u32, u32)>,
}

impl Default for ImageAug {
    fn default() -> Self {
        Self {
            flip_horizontal: false,
            rotation: 0.0,
            scale: 1.0,
            crop_offset: (0.0, 0.0),
            output_size: None,
        }
    }
}

impl ImageAug {
    /// Pixel transform `A` for an input image of the given size.
    pub fn matrix(&self, width: u32, height: u32) -> Matrix3<f64> {
        let flip = if self.flip_horizontal {
            Matrix3::new(-1.0, 0.0, width as f64 - 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
        } else {
            Matrix3::identity()
        };
        let s = self.scale;
        let resize = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
        let (cu, cv) = ((s * width as f64 - 1.0) / 2.0, (s * height as f64 - 1.0) / 2.0);
        let (sn, cs) = self.rotation.sin_cos();
        let rotate = Matrix3::new(
            cs,
            -sn,
            cu - cs * cu + sn * cv,
            sn,
            cs,
            cv - sn * cu - cs * cv,
            0.0,
            0.0,
            1.0,
        );
        let crop = Matrix3::new(1.0, 0.0, -self.crop_offset.0, 0.0, 1.0, -self.crop_offset.1, 0.0, 0.0, 1.0);
        crop * rotate * resize * flip
    }

    pub fn output_dims(&self, width: u32, height: u32) -> Result<(u32, u32), AugmentError> {
        if let Some(size) = self.output_size {
            if size.0 == 0 || size.1 == 0 {
                return Err(AugmentError::EmptyImage(size.0 as i64, size.1 as i64));
            }
            return Ok(size);
        }
        let w = (self.scale * width as f64).round() as i64 - self.crop_offset.0.round() as i64;
        let h = (self.scale * height as f64).round() as i64 - self.crop_offset.1.round() as i64;
        if w <= 0 || h <= 0 {
            return Err(AugmentError::EmptyImage(w, h));
        }
        Ok((w as u32, h as u32))
    }
}

/// Legal but suspicious outcome of an image augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugWarning {
    PrincipalPointOutside { cx: f64, cy: f64, width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCamera {
    pub calib: CameraCalibration,
    pub warning: Option<AugWarning>,
}

/// Rewrites one camera's intrinsics and image size for an image-space
/// augmentation. Extrinsics are untouched.
pub fn apply_image_aug(aug: &ImageAug, calib: &CameraCalibration) -> Result<AugmentedCamera, AugmentError> {
    if !(aug.scale > 0.0 && aug.scale.is_finite()) {
        return Err(AugmentError::BadScale(aug.scale));
    }
    let a = aug.matrix(calib.image_width, calib.image_height);
    let k = Intrinsics::from_affine(a * calib.intrinsics.matrix())?;
    let (width, height) = aug.output_dims(calib.image_width, calib.image_height)?;
    let (cx, cy) = (k.cx(), k.cy());
    let warning = (!(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64)).then_some(
        AugWarning::PrincipalPointOutside { cx, cy, width, height },
    );
    let calib = CameraCalibration::new(calib.camera_id, calib.name.clone(), k, calib.extrinsics, width, height)?;
    Ok(AugmentedCamera { calib, warning })
}

/// BEV-space augmentation, applied to ego coordinates as flip, then rotation
/// about z, then uniform scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevAug {
    /// Mirror `x → −x`.
    pub flip_x: bool,
    /// Mirror `y → −y`.
    pub flip_y: bool,
    pub rotation: f64,
    pub scale: f64,
}

impl Default for BevAug {
    fn default() -> Self {
        Self {
            flip_x: false,
            flip_y: false,
            rotation: 0.0,
            scale: 1.0,
        }
    }
}

impl BevAug {
    fn planar_linear(&self) -> nalgebra::Matrix2<f64> {
        let (sn, cs) = self.rotation.sin_cos();
        let fx = if self.flip_x { -1.0 } else { 1.0 };
        let fy = if self.flip_y { -1.0 } else { 1.0 };
        self.scale * nalgebra::Matrix2::new(cs * fx, -sn * fy, sn * fx, cs * fy)
    }

    /// Ego-frame transform `B`.
    pub fn matrix(&self) -> Matrix4<f64> {
        let l = self.planar_linear();
        Matrix4::new(
            l[(0, 0)],
            l[(0, 1)],
            0.0,
            0.0,
            l[(1, 0)],
            l[(1, 1)],
            0.0,
            0.0,
            0.0,
            0.0,
            self.scale,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-from-ego for the augmented scene.
    ///
    /// Uses `s·E·B⁻¹`: the uniform factor `s` cancels in the perspective
    /// divide, keeps the rotation block orthonormal and scales depths with
    /// the scene. Flips leave a mirrored (det −1) frame.
    fn rewrite_extrinsics(&self, e: &Extrinsics) -> Result<Extrinsics, AugmentError> {
        let (sn, cs) = self.rotation.sin_cos();
        let fx = if self.flip_x { -1.0 } else { 1.0 };
        let fy = if self.flip_y { -1.0 } else { 1.0 };
        // (R·F)⁻¹ = F·Rᵀ
        let unit_inv = Matrix4::new(
            fx * cs,
            fx * sn,
            0.0,
            0.0,
            -fy * sn,
            fy * cs,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let mut m = e.matrix() * unit_inv;
        for r in 0..3 {
            m[(r, 3)] *= self.scale;
        }
        Ok(Extrinsics::new_allow_reflection(m)?)
    }
}

/// Ground-truth 3D box in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// `(l, w, h)` in meters.
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
}

impl Box3D {
    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }
}

/// Applies a BEV augmentation to the rig and the boxes.
pub fn apply_bev_aug(
    aug: &BevAug,
    rig: &[CameraCalibration],
    boxes: &[Box3D],
) -> Result<(Vec<CameraCalibration>, Vec<Box3D>), AugmentError> {
    if !(aug.scale > 0.0 && aug.scale.is_finite()) {
        return Err(AugmentError::BadScale(aug.scale));
    }
    let rig = rig
        .iter()
        .map(|c| {
            Ok(CameraCalibration {
                extrinsics: aug.rewrite_extrinsics(&c.extrinsics)?,
                ..c.clone()
            })
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;

    let b = aug.matrix();
    let l = aug.planar_linear();
    let boxes = boxes
        .iter()
        .map(|bx| {
            let c = b.transform_point(&nalgebra::Point3::from(Vector3::from(bx.center)));
            let heading = l * Vector2::new(bx.yaw.cos(), bx.yaw.sin());
            let vel = l * Vector2::from(bx.velocity);
            Box3D {
                center: [c.x, c.y, c.z],
                size: bx.size.map(|d| d * aug.scale),
                yaw: heading.y.atan2(heading.x),
                velocity: [vel.x, vel.y],
            }
        })
        .collect();
    Ok((rig, boxes))
}

/// Sampling ranges for random augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub image_rotation_deg: f64,
    pub image_scale: (f64, f64),
    pub image_flip_prob: f64,
    pub image_crop_max: (f64, f64),
    pub bev_rotation_deg: f64,
    pub bev_scale: (f64, f64),
    pub bev_flip_prob: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            image_rotation_deg: 5.0,
            image_scale: (0.9, 1.1),
            image_flip_prob: 0.5,
            image_crop_max: (0.0, 0.0),
            bev_rotation_deg: 22.5,
            bev_scale: (0.95, 1.05),
            bev_flip_prob: 0.5,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl AugConfig {
    pub fn sample_image<R: Rng + ?Sized>(&self, rng: &mut R) -> ImageAug {
        let r = self.image_rotation_deg.to_radians();
        ImageAug {
            flip_horizontal: rng.gen_bool(self.image_flip_prob.clamp(0.0, 1.0)),
            rotation: uniform(rng, -r, r),
            scale: uniform(rng, self.image_scale.0, self.image_scale.1),
            crop_offset: (
                uniform(rng, 0.0, self.image_crop_max.0).floor(),
                uniform(rng, 0.0, self.image_crop_max.1).floor(),
            ),
            output_size: None,
        }
    }

    pub fn sample_bev<R: Rng + ?Sized>(&self, rng: &mut R) -> BevAug {
        let r = self.bev_rotation_deg.to_radians();
        let p = self.bev_flip_prob.clamp(0.0, 1.0);
        BevAug {
            flip_x: rng.gen_bool(p),
            flip_y: rng.gen_bool(p),
            rotation: uniform(rng, -r, r),
            scale: uniform(rng, self.bev_scale.0, self.bev_scale.1),
        }
    }
}
