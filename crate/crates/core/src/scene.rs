//! Rigs, calibration ingestion and synthetic scenes.
//!
//! Calibration files use a small JSON schema, one record per camera:
//!
//! ```json
//! [
//!   {
//!     "camera_id": "CAM_FRONT",
//!     "translation": [1.70, 0.02, 1.51],
//!     "rotation": [0.4998, -0.5030, 0.4998, -0.4974],
//!     "camera_intrinsic": [[1266.4, 0.0, 816.3], [0.0, 1266.4, 491.5], [0.0, 0.0, 1.0]],
//!     "width": 1600,
//!     "height": 900
//!   }
//! ]
//! ```
//!
//! `translation` and `rotation` (`[w, x, y, z]`) describe the sensor pose as
//! ego-from-camera; they are inverted on load. Numeric camera ids follow
//! record order.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{
    invert_rigid, CameraCalibration, EgoPose, Extrinsics, GeometryError, Intrinsics, Projector, Transform,
    NEAR_CLIP,
};
use crate::projection::FeatureMapSet;

const SIX_CAM_DEFAULT: &str = include_str!("../fixtures/six_cam_default.json");
const NUSCENES_SAMPLE: &str = include_str!("../fixtures/nuscenes_sample.json");

/// Feature stride the bundled rigs are meant to be used with.
pub const DEFAULT_FEATURE_STRIDE: u32 = 4;

const QUAT_TOL: f64 = 1e-3;
const FIELDS: [&str; 6] = ["camera_id", "translation", "rotation", "camera_intrinsic", "width", "height"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("malformed calibration document: {0}")]
    Syntax(String),
    #[error("record {record}: missing field `{field}`")]
    MissingField { record: usize, field: &'static str },
    #[error("record {record}: bad value for `{field}`: {reason}")]
    BadField {
        record: usize,
        field: &'static str,
        reason: String,
    },
    #[error("record {record} ({camera}): non-unit quaternion (norm {norm})")]
    NonUnitQuaternion { record: usize, camera: String, norm: f64 },
    #[error("record {record} ({camera}): non-positive focal length (fx={fx}, fy={fy})")]
    NonPositiveFocal { record: usize, camera: String, fx: f64, fy: f64 },
    #[error("record {record} ({camera}): {source}")]
    Geometry {
        record: usize,
        camera: String,
        source: GeometryError,
    },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown rig preset `{0}` (available: six_cam_default)")]
    UnknownPreset(String),
    #[error("frame {frame} out of range for trajectory of {len}")]
    BadFrame { frame: usize, len: usize },
    #[error("beacon signatures must share one non-zero length")]
    Signature,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One camera record of the calibration schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub camera_id: String,
    pub translation: [f64; 3],
    /// `[w, x, y, z]`, ego-from-camera.
    pub rotation: [f64; 4],
    pub camera_intrinsic: [[f64; 3]; 3],
    pub width: u32,
    pub height: u32,
}

impl CalibrationRecord {
    pub fn to_calibration(&self, record: usize) -> Result<CameraCalibration, CalibError> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !((norm - 1.0).abs() <= QUAT_TOL) {
            return Err(CalibError::NonUnitQuaternion {
                record,
                camera: self.camera_id.clone(),
                norm,
            });
        }
        let geo = |source| CalibError::Geometry {
            record,
            camera: self.camera_id.clone(),
            source,
        };
        let k = Matrix3::from_fn(|r, c| self.camera_intrinsic[r][c]);
        let intrinsics = Intrinsics::from_matrix(k).map_err(|e| match e {
            GeometryError::NonPositiveFocal { fx, fy } => CalibError::NonPositiveFocal {
                record,
                camera: self.camera_id.clone(),
                fx,
                fy,
            },
            other => geo(other),
        })?;
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let mut ego_from_camera = Transform::identity();
        ego_from_camera.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        ego_from_camera
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&Vector3::from(self.translation));
        let extrinsics = Extrinsics::from_ego_from_camera(ego_from_camera).map_err(geo)?;
        CameraCalibration::new(
            record as u32,
            self.camera_id.clone(),
            intrinsics,
            extrinsics,
            self.width,
            self.height,
        )
        .map_err(geo)
    }

    pub fn from_calibration(calib: &CameraCalibration) -> Self {
        let ego_from_camera = calib.extrinsics.ego_from_camera();
        let rot: Matrix3<f64> = ego_from_camera.fixed_view::<3, 3>(0, 0).into_owned();
        let q = UnitQuaternion::from_matrix(&rot);
        let mut rotation = [q.w, q.i, q.j, q.k];
        if rotation[0] < 0.0 {
            rotation = rotation.map(|c| -c);
        }
        let k = calib.intrinsics.matrix();
        Self {
            camera_id: calib.name.clone(),
            translation: [ego_from_camera[(0, 3)], ego_from_camera[(1, 3)], ego_from_camera[(2, 3)]],
            rotation,
            camera_intrinsic: [0, 1, 2].map(|r| [k[(r, 0)], k[(r, 1)], k[(r, 2)]]),
            width: calib.image_width,
            height: calib.image_height,
        }
    }
}

fn field<T: serde::de::DeserializeOwned>(v: &Value, record: usize, field: &'static str) -> Result<T, CalibError> {
    serde_json::from_value(v[field].clone()).map_err(|e| CalibError::BadField {
        record,
        field,
        reason: e.to_string(),
    })
}

/// Parses a calibration document (JSON array of camera records).
pub fn parse_nuscenes_calibration(text: &str) -> Result<Vec<CameraCalibration>, CalibError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| CalibError::Syntax(e.to_string()))?;
    let records = doc
        .as_array()
        .ok_or_else(|| CalibError::Syntax("expected a JSON array of camera records".into()))?;
    records
        .iter()
        .enumerate()
        .map(|(i, v)| {
            for field in FIELDS {
                if v.get(field).is_none() {
                    return Err(CalibError::MissingField { record: i, field });
                }
            }
            let rec = CalibrationRecord {
                camera_id: field(v, i, "camera_id")?,
                translation: field(v, i, "translation")?,
                rotation: field(v, i, "rotation")?,
                camera_intrinsic: field(v, i, "camera_intrinsic")?,
                width: field(v, i, "width")?,
                height: field(v, i, "height")?,
            };
            rec.to_calibration(i)
        })
        .collect()
}

pub fn load_nuscenes_calibration(path: impl AsRef<Path>) -> Result<Vec<CameraCalibration>, CalibError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibError::Io(e.to_string()))?;
    parse_nuscenes_calibration(&text)
}

/// Serializes a rig back into the calibration schema.
pub fn save_nuscenes_calibration(rig: &[CameraCalibration]) -> String {
    let records: Vec<_> = rig.iter().map(CalibrationRecord::from_calibration).collect();
    serde_json::to_string_pretty(&records).expect("records serialize")
}

/// Bundled rig presets.
pub fn make_nuscenes_like_rig(preset: &str) -> Result<Vec<CameraCalibration>, SceneError> {
    match preset {
        "six_cam_default" => Ok(parse_nuscenes_calibration(SIX_CAM_DEFAULT).expect("bundled fixture parses")),
        other => Err(SceneError::UnknownPreset(other.to_string())),
    }
}

/// Shipped sample of real-world six-camera calibration (1600x900 images).
pub fn nuscenes_sample_rig() -> Vec<CameraCalibration> {
    parse_nuscenes_calibration(NUSCENES_SAMPLE).expect("bundled sample parses")
}

/// Random level-mounted rig with cameras spread around the ego vehicle.
///
/// Image size and intrinsics are shared so the rig is valid for LUT builds.
pub fn random_rig<R: Rng + ?Sized>(rng: &mut R, num_cameras: usize, width: u32, height: u32) -> Vec<CameraCalibration> {
    let fx = rng.gen_range(0.4..1.2) * width as f64;
    let intr = Intrinsics::new(
        fx,
        fx * rng.gen_range(0.9..1.1),
        width as f64 * rng.gen_range(0.4..0.6),
        height as f64 * rng.gen_range(0.4..0.6),
    )
    .expect("positive focal");
    let spacing = std::f64::consts::TAU / num_cameras.max(1) as f64;
    (0..num_cameras)
        .map(|id| {
            let yaw = id as f64 * spacing + rng.gen_range(-0.3..0.3);
            let pitch = rng.gen_range(-0.15..0.15);
            let pos = Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-0.8..0.8), rng.gen_range(1.0..2.0));
            let ego_from_camera = camera_mount(yaw, pitch, pos);
            CameraCalibration::new(
                id as u32,
                format!("rand{id}"),
                intr,
                Extrinsics::from_ego_from_camera(ego_from_camera).expect("rigid"),
                width,
                height,
            )
            .expect("non-empty image")
        })
        .collect()
}

/// Ego-from-camera for a camera looking along heading `yaw` (about ego z),
/// tilted down by `pitch`, mounted at `pos`.
pub fn camera_mount(yaw: f64, pitch: f64, pos: Vector3<f64>) -> Transform {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let forward = Vector3::new(cy * cp, sy * cp, -sp);
    let right = Vector3::new(sy, -cy, 0.0);
    let down = forward.cross(&right);
    let mut m = Transform::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&forward);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos);
    m
}

/// Point feature painted into the camera feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    /// Global-frame position, meters.
    pub position: Vector3<f64>,
    pub signature: Vec<f32>,
}

/// One-hot channel signature.
pub fn one_hot(channel: usize, channels: usize) -> Vec<f32> {
    let mut v = vec![0.0; channels];
    v[channel] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rig: Vec<CameraCalibration>,
    /// Ego pose per frame; index = frame offset (0 is current).
    pub trajectory: Vec<EgoPose>,
    pub beacons: Vec<Beacon>,
}

impl SyntheticScene {
    /// Ego driving straight along global +x at `speed` m/s; frame `f` is
    /// `f·interval` seconds in the past. The current frame sits at `(x_now, 0)`.
    pub fn straight_line(
        rig: Vec<CameraCalibration>,
        frames: usize,
        x_now: f64,
        speed: f64,
        interval: f64,
        beacons: Vec<Beacon>,
    ) -> Self {
        let trajectory = (0..frames)
            .map(|f| {
                let t = -(f as f64) * interval;
                EgoPose::planar(x_now + speed * t, 0.0, 0.0, t)
            })
            .collect();
        Self {
            rig,
            trajectory,
            beacons,
        }
    }

    /// Beacon position in the ego frame of `frame`.
    pub fn beacon_in_ego(&self, beacon: usize, frame: usize) -> Vector3<f64> {
        let ego_from_global = invert_rigid(self.trajectory[frame].matrix());
        ego_from_global
            .transform_point(&Point3::from(self.beacons[beacon].position))
            .coords
    }
}

/// Paints every beacon into each camera that sees it. When two beacons land
/// on the same feature cell the earlier beacon in the list is kept.
pub fn render_beacons(scene: &SyntheticScene, frame: usize, stride: u32) -> Result<FeatureMapSet, SceneError> {
    if frame >= scene.trajectory.len() {
        return Err(SceneError::BadFrame {
            frame,
            len: scene.trajectory.len(),
        });
    }
    let channels = scene.beacons.first().map_or(1, |b| b.signature.len());
    if channels == 0 || scene.beacons.iter().any(|b| b.signature.len() != channels) {
        return Err(SceneError::Signature);
    }
    let first = scene.rig.first();
    let (h, w) = match first {
        Some(c) => c.feature_dims(stride)?,
        None => (0, 0),
    };
    let mut maps = FeatureMapSet::zeros(scene.rig.len(), h, w, channels);
    let mut taken = vec![false; scene.rig.len() * h * w];
    for cam in &scene.rig {
        let proj = Projector::new(cam, stride, NEAR_CLIP);
        let id = cam.camera_id as usize;
        for (b, beacon) in scene.beacons.iter().enumerate() {
            let p = scene.beacon_in_ego(b, frame);
            if let Some(f) = proj.project(p.x, p.y, p.z) {
                let slot = (id * h + f.v as usize) * w + f.u as usize;
                if !std::mem::replace(&mut taken[slot], true) {
                    maps.vector_mut(id, f.v as usize, f.u as usize)
                        .copy_from_slice(&beacon.signature);
                }
            }
        }
    }
    Ok(maps)
}
