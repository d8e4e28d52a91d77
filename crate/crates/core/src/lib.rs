//! Multi-camera image-to-BEV view transformation built around a precomputed
//! projection look-up table.
//!
//! The crate holds the geometry ([`geometry`]), the table ([`lut`]), the two
//! projection paths ([`projection`]), temporal fusion ([`temporal`]),
//! calibration-consistent augmentation ([`augment`]), fixtures and
//! calibration loading ([`scene`]), the tensor container ([`io`]) and the
//! latency harness ([`bench`]).

pub mod augment;
pub mod bench;
pub mod geometry;
pub mod io;
pub mod lut;
pub mod projection;
pub mod scene;
mod stream;
pub mod temporal;

pub use geometry::{CameraCalibration, EgoPose, Extrinsics, Intrinsics, PlanarPose, VoxelGridSpec};
pub use lut::{build_lut, LutBuildConfig, ProjectionLut};
pub use projection::{aggregate, project_dense, project_sparse_baseline, BevTensor, FeatureMapSet};
