//! Edge-aware point pair feature pose estimation.
//!
//! The core is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`). The aliases below fix the scalar for the common cases;
//! unsuffixed names are `f64`.

pub mod cloud;
pub mod eval;
pub mod geometry;
pub mod matcher;
pub mod model;
pub mod pipeline;
pub mod real;
pub mod refine;
pub mod robot;
pub mod sampling;
pub mod spatial;
pub mod verify;

pub use real::Real;

pub type PointCloud = cloud::PointCloud<f64>;
pub type RigidTransform = geometry::RigidTransform<f64>;
pub type ModelDescription = model::ModelDescription<f64>;
pub type Detector = pipeline::Detector<f64>;
pub type Detection = pipeline::Detection<f64>;

pub type PointCloudF32 = cloud::PointCloud<f32>;
pub type RigidTransformF32 = geometry::RigidTransform<f32>;
pub type ModelDescriptionF32 = model::ModelDescription<f32>;
pub type DetectorF32 = pipeline::Detector<f32>;
pub type DetectionF32 = pipeline::Detection<f32>;
