//! Single-plane 2D/3D rigid registration of knee bones.

pub mod anatomy;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod geometry;
pub mod kinematics;
pub mod optimize;
pub mod projector;
pub mod registration;
pub mod similarity;
pub mod simulation;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::Pose6DoF;
