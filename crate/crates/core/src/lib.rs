//! Geometry and evaluation core for multi-resolution tooth segmentation:
//! labeled triangle meshes, quadric decimation, per-cell featurization,
//! augmentation, exact nearest-neighbor search, KNN label transfer and
//! segmentation metrics.

pub mod mesh;
pub mod decimate;
pub mod augment;
pub mod features;
pub mod metrics;
pub mod spatial;
pub mod upsample;

pub use mesh::{ClassId, LabeledMesh, MeshError, TriangleMesh, Vec3};
