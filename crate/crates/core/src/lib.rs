//! Sparse-voxel differentiable isosurface toolkit.
//!
//! The crate builds meshing on a sparse voxel lattice: dual-marching-cubes
//! extraction with per-corner signed distances and deformations plus
//! per-voxel interpolation weights, analytic gradients for every stage
//! (extraction, rasterization, losses), frustum-based voxel activation with
//! adaptive near/far control, subdivision with occupancy pruning, a fitting
//! harness driven by rendering losses, and evaluation metrics.

pub mod bench;
pub mod error;
pub mod flexicubes;
pub mod frustum;
pub mod grid;
pub mod losses;
pub mod math;
pub mod meshio;
pub mod metrics;
pub mod optimize;
pub mod render;
pub mod sdf;
pub mod shapes;
pub mod upsample;

pub use error::{Error, Result};
pub use math::{Aabb, Vec3};
