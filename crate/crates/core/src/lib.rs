//! Forest structure metrics from airborne LiDAR, and the numerical kernels
//! around them.
//!
//! The crate turns classified point clouds into pixel-aligned structure
//! rasters (canopy height, plant area density profiles and index, foliage
//! height diversity, height percentiles), prepares fixed-size training
//! patches with validity masks, provides teacher/student distillation loss
//! kernels with verified analytic gradients, scores predicted rasters
//! against references, and blends sliding-window predictions into seamless
//! tiles.

pub mod error;
pub mod evaluation;
pub mod losses;
pub mod patching;
pub mod pointcloud;
pub mod raster;
pub mod stitching;
pub mod voxel;

#[cfg(any(test, feature = "test-support"))]
pub mod fixtures;

pub use error::{Error, Result};
