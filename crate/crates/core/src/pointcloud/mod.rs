//! LiDAR point cloud ingestion and height-above-ground conversion.

use crate::error::{Error, Result};

pub mod ground;
pub mod las;
pub mod xyz;

pub use ground::{build_ground_grid, compute_hag, GroundGrid, HagCloud, HagParams};
pub use las::parse_las;
pub use xyz::{parse_xyz_text, write_xyz_text};

/// One LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// ASPRS classification code; 2 = ground.
    pub classification: u8,
    /// 1-based return number within the pulse.
    pub return_number: u8,
    pub intensity: Option<u16>,
}

/// ASPRS ground classification code.
pub const CLASS_GROUND: u8 = 2;

/// A parsed point cloud with declared bounds and CRS.
///
/// Bounds enclose every point (edge equality permitted) but need not be
/// tight.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<PointRecord>,
    /// (min_x, min_y, max_x, max_y), meters.
    pub bounds: (f64, f64, f64, f64),
    pub crs_code: u32,
}

impl PointCloud {
    /// Validates bounds containment for every point.
    pub fn new(
        points: Vec<PointRecord>,
        bounds: (f64, f64, f64, f64),
        crs_code: u32,
    ) -> Result<Self> {
        let (min_x, min_y, max_x, max_y) = bounds;
        if max_x < min_x || max_y < min_y {
            return Err(Error::DegenerateBounds(format!(
                "inverted bounds ({min_x}, {min_y}, {max_x}, {max_y})"
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.z.is_finite() {
                return Err(Error::DegenerateBounds(format!(
                    "point {i} has non-finite z"
                )));
            }
            if p.x < min_x || p.x > max_x {
                return Err(Error::PointOutsideHeaderBounds {
                    index: i,
                    axis: 'x',
                    value: p.x,
                    min: min_x,
                    max: max_x,
                });
            }
            if p.y < min_y || p.y > max_y {
                return Err(Error::PointOutsideHeaderBounds {
                    index: i,
                    axis: 'y',
                    value: p.y,
                    min: min_y,
                    max: max_y,
                });
            }
        }
        Ok(PointCloud {
            points,
            bounds,
            crs_code,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }
}

/// Returns per square meter of the bounding box.
pub fn point_density(cloud: &PointCloud) -> Result<f64> {
    let (min_x, min_y, max_x, max_y) = cloud.bounds;
    let area = (max_x - min_x) * (max_y - min_y);
    if !(area > 0.0) {
        return Err(Error::DegenerateBounds(format!(
            "bounding box area is {area} m^2"
        )));
    }
    Ok(cloud.len() as f64 / area)
}
