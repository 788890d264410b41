//! Ground elevation model and height-above-ground conversion.
//!
//! The ground surface is the per-cell minimum of ground-classified returns;
//! cells without ground returns are filled by inverse-distance-weighted
//! interpolation (power 2) from the nearest observed cells. Point heights
//! are measured against a bilinear interpolation of the cell-center
//! lattice to avoid staircase artifacts at cell borders.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, CLASS_GROUND};
use crate::raster::GridSpec;

/// Neighbors used by the IDW fill.
const IDW_NEIGHBORS: usize = 8;

/// Interpolated ground elevation per cell.
#[derive(Debug, Clone)]
pub struct GroundGrid {
    pub grid: GridSpec,
    /// Finite everywhere after fill.
    pub elevation: Array2<f64>,
    /// true = interpolated rather than observed.
    pub filled_mask: Array2<bool>,
    /// Set when no ground-classified return existed anywhere and the model
    /// fell back to the per-cell minimum over all returns.
    pub used_all_returns_fallback: bool,
}

impl GroundGrid {
    /// Bilinear ground elevation at (x, y); None outside the grid extent.
    pub fn elevation_at(&self, x: f64, y: f64) -> Option<f64> {
        let g = &self.grid;
        let (min_x, min_y, max_x, max_y) = g.extent();
        if x < min_x || x > max_x || y < min_y || y > max_y {
            return None;
        }
        let fx = ((x - g.origin_x) / g.cell_size - 0.5).clamp(0.0, (g.width - 1) as f64);
        let fy = ((g.origin_y - y) / g.cell_size - 0.5).clamp(0.0, (g.height - 1) as f64);
        let c0 = fx.floor() as usize;
        let r0 = fy.floor() as usize;
        let c1 = (c0 + 1).min(g.width - 1);
        let r1 = (r0 + 1).min(g.height - 1);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let top = self.elevation[(r0, c0)] * (1.0 - tx) + self.elevation[(r0, c1)] * tx;
        let bottom = self.elevation[(r1, c0)] * (1.0 - tx) + self.elevation[(r1, c1)] * tx;
        Some(top * (1.0 - ty) + bottom * ty)
    }
}

/// Builds the ground model on a `cell_size` grid covering the cloud bounds.
pub fn build_ground_grid(cloud: &PointCloud, cell_size: f64) -> Result<GroundGrid> {
    cloud.require_non_empty()?;
    if !(cell_size > 0.0) {
        return Err(Error::InvalidParameter {
            name: "cell_size",
            message: format!("must be positive, got {cell_size}"),
        });
    }
    let grid = GridSpec::from_bounds(cloud.bounds, cell_size, cloud.crs_code)?;
    let shape = (grid.height, grid.width);

    let mut elevation = Array2::from_elem(shape, f64::INFINITY);
    let mut has_ground = false;
    for p in &cloud.points {
        if p.classification != CLASS_GROUND {
            continue;
        }
        has_ground = true;
        let (row, col) = grid.cell_at(p.x, p.y).expect("point within cloud bounds");
        let cell = &mut elevation[(row, col)];
        *cell = cell.min(p.z);
    }
    if !has_ground {
        // No ground returns anywhere: treat the lowest return per cell as
        // ground so HAG stays defined.
        for p in &cloud.points {
            let (row, col) = grid.cell_at(p.x, p.y).expect("point within cloud bounds");
            let cell = &mut elevation[(row, col)];
            *cell = cell.min(p.z);
        }
    }

    // Freeze the observed surface before filling so fills only ever draw
    // from measured cells, not from other fills.
    let observed = elevation.clone();
    let mut filled_mask = Array2::from_elem(shape, false);
    for row in 0..grid.height {
        for col in 0..grid.width {
            if observed[(row, col)].is_finite() {
                continue;
            }
            let neighbors = nearest_observed(&observed, row, col, IDW_NEIGHBORS);
            debug_assert!(!neighbors.is_empty());
            let mut num = 0.0;
            let mut den = 0.0;
            for (d2, r, c) in neighbors {
                let w = 1.0 / d2;
                num += w * observed[(r, c)];
                den += w;
            }
            elevation[(row, col)] = num / den;
            filled_mask[(row, col)] = true;
        }
    }
    debug_assert!(elevation.iter().all(|v| v.is_finite()));

    Ok(GroundGrid {
        grid,
        elevation,
        filled_mask,
        used_all_returns_fallback: !has_ground,
    })
}

/// k nearest observed (finite) cells by center distance, searched over
/// expanding Chebyshev rings. Ties break on (distance, row, col) so fills
/// are deterministic.
fn nearest_observed(
    elevation: &Array2<f64>,
    row: usize,
    col: usize,
    k: usize,
) -> Vec<(f64, usize, usize)> {
    let (height, width) = elevation.dim();
    let max_radius = height.max(width);
    let mut best: Vec<(f64, usize, usize)> = Vec::new();

    for radius in 1..=max_radius {
        // A full best-set whose worst member beats the closest possible
        // cell of this ring cannot improve further.
        if best.len() >= k {
            let worst = best[k - 1].0;
            let ring_min = (radius * radius) as f64;
            if ring_min > worst {
                break;
            }
        }
        let r0 = row.saturating_sub(radius);
        let r1 = (row + radius).min(height - 1);
        let c0 = col.saturating_sub(radius);
        let c1 = (col + radius).min(width - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let on_ring = r.abs_diff(row) == radius || c.abs_diff(col) == radius;
                if !on_ring || !elevation[(r, c)].is_finite() {
                    continue;
                }
                let dr = r as f64 - row as f64;
                let dc = c as f64 - col as f64;
                best.push((dr * dr + dc * dc, r, c));
            }
        }
        best.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        best.truncate(k);
    }
    best
}

/// Height-above-ground conversion limits.
#[derive(Debug, Clone, Copy)]
pub struct HagParams {
    /// Points above this height are dropped (outliers, birds).
    pub max_height: f64,
}

impl Default for HagParams {
    fn default() -> Self {
        HagParams { max_height: 60.0 }
    }
}

/// A point reduced to planimetric position and height above ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HagPoint {
    pub x: f64,
    pub y: f64,
    pub hag: f64,
}

/// Height-above-ground cloud with QA counters.
#[derive(Debug, Clone)]
pub struct HagCloud {
    pub points: Vec<HagPoint>,
    pub source_bounds: (f64, f64, f64, f64),
    pub crs_code: u32,
    /// Below-ground returns clamped to 0.
    pub clamped_count: usize,
    /// Returns above `max_height`, dropped.
    pub dropped_count: usize,
}

/// Converts returns to heights above the interpolated ground surface.
///
/// Negative heights clamp to 0; heights above the cap are dropped. Both
/// counts are reported for QA.
pub fn compute_hag(cloud: &PointCloud, ground: &GroundGrid, params: HagParams) -> Result<HagCloud> {
    cloud.require_non_empty()?;
    if !(params.max_height > 0.0) {
        return Err(Error::InvalidParameter {
            name: "max_height",
            message: format!("must be positive, got {}", params.max_height),
        });
    }
    let mut points = Vec::with_capacity(cloud.len());
    let mut clamped = 0usize;
    let mut dropped = 0usize;
    for p in &cloud.points {
        let elevation = ground
            .elevation_at(p.x, p.y)
            .ok_or(Error::OutOfCoverage { x: p.x, y: p.y })?;
        let mut hag = p.z - elevation;
        if hag < 0.0 {
            hag = 0.0;
            clamped += 1;
        }
        if hag > params.max_height {
            dropped += 1;
            continue;
        }
        points.push(HagPoint {
            x: p.x,
            y: p.y,
            hag,
        });
    }
    Ok(HagCloud {
        points,
        source_bounds: cloud.bounds,
        crs_code: cloud.crs_code,
        clamped_count: clamped,
        dropped_count: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::PointRecord;

    fn pt(x: f64, y: f64, z: f64, class: u8) -> PointRecord {
        PointRecord {
            x,
            y,
            z,
            classification: class,
            return_number: 1,
            intensity: None,
        }
    }

    fn cloud(points: Vec<PointRecord>, bounds: (f64, f64, f64, f64)) -> PointCloud {
        PointCloud::new(points, bounds, 25833).unwrap()
    }

    #[test]
    fn single_ground_point_is_observed_not_filled() {
        let c = cloud(vec![pt(0.5, 0.5, 100.0, 2)], (0.0, 0.0, 1.0, 1.0));
        let g = build_ground_grid(&c, 1.0).unwrap();
        assert_eq!(g.elevation[(0, 0)], 100.0);
        assert!(!g.filled_mask[(0, 0)]);
        assert!(!g.used_all_returns_fallback);
    }

    #[test]
    fn empty_cell_fills_from_single_neighbor() {
        let c = cloud(
            vec![pt(0.5, 0.5, 100.0, 2), pt(1.5, 0.5, 150.0, 1)],
            (0.0, 0.0, 2.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        assert_eq!(g.elevation[(0, 1)], 100.0);
        assert!(g.filled_mask[(0, 1)]);
    }

    #[test]
    fn center_fill_matches_hand_evaluated_idw() {
        // 3x3 grid, observed corners at 100 (top-left) and 104
        // (bottom-right); both sit sqrt(2) cells from the center, so the
        // power-2 IDW gives (100 + 104) / 2 = 102.
        let c = cloud(
            vec![
                pt(0.5, 2.5, 100.0, 2),
                pt(2.5, 0.5, 104.0, 2),
                pt(1.5, 1.5, 130.0, 1),
            ],
            (0.0, 0.0, 3.0, 3.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        let center = g.elevation[(1, 1)];
        assert_eq!(center, 102.0);
        assert!((100.0..=104.0).contains(&center));
    }

    #[test]
    fn observed_cells_hold_minimum_ground_z() {
        let c = cloud(
            vec![
                pt(0.2, 0.2, 105.0, 2),
                pt(0.8, 0.8, 101.0, 2),
                pt(0.5, 0.5, 99.0, 1), // not ground-classified
            ],
            (0.0, 0.0, 1.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        assert_eq!(g.elevation[(0, 0)], 101.0);
    }

    #[test]
    fn no_ground_points_falls_back_to_all_returns() {
        let c = cloud(
            vec![pt(0.5, 0.5, 120.0, 1), pt(0.5, 0.5, 110.0, 1)],
            (0.0, 0.0, 1.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        assert!(g.used_all_returns_fallback);
        assert_eq!(g.elevation[(0, 0)], 110.0);
    }

    #[test]
    fn hag_on_flat_ground_is_exact_subtraction() {
        let c = cloud(
            vec![pt(0.5, 0.5, 100.0, 2), pt(0.5, 0.5, 112.0, 1)],
            (0.0, 0.0, 1.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        let hag = compute_hag(&c, &g, HagParams::default()).unwrap();
        assert_eq!(hag.points[1].hag, 12.0);
        assert_eq!(hag.clamped_count, 0);
        assert_eq!(hag.dropped_count, 0);
    }

    #[test]
    fn below_ground_return_clamps_and_counts() {
        let c = cloud(
            vec![pt(0.5, 0.5, 100.0, 2), pt(0.5, 0.5, 99.5, 1)],
            (0.0, 0.0, 1.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        let hag = compute_hag(&c, &g, HagParams::default()).unwrap();
        assert_eq!(hag.points[1].hag, 0.0);
        assert_eq!(hag.clamped_count, 1);
    }

    #[test]
    fn bilinear_midpoint_between_ground_cells() {
        let c = cloud(
            vec![
                pt(0.5, 0.5, 100.0, 2),
                pt(1.5, 0.5, 102.0, 2),
                pt(1.0, 0.5, 110.0, 1),
            ],
            (0.0, 0.0, 2.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        assert_eq!(g.elevation_at(1.0, 0.5), Some(101.0));
        let hag = compute_hag(&c, &g, HagParams::default()).unwrap();
        assert_eq!(hag.points[2].hag, 9.0);
    }

    #[test]
    fn tall_outliers_are_dropped_and_counted() {
        let c = cloud(
            vec![pt(0.5, 0.5, 100.0, 2), pt(0.5, 0.5, 400.0, 1)],
            (0.0, 0.0, 1.0, 1.0),
        );
        let g = build_ground_grid(&c, 1.0).unwrap();
        let hag = compute_hag(&c, &g, HagParams::default()).unwrap();
        assert_eq!(hag.points.len(), 1);
        assert_eq!(hag.dropped_count, 1);
    }

    #[test]
    fn out_of_coverage_point_is_an_error() {
        let inner = cloud(vec![pt(0.5, 0.5, 100.0, 2)], (0.0, 0.0, 1.0, 1.0));
        let g = build_ground_grid(&inner, 1.0).unwrap();
        let outer = cloud(vec![pt(5.0, 5.0, 100.0, 1)], (0.0, 0.0, 10.0, 10.0));
        assert!(matches!(
            compute_hag(&outer, &g, HagParams::default()),
            Err(Error::OutOfCoverage { .. })
        ));
    }

    #[test]
    fn constant_plane_hag_is_exact_for_all_points() {
        // Ground plane at 250; bilinear interpolation of a constant field
        // is the constant, so hag == z - 250 exactly.
        let mut points = vec![];
        for i in 0..20 {
            for j in 0..20 {
                points.push(pt(i as f64 + 0.5, j as f64 + 0.5, 250.0, 2));
            }
        }
        let mut probes = vec![];
        for k in 0..100 {
            let t = k as f64 / 100.0;
            probes.push(pt(0.3 + 19.0 * t, 19.7 - 19.0 * t, 250.0 + 31.25 * t, 1));
        }
        points.extend(probes.iter().copied());
        let c = cloud(points, (0.0, 0.0, 20.0, 20.0));
        let g = build_ground_grid(&c, 1.0).unwrap();
        let hag = compute_hag(&c, &g, HagParams::default()).unwrap();
        for (hp, p) in hag.points.iter().rev().zip(probes.iter().rev()) {
            assert_eq!(hp.hag, p.z - 250.0);
        }
    }
}
