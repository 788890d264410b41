//! Vertical structure metrics on a metric grid.
//!
//! Returns are binned into per-cell height layers; plant area density per
//! layer follows the Beer-Lambert / MacArthur-Horn form
//! `PAD = ln(S_e / S_t) / (k * dz)`, where `S_e` counts returns at or above
//! the layer's lower bound and `S_t` those at or above its upper bound
//! (cumulative return counts stand in for pulse counts). PAI is the layer
//! sum, FHD the Shannon entropy of the layer proportions, CHM the per-cell
//! maximum height, and percentiles use linear rank interpolation.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::HagCloud;
use crate::raster::{GridSpec, MetricRaster};

/// Beer-Lambert layer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadParams {
    /// Extinction coefficient (0.5 assumes a spherical leaf angle
    /// distribution).
    pub k: f64,
    /// Layer thickness, meters.
    pub dz: f64,
    /// Profile ceiling, meters; must be a positive multiple of `dz`.
    pub max_height: f64,
}

impl Default for PadParams {
    fn default() -> Self {
        PadParams {
            k: 0.5,
            dz: 1.0,
            max_height: 60.0,
        }
    }
}

impl PadParams {
    /// Number of layers, after validation.
    pub fn layer_count(&self) -> Result<usize> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidParameter {
                name: "k",
                message: format!("must be positive, got {}", self.k),
            });
        }
        if !(self.dz > 0.0) || !self.dz.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dz",
                message: format!("must be positive, got {}", self.dz),
            });
        }
        let layers = self.max_height / self.dz;
        let rounded = layers.round();
        if !(rounded >= 1.0) || (layers - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::InvalidParameter {
                name: "max_height",
                message: format!(
                    "must be a positive multiple of dz, got {} / {}",
                    self.max_height, self.dz
                ),
            });
        }
        Ok(rounded as usize)
    }
}

/// Per-cell, per-layer return counts.
#[derive(Debug, Clone)]
pub struct ReturnHistogramGrid {
    pub grid: GridSpec,
    /// (rows, cols, layers); layer 0 is `[0, dz)`.
    pub counts: Array3<u32>,
    pub total_per_cell: Array2<u32>,
    pub params: PadParams,
}

impl ReturnHistogramGrid {
    pub fn layers(&self) -> usize {
        self.counts.dim().2
    }
}

/// Per-cell vertical PAD profiles.
#[derive(Debug, Clone)]
pub struct PadGrid {
    pub grid: GridSpec,
    /// (rows, cols, layers), m^2/m^3, non-negative.
    pub pad: Array3<f64>,
    /// Layers where the transmitted count was clamped from 0 to 1.
    pub saturated_mask: Array3<bool>,
    pub params: PadParams,
    /// Return totals carried through so empty cells stay distinguishable
    /// from fully transparent ones.
    pub cell_returns: Array2<u32>,
}

impl PadGrid {
    pub fn layers(&self) -> usize {
        self.pad.dim().2
    }

    pub fn saturated_count(&self) -> usize {
        self.saturated_mask.iter().filter(|&&s| s).count()
    }
}

/// Bins each return into exactly one (cell, layer). Heights on a layer
/// boundary go to the upper layer; the profile ceiling itself stays in the
/// top layer.
pub fn bin_returns(
    hag: &HagCloud,
    grid: &GridSpec,
    params: &PadParams,
) -> Result<ReturnHistogramGrid> {
    let layers = params.layer_count()?;
    let mut counts = Array3::<u32>::zeros((grid.height, grid.width, layers));
    let mut totals = Array2::<u32>::zeros((grid.height, grid.width));
    for p in &hag.points {
        let (row, col) = grid
            .cell_at(p.x, p.y)
            .ok_or(Error::OutOfCoverage { x: p.x, y: p.y })?;
        let layer = ((p.hag / params.dz) as usize).min(layers - 1);
        counts[(row, col, layer)] += 1;
        totals[(row, col)] += 1;
    }
    Ok(ReturnHistogramGrid {
        grid: grid.clone(),
        counts,
        total_per_cell: totals,
        params: *params,
    })
}

/// Per-cell PAD profile for one column of layer counts, plus saturation
/// flags. `counts` is bottom-to-top; so is the output.
fn pad_profile(counts: &[u32], inv_k_dz: f64, pad: &mut [f64], saturated: &mut [bool]) {
    let mut transmitted = 0u64; // S_t: returns at or above the layer's upper bound
    for layer in (0..counts.len()).rev() {
        let in_layer = counts[layer] as u64;
        let entering = transmitted + in_layer; // S_e
        pad[layer] = if entering == 0 || in_layer == 0 {
            0.0
        } else if transmitted == 0 {
            saturated[layer] = true;
            (entering as f64).ln() * inv_k_dz
        } else {
            (entering as f64 / transmitted as f64).ln() * inv_k_dz
        };
        transmitted = entering;
    }
}

/// Evaluates the Beer-Lambert profile for every cell.
pub fn compute_pad(hist: &ReturnHistogramGrid, params: &PadParams) -> Result<PadGrid> {
    let layers = params.layer_count()?;
    if hist.params != *params || hist.layers() != layers {
        return Err(Error::ShapeMismatch(format!(
            "histogram was binned with {:?} ({} layers), asked to evaluate {:?} ({layers} layers)",
            hist.params,
            hist.layers(),
            params
        )));
    }
    let (h, w, _) = hist.counts.dim();
    let mut pad = Array3::<f64>::zeros((h, w, layers));
    let mut saturated = Array3::<bool>::from_elem((h, w, layers), false);
    let inv_k_dz = 1.0 / (params.k * params.dz);

    let counts_flat = hist.counts.as_slice().expect("contiguous");
    let pad_flat = pad.as_slice_mut().expect("contiguous");
    let sat_flat = saturated.as_slice_mut().expect("contiguous");
    pad_flat
        .par_chunks_exact_mut(layers)
        .zip(sat_flat.par_chunks_exact_mut(layers))
        .zip(counts_flat.par_chunks_exact(layers))
        .for_each(|((pad_cell, sat_cell), counts_cell)| {
            pad_profile(counts_cell, inv_k_dz, pad_cell, sat_cell);
        });

    Ok(PadGrid {
        grid: hist.grid.clone(),
        pad,
        saturated_mask: saturated,
        params: *params,
        cell_returns: hist.total_per_cell.clone(),
    })
}

/// Plant area index: per-cell layer sum, accumulated bottom-to-top.
/// Cells without returns are nodata.
pub fn compute_pai(pad: &PadGrid) -> Result<MetricRaster> {
    let (h, w, layers) = pad.pad.dim();
    let mut values = Array2::<f64>::zeros((h, w));
    let pad_flat = pad.pad.as_slice().expect("contiguous");
    let returns_flat = pad.cell_returns.as_slice().expect("contiguous");
    values
        .as_slice_mut()
        .expect("contiguous")
        .par_iter_mut()
        .zip(pad_flat.par_chunks_exact(layers))
        .zip(returns_flat.par_iter())
        .for_each(|((out, profile), &returns)| {
            *out = if returns == 0 {
                f64::NAN
            } else {
                let mut sum = 0.0;
                for &v in profile {
                    sum += v;
                }
                sum
            };
        });
    MetricRaster::from_values(pad.grid.clone(), values, "pai")
}

/// Shannon entropy of a single PAD profile; 0 for empty or single-layer
/// profiles.
pub fn fhd_of_profile(profile: &[f64]) -> f64 {
    let mut pai = 0.0;
    for &v in profile {
        pai += v;
    }
    if !(pai > 0.0) {
        return 0.0;
    }
    let mut acc = 0.0;
    for &v in profile {
        if v > 0.0 {
            let p = v / pai;
            acc += p * p.ln();
        }
    }
    if acc == 0.0 {
        0.0
    } else {
        -acc
    }
}

/// Foliage height diversity from PAD layer proportions.
pub fn compute_fhd(pad: &PadGrid) -> Result<MetricRaster> {
    let (h, w, layers) = pad.pad.dim();
    let mut values = Array2::<f64>::zeros((h, w));
    let pad_flat = pad.pad.as_slice().expect("contiguous");
    let returns_flat = pad.cell_returns.as_slice().expect("contiguous");
    values
        .as_slice_mut()
        .expect("contiguous")
        .par_iter_mut()
        .zip(pad_flat.par_chunks_exact(layers))
        .zip(returns_flat.par_iter())
        .for_each(|((out, profile), &returns)| {
            *out = if returns == 0 {
                f64::NAN
            } else {
                fhd_of_profile(profile)
            };
        });
    MetricRaster::from_values(pad.grid.clone(), values, "fhd")
}

/// Foliage height diversity from raw return proportions instead of PAD
/// proportions; kept as the alternative reading of the layer weights.
pub fn compute_fhd_from_returns(hist: &ReturnHistogramGrid) -> Result<MetricRaster> {
    let (h, w, layers) = hist.counts.dim();
    let mut values = Array2::<f64>::zeros((h, w));
    let counts_flat = hist.counts.as_slice().expect("contiguous");
    let totals_flat = hist.total_per_cell.as_slice().expect("contiguous");
    values
        .as_slice_mut()
        .expect("contiguous")
        .par_iter_mut()
        .zip(counts_flat.par_chunks_exact(layers))
        .zip(totals_flat.par_iter())
        .for_each(|((out, counts), &total)| {
            *out = if total == 0 {
                f64::NAN
            } else {
                let mut acc = 0.0;
                for &c in counts {
                    if c > 0 {
                        let p = c as f64 / total as f64;
                        acc += p * p.ln();
                    }
                }
                if acc == 0.0 {
                    0.0
                } else {
                    -acc
                }
            };
        });
    MetricRaster::from_values(hist.grid.clone(), values, "fhd")
}

/// Canopy height model: per-cell maximum height above ground.
pub fn compute_chm(hag: &HagCloud, grid: &GridSpec) -> Result<MetricRaster> {
    let mut values = Array2::from_elem((grid.height, grid.width), f64::NAN);
    for p in &hag.points {
        let (row, col) = grid
            .cell_at(p.x, p.y)
            .ok_or(Error::OutOfCoverage { x: p.x, y: p.y })?;
        let cell = &mut values[(row, col)];
        if cell.is_nan() || p.hag > *cell {
            *cell = p.hag;
        }
    }
    MetricRaster::from_values(grid.clone(), values, "chm")
}

/// Band name for a percentile fraction, e.g. 0.05 -> "p05".
pub fn percentile_band_name(fraction: f64) -> String {
    format!("p{:02}", (fraction * 100.0).round() as u32)
}

/// Linear-interpolation percentile of an already sorted slice.
fn percentile_sorted(sorted: &[f64], fraction: f64) -> f64 {
    let n = sorted.len();
    let rank = (n - 1) as f64 * fraction;
    let lo = rank.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (rank - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Per-cell height percentiles, one raster per requested fraction.
pub fn compute_percentiles(
    hag: &HagCloud,
    grid: &GridSpec,
    fractions: &[f64],
) -> Result<Vec<MetricRaster>> {
    for &f in fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidParameter {
                name: "percentiles",
                message: format!("fractions must lie in (0, 1), got {f}"),
            });
        }
    }
    let cells = grid.len();

    // Counting sort of heights by cell index.
    let mut cell_of = Vec::with_capacity(hag.points.len());
    let mut counts = vec![0u32; cells];
    for p in &hag.points {
        let (row, col) = grid
            .cell_at(p.x, p.y)
            .ok_or(Error::OutOfCoverage { x: p.x, y: p.y })?;
        let idx = row * grid.width + col;
        cell_of.push(idx);
        counts[idx] += 1;
    }
    let mut offsets = vec![0usize; cells + 1];
    for i in 0..cells {
        offsets[i + 1] = offsets[i] + counts[i] as usize;
    }
    let mut heights = vec![0.0f64; hag.points.len()];
    let mut cursor = offsets.clone();
    for (p, &idx) in hag.points.iter().zip(&cell_of) {
        heights[cursor[idx]] = p.hag;
        cursor[idx] += 1;
    }

    // Sort each cell's heights in parallel over disjoint segments.
    let mut segments: Vec<&mut [f64]> = Vec::with_capacity(cells);
    let mut rest = heights.as_mut_slice();
    for &count in &counts {
        let (seg, tail) = rest.split_at_mut(count as usize);
        segments.push(seg);
        rest = tail;
    }
    segments
        .par_iter_mut()
        .for_each(|seg| seg.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap()));

    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut values = Array2::from_elem((grid.height, grid.width), f64::NAN);
        let flat = values.as_slice_mut().expect("contiguous");
        for i in 0..cells {
            let seg = &heights[offsets[i]..offsets[i + 1]];
            if !seg.is_empty() {
                flat[i] = percentile_sorted(seg, fraction);
            }
        }
        out.push(MetricRaster::from_values(
            grid.clone(),
            values,
            &percentile_band_name(fraction),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::ground::HagPoint;

    fn one_cell_grid() -> GridSpec {
        GridSpec::new(0.0, 1.0, 1.0, 1, 1, 25833).unwrap()
    }

    fn hag_cloud(points: Vec<(f64, f64, f64)>) -> HagCloud {
        HagCloud {
            points: points
                .into_iter()
                .map(|(x, y, hag)| HagPoint { x, y, hag })
                .collect(),
            source_bounds: (0.0, 0.0, 1.0, 1.0),
            crs_code: 25833,
            clamped_count: 0,
            dropped_count: 0,
        }
    }

    fn params(max_height: f64) -> PadParams {
        PadParams {
            max_height,
            ..PadParams::default()
        }
    }

    #[test]
    fn binning_layer_assignment() {
        let grid = one_cell_grid();
        let p = params(5.0);
        let hist = bin_returns(&hag_cloud(vec![(0.5, 0.5, 0.5)]), &grid, &p).unwrap();
        assert_eq!(hist.counts[(0, 0, 0)], 1);
        // Boundary heights belong to the upper layer.
        let hist = bin_returns(&hag_cloud(vec![(0.5, 0.5, 1.0)]), &grid, &p).unwrap();
        assert_eq!(hist.counts[(0, 0, 1)], 1);
        // The cap itself stays in the top layer.
        let hist = bin_returns(&hag_cloud(vec![(0.5, 0.5, 5.0)]), &grid, &p).unwrap();
        assert_eq!(hist.counts[(0, 0, 4)], 1);
    }

    #[test]
    fn binning_conserves_counts() {
        let grid = one_cell_grid();
        let pts: Vec<(f64, f64, f64)> = (0..10).map(|i| (0.5, 0.5, i as f64 * 0.499)).collect();
        let hist = bin_returns(&hag_cloud(pts), &grid, &params(5.0)).unwrap();
        let layer_sum: u32 = (0..5).map(|l| hist.counts[(0, 0, l)]).sum();
        assert_eq!(layer_sum, 10);
        assert_eq!(hist.total_per_cell[(0, 0)], 10);
    }

    #[test]
    fn pad_matches_direct_formula() {
        // Layer 0 holds 5 returns, layer 1 holds 5: for layer 0,
        // S_e = 10 and S_t = 5, so PAD = ln(2) / (0.5 * 1).
        let grid = one_cell_grid();
        let mut pts = vec![(0.5, 0.5, 0.5); 5];
        pts.extend(vec![(0.5, 0.5, 1.5); 5]);
        let p = params(2.0);
        let hist = bin_returns(&hag_cloud(pts), &grid, &p).unwrap();
        let pad = compute_pad(&hist, &p).unwrap();
        assert_eq!(pad.pad[(0, 0, 0)], 2.0f64.ln() / 0.5);
        assert!((pad.pad[(0, 0, 0)] - 1.3862944).abs() < 1e-6);
        assert!(!pad.saturated_mask[(0, 0, 0)]);
    }

    #[test]
    fn pad_is_zero_where_layer_is_empty() {
        let grid = one_cell_grid();
        let p = params(3.0);
        let hist = bin_returns(&hag_cloud(vec![(0.5, 0.5, 2.5); 4]), &grid, &p).unwrap();
        let pad = compute_pad(&hist, &p).unwrap();
        assert_eq!(pad.pad[(0, 0, 0)], 0.0);
        assert_eq!(pad.pad[(0, 0, 1)], 0.0);
    }

    #[test]
    fn fully_occluding_top_layer_saturates() {
        let grid = one_cell_grid();
        let p = params(1.0);
        let hist = bin_returns(&hag_cloud(vec![(0.5, 0.5, 0.5); 7]), &grid, &p).unwrap();
        let pad = compute_pad(&hist, &p).unwrap();
        assert_eq!(pad.pad[(0, 0, 0)], 7.0f64.ln() / 0.5);
        assert!((pad.pad[(0, 0, 0)] - 3.8918).abs() < 1e-4);
        assert!(pad.saturated_mask[(0, 0, 0)]);
        assert_eq!(pad.saturated_count(), 1);
    }

    #[test]
    fn monotone_pulse_accounting_keeps_pad_nonnegative() {
        let grid = one_cell_grid();
        let p = params(10.0);
        let pts: Vec<(f64, f64, f64)> = (0..1000)
            .map(|i| (0.5, 0.5, (i * 7919 % 1000) as f64 / 100.0))
            .collect();
        let hist = bin_returns(&hag_cloud(pts), &grid, &p).unwrap();
        let pad = compute_pad(&hist, &p).unwrap();
        assert!(pad.pad.iter().all(|&v| v >= 0.0));
    }

    fn pad_grid_from_profile(profile: &[f64]) -> PadGrid {
        let layers = profile.len();
        let grid = one_cell_grid();
        let mut pad = Array3::zeros((1, 1, layers));
        for (l, &v) in profile.iter().enumerate() {
            pad[(0, 0, l)] = v;
        }
        PadGrid {
            grid,
            pad,
            saturated_mask: Array3::from_elem((1, 1, layers), false),
            params: params(layers as f64),
            cell_returns: Array2::from_elem((1, 1), 1),
        }
    }

    #[test]
    fn pai_is_the_layer_sum() {
        assert_eq!(
            compute_pai(&pad_grid_from_profile(&[1.2])).unwrap().values[(0, 0)],
            1.2
        );
        assert_eq!(
            compute_pai(&pad_grid_from_profile(&[0.5, 0.25, 0.0]))
                .unwrap()
                .values[(0, 0)],
            0.75
        );
    }

    #[test]
    fn pai_zero_profile_with_returns_is_valid() {
        let pai = compute_pai(&pad_grid_from_profile(&[0.0, 0.0])).unwrap();
        assert_eq!(pai.values[(0, 0)], 0.0);
        assert!(!pai.nodata_mask[(0, 0)]);
    }

    #[test]
    fn pai_empty_cell_is_nodata() {
        let mut grid = pad_grid_from_profile(&[0.0]);
        grid.cell_returns[(0, 0)] = 0;
        assert!(compute_pai(&grid).unwrap().nodata_mask[(0, 0)]);
    }

    #[test]
    fn fhd_uniform_layers_reach_max_entropy() {
        let fhd = compute_fhd(&pad_grid_from_profile(&[0.3; 4])).unwrap();
        assert!((fhd.values[(0, 0)] - 4.0f64.ln()).abs() < 1e-12);
        assert!((fhd.values[(0, 0)] - 1.3862944).abs() < 1e-6);
    }

    #[test]
    fn fhd_single_layer_is_zero() {
        let fhd = compute_fhd(&pad_grid_from_profile(&[0.0, 2.5, 0.0])).unwrap();
        assert_eq!(fhd.values[(0, 0)], 0.0);
    }

    #[test]
    fn fhd_hand_evaluated_profile() {
        // Layers (0.5, 0.5, 1.0): p = (0.25, 0.25, 0.5),
        // FHD = -(2 * 0.25 ln 0.25 + 0.5 ln 0.5) = 1.0397...
        let fhd = compute_fhd(&pad_grid_from_profile(&[0.5, 0.5, 1.0])).unwrap();
        let expected = -(2.0 * 0.25 * 0.25f64.ln() + 0.5 * 0.5f64.ln());
        assert!((fhd.values[(0, 0)] - expected).abs() < 1e-15);
        assert!((fhd.values[(0, 0)] - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn fhd_scale_invariance() {
        let base = pad_grid_from_profile(&[0.1, 0.7, 0.2, 0.4]);
        let scaled = pad_grid_from_profile(&[0.1 * 37.5, 0.7 * 37.5, 0.2 * 37.5, 0.4 * 37.5]);
        let a = compute_fhd(&base).unwrap().values[(0, 0)];
        let b = compute_fhd(&scaled).unwrap().values[(0, 0)];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fhd_from_returns_alternative() {
        let grid = one_cell_grid();
        let p = params(4.0);
        let mut pts = vec![(0.5, 0.5, 0.5); 3];
        pts.extend(vec![(0.5, 0.5, 1.5); 1]);
        let hist = bin_returns(&hag_cloud(pts), &grid, &p).unwrap();
        let fhd = compute_fhd_from_returns(&hist).unwrap();
        let expected = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((fhd.values[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn chm_is_the_cell_maximum() {
        let grid = one_cell_grid();
        let chm = compute_chm(
            &hag_cloud(vec![(0.5, 0.5, 3.2), (0.5, 0.5, 7.5), (0.5, 0.5, 1.1)]),
            &grid,
        )
        .unwrap();
        assert_eq!(chm.values[(0, 0)], 7.5);
    }

    #[test]
    fn chm_empty_cell_nodata_and_ground_only_zero() {
        let grid = GridSpec::new(0.0, 1.0, 1.0, 2, 1, 25833).unwrap();
        let chm = compute_chm(&hag_cloud(vec![(0.5, 0.5, 0.0)]), &grid).unwrap();
        assert_eq!(chm.values[(0, 0)], 0.0);
        assert!(!chm.nodata_mask[(0, 0)]);
        assert!(chm.nodata_mask[(0, 1)]);
    }

    #[test]
    fn percentile_examples() {
        let grid = one_cell_grid();
        let hag = hag_cloud((1..=9).map(|i| (0.5, 0.5, i as f64)).collect());
        let p = compute_percentiles(&hag, &grid, &[0.5]).unwrap();
        assert_eq!(p[0].values[(0, 0)], 5.0);
        assert_eq!(p[0].band_name, "p50");

        let single = compute_percentiles(&hag_cloud(vec![(0.5, 0.5, 4.25)]), &grid, &[0.05, 0.95])
            .unwrap();
        assert_eq!(single[0].values[(0, 0)], 4.25);
        assert_eq!(single[1].values[(0, 0)], 4.25);

        let pair = compute_percentiles(
            &hag_cloud(vec![(0.5, 0.5, 0.0), (0.5, 0.5, 10.0)]),
            &grid,
            &[0.95],
        )
        .unwrap();
        assert_eq!(pair[0].values[(0, 0)], 9.5);
    }

    #[test]
    fn percentile_fraction_domain_is_enforced() {
        let grid = one_cell_grid();
        let hag = hag_cloud(vec![(0.5, 0.5, 1.0)]);
        assert!(compute_percentiles(&hag, &grid, &[0.0]).is_err());
        assert!(compute_percentiles(&hag, &grid, &[1.0]).is_err());
    }

    #[test]
    fn out_of_coverage_point_is_rejected() {
        let grid = one_cell_grid();
        let hag = hag_cloud(vec![(5.0, 5.0, 1.0)]);
        assert!(matches!(
            compute_chm(&hag, &grid),
            Err(Error::OutOfCoverage { .. })
        ));
        assert!(bin_returns(&hag, &grid, &PadParams::default()).is_err());
    }
}
