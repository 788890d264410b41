//! Georeferenced single-band rasters on metric grids.
//!
//! Grids are anchored at their top-left corner and stored row-major,
//! top-to-bottom. Nodata is carried as NaN in the value array plus an
//! explicit boolean mask; the two are kept consistent at construction.

use ndarray::Array2;

use crate::error::{Error, Result};

pub mod io;

pub use io::{read_ascii_grid, read_binary, write_ascii_grid, write_binary};

/// ASCII grid nodata sentinel.
pub const ASCII_NODATA: f64 = -9999.0;

/// Relative tolerance for origin/cell-size compatibility checks.
const GEOM_EPS: f64 = 1e-9;

/// A metric grid: top-left origin, square cells, row-major addressing.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// X coordinate of the top-left corner, meters.
    pub origin_x: f64,
    /// Y coordinate of the top-left corner, meters. Rows advance downward
    /// (decreasing y).
    pub origin_y: f64,
    /// Cell edge length, meters.
    pub cell_size: f64,
    /// Number of columns.
    pub width: usize,
    /// Number of rows.
    pub height: usize,
    /// EPSG identifier of the projected CRS.
    pub crs_code: u32,
}

impl GridSpec {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        width: usize,
        height: usize,
        crs_code: u32,
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidParameter {
                name: "cell_size",
                message: format!("must be positive and finite, got {cell_size}"),
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter {
                name: "width/height",
                message: format!("must be >= 1, got {width}x{height}"),
            });
        }
        Ok(GridSpec {
            origin_x,
            origin_y,
            cell_size,
            width,
            height,
            crs_code,
        })
    }

    /// Smallest grid of `cell_size` cells whose top-left corner is
    /// (min_x, max_y) and which covers the bounds.
    pub fn from_bounds(
        (min_x, min_y, max_x, max_y): (f64, f64, f64, f64),
        cell_size: f64,
        crs_code: u32,
    ) -> Result<Self> {
        if max_x < min_x || max_y < min_y {
            return Err(Error::DegenerateBounds(format!(
                "inverted bounds ({min_x}, {min_y}, {max_x}, {max_y})"
            )));
        }
        let span = |extent: f64| -> usize {
            if extent <= 0.0 {
                1
            } else {
                // Nudge below the ratio so exact multiples do not gain a cell.
                ((extent / cell_size) - GEOM_EPS).ceil().max(1.0) as usize
            }
        };
        GridSpec::new(
            min_x,
            max_y,
            cell_size,
            span(max_x - min_x),
            span(max_y - min_y),
            crs_code,
        )
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell containing the point, or None when outside the grid extent.
    /// The right/bottom outer edges are closed so bound-touching points
    /// stay in coverage.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin_x) / self.cell_size;
        let fy = (self.origin_y - y) / self.cell_size;
        let (w, h) = (self.width as f64, self.height as f64);
        if fx < 0.0 || fy < 0.0 || fx > w || fy > h {
            return None;
        }
        let col = (fx as usize).min(self.width - 1);
        let row = (fy as usize).min(self.height - 1);
        Some((row, col))
    }

    /// Center coordinates of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y - (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// (min_x, min_y, max_x, max_y) extent of the full grid.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.cell_size,
            self.origin_x + self.width as f64 * self.cell_size,
            self.origin_y,
        )
    }

    /// Checks alignment compatibility with `other`: cell sizes in an exact
    /// integer ratio and origins offset by an integer multiple of the
    /// coarser cell size.
    pub fn check_alignment(&self, other: &GridSpec) -> Result<()> {
        if self.crs_code != other.crs_code {
            return Err(Error::CrsMismatch(self.crs_code, other.crs_code));
        }
        let (coarse, fine) = if self.cell_size >= other.cell_size {
            (self.cell_size, other.cell_size)
        } else {
            (other.cell_size, self.cell_size)
        };
        let ratio = coarse / fine;
        if (ratio - ratio.round()).abs() > GEOM_EPS * ratio.max(1.0) {
            return Err(Error::NonIntegerCellRatio {
                src: self.cell_size,
                target: other.cell_size,
            });
        }
        let residual = |delta: f64| {
            let cells = delta / coarse;
            cells - cells.round()
        };
        let dx = residual(other.origin_x - self.origin_x);
        let dy = residual(other.origin_y - self.origin_y);
        if dx.abs() > GEOM_EPS || dy.abs() > GEOM_EPS {
            return Err(Error::AlignmentResidual { dx, dy });
        }
        Ok(())
    }

    fn same_geometry(&self, other: &GridSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.crs_code == other.crs_code
            && (self.origin_x - other.origin_x).abs() <= GEOM_EPS * self.cell_size
            && (self.origin_y - other.origin_y).abs() <= GEOM_EPS * self.cell_size
            && (self.cell_size - other.cell_size).abs() <= GEOM_EPS * self.cell_size
    }
}

/// A single georeferenced float band with a nodata mask.
///
/// Invariants: masked cells hold NaN, unmasked cells are finite.
#[derive(Debug, Clone)]
pub struct MetricRaster {
    pub grid: GridSpec,
    pub values: Array2<f64>,
    /// true = invalid (nodata).
    pub nodata_mask: Array2<bool>,
    pub band_name: String,
}

impl MetricRaster {
    /// Builds a raster from raw values; non-finite entries become nodata.
    pub fn from_values(grid: GridSpec, mut values: Array2<f64>, band_name: &str) -> Result<Self> {
        let (h, w) = values.dim();
        if h != grid.height || w != grid.width {
            return Err(Error::ShapeMismatch(format!(
                "value array {h}x{w} vs grid {}x{}",
                grid.height, grid.width
            )));
        }
        let mut mask = Array2::from_elem((h, w), false);
        for (v, m) in values.iter_mut().zip(mask.iter_mut()) {
            if !v.is_finite() {
                *v = f64::NAN;
                *m = true;
            }
        }
        Ok(MetricRaster {
            grid,
            values,
            nodata_mask: mask,
            band_name: band_name.to_string(),
        })
    }

    /// Builds a raster with an explicit mask; masked entries are
    /// canonicalized to NaN, unmasked entries must be finite.
    pub fn with_mask(
        grid: GridSpec,
        mut values: Array2<f64>,
        mask: Array2<bool>,
        band_name: &str,
    ) -> Result<Self> {
        let (h, w) = values.dim();
        if h != grid.height || w != grid.width || mask.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "values {h}x{w} / mask {:?} vs grid {}x{}",
                mask.dim(),
                grid.height,
                grid.width
            )));
        }
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::ShapeMismatch(
                    "non-finite value at an unmasked cell".into(),
                ));
            }
        }
        Ok(MetricRaster {
            grid,
            values,
            nodata_mask: mask,
            band_name: band_name.to_string(),
        })
    }

    /// Fully-nodata raster.
    pub fn filled_nodata(grid: GridSpec, band_name: &str) -> Self {
        let shape = (grid.height, grid.width);
        MetricRaster {
            grid,
            values: Array2::from_elem(shape, f64::NAN),
            nodata_mask: Array2::from_elem(shape, true),
            band_name: band_name.to_string(),
        }
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.nodata_mask[(row, col)]
    }

    pub fn valid_count(&self) -> usize {
        self.nodata_mask.iter().filter(|&&m| !m).count()
    }

    /// Nodata-aware bilinear sample of the cell-center lattice at (x, y).
    ///
    /// Coordinates are clamped to the center lattice so edge cells
    /// replicate outward. Nodata neighbors are dropped and the remaining
    /// weights renormalized; all-nodata neighborhoods yield None.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Option<f64> {
        let g = &self.grid;
        // Fractional position on the center lattice.
        let fx = ((x - g.origin_x) / g.cell_size - 0.5).clamp(0.0, (g.width - 1) as f64);
        let fy = ((g.origin_y - y) / g.cell_size - 0.5).clamp(0.0, (g.height - 1) as f64);
        let c0 = fx.floor() as usize;
        let r0 = fy.floor() as usize;
        let c1 = (c0 + 1).min(g.width - 1);
        let r1 = (r0 + 1).min(g.height - 1);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;

        let mut num = 0.0;
        let mut den = 0.0;
        let mut low = f64::INFINITY;
        let mut high = f64::NEG_INFINITY;
        for (row, col, w) in [
            (r0, c0, (1.0 - tx) * (1.0 - ty)),
            (r0, c1, tx * (1.0 - ty)),
            (r1, c0, (1.0 - tx) * ty),
            (r1, c1, tx * ty),
        ] {
            if !self.nodata_mask[(row, col)] && w > 0.0 {
                let v = self.values[(row, col)];
                num += w * v;
                den += w;
                low = low.min(v);
                high = high.max(v);
            }
        }
        if den > 0.0 {
            // Convex combination; clamping collapses constant neighborhoods
            // back to the constant.
            Some((num / den).clamp(low, high))
        } else {
            None
        }
    }
}

/// Per-cell validity raster (true = valid).
#[derive(Debug, Clone)]
pub struct MaskRaster {
    pub grid: GridSpec,
    pub valid: Array2<bool>,
}

impl MaskRaster {
    pub fn new(grid: GridSpec, valid: Array2<bool>) -> Result<Self> {
        if valid.dim() != (grid.height, grid.width) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs grid {}x{}",
                valid.dim(),
                grid.height,
                grid.width
            )));
        }
        Ok(MaskRaster { grid, valid })
    }

    pub fn all_valid(grid: GridSpec) -> Self {
        let shape = (grid.height, grid.width);
        MaskRaster {
            grid,
            valid: Array2::from_elem(shape, true),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Resampling method for [`resample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
}

impl std::str::FromStr for ResampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResampleMethod::Nearest),
            "bilinear" => Ok(ResampleMethod::Bilinear),
            other => Err(Error::InvalidParameter {
                name: "method",
                message: format!("expected nearest|bilinear, got {other}"),
            }),
        }
    }
}

/// Re-grids `src` onto the reference grid by value copy.
///
/// Each reference cell takes the value of the source cell containing its
/// center; reference cells outside the source extent become nodata. With
/// equal cell sizes this is a pure crop/pad shift with no interpolation.
pub fn align_to_reference(src: &MetricRaster, reference: &GridSpec) -> Result<MetricRaster> {
    src.grid.check_alignment(reference)?;
    if src.grid.same_geometry(reference) {
        let mut out = src.clone();
        out.grid = reference.clone();
        return Ok(out);
    }
    let mut out = MetricRaster::filled_nodata(reference.clone(), &src.band_name);
    for row in 0..reference.height {
        for col in 0..reference.width {
            let (cx, cy) = reference.cell_center(row, col);
            if let Some((sr, sc)) = src.grid.cell_at(cx, cy) {
                if !src.nodata_mask[(sr, sc)] {
                    out.values[(row, col)] = src.values[(sr, sc)];
                    out.nodata_mask[(row, col)] = false;
                }
            }
        }
    }
    Ok(out)
}

/// Resamples to `target_cell`, which must be an exact integer refinement
/// or coarsening of the source cell size.
///
/// Refinement: nearest copies the containing coarse cell; bilinear
/// interpolates coarse cell centers with nodata-aware weight
/// renormalization. Coarsening: nearest samples the source cell under the
/// target cell center; bilinear takes the nodata-aware block mean.
pub fn resample(
    src: &MetricRaster,
    target_cell: f64,
    method: ResampleMethod,
) -> Result<MetricRaster> {
    if !(target_cell > 0.0) || !target_cell.is_finite() {
        return Err(Error::InvalidParameter {
            name: "target_cell",
            message: format!("must be positive, got {target_cell}"),
        });
    }
    let src_cell = src.grid.cell_size;
    let integer_factor = |a: f64, b: f64| -> Option<usize> {
        let ratio = a / b;
        let rounded = ratio.round();
        if rounded >= 1.0 && (ratio - rounded).abs() <= GEOM_EPS * rounded {
            Some(rounded as usize)
        } else {
            None
        }
    };

    if (src_cell - target_cell).abs() <= GEOM_EPS * src_cell {
        return Ok(src.clone());
    }

    if src_cell > target_cell {
        // Refinement.
        let factor = integer_factor(src_cell, target_cell).ok_or(Error::NonIntegerCellRatio {
            src: src_cell,
            target: target_cell,
        })?;
        let grid = GridSpec::new(
            src.grid.origin_x,
            src.grid.origin_y,
            target_cell,
            src.grid.width * factor,
            src.grid.height * factor,
            src.grid.crs_code,
        )?;
        let mut out = MetricRaster::filled_nodata(grid, &src.band_name);
        match method {
            ResampleMethod::Nearest => {
                for row in 0..out.grid.height {
                    let sr = row / factor;
                    for col in 0..out.grid.width {
                        let sc = col / factor;
                        if !src.nodata_mask[(sr, sc)] {
                            out.values[(row, col)] = src.values[(sr, sc)];
                            out.nodata_mask[(row, col)] = false;
                        }
                    }
                }
            }
            ResampleMethod::Bilinear => {
                for row in 0..out.grid.height {
                    for col in 0..out.grid.width {
                        let (cx, cy) = out.grid.cell_center(row, col);
                        if let Some(v) = src.bilinear_sample(cx, cy) {
                            out.values[(row, col)] = v;
                            out.nodata_mask[(row, col)] = false;
                        }
                    }
                }
            }
        }
        Ok(out)
    } else {
        // Coarsening.
        let factor = integer_factor(target_cell, src_cell).ok_or(Error::NonIntegerCellRatio {
            src: src_cell,
            target: target_cell,
        })?;
        if src.grid.width % factor != 0 || src.grid.height % factor != 0 {
            return Err(Error::GridMismatch(format!(
                "source {}x{} not divisible by coarsening factor {factor}",
                src.grid.height, src.grid.width
            )));
        }
        let grid = GridSpec::new(
            src.grid.origin_x,
            src.grid.origin_y,
            target_cell,
            src.grid.width / factor,
            src.grid.height / factor,
            src.grid.crs_code,
        )?;
        let mut out = MetricRaster::filled_nodata(grid, &src.band_name);
        for row in 0..out.grid.height {
            for col in 0..out.grid.width {
                match method {
                    ResampleMethod::Nearest => {
                        let (cx, cy) = out.grid.cell_center(row, col);
                        if let Some((sr, sc)) = src.grid.cell_at(cx, cy) {
                            if !src.nodata_mask[(sr, sc)] {
                                out.values[(row, col)] = src.values[(sr, sc)];
                                out.nodata_mask[(row, col)] = false;
                            }
                        }
                    }
                    ResampleMethod::Bilinear => {
                        let mut sum = 0.0;
                        let mut n = 0usize;
                        for sr in row * factor..(row + 1) * factor {
                            for sc in col * factor..(col + 1) * factor {
                                if !src.nodata_mask[(sr, sc)] {
                                    sum += src.values[(sr, sc)];
                                    n += 1;
                                }
                            }
                        }
                        if n > 0 {
                            out.values[(row, col)] = sum / n as f64;
                            out.nodata_mask[(row, col)] = false;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Conjunction of per-raster validity (non-nodata and finite) over a
/// shared grid.
pub fn build_validity_mask(rasters: &[&MetricRaster]) -> Result<MaskRaster> {
    let first = rasters.first().ok_or(Error::InvalidParameter {
        name: "rasters",
        message: "empty raster list".into(),
    })?;
    for r in rasters.iter().skip(1) {
        if !r.grid.same_geometry(&first.grid) {
            return Err(Error::GridMismatch(format!(
                "band `{}` is on a different grid than `{}`",
                r.band_name, first.band_name
            )));
        }
    }
    let mut valid = Array2::from_elem((first.grid.height, first.grid.width), true);
    for r in rasters {
        for (ok, (&m, &v)) in valid
            .iter_mut()
            .zip(r.nodata_mask.iter().zip(r.values.iter()))
        {
            *ok = *ok && !m && v.is_finite();
        }
    }
    MaskRaster::new(first.grid.clone(), valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(w: usize, h: usize, cell: f64) -> GridSpec {
        GridSpec::new(0.0, h as f64 * cell, cell, w, h, 25833).unwrap()
    }

    #[test]
    fn cell_lookup_half_open_with_closed_outer_edge() {
        let g = spec(10, 10, 1.0);
        assert_eq!(g.cell_at(0.0, 10.0), Some((0, 0)));
        assert_eq!(g.cell_at(9.999, 0.001), Some((9, 9)));
        // Bound-touching coordinates stay inside.
        assert_eq!(g.cell_at(10.0, 0.0), Some((9, 9)));
        assert_eq!(g.cell_at(10.001, 5.0), None);
        assert_eq!(g.cell_at(-0.001, 5.0), None);
    }

    #[test]
    fn from_bounds_exact_multiple_does_not_gain_a_cell() {
        let g = GridSpec::from_bounds((0.0, 0.0, 1000.0, 500.0), 1.0, 25833).unwrap();
        assert_eq!((g.width, g.height), (1000, 500));
        assert_eq!(g.origin_y, 500.0);
    }

    #[test]
    fn align_identity_is_value_identical() {
        let g = spec(3, 2, 1.0);
        let r = MetricRaster::from_values(
            g.clone(),
            array![[1.0, 2.0, 3.0], [4.0, f64::NAN, 6.0]],
            "chm",
        )
        .unwrap();
        let out = align_to_reference(&r, &g).unwrap();
        assert_eq!(out.values[(0, 1)], 2.0);
        assert!(out.nodata_mask[(1, 1)]);
        assert_eq!(out.valid_count(), 5);
    }

    #[test]
    fn align_shift_one_cell() {
        let g = spec(3, 1, 1.0);
        let r =
            MetricRaster::from_values(g.clone(), array![[10.0, 20.0, 30.0]], "chm").unwrap();
        let shifted = GridSpec::new(1.0, g.origin_y, 1.0, 3, 1, 25833).unwrap();
        let out = align_to_reference(&r, &shifted).unwrap();
        assert_eq!(out.values[(0, 0)], 20.0);
        assert_eq!(out.values[(0, 1)], 30.0);
        assert!(out.nodata_mask[(0, 2)]);
    }

    #[test]
    fn align_rejects_crs_mismatch() {
        let g = spec(2, 2, 1.0);
        let mut other = g.clone();
        other.crs_code = 25832;
        let r = MetricRaster::filled_nodata(g, "chm");
        match align_to_reference(&r, &other) {
            Err(Error::CrsMismatch(25833, 25832)) => {}
            other => panic!("expected CRS mismatch, got {other:?}"),
        }
    }

    #[test]
    fn align_rejects_fractional_offset() {
        let g = spec(2, 2, 1.0);
        let r = MetricRaster::filled_nodata(g.clone(), "chm");
        let off = GridSpec::new(0.25, g.origin_y, 1.0, 2, 2, 25833).unwrap();
        assert!(matches!(
            align_to_reference(&r, &off),
            Err(Error::AlignmentResidual { .. })
        ));
    }

    #[test]
    fn align_is_idempotent() {
        let g = spec(4, 3, 1.0);
        let vals = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as f64);
        let r = MetricRaster::from_values(g, vals, "pai").unwrap();
        let reference = GridSpec::new(1.0, 2.0, 1.0, 3, 2, 25833).unwrap();
        let once = align_to_reference(&r, &reference).unwrap();
        let twice = align_to_reference(&once, &reference).unwrap();
        assert_eq!(once.values, twice.values);
        assert_eq!(once.nodata_mask, twice.nodata_mask);
    }

    #[test]
    fn resample_constant_invariance() {
        let g = spec(2, 2, 1.0);
        let r = MetricRaster::from_values(g, Array2::from_elem((2, 2), 7.0), "chm").unwrap();
        for method in [ResampleMethod::Nearest, ResampleMethod::Bilinear] {
            let out = resample(&r, 0.2, method).unwrap();
            assert_eq!(out.grid.width, 10);
            assert!(out.values.iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn resample_nearest_replicates_blocks() {
        let g = spec(1, 1, 1.0);
        let r = MetricRaster::from_values(g, array![[3.0]], "chm").unwrap();
        let out = resample(&r, 0.2, ResampleMethod::Nearest).unwrap();
        assert_eq!(out.grid.width, 5);
        assert_eq!(out.grid.height, 5);
        assert!(out.values.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn bilinear_midpoint_between_centers() {
        let g = spec(2, 1, 1.0);
        let r = MetricRaster::from_values(g, array![[0.0, 10.0]], "chm").unwrap();
        // Centers at x=0.5 and x=1.5; the midpoint weighs them equally.
        assert_eq!(r.bilinear_sample(1.0, 0.5), Some(5.0));
    }

    #[test]
    fn bilinear_skips_nodata_with_renormalized_weights() {
        let g = spec(2, 1, 1.0);
        let r = MetricRaster::from_values(g, array![[4.0, f64::NAN]], "chm").unwrap();
        assert_eq!(r.bilinear_sample(1.0, 0.5), Some(4.0));
        let all_bad = MetricRaster::filled_nodata(spec(2, 1, 1.0), "chm");
        assert_eq!(all_bad.bilinear_sample(1.0, 0.5), None);
    }

    #[test]
    fn resample_rejects_non_integer_ratio() {
        let g = spec(2, 2, 1.0);
        let r = MetricRaster::filled_nodata(g, "chm");
        assert!(matches!(
            resample(&r, 0.3, ResampleMethod::Nearest),
            Err(Error::NonIntegerCellRatio { .. })
        ));
    }

    #[test]
    fn refine_then_coarsen_is_identity() {
        let g = spec(4, 3, 1.0);
        let vals = Array2::from_shape_fn((3, 4), |(r, c)| (r * 10 + c) as f64 * 0.37);
        let r = MetricRaster::from_values(g, vals.clone(), "chm").unwrap();
        let fine = resample(&r, 0.25, ResampleMethod::Nearest).unwrap();
        let back = resample(&fine, 1.0, ResampleMethod::Nearest).unwrap();
        assert_eq!(back.values, vals);
    }

    #[test]
    fn validity_mask_is_conjunction() {
        let g = spec(2, 1, 1.0);
        let a = MetricRaster::from_values(g.clone(), array![[1.0, f64::NAN]], "chm").unwrap();
        let b = MetricRaster::from_values(g.clone(), array![[2.0, 5.0]], "pai").unwrap();
        let m = build_validity_mask(&[&a, &b]).unwrap();
        assert!(m.valid[(0, 0)]);
        assert!(!m.valid[(0, 1)]);
        assert!(build_validity_mask(&[]).is_err());
    }
}
