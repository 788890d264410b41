//! Sliding-window coverage planning and seam-free blending of window
//! predictions.
//!
//! Windows are laid out at `window - overlap` stride with the final
//! row/column clamped to the tile edge, which guarantees full coverage
//! without padding. Blending weighs each contribution with a separable
//! Hann window (floored so clamped corners keep nonzero weight),
//! normalizes the weights per pixel before accumulating, and clamps the
//! result into the contributor range so constant inputs come back exactly.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::raster::{GridSpec, MetricRaster};

/// Weight floor for the Hann profile.
const WEIGHT_FLOOR: f64 = 1e-3;

/// Planned window offsets over a tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    /// (row0, col0) of each window, row-major order.
    pub windows: Vec<(usize, usize)>,
    pub window_size: usize,
    pub overlap: usize,
    /// (height, width) of the tile, pixels.
    pub tile_dims: (usize, usize),
}

/// Blending weight profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendMode {
    /// Separable raised-cosine weights with a small floor.
    Hann,
    /// Plain averaging of all contributors.
    Uniform,
}

fn axis_offsets(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut at = 0usize;
    loop {
        if at + window >= dim {
            offsets.push(dim - window);
            break;
        }
        offsets.push(at);
        at += stride;
    }
    offsets
}

/// Plans full sliding-window coverage of a tile.
pub fn plan_windows(
    tile_dims: (usize, usize),
    window: usize,
    overlap: usize,
) -> Result<WindowPlan> {
    if window == 0 {
        return Err(Error::InvalidParameter {
            name: "window",
            message: "must be >= 1".into(),
        });
    }
    if overlap >= window {
        return Err(Error::InvalidParameter {
            name: "overlap",
            message: format!("overlap {overlap} must be smaller than the window {window}"),
        });
    }
    let (height, width) = tile_dims;
    if height < window || width < window {
        return Err(Error::InvalidParameter {
            name: "tile_dims",
            message: format!("tile {height}x{width} is smaller than the window {window}"),
        });
    }
    let stride = window - overlap;
    let rows = axis_offsets(height, window, stride);
    let cols = axis_offsets(width, window, stride);
    let mut windows = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            windows.push((r, c));
        }
    }
    Ok(WindowPlan {
        windows,
        window_size: window,
        overlap,
        tile_dims,
    })
}

/// 1-D Hann profile, computed on one half and mirrored so symmetric taps
/// carry bit-identical weights.
fn hann_profile(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let phase = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
        let value = phase.sin().powi(2);
        w[k] = value;
        w[n - 1 - k] = value;
    }
    w
}

/// Per-pixel blending weights for one window.
pub fn window_weight_matrix(window: usize, mode: BlendMode) -> Array2<f64> {
    match mode {
        BlendMode::Uniform => Array2::from_elem((window, window), 1.0),
        BlendMode::Hann => {
            let profile = hann_profile(window);
            Array2::from_shape_fn((window, window), |(r, c)| {
                (profile[r] * profile[c]).max(WEIGHT_FLOOR)
            })
        }
    }
}

/// Blends one prediction array per planned window into the full tile.
///
/// Non-finite contributor values (nodata in cropped ground truth) are
/// skipped; a pixel whose every contributor is nodata comes out NaN.
pub fn blend_stitch(
    plan: &WindowPlan,
    preds: &[Array2<f64>],
    mode: BlendMode,
) -> Result<Array2<f64>> {
    if preds.len() != plan.windows.len() {
        return Err(Error::InvalidParameter {
            name: "window_preds",
            message: format!(
                "plan has {} windows but {} prediction arrays were supplied",
                plan.windows.len(),
                preds.len()
            ),
        });
    }
    let n = plan.window_size;
    for (i, p) in preds.iter().enumerate() {
        if p.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {i} is {:?}, expected {n}x{n}",
                p.dim()
            )));
        }
    }

    let weight = window_weight_matrix(n, mode);
    let dims = plan.tile_dims;
    let mut weight_sum = Array2::<f64>::zeros(dims);
    let mut low = Array2::from_elem(dims, f64::INFINITY);
    let mut high = Array2::from_elem(dims, f64::NEG_INFINITY);
    for (&(r0, c0), pred) in plan.windows.iter().zip(preds) {
        for i in 0..n {
            for j in 0..n {
                let v = pred[(i, j)];
                if !v.is_finite() {
                    continue;
                }
                let px = (r0 + i, c0 + j);
                weight_sum[px] += weight[(i, j)];
                if v < low[px] {
                    low[px] = v;
                }
                if v > high[px] {
                    high[px] = v;
                }
            }
        }
    }

    let mut out = Array2::<f64>::zeros(dims);
    for (&(r0, c0), pred) in plan.windows.iter().zip(preds) {
        for i in 0..n {
            for j in 0..n {
                let v = pred[(i, j)];
                if !v.is_finite() {
                    continue;
                }
                let px = (r0 + i, c0 + j);
                out[px] += (weight[(i, j)] / weight_sum[px]) * v;
            }
        }
    }
    // Normalized accumulation is a convex combination; clamping into the
    // contributor range restores exactness where contributors agree.
    for ((o, (&lo, &hi)), &w) in out
        .iter_mut()
        .zip(low.iter().zip(high.iter()))
        .zip(weight_sum.iter())
    {
        *o = if w > 0.0 { o.clamp(lo, hi) } else { f64::NAN };
    }
    Ok(out)
}

/// [`blend_stitch`] wrapped onto a georeferenced grid.
pub fn blend_stitch_raster(
    plan: &WindowPlan,
    preds: &[Array2<f64>],
    grid: &GridSpec,
    band_name: &str,
    mode: BlendMode,
) -> Result<MetricRaster> {
    if (grid.height, grid.width) != plan.tile_dims {
        return Err(Error::GridMismatch(format!(
            "grid {}x{} vs plan tile {}x{}",
            grid.height, grid.width, plan.tile_dims.0, plan.tile_dims.1
        )));
    }
    let blended = blend_stitch(plan, preds, mode)?;
    MetricRaster::from_values(grid.clone(), blended, band_name)
}

/// Writes the plan offsets as `row0,col0` CSV.
pub fn write_plan_csv<W: Write>(plan: &WindowPlan, sink: &mut W) -> Result<()> {
    writeln!(sink, "row0,col0")?;
    for &(r, c) in &plan.windows {
        writeln!(sink, "{r},{c}")?;
    }
    Ok(())
}

/// Reads plan offsets written by [`write_plan_csv`]; geometry comes from
/// the accompanying parameters.
pub fn read_plan_csv<R: Read>(
    source: R,
    window_size: usize,
    overlap: usize,
    tile_dims: (usize, usize),
) -> Result<WindowPlan> {
    let reader = BufReader::new(source);
    let mut windows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed == "row0,col0") {
            continue;
        }
        let (r, c) = trimmed.split_once(',').ok_or_else(|| Error::XyzParse {
            line: idx + 1,
            message: format!("expected `row0,col0`, got `{trimmed}`"),
        })?;
        let parse = |tok: &str| -> Result<usize> {
            tok.trim().parse().map_err(|_| Error::XyzParse {
                line: idx + 1,
                message: format!("cannot parse offset `{tok}`"),
            })
        };
        windows.push((parse(r)?, parse(c)?));
    }
    Ok(WindowPlan {
        windows,
        window_size,
        overlap,
        tile_dims,
    })
}
