//! Path-based raster and PAD-grid loading shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use canopyforge::raster::{
    io::{read_ascii_grid, read_binary_files, write_ascii_grid, write_binary_files},
    GridSpec, MetricRaster,
};
use canopyforge::voxel::{PadGrid, PadParams};
use canopyforge::{Error, Result};

/// Reads a raster by extension: `.asc` as ASCII grid (band named after the
/// file stem), anything else as the binary payload/sidecar pair.
pub fn read_raster(path: &Path) -> Result<MetricRaster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("asc") => {
            let text = fs::read(path)?;
            let mut raster = read_ascii_grid(&text[..])?;
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                raster.band_name = stem.to_string();
            }
            Ok(raster)
        }
        _ => read_binary_files(path),
    }
}

/// Writes `<stem>.asc`, `<stem>.f64`, and `<stem>.hdr`; returns the file
/// names written.
pub fn write_raster_pair(raster: &MetricRaster, stem: &Path) -> Result<Vec<String>> {
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let ascii_path = stem.with_extension("asc");
    let mut ascii = Vec::new();
    write_ascii_grid(raster, &mut ascii)?;
    fs::write(&ascii_path, ascii)?;
    let (payload, header) = write_binary_files(raster, stem)?;
    Ok([ascii_path, payload, header]
        .iter()
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
        .collect())
}

/// Writes a PAD grid as `<stem>.f64` (cell-major, layer-contiguous, NaN
/// columns for cells without returns) plus a `<stem>.hdr` sidecar.
pub fn write_pad_grid(pad: &PadGrid, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let payload_path = stem.with_extension("f64");
    let header_path = stem.with_extension("hdr");
    let (h, w, layers) = pad.pad.dim();
    let mut payload = Vec::with_capacity(h * w * layers * 8);
    for row in 0..h {
        for col in 0..w {
            let empty = pad.cell_returns[(row, col)] == 0;
            for layer in 0..layers {
                let v = if empty {
                    f64::NAN
                } else {
                    pad.pad[(row, col, layer)]
                };
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let g = &pad.grid;
    let header = format!(
        "width: {}\nheight: {}\norigin_x: {}\norigin_y: {}\ncell_size: {}\ncrs: {}\nband: pad\nlayers: {}\ndz: {}\nk: {}\nmax_height: {}\n",
        g.width, g.height, g.origin_x, g.origin_y, g.cell_size, g.crs_code,
        layers, pad.params.dz, pad.params.k, pad.params.max_height,
    );
    fs::write(&payload_path, payload)?;
    fs::write(&header_path, header)?;
    Ok((payload_path, header_path))
}

/// Reads a PAD grid written by [`write_pad_grid`]. Cell return counts
/// collapse to presence (1) / absence (0); saturation flags are not stored.
pub fn read_pad_grid(path: &Path) -> Result<PadGrid> {
    let stem = path.with_extension("");
    let payload = fs::read(stem.with_extension("f64"))?;
    let header = fs::read_to_string(stem.with_extension("hdr"))?;

    let mut map = std::collections::BTreeMap::new();
    for line in header.lines() {
        if let Some((key, value)) = line.split_once(':') {
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<&String> {
        map.get(key)
            .ok_or_else(|| Error::MissingHeaderKey(key.to_string()))
    };
    let parse_f = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| Error::MalformedHeaderValue {
            key: key.to_string(),
            message: format!("cannot parse `{}`", map[key]),
        })
    };
    let parse_u = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| Error::MalformedHeaderValue {
            key: key.to_string(),
            message: format!("cannot parse `{}`", map[key]),
        })
    };

    let grid = GridSpec::new(
        parse_f("origin_x")?,
        parse_f("origin_y")?,
        parse_f("cell_size")?,
        parse_u("width")?,
        parse_u("height")?,
        parse_u("crs")? as u32,
    )?;
    let layers = parse_u("layers")?;
    let params = PadParams {
        k: parse_f("k")?,
        dz: parse_f("dz")?,
        max_height: parse_f("max_height")?,
    };

    let expected = grid.len() * layers * 8;
    if payload.len() != expected {
        return Err(Error::TruncatedRasterPayload {
            expected,
            actual: payload.len(),
        });
    }
    let mut pad = Array3::<f64>::zeros((grid.height, grid.width, layers));
    let mut returns = Array2::<u32>::zeros((grid.height, grid.width));
    let mut chunks = payload.chunks_exact(8);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let mut empty = false;
            for layer in 0..layers {
                let v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
                if v.is_nan() {
                    empty = true;
                } else {
                    pad[(row, col, layer)] = v;
                }
            }
            returns[(row, col)] = if empty { 0 } else { 1 };
        }
    }
    Ok(PadGrid {
        grid: grid.clone(),
        pad,
        saturated_mask: Array3::from_elem((grid.height, grid.width, layers), false),
        params,
        cell_returns: returns,
    })
}
