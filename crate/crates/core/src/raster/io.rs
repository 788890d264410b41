//! Raster interchange formats.
//!
//! Two formats are supported: ESRI ASCII grid (portable, 12 significant
//! digits, -9999 nodata) and a raw little-endian float64 payload with a
//! `key: value` text sidecar (bit-exact).
//!
//! ASCII grids carry no CRS or band metadata; readers return crs_code 0
//! and band "band", which callers may override through the public fields.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::raster::{GridSpec, MetricRaster, ASCII_NODATA};

/// Formats `v` with `sig` significant digits in plain decimal notation,
/// trailing zeros trimmed.
pub fn format_significant(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).clamp(0, 30) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes `r` as an ESRI ASCII grid.
pub fn write_ascii_grid<W: Write>(r: &MetricRaster, sink: &mut W) -> Result<()> {
    let g = &r.grid;
    let yll = g.origin_y - g.height as f64 * g.cell_size;
    writeln!(sink, "ncols {}", g.width)?;
    writeln!(sink, "nrows {}", g.height)?;
    writeln!(sink, "xllcorner {}", format_significant(g.origin_x, 12))?;
    writeln!(sink, "yllcorner {}", format_significant(yll, 12))?;
    writeln!(sink, "cellsize {}", format_significant(g.cell_size, 12))?;
    writeln!(sink, "NODATA_value -9999")?;
    let mut line = String::new();
    for row in 0..g.height {
        line.clear();
        for col in 0..g.width {
            if col > 0 {
                line.push(' ');
            }
            if r.nodata_mask[(row, col)] {
                line.push_str("-9999");
            } else {
                line.push_str(&format_significant(r.values[(row, col)], 12));
            }
        }
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

/// Reads an ESRI ASCII grid. The six header keys are mandatory.
pub fn read_ascii_grid<R: Read>(source: R) -> Result<MetricRaster> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines();

    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut cell = None;
    let mut nodata = None;
    let mut first_data_line: Option<String> = None;

    for line in lines.by_ref() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let key = parts.next().unwrap_or("");
        let slot: &mut Option<f64> = match key.to_ascii_lowercase().as_str() {
            "ncols" => &mut ncols,
            "nrows" => &mut nrows,
            "xllcorner" => &mut xll,
            "yllcorner" => &mut yll,
            "cellsize" => &mut cell,
            "nodata_value" => &mut nodata,
            _ => {
                first_data_line = Some(line);
                break;
            }
        };
        let raw = parts.next().ok_or_else(|| Error::MalformedHeaderValue {
            key: key.to_string(),
            message: "missing value".into(),
        })?;
        let value: f64 = raw.parse().map_err(|_| Error::MalformedHeaderValue {
            key: key.to_string(),
            message: format!("cannot parse `{raw}` as a number"),
        })?;
        *slot = Some(value);
    }

    let require = |slot: Option<f64>, key: &str| -> Result<f64> {
        slot.ok_or_else(|| Error::MissingHeaderKey(key.to_string()))
    };
    let width = require(ncols, "ncols")? as usize;
    let height = require(nrows, "nrows")? as usize;
    let xll = require(xll, "xllcorner")?;
    let yll = require(yll, "yllcorner")?;
    let cell = require(cell, "cellsize")?;
    let nodata = nodata.unwrap_or(ASCII_NODATA);

    let grid = GridSpec::new(xll, yll + height as f64 * cell, cell, width, height, 0)?;

    let mut values = Vec::with_capacity(width * height);
    let mut push_tokens = |line: &str, line_no: usize| -> Result<()> {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::XyzParse {
                line: line_no,
                message: format!("cannot parse raster value `{tok}`"),
            })?;
            values.push(if v == nodata { f64::NAN } else { v });
        }
        Ok(())
    };
    let mut line_no = 7usize;
    if let Some(line) = first_data_line {
        push_tokens(&line, line_no)?;
    }
    for line in lines {
        line_no += 1;
        push_tokens(&line?, line_no)?;
    }
    if values.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "ASCII grid body holds {} values, header declares {}",
            values.len(),
            width * height
        )));
    }
    let array = Array2::from_shape_vec((height, width), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    MetricRaster::from_values(grid, array, "band")
}

const HDR_KEYS: [&str; 7] = [
    "width",
    "height",
    "origin_x",
    "origin_y",
    "cell_size",
    "crs",
    "band",
];

/// Writes the float64 payload and the text sidecar for `r`.
///
/// Floats in the sidecar use Rust's shortest round-trip formatting, so the
/// grid geometry survives bit-exact.
pub fn write_binary<W: Write, H: Write>(
    r: &MetricRaster,
    payload: &mut W,
    header: &mut H,
) -> Result<()> {
    let g = &r.grid;
    writeln!(header, "width: {}", g.width)?;
    writeln!(header, "height: {}", g.height)?;
    writeln!(header, "origin_x: {}", g.origin_x)?;
    writeln!(header, "origin_y: {}", g.origin_y)?;
    writeln!(header, "cell_size: {}", g.cell_size)?;
    writeln!(header, "crs: {}", g.crs_code)?;
    writeln!(header, "band: {}", r.band_name)?;
    let mut buf = Vec::with_capacity(g.len() * 8);
    for v in r.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    payload.write_all(&buf)?;
    Ok(())
}

fn parse_header_text(text: &str) -> Result<(GridSpec, String)> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<&String> {
        map.get(key)
            .ok_or_else(|| Error::MissingHeaderKey(key.to_string()))
    };
    for key in HDR_KEYS {
        get(key)?;
    }
    let parse_f = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| Error::MalformedHeaderValue {
            key: key.to_string(),
            message: format!("cannot parse `{}` as a number", map[key]),
        })
    };
    let parse_u = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| Error::MalformedHeaderValue {
            key: key.to_string(),
            message: format!("cannot parse `{}` as an integer", map[key]),
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
    Ok((grid, map["band"].clone()))
}

/// Reads a raster from a payload byte slice and its sidecar header text.
pub fn read_binary(payload: &[u8], header_text: &str) -> Result<MetricRaster> {
    let (grid, band) = parse_header_text(header_text)?;
    let expected = grid.len() * 8;
    if payload.len() != expected {
        return Err(Error::TruncatedRasterPayload {
            expected,
            actual: payload.len(),
        });
    }
    let mut values = Vec::with_capacity(grid.len());
    for chunk in payload.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let array = Array2::from_shape_vec((grid.height, grid.width), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    MetricRaster::from_values(grid, array, &band)
}

/// Writes `<stem>.f64` and `<stem>.hdr` next to each other.
pub fn write_binary_files(r: &MetricRaster, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let payload_path = stem.with_extension("f64");
    let header_path = stem.with_extension("hdr");
    let mut payload = Vec::new();
    let mut header = Vec::new();
    write_binary(r, &mut payload, &mut header)?;
    fs::write(&payload_path, payload)?;
    fs::write(&header_path, header)?;
    Ok((payload_path, header_path))
}

/// Reads a raster written by [`write_binary_files`]. Accepts the stem, the
/// `.f64` path, or the `.hdr` path.
pub fn read_binary_files(path: &Path) -> Result<MetricRaster> {
    let stem = path.with_extension("");
    let payload = fs::read(stem.with_extension("f64"))?;
    let header = fs::read_to_string(stem.with_extension("hdr"))?;
    read_binary(&payload, &header)
}
