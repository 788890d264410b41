//! Plain-text XYZ interchange: whitespace-delimited `x y z [classification]`
//! lines, `#` comments.

use std::io::Write;

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, PointRecord};

/// Parses XYZ text into a cloud in the declared CRS. Bounds are computed
/// from the data; missing classification defaults to 1 (unclassified).
pub fn parse_xyz_text(text: &str, crs_code: u32) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut bounds = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 || tokens.len() > 4 {
            return Err(Error::XyzParse {
                line: line_no,
                message: format!(
                    "expected `x y z [classification]`, found {} token(s)",
                    tokens.len()
                ),
            });
        }
        let coord = |tok: &str, name: &str| -> Result<f64> {
            let v: f64 = tok.parse().map_err(|_| Error::XyzParse {
                line: line_no,
                message: format!("cannot parse {name} value `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::XyzParse {
                    line: line_no,
                    message: format!("{name} value `{tok}` is not finite"),
                });
            }
            Ok(v)
        };
        let x = coord(tokens[0], "x")?;
        let y = coord(tokens[1], "y")?;
        let z = coord(tokens[2], "z")?;
        let classification = match tokens.get(3) {
            Some(tok) => tok.parse::<u8>().map_err(|_| Error::XyzParse {
                line: line_no,
                message: format!("cannot parse classification `{tok}`"),
            })?,
            None => 1,
        };
        bounds.0 = bounds.0.min(x);
        bounds.1 = bounds.1.min(y);
        bounds.2 = bounds.2.max(x);
        bounds.3 = bounds.3.max(y);
        points.push(PointRecord {
            x,
            y,
            z,
            classification,
            return_number: 1,
            intensity: None,
        });
    }

    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(points, bounds, crs_code)
}

/// Writes `x y z classification` lines using shortest exact float
/// formatting, so a re-parse reproduces the coordinates.
pub fn write_xyz_text<W: Write>(cloud: &PointCloud, sink: &mut W) -> Result<()> {
    for p in &cloud.points {
        writeln!(sink, "{} {} {} {}", p.x, p.y, p.z, p.classification)?;
    }
    Ok(())
}
