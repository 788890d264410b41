//! Binary LAS reader (versions 1.2-1.4, point formats 0/1/6/7).
//!
//! Coordinates are reconstructed as `raw * scale + offset` from the public
//! header. LAZ payloads (compression bit set in the point format byte) are
//! rejected; CRS VLRs are not interpreted, callers declare the EPSG code.

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, PointRecord};

const SIGNATURE: &[u8; 4] = b"LASF";

const OFF_VERSION_MAJOR: usize = 24;
const OFF_VERSION_MINOR: usize = 25;
const OFF_HEADER_SIZE: usize = 94;
const OFF_POINT_DATA_OFFSET: usize = 96;
const OFF_POINT_FORMAT: usize = 104;
const OFF_POINT_RECORD_LEN: usize = 105;
const OFF_LEGACY_COUNT: usize = 107;
const OFF_SCALE_X: usize = 131;
const OFF_OFFSET_X: usize = 155;
const OFF_MAX_X: usize = 179;
const OFF_EXTENDED_COUNT: usize = 247;

const MIN_HEADER_12: usize = 227;
const MIN_HEADER_13: usize = 235;
const MIN_HEADER_14: usize = 375;

fn u16_at(blob: &[u8], off: usize) -> u16 {
    u16::from_le_bytes(blob[off..off + 2].try_into().unwrap())
}

fn u32_at(blob: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(blob[off..off + 4].try_into().unwrap())
}

fn u64_at(blob: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(blob[off..off + 8].try_into().unwrap())
}

fn i32_at(blob: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(blob[off..off + 4].try_into().unwrap())
}

fn f64_at(blob: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(blob[off..off + 8].try_into().unwrap())
}

fn header_err(field: &'static str, offset: usize, message: impl Into<String>) -> Error {
    Error::LasHeader {
        field,
        offset,
        message: message.into(),
    }
}

/// Minimum point record length per supported format.
pub fn min_record_length(format: u8) -> Option<u16> {
    match format {
        0 => Some(20),
        1 => Some(28),
        6 => Some(30),
        7 => Some(36),
        _ => None,
    }
}

/// Parses a LAS blob into a [`PointCloud`] in the declared CRS.
pub fn parse_las(blob: &[u8], crs_code: u32) -> Result<PointCloud> {
    if blob.len() < 4 || &blob[0..4] != SIGNATURE {
        return Err(header_err(
            "file_signature",
            0,
            format!(
                "expected \"LASF\", found {:?}",
                blob.get(0..4).unwrap_or(&[])
            ),
        ));
    }
    if blob.len() < MIN_HEADER_12 {
        return Err(header_err(
            "header",
            0,
            format!(
                "blob is {} bytes, shorter than the minimum header ({MIN_HEADER_12})",
                blob.len()
            ),
        ));
    }

    let major = blob[OFF_VERSION_MAJOR];
    let minor = blob[OFF_VERSION_MINOR];
    if major != 1 || !(2..=4).contains(&minor) {
        return Err(header_err(
            "version",
            OFF_VERSION_MAJOR,
            format!("unsupported LAS version {major}.{minor} (supported: 1.2-1.4)"),
        ));
    }
    let min_header = match minor {
        2 => MIN_HEADER_12,
        3 => MIN_HEADER_13,
        _ => MIN_HEADER_14,
    };
    let header_size = u16_at(blob, OFF_HEADER_SIZE) as usize;
    if header_size < min_header || blob.len() < header_size {
        return Err(header_err(
            "header_size",
            OFF_HEADER_SIZE,
            format!("header size {header_size} invalid for version 1.{minor} (expected >= {min_header}, blob holds {})", blob.len()),
        ));
    }

    let point_offset = u32_at(blob, OFF_POINT_DATA_OFFSET) as usize;
    if point_offset < header_size || point_offset > blob.len() {
        return Err(header_err(
            "offset_to_point_data",
            OFF_POINT_DATA_OFFSET,
            format!(
                "offset {point_offset} outside [{header_size}, {}]",
                blob.len()
            ),
        ));
    }

    let format_byte = blob[OFF_POINT_FORMAT];
    if format_byte & 0x80 != 0 {
        return Err(Error::LazUnsupported);
    }
    let format = format_byte & 0x3f;
    let min_len =
        min_record_length(format).ok_or(Error::UnsupportedPointFormat { format })?;
    let record_len = u16_at(blob, OFF_POINT_RECORD_LEN) as usize;
    if record_len < min_len as usize {
        return Err(header_err(
            "point_data_record_length",
            OFF_POINT_RECORD_LEN,
            format!("record length {record_len} below format {format} minimum {min_len}"),
        ));
    }

    let legacy_count = u32_at(blob, OFF_LEGACY_COUNT) as u64;
    let count = if minor == 4 {
        let extended = u64_at(blob, OFF_EXTENDED_COUNT);
        if extended == 0 {
            legacy_count
        } else {
            extended
        }
    } else {
        legacy_count
    } as usize;

    let mut scale = [0.0; 3];
    let mut offset = [0.0; 3];
    for axis in 0..3 {
        scale[axis] = f64_at(blob, OFF_SCALE_X + axis * 8);
        offset[axis] = f64_at(blob, OFF_OFFSET_X + axis * 8);
        if scale[axis] == 0.0 || !scale[axis].is_finite() {
            return Err(header_err(
                "scale_factor",
                OFF_SCALE_X + axis * 8,
                format!("axis {axis} scale is {}", scale[axis]),
            ));
        }
    }

    // Header stores max before min per axis, ordered x, y, z.
    let max_x = f64_at(blob, OFF_MAX_X);
    let min_x = f64_at(blob, OFF_MAX_X + 8);
    let max_y = f64_at(blob, OFF_MAX_X + 16);
    let min_y = f64_at(blob, OFF_MAX_X + 24);
    if min_x > max_x || min_y > max_y {
        return Err(header_err(
            "bounds",
            OFF_MAX_X,
            format!("inverted bounds x [{min_x}, {max_x}] y [{min_y}, {max_y}]"),
        ));
    }

    let available = blob.len() - point_offset;
    let needed = count
        .checked_mul(record_len)
        .ok_or_else(|| header_err("point_count", OFF_LEGACY_COUNT, "count overflows"))?;
    if available < needed {
        return Err(Error::TruncatedPointBlock {
            expected: needed,
            actual: available,
        });
    }

    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let base = point_offset + i * record_len;
        let rec = &blob[base..base + record_len];
        let x = i32_at(rec, 0) as f64 * scale[0] + offset[0];
        let y = i32_at(rec, 4) as f64 * scale[1] + offset[1];
        let z = i32_at(rec, 8) as f64 * scale[2] + offset[2];
        let intensity = u16_at(rec, 12);
        let (return_number, classification) = match format {
            0 | 1 => (rec[14] & 0x07, rec[15] & 0x1f),
            _ => (rec[14] & 0x0f, rec[16]),
        };
        points.push(PointRecord {
            x,
            y,
            z,
            classification,
            // Some writers emit 0 here; the record contract is 1-based.
            return_number: return_number.max(1),
            intensity: Some(intensity),
        });
    }

    PointCloud::new(points, (min_x, min_y, max_x, max_y), crs_code)
}
