pub mod align;
pub mod density;
pub mod evaluate;
pub mod losscheck;
pub mod metrics;
pub mod patchify;
pub mod resample;
pub mod stitch;

use std::fs;
use std::path::Path;

use canopyforge::pointcloud::{parse_las, parse_xyz_text, PointCloud};
use canopyforge::{Error, Result};

/// Loads a point cloud, dispatching on the LAS signature; anything that
/// is not binary LAS is treated as XYZ text.
pub fn load_cloud(path: &Path, crs_code: u32) -> Result<(PointCloud, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let cloud = if bytes.starts_with(b"LASF") {
        parse_las(&bytes, crs_code)?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::XyzParse {
            line: 0,
            message: "input is neither LAS (no LASF signature) nor UTF-8 XYZ text".into(),
        })?;
        parse_xyz_text(text, crs_code)?
    };
    Ok((cloud, bytes))
}
