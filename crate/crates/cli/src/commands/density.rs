//! `canopyforge density`: returns per square meter of the bounding box.

use std::path::PathBuf;

use clap::Args;

use canopyforge::pointcloud::point_density;
use canopyforge::Result;

use super::load_cloud;

#[derive(Args)]
pub struct DensityArgs {
    /// LAS or XYZ point cloud.
    #[arg(long)]
    pub input: PathBuf,

    /// Declared EPSG code of the input coordinates.
    #[arg(long, default_value_t = 25833)]
    pub crs: u32,
}

pub fn run(args: DensityArgs) -> Result<()> {
    let (cloud, _) = load_cloud(&args.input, args.crs)?;
    let density = point_density(&cloud)?;
    let (min_x, min_y, max_x, max_y) = cloud.bounds;
    println!(
        "points={} area_m2={} density_per_m2={}",
        cloud.len(),
        (max_x - min_x) * (max_y - min_y),
        density
    );
    Ok(())
}
