//! `canopyforge metrics`: point cloud -> ground model -> HAG -> structure
//! rasters.

use std::path::PathBuf;

use clap::Args;

use canopyforge::pointcloud::{build_ground_grid, compute_hag, HagParams};
use canopyforge::raster::GridSpec;
use canopyforge::voxel::{
    bin_returns, compute_chm, compute_fhd, compute_pad, compute_pai, compute_percentiles,
    PadParams,
};
use canopyforge::{Error, Result};

use crate::manifest::RunManifest;
use crate::rasterio::{write_pad_grid, write_raster_pair};

use super::load_cloud;

#[derive(Args)]
pub struct MetricsArgs {
    /// LAS (1.2-1.4, formats 0/1/6/7) or XYZ text point cloud.
    #[arg(long)]
    pub input: PathBuf,

    /// Output directory for rasters and the run manifest.
    #[arg(long)]
    pub out: PathBuf,

    /// Metric grid cell size, meters.
    #[arg(long, default_value_t = 1.0)]
    pub cell: f64,

    /// PAD layer thickness, meters.
    #[arg(long, default_value_t = 1.0)]
    pub dz: f64,

    /// Beer-Lambert extinction coefficient.
    #[arg(long, default_value_t = 0.5)]
    pub k: f64,

    /// Height cap, meters; taller returns are dropped.
    #[arg(long, default_value_t = 60.0)]
    pub max_height: f64,

    /// Percentile bands, percent.
    #[arg(long, default_value = "5,50,95", value_delimiter = ',')]
    pub percentiles: Vec<f64>,

    /// Declared EPSG code of the input coordinates.
    #[arg(long, default_value_t = 25833)]
    pub crs: u32,

    /// Also write the full PAD profile grid (pad.f64/pad.hdr).
    #[arg(long, default_value_t = false)]
    pub write_pad: bool,
}

pub fn run(args: MetricsArgs, seed: u64, threads: usize) -> Result<()> {
    let params = PadParams {
        k: args.k,
        dz: args.dz,
        max_height: args.max_height,
    };
    params.layer_count()?;
    if !(args.cell > 0.0) {
        return Err(Error::InvalidParameter {
            name: "cell",
            message: format!("must be positive, got {}", args.cell),
        });
    }
    let fractions: Vec<f64> = args.percentiles.iter().map(|p| p / 100.0).collect();
    for &f in &fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidParameter {
                name: "percentiles",
                message: "percentiles must lie in (0, 100)".into(),
            });
        }
    }

    let (cloud, bytes) = load_cloud(&args.input, args.crs)?;
    cloud.require_non_empty()?;

    let ground = build_ground_grid(&cloud, args.cell)?;
    let hag = compute_hag(
        &cloud,
        &ground,
        HagParams {
            max_height: args.max_height,
        },
    )?;
    let grid = GridSpec::from_bounds(cloud.bounds, args.cell, args.crs)?;

    let hist = bin_returns(&hag, &grid, &params)?;
    let pad = compute_pad(&hist, &params)?;
    let chm = compute_chm(&hag, &grid)?;
    let pai = compute_pai(&pad)?;
    let fhd = compute_fhd(&pad)?;
    let percentiles = compute_percentiles(&hag, &grid, &fractions)?;

    let mut manifest = RunManifest::new("metrics", seed, threads);
    manifest
        .parameter("cell", args.cell)
        .parameter("dz", args.dz)
        .parameter("k", args.k)
        .parameter("max_height", args.max_height)
        .parameter(
            "percentiles",
            args.percentiles
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .parameter("crs", args.crs)
        .parameter("write_pad", args.write_pad)
        .parameter("points", cloud.len())
        .parameter("hag_clamped", hag.clamped_count)
        .parameter("hag_dropped", hag.dropped_count)
        .parameter("ground_fallback_all_returns", ground.used_all_returns_fallback)
        .parameter("pad_saturated_layers", pad.saturated_count())
        .input(&args.input, &bytes);

    for raster in [&chm, &pai, &fhd].into_iter().chain(percentiles.iter()) {
        let stem = args.out.join(&raster.band_name);
        for name in write_raster_pair(raster, &stem)? {
            manifest.output(name);
        }
    }
    if args.write_pad {
        let (payload, header) = write_pad_grid(&pad, &args.out.join("pad"))?;
        for path in [payload, header] {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                manifest.output(name);
            }
        }
    }
    manifest.write(&args.out)?;
    Ok(())
}
