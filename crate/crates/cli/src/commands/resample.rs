//! `canopyforge resample`: integer-ratio refinement or coarsening.

use std::fs;
use std::path::PathBuf;

use clap::Args;

use canopyforge::raster::{resample, ResampleMethod};
use canopyforge::Result;

use crate::manifest::RunManifest;
use crate::rasterio::{read_raster, write_raster_pair};

#[derive(Args)]
pub struct ResampleArgs {
    /// Input raster (.asc, .f64, or .hdr path).
    #[arg(long)]
    pub input: PathBuf,

    /// Output stem; writes <stem>.asc, <stem>.f64, <stem>.hdr.
    #[arg(long)]
    pub out: PathBuf,

    /// Target cell size, meters.
    #[arg(long, default_value_t = 0.2)]
    pub target_cell: f64,

    /// Interpolation method: nearest or bilinear.
    #[arg(long, default_value = "bilinear")]
    pub method: String,
}

pub fn run(args: ResampleArgs, seed: u64, threads: usize) -> Result<()> {
    let method: ResampleMethod = args.method.parse()?;
    let raster = read_raster(&args.input)?;
    let out = resample(&raster, args.target_cell, method)?;

    let mut manifest = RunManifest::new("resample", seed, threads);
    manifest
        .parameter("target_cell", args.target_cell)
        .parameter("method", &args.method)
        .input(&args.input, &fs::read(&args.input)?);
    for name in write_raster_pair(&out, &args.out)? {
        manifest.output(name);
    }
    let dir = args.out.parent().map(PathBuf::from).unwrap_or_default();
    manifest.write(&dir)?;
    Ok(())
}
