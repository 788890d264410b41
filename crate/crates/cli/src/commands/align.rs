//! `canopyforge align`: move a raster onto a reference grid.

use std::fs;
use std::path::PathBuf;

use clap::Args;

use canopyforge::raster::align_to_reference;
use canopyforge::Result;

use crate::manifest::RunManifest;
use crate::rasterio::{read_raster, write_raster_pair};

#[derive(Args)]
pub struct AlignArgs {
    /// Input raster.
    #[arg(long)]
    pub input: PathBuf,

    /// Raster whose grid is the alignment reference.
    #[arg(long)]
    pub reference: PathBuf,

    /// Output stem.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: AlignArgs, seed: u64, threads: usize) -> Result<()> {
    let raster = read_raster(&args.input)?;
    let reference = read_raster(&args.reference)?;
    let out = align_to_reference(&raster, &reference.grid)?;

    let mut manifest = RunManifest::new("align", seed, threads);
    manifest
        .parameter("reference", args.reference.display())
        .input(&args.input, &fs::read(&args.input)?);
    for name in write_raster_pair(&out, &args.out)? {
        manifest.output(name);
    }
    let dir = args.out.parent().map(PathBuf::from).unwrap_or_default();
    manifest.write(&dir)?;
    Ok(())
}
