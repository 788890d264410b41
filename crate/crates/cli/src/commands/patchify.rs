//! `canopyforge patchify`: aligned rasters -> training patches with
//! validity masks and optional reduced PAD profiles.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;

use canopyforge::patching::{
    extract_patches, filter_patches, filter_patches_by_canopy_cover, reduce_pad_profiles,
    write_patchset,
};
use canopyforge::raster::build_validity_mask;
use canopyforge::{Error, Result};

use crate::manifest::RunManifest;
use crate::rasterio::{read_pad_grid, read_raster};

#[derive(Args)]
pub struct PatchifyArgs {
    /// Channel rasters as name=path pairs (repeatable), e.g. chm=chm.f64.
    #[arg(long = "band", required = true)]
    pub bands: Vec<String>,

    /// Output directory for patch payloads and the manifest.
    #[arg(long)]
    pub out: PathBuf,

    /// Identifier recorded per patch.
    #[arg(long, default_value = "tile")]
    pub tile_id: String,

    /// Patch edge, pixels.
    #[arg(long, default_value_t = 224)]
    pub patch: usize,

    /// Window stride, pixels.
    #[arg(long, default_value_t = 224)]
    pub stride: usize,

    /// Minimum valid-pixel fraction to keep a patch.
    #[arg(long, default_value_t = 0.5)]
    pub min_valid: f64,

    /// Spatial reduction factor for PAD profiles.
    #[arg(long, default_value_t = 4)]
    pub pad_factor: usize,

    /// PAD grid (pad.f64/pad.hdr stem) to attach reduced profiles from.
    #[arg(long)]
    pub pad: Option<PathBuf>,

    /// Keep only patches whose canopy cover (chm above 2 m among valid
    /// pixels) reaches this fraction.
    #[arg(long)]
    pub min_canopy_cover: Option<f64>,
}

pub fn run(args: PatchifyArgs, seed: u64, threads: usize) -> Result<()> {
    let mut channels = BTreeMap::new();
    let mut manifest = RunManifest::new("patchify", seed, threads);
    for binding in &args.bands {
        let (name, path) = binding.split_once('=').ok_or(Error::InvalidParameter {
            name: "band",
            message: format!("expected name=path, got `{binding}`"),
        })?;
        let path = PathBuf::from(path);
        manifest.input(&path, &fs::read(&path)?);
        channels.insert(name.to_string(), read_raster(&path)?);
    }

    let rasters: Vec<_> = channels.values().collect();
    let mask = build_validity_mask(&rasters)?;
    let set = extract_patches(&args.tile_id, &channels, &mask, args.patch, args.stride)?;
    let extracted = set.patches.len();
    let mut set = filter_patches(set, args.min_valid)?;
    if let Some(min_cover) = args.min_canopy_cover {
        set = filter_patches_by_canopy_cover(set, "chm", 2.0, min_cover)?;
    }

    if let Some(pad_path) = &args.pad {
        let pad = read_pad_grid(pad_path)?;
        manifest.input(pad_path, &fs::read(pad_path.with_extension("f64"))?);
        let patch_grid = set.source_grid.clone();
        for patch in &mut set.patches {
            patch.pad_profile = Some(reduce_pad_profiles(
                &pad,
                &patch_grid,
                patch.row0,
                patch.col0,
                args.patch,
                args.pad_factor,
            )?);
        }
    }

    let manifest_path = write_patchset(&set, &args.out)?;
    manifest
        .parameter("patch", args.patch)
        .parameter("stride", args.stride)
        .parameter("min_valid", args.min_valid)
        .parameter("pad_factor", args.pad_factor)
        .parameter(
            "min_canopy_cover",
            args.min_canopy_cover
                .map(|v| v.to_string())
                .unwrap_or_else(|| "off".into()),
        )
        .parameter("tile_id", &args.tile_id)
        .parameter("patches_extracted", extracted)
        .parameter("patches_kept", set.patches.len())
        .output(
            manifest_path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("manifest.csv"),
        );
    for patch in &set.patches {
        for band in patch.channels.keys() {
            manifest.output(format!(
                "{}_{}_{}_{band}.f64",
                patch.tile_id, patch.row0, patch.col0
            ));
        }
    }
    manifest.write(&args.out)?;
    Ok(())
}
