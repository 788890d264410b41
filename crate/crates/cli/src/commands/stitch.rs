//! `canopyforge stitch`: blend per-window prediction rasters into one
//! tile. Window files follow `win_<row0>_<col0>.f64` naming.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use ndarray::Array2;

use canopyforge::raster::{read_binary, GridSpec};
use canopyforge::stitching::{blend_stitch_raster, plan_windows, write_plan_csv, BlendMode};
use canopyforge::{Error, Result};

use crate::manifest::RunManifest;
use crate::rasterio::{read_raster, write_raster_pair};

#[derive(Args)]
pub struct StitchArgs {
    /// Directory holding win_<row0>_<col0>.f64 prediction rasters.
    #[arg(long)]
    pub windows: PathBuf,

    /// Tile height, pixels.
    #[arg(long)]
    pub tile_rows: usize,

    /// Tile width, pixels.
    #[arg(long)]
    pub tile_cols: usize,

    /// Window edge, pixels.
    #[arg(long, default_value_t = 224)]
    pub window: usize,

    /// Window overlap, pixels.
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,

    /// Blend weighting: hann or uniform.
    #[arg(long, default_value = "hann")]
    pub blend: String,

    /// Output band name.
    #[arg(long, default_value = "chm")]
    pub band: String,

    /// Raster supplying the output georeference; unit grid when omitted.
    #[arg(long)]
    pub grid_from: Option<PathBuf>,

    /// Output stem.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: StitchArgs, seed: u64, threads: usize) -> Result<()> {
    let mode = match args.blend.as_str() {
        "hann" => BlendMode::Hann,
        "uniform" => BlendMode::Uniform,
        other => {
            return Err(Error::InvalidParameter {
                name: "blend",
                message: format!("expected hann|uniform, got {other}"),
            })
        }
    };
    let plan = plan_windows((args.tile_rows, args.tile_cols), args.window, args.overlap)?;

    let mut manifest = RunManifest::new("stitch", seed, threads);
    let mut preds: Vec<Array2<f64>> = Vec::with_capacity(plan.windows.len());
    for &(row0, col0) in &plan.windows {
        let stem = args.windows.join(format!("win_{row0}_{col0}"));
        let payload = fs::read(stem.with_extension("f64"))?;
        let header = fs::read_to_string(stem.with_extension("hdr"))?;
        manifest.input(&stem.with_extension("f64"), &payload);
        // Nodata pixels (NaN) pass through; the blender skips them.
        preds.push(read_binary(&payload, &header)?.values);
    }

    let grid = match &args.grid_from {
        Some(path) => {
            let reference = read_raster(path)?;
            GridSpec::new(
                reference.grid.origin_x,
                reference.grid.origin_y,
                reference.grid.cell_size,
                args.tile_cols,
                args.tile_rows,
                reference.grid.crs_code,
            )?
        }
        None => GridSpec::new(0.0, args.tile_rows as f64, 1.0, args.tile_cols, args.tile_rows, 0)?,
    };
    let stitched = blend_stitch_raster(&plan, &preds, &grid, &args.band, mode)?;

    manifest
        .parameter("tile_rows", args.tile_rows)
        .parameter("tile_cols", args.tile_cols)
        .parameter("window", args.window)
        .parameter("overlap", args.overlap)
        .parameter("blend", &args.blend)
        .parameter("band", &args.band)
        .parameter("window_count", plan.windows.len());
    for name in write_raster_pair(&stitched, &args.out)? {
        manifest.output(name);
    }
    let dir = args.out.parent().map(PathBuf::from).unwrap_or_default();
    let mut plan_csv = Vec::new();
    write_plan_csv(&plan, &mut plan_csv)?;
    fs::write(dir.join("plan.csv"), plan_csv)?;
    manifest.output("plan.csv");
    manifest.write(&dir)?;
    Ok(())
}
