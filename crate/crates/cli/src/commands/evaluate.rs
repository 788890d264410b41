//! `canopyforge evaluate`: score predictions against references, with
//! multi-tile aggregation.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use canopyforge::evaluation::{aggregate_tiles, evaluate, write_report, ReportFormat};
use canopyforge::raster::MaskRaster;
use canopyforge::{Error, Result};

use crate::rasterio::read_raster;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Predicted raster(s); repeat for multiple tiles.
    #[arg(long = "pred", required = true)]
    pub preds: Vec<PathBuf>,

    /// Reference raster(s), zipped with --pred in order.
    #[arg(long = "ref", required = true)]
    pub refs: Vec<PathBuf>,

    /// Optional validity mask raster (valid where finite and not nodata).
    #[arg(long)]
    pub mask: Option<PathBuf>,

    /// Binarization threshold for IoU/F1, meters.
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,

    /// Report format: json or csv.
    #[arg(long, default_value = "json")]
    pub format: String,

    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: EvaluateArgs, _seed: u64, _threads: usize) -> Result<()> {
    let format: ReportFormat = args.format.parse()?;
    if args.preds.len() != args.refs.len() {
        return Err(Error::InvalidParameter {
            name: "pred/ref",
            message: format!(
                "{} predictions but {} references",
                args.preds.len(),
                args.refs.len()
            ),
        });
    }

    let mut reports = Vec::new();
    for (pred_path, ref_path) in args.preds.iter().zip(&args.refs) {
        let pred = read_raster(pred_path)?;
        let reference = read_raster(ref_path)?;
        let mask = match &args.mask {
            Some(path) => {
                let raster = read_raster(path)?;
                MaskRaster::new(raster.grid.clone(), raster.nodata_mask.mapv(|m| !m))?
            }
            None => MaskRaster::all_valid(pred.grid.clone()),
        };
        let tile_id = pred_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("tile")
            .to_string();
        reports.push((tile_id, evaluate(&pred, &reference, &mask, args.threshold)?));
    }

    let report = if reports.len() == 1 {
        reports.pop().unwrap().1
    } else {
        aggregate_tiles(&reports)?
    };

    let mut buf = Vec::new();
    write_report(&report, format, &mut buf)?;
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(path, buf)?;
        }
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}
