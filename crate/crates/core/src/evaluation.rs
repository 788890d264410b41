//! Raster comparison statistics and structured reports.
//!
//! Continuous agreement (MAE, RMSE, MedAE, Bias, R2, Pearson R, rMAE) plus
//! spatial agreement of the binarized maps (IoU, F1 at a height
//! threshold). Statistics are computed two-pass over the valid pixel set;
//! the test suites check them against an independent single-pass oracle.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskRaster, MetricRaster};

/// Per-band agreement statistics. Ratios that lose their denominator
/// (constant reference, empty union, non-positive reference mean) are None.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mae: f64,
    pub rmse: f64,
    pub medae: f64,
    pub bias: f64,
    pub r2: Option<f64>,
    pub pearson_r: Option<f64>,
    pub rmae_percent: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
    pub n_valid: u64,
}

/// Statistic names in report order.
pub const STAT_NAMES: [&str; 10] = [
    "mae",
    "rmse",
    "medae",
    "bias",
    "r2",
    "pearson_r",
    "rmae_percent",
    "iou",
    "f1",
    "n_valid",
];

impl BandStats {
    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mae" => Some(self.mae),
            "rmse" => Some(self.rmse),
            "medae" => Some(self.medae),
            "bias" => Some(self.bias),
            "r2" => self.r2,
            "pearson_r" => self.pearson_r,
            "rmae_percent" => self.rmae_percent,
            "iou" => self.iou,
            "f1" => self.f1,
            "n_valid" => Some(self.n_valid as f64),
            _ => None,
        }
    }
}

/// One tile's contribution inside an aggregated report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileReport {
    pub tile_id: String,
    pub bands: BTreeMap<String, BandStats>,
}

/// Evaluation results for one raster pair or an aggregate over tiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Binarization threshold for IoU/F1, meters.
    pub threshold_m: f64,
    pub n_valid: u64,
    pub bands: BTreeMap<String, BandStats>,
    /// Sample standard deviation across tiles, present after aggregation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spread: Option<BTreeMap<String, BandStats>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub tiles: Vec<TileReport>,
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let rank = (n - 1) as f64 * 0.5;
    let lo = rank.floor() as usize;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + (rank - lo as f64) * (sorted[lo + 1] - sorted[lo])
    }
}

/// Compares `pred` against `reference` over the valid pixel set (the given
/// mask intersected with both rasters' own validity).
pub fn evaluate(
    pred: &MetricRaster,
    reference: &MetricRaster,
    mask: &MaskRaster,
    threshold: f64,
) -> Result<EvalReport> {
    if pred.grid.width != reference.grid.width
        || pred.grid.height != reference.grid.height
        || pred.grid.width != mask.grid.width
        || pred.grid.height != mask.grid.height
    {
        return Err(Error::GridMismatch(
            "prediction, reference, and mask must share a grid".into(),
        ));
    }

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for ((&p, &r), ((&pm, &rm), &ok)) in pred.values.iter().zip(reference.values.iter()).zip(
        pred.nodata_mask
            .iter()
            .zip(reference.nodata_mask.iter())
            .zip(mask.valid.iter()),
    ) {
        if ok && !pm && !rm {
            pairs.push((p, r));
        }
    }
    let n = pairs.len();
    if n < 2 {
        return Err(Error::NoValidPixels);
    }
    let n_f = n as f64;

    let mean_pred = pairs.iter().map(|&(p, _)| p).sum::<f64>() / n_f;
    let mean_ref = pairs.iter().map(|&(_, r)| r).sum::<f64>() / n_f;

    let mut abs_err = Vec::with_capacity(n);
    let mut sum_abs = 0.0;
    let mut sum_err = 0.0;
    let mut sum_sq = 0.0;
    let mut ss_tot = 0.0;
    let mut cov = 0.0;
    let mut var_pred = 0.0;
    let mut var_ref = 0.0;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for &(p, r) in &pairs {
        let e = p - r;
        sum_abs += e.abs();
        sum_err += e;
        sum_sq += e * e;
        abs_err.push(e.abs());
        let dp = p - mean_pred;
        let dr = r - mean_ref;
        ss_tot += dr * dr;
        cov += dp * dr;
        var_pred += dp * dp;
        var_ref += dr * dr;
        match (p > threshold, r > threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    abs_err.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

    let mae = sum_abs / n_f;
    let r2 = if ss_tot > 0.0 {
        Some(1.0 - sum_sq / ss_tot)
    } else {
        None
    };
    let denom = (var_pred * var_ref).sqrt();
    let pearson_r = if denom > 0.0 {
        Some((cov / denom).clamp(-1.0, 1.0))
    } else {
        None
    };
    let union = tp + fp + fn_;
    let (iou, f1) = if union > 0 {
        (
            Some(tp as f64 / union as f64),
            Some(2.0 * tp as f64 / (tp + union) as f64),
        )
    } else {
        (None, None)
    };

    let stats = BandStats {
        mae,
        rmse: (sum_sq / n_f).sqrt(),
        medae: median_sorted(&abs_err),
        bias: sum_err / n_f,
        r2,
        pearson_r,
        rmae_percent: if mean_ref > 0.0 {
            Some(100.0 * mae / mean_ref)
        } else {
            None
        },
        iou,
        f1,
        n_valid: n as u64,
    };

    let mut bands = BTreeMap::new();
    bands.insert(pred.band_name.clone(), stats);
    Ok(EvalReport {
        threshold_m: threshold,
        n_valid: n as u64,
        bands,
        spread: None,
        tiles: Vec::new(),
    })
}

/// Mean and sample standard deviation of every statistic across tiles.
/// Optional statistics aggregate over the tiles where they are defined.
pub fn aggregate_tiles(reports: &[(String, EvalReport)]) -> Result<EvalReport> {
    let (_, first) = reports.first().ok_or(Error::InvalidParameter {
        name: "reports",
        message: "cannot aggregate an empty report list".into(),
    })?;
    let band_names: Vec<String> = first.bands.keys().cloned().collect();
    for (tile_id, r) in reports {
        if r.threshold_m != first.threshold_m {
            return Err(Error::InvalidParameter {
                name: "threshold",
                message: format!(
                    "tile `{tile_id}` used threshold {} but the first tile used {}",
                    r.threshold_m, first.threshold_m
                ),
            });
        }
        if r.bands.keys().cloned().collect::<Vec<_>>() != band_names {
            return Err(Error::InvalidParameter {
                name: "bands",
                message: format!("tile `{tile_id}` reports a different band set"),
            });
        }
    }

    let mean_std = |values: &[f64]| -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, std)
    };

    let mut bands = BTreeMap::new();
    let mut spread = BTreeMap::new();
    for name in &band_names {
        let collect = |stat: &str| -> Vec<f64> {
            reports
                .iter()
                .filter_map(|(_, r)| r.bands[name].get(stat))
                .collect()
        };
        let agg = |stat: &str| -> (Option<f64>, Option<f64>) {
            let values = collect(stat);
            if values.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&values);
                (Some(m), Some(s))
            }
        };
        let always = |stat: &str| -> (f64, f64) {
            let values = collect(stat);
            mean_std(&values)
        };
        let (mae, mae_s) = always("mae");
        let (rmse, rmse_s) = always("rmse");
        let (medae, medae_s) = always("medae");
        let (bias, bias_s) = always("bias");
        let (r2, r2_s) = agg("r2");
        let (pearson, pearson_s) = agg("pearson_r");
        let (rmae, rmae_s) = agg("rmae_percent");
        let (iou, iou_s) = agg("iou");
        let (f1, f1_s) = agg("f1");
        let n_valid: u64 = reports.iter().map(|(_, r)| r.bands[name].n_valid).sum();
        bands.insert(
            name.clone(),
            BandStats {
                mae,
                rmse,
                medae,
                bias,
                r2,
                pearson_r: pearson,
                rmae_percent: rmae,
                iou,
                f1,
                n_valid,
            },
        );
        spread.insert(
            name.clone(),
            BandStats {
                mae: mae_s,
                rmse: rmse_s,
                medae: medae_s,
                bias: bias_s,
                r2: r2_s,
                pearson_r: pearson_s,
                rmae_percent: rmae_s,
                iou: iou_s,
                f1: f1_s,
                n_valid: 0,
            },
        );
    }

    Ok(EvalReport {
        threshold_m: first.threshold_m,
        n_valid: reports.iter().map(|(_, r)| r.n_valid).sum(),
        bands,
        spread: Some(spread),
        tiles: reports
            .iter()
            .map(|(tile_id, r)| TileReport {
                tile_id: tile_id.clone(),
                bands: r.bands.clone(),
            })
            .collect(),
    })
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidParameter {
                name: "format",
                message: format!("expected json|csv, got {other}"),
            }),
        }
    }
}

fn csv_value(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Serializes a report. JSON keys are stable (sorted band maps, fixed
/// field order); CSV is `band,metric,value` with one row per statistic.
pub fn write_report<W: Write>(report: &EvalReport, format: ReportFormat, sink: &mut W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *sink, report).map_err(|e| {
                Error::InvalidParameter {
                    name: "report",
                    message: e.to_string(),
                }
            })?;
            writeln!(sink)?;
        }
        ReportFormat::Csv => {
            writeln!(sink, "band,metric,value")?;
            for (band, stats) in &report.bands {
                for stat in STAT_NAMES {
                    writeln!(sink, "{band},{stat},{}", csv_value(stats.get(stat)))?;
                }
            }
            if let Some(spread) = &report.spread {
                for (band, stats) in spread {
                    for stat in STAT_NAMES {
                        if stat == "n_valid" {
                            continue;
                        }
                        writeln!(sink, "{band},{stat}_std,{}", csv_value(stats.get(stat)))?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Parses a JSON report produced by [`write_report`].
pub fn read_report_json(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::MalformedHeaderValue {
        key: "report".into(),
        message: e.to_string(),
    })
}
