//! PSNR / EPE metrics, statistical aggregation, and archive-vs-archive
//! evaluation reports.

use serde::{Deserialize, Serialize};

use crate::archive::EnsembleArchive;
use crate::error::{FlintError, Result};
use crate::field::{FlowField, ScalarField};

use super::lpips::LpipsPlugin;

pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB, capped at 99 so identical fields stay
/// finite and sortable. 3D fields are averaged over the full volume.
pub fn psnr(pred: &ScalarField, gt: &ScalarField, peak: f64) -> Result<f64> {
    if pred.shape != gt.shape {
        return Err(FlintError::ShapeMismatch(format!(
            "psnr shapes {:?} vs {:?}",
            pred.shape, gt.shape
        )));
    }
    let n = pred.data.len() as f64;
    let mse: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Endpoint error: mean Euclidean distance between flow vectors.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    if pred.shape != gt.shape || pred.dims() != gt.dims() {
        return Err(FlintError::ShapeMismatch(format!(
            "epe shapes {:?} vs {:?}",
            pred.shape, gt.shape
        )));
    }
    let cells = pred.cells();
    let dims = pred.dims();
    let mut acc = 0.0f64;
    for p in 0..cells {
        let mut sq = 0.0f64;
        for c in 0..dims {
            let d = pred.data[c * cells + p] as f64 - gt.data[c * cells + p] as f64;
            sq += d * d;
        }
        acc += sq.sqrt();
    }
    Ok(acc / cells as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerTimestep {
    pub t: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: Option<String>,
    pub data: String,
}

/// Per-metric report: per-timestep values and order statistics with
/// linear-interpolated quartiles. Unavailable metrics carry null statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    pub rate: usize,
    pub per_timestep: Vec<PerTimestep>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub meta: ReportMeta,
}

impl MetricsReport {
    pub fn unavailable(metric: &str, rate: usize, meta: ReportMeta) -> Self {
        MetricsReport {
            metric: metric.to_string(),
            rate,
            per_timestep: Vec::new(),
            mean: None,
            median: None,
            q1: None,
            q3: None,
            min: None,
            max: None,
            meta,
        }
    }
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Aggregate per-timestep values into a [`MetricsReport`].
pub fn aggregate(values: &[PerTimestep], metric: &str, rate: usize, meta: ReportMeta) -> Result<MetricsReport> {
    if values.is_empty() {
        return Err(FlintError::EmptyInput(format!("no values to aggregate for {metric}")));
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| v.value).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(MetricsReport {
        metric: metric.to_string(),
        rate,
        per_timestep: values.to_vec(),
        mean: Some(mean),
        median: Some(quantile(&sorted, 0.5)),
        q1: Some(quantile(&sorted, 0.25)),
        q3: Some(quantile(&sorted, 0.75)),
        min: Some(sorted[0]),
        max: Some(*sorted.last().unwrap()),
        meta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Epe,
    Lpips,
}

impl std::str::FromStr for Metric {
    type Err = FlintError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "epe" => Ok(Metric::Epe),
            "lpips" => Ok(Metric::Lpips),
            other => Err(FlintError::Config(format!("unknown metric {other}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Psnr => write!(f, "psnr"),
            Metric::Epe => write!(f, "epe"),
            Metric::Lpips => write!(f, "lpips"),
        }
    }
}

/// Full evaluation report: one [`MetricsReport`] per metric plus a summary
/// map metric -> mean (null when unavailable).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub reports: Vec<MetricsReport>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

/// Compare a prediction archive against ground truth at the timesteps the
/// subsampled input did not contain (index % rate != 0). Densities are
/// normalized by the ground-truth archive's recorded range so PSNR uses
/// peak 1; flows compare in raw grid-cell units.
pub fn evaluate_run(
    pred: &EnsembleArchive,
    gt: &EnsembleArchive,
    metrics: &[Metric],
    rate: usize,
    lpips_plugin: Option<&LpipsPlugin>,
) -> Result<EvalReport> {
    if rate < 1 {
        return Err(FlintError::Config("rate must be >= 1".into()));
    }
    if pred.manifest.shape != gt.manifest.shape {
        return Err(FlintError::ShapeMismatch(format!(
            "prediction shape {:?} vs ground truth {:?}",
            pred.manifest.shape, gt.manifest.shape
        )));
    }
    // Alignment: every predicted index must exist in the ground truth.
    let mut offending = Vec::new();
    for m in &pred.manifest.members {
        match gt.member(&m.id) {
            None => offending.push(usize::MAX),
            Some(g) => {
                if m.timesteps > g.timesteps {
                    offending.extend(g.timesteps..m.timesteps);
                }
            }
        }
    }
    if !offending.is_empty() {
        return Err(FlintError::Misaligned(offending));
    }

    let (glo, ghi) = gt.norm_range("density").unwrap_or((0.0, 1.0));
    let meta = ReportMeta {
        checkpoint: crate::infer::checkpoint_id(pred),
        data: gt.root.display().to_string(),
    };

    let mut reports = Vec::new();
    let mut summary = serde_json::Map::new();
    for &metric in metrics {
        let report = match metric {
            Metric::Psnr => {
                let mut values = Vec::new();
                for m in &pred.manifest.members {
                    let steps = pred.field_timesteps(&m.id, "density_pred")?;
                    for t in (0..steps).filter(|t| t % rate != 0) {
                        let p = norm(&pred.load_scalar(&m.id, "density_pred", t)?, glo, ghi);
                        let g = norm(&gt.load_scalar(&m.id, "density", t)?, glo, ghi);
                        values.push(PerTimestep {
                            t,
                            value: psnr(&p, &g, 1.0)?,
                        });
                    }
                }
                aggregate(&values, "psnr", rate, meta.clone())?
            }
            Metric::Epe => {
                if !pred.has_field("flow_pred") {
                    return Err(FlintError::Config(
                        "epe requested but the prediction archive has no flow_pred field".into(),
                    ));
                }
                if !gt.has_field("flow") {
                    return Err(FlintError::Config(
                        "epe requested but the ground-truth archive has no flow field".into(),
                    ));
                }
                let mut values = Vec::new();
                for m in &pred.manifest.members {
                    let steps = pred.field_timesteps(&m.id, "flow_pred")?;
                    for t in (0..steps).filter(|t| t % rate != 0) {
                        let p = pred.load_flow(&m.id, "flow_pred", t)?;
                        let g = gt.load_flow(&m.id, "flow", t)?;
                        values.push(PerTimestep {
                            t,
                            value: epe(&p, &g)?,
                        });
                    }
                }
                aggregate(&values, "epe", rate, meta.clone())?
            }
            Metric::Lpips => match lpips_plugin {
                None => MetricsReport::unavailable("lpips", rate, meta.clone()),
                Some(plugin) => {
                    if pred.manifest.dims != 2 {
                        return Err(FlintError::Config("lpips supports 2D fields only".into()));
                    }
                    let mut values = Vec::new();
                    let mut failure: Option<String> = None;
                    'outer: for m in &pred.manifest.members {
                        let steps = pred.field_timesteps(&m.id, "density_pred")?;
                        for t in (0..steps).filter(|t| t % rate != 0) {
                            let p = norm(&pred.load_scalar(&m.id, "density_pred", t)?, glo, ghi);
                            let g = norm(&gt.load_scalar(&m.id, "density", t)?, glo, ghi);
                            match plugin.distance(&p, &g) {
                                Ok(v) => values.push(PerTimestep { t, value: v }),
                                Err(e) => {
                                    failure = Some(e.to_string());
                                    break 'outer;
                                }
                            }
                        }
                    }
                    match failure {
                        Some(msg) => {
                            eprintln!("warning: lpips plugin failed: {msg}");
                            MetricsReport::unavailable("lpips", rate, meta.clone())
                        }
                        None if values.is_empty() => {
                            MetricsReport::unavailable("lpips", rate, meta.clone())
                        }
                        None => aggregate(&values, "lpips", rate, meta.clone())?,
                    }
                }
            },
        };
        summary.insert(
            report.metric.clone(),
            match report.mean {
                Some(v) => serde_json::json!(v),
                None => serde_json::Value::Null,
            },
        );
        reports.push(report);
    }
    Ok(EvalReport { reports, summary })
}

fn norm(f: &ScalarField, lo: f32, hi: f32) -> ScalarField {
    let span = (hi - lo).max(1e-12);
    let mut out = f.clone();
    for v in &mut out.data {
        *v = ((*v - lo) / span).clamp(0.0, 1.0);
    }
    out
}
