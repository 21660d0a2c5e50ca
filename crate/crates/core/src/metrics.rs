//! Error metrics and evaluation reports.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::Sample;
use crate::model::{ModelConfig, Target};
use crate::training::{predict, TrainError, TrainedModel};

/// Actual values at or below this magnitude make MAPE undefined.
pub const ZERO_ACTUAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric needs at least one value")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} actual values")]
    LengthMismatch(usize, usize),
    #[error("actual value at index {0} is zero; MAPE is undefined")]
    ZeroActual(usize),
    #[error("a series has zero variance; correlation is undefined")]
    ZeroVariance,
}

fn check(pred: &[f64], actual: &[f64]) -> Result<(), MetricError> {
    if pred.len() != actual.len() {
        return Err(MetricError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    check(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute percentage error as a fraction (0.1 means 10%).
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    check(pred, actual)?;
    if let Some(i) = actual.iter().position(|a| a.abs() <= ZERO_ACTUAL_TOLERANCE) {
        return Err(MetricError::ZeroActual(i));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| ((p - a) / a).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pcc(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    check(pred, actual)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let ma = actual.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut va) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(actual) {
        cov += (p - mp) * (a - ma);
        vp += (p - mp) * (p - mp);
        va += (a - ma) * (a - ma);
    }
    if vp == 0.0 || va == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((cov / (vp * va).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mape: f64,
    pub pcc: f64,
}

/// All three metrics. A constant series reports a PCC of 0.
pub fn all_metrics(pred: &[f64], actual: &[f64]) -> Result<Metrics, MetricError> {
    let pcc = match pcc(pred, actual) {
        Ok(v) => v,
        Err(MetricError::ZeroVariance) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(Metrics { mae: mae(pred, actual)?, mape: mape(pred, actual)?, pcc })
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub dataset: String,
    pub target: Target,
    pub n_paths: usize,
    pub mae: f64,
    pub mape: f64,
    pub pcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_id: String,
    pub checkpoint: String,
    pub config_hash: String,
    pub secondary_enabled: bool,
    pub entries: Vec<ReportEntry>,
}

/// Secondary-state model against a model without it, on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub target: Target,
    pub model: String,
    pub baseline: String,
    pub model_mape: f64,
    pub baseline_mape: f64,
    pub model_at_least_as_good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub models: Vec<ModelReport>,
    pub comparisons: Vec<Comparison>,
}

/// Short hex digest of the canonical JSON form of a model config.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
#[error("dataset {dataset}: {source}")]
pub struct EvalError {
    pub dataset: String,
    #[source]
    pub source: TrainError,
}

/// Metrics of one model on each named dataset.
pub fn evaluate(model: &TrainedModel, datasets: &[(String, Vec<Sample>)]) -> Result<Vec<ReportEntry>, EvalError> {
    datasets
        .iter()
        .map(|(name, samples)| {
            let wrap = |source: TrainError| EvalError { dataset: name.clone(), source };
            let target = model.config.target;
            let pred: Vec<f64> = predict(model, samples).map_err(wrap)?.into_iter().flatten().collect();
            let actual: Vec<f64> = samples.iter().flat_map(|s| s.labels.get(target).iter().copied()).collect();
            let m = all_metrics(&pred, &actual).map_err(|e| wrap(e.into()))?;
            Ok(ReportEntry { dataset: name.clone(), target, n_paths: actual.len(), mae: m.mae, mape: m.mape, pcc: m.pcc })
        })
        .collect()
}

impl EvalReport {
    /// Builds the report and pairs every secondary-enabled model with every
    /// model lacking it on shared datasets and targets.
    pub fn new(models: Vec<ModelReport>, timestamp: u64) -> Self {
        let mut comparisons = Vec::new();
        for m in models.iter().filter(|m| m.secondary_enabled) {
            for b in models.iter().filter(|b| !b.secondary_enabled) {
                for e in &m.entries {
                    if let Some(be) = b.entries.iter().find(|be| be.dataset == e.dataset && be.target == e.target) {
                        comparisons.push(Comparison {
                            dataset: e.dataset.clone(),
                            target: e.target,
                            model: m.model_id.clone(),
                            baseline: b.model_id.clone(),
                            model_mape: e.mape,
                            baseline_mape: be.mape,
                            model_at_least_as_good: e.mape <= be.mape,
                        });
                    }
                }
            }
        }
        Self { schema_version: REPORT_SCHEMA_VERSION, timestamp, models, comparisons }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Aligned human-readable table.
    pub fn to_text(&self) -> String {
        let header = ["model", "dataset", "target", "paths", "MAE", "MAPE %", "PCC"];
        let mut rows: Vec<[String; 7]> = vec![header.map(String::from)];
        for m in &self.models {
            for e in &m.entries {
                rows.push([
                    m.model_id.clone(),
                    e.dataset.clone(),
                    e.target.to_string(),
                    e.n_paths.to_string(),
                    format!("{:.6e}", e.mae),
                    format!("{:.3}", 100.0 * e.mape),
                    format!("{:.4}", e.pcc),
                ]);
            }
        }
        let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        if !self.comparisons.is_empty() {
            out.push('\n');
            for c in &self.comparisons {
                out.push_str(&format!(
                    "{} vs {} on {} ({}): MAPE {:.3}% vs {:.3}% [{}]\n",
                    c.model,
                    c.baseline,
                    c.dataset,
                    c.target,
                    100.0 * c.model_mape,
                    100.0 * c.baseline_mape,
                    if c.model_at_least_as_good { "better or equal" } else { "worse" }
                ));
            }
        }
        out
    }

    /// One row per model, dataset, target and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,dataset,target,metric,value\n");
        for m in &self.models {
            for e in &m.entries {
                for (name, v) in [("mae", e.mae), ("mape", e.mape), ("pcc", e.pcc)] {
                    out.push_str(&format!("{},{},{},{},{}\n", m.model_id, e.dataset, e.target, name, v));
                }
            }
        }
        out
    }
}
