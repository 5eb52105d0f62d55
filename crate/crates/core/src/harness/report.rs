//! Evaluation reports: Spearman and RMSE overall and per SR method.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use crate::error::{Error, Result};
use crate::model::QualityScore;
use crate::stats::{rmse, spearman};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// `None` when fewer than two images or a constant side make the rank
    /// correlation undefined.
    pub spearman: Option<f64>,
    /// Against clamped predictions.
    pub rmse: f64,
}

impl Metrics {
    fn compute(raw: &[f64], clamped: &[f64], truth: &[f64]) -> Result<Self> {
        let rho = if raw.len() < 2 {
            None
        } else {
            match spearman(raw, truth) {
                Ok(r) => Some(r),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            }
        };
        Ok(Self {
            n: raw.len(),
            spearman: rho,
            rmse: rmse(clamped, truth)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_path: PathBuf,
    pub ref_id: String,
    pub method: String,
    pub s: u32,
    pub score: f64,
    pub predicted_raw: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub protocol: String,
    pub repetitions: usize,
    pub overall: Metrics,
    /// Sorted by method name; predictions pooled across splits.
    pub per_method: Vec<MethodMetrics>,
    pub predictions: Vec<PredictionRecord>,
}

fn fmt_rho(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".into(), |r| format!("{r:.3}"))
}

impl EvaluationReport {
    /// `predictions[i]` is the raw prediction for `entries[i]`.
    pub fn build(entries: &[ManifestEntry], predictions: &[f64], protocol: &str, repetitions: usize) -> Result<Self> {
        if entries.len() != predictions.len() {
            return Err(Error::DimensionMismatch {
                expected: entries.len(),
                actual: predictions.len(),
            });
        }
        let records: Vec<PredictionRecord> = entries
            .iter()
            .zip(predictions)
            .map(|(e, &p)| PredictionRecord {
                image_path: e.image_path.clone(),
                ref_id: e.ref_id.clone(),
                method: e.method.clone(),
                s: e.s,
                score: e.score,
                predicted_raw: p,
                predicted: QualityScore::from_raw(p).score,
            })
            .collect();
        let metrics = |rows: &[&PredictionRecord]| {
            let raw: Vec<f64> = rows.iter().map(|r| r.predicted_raw).collect();
            let clamped: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
            let truth: Vec<f64> = rows.iter().map(|r| r.score).collect();
            Metrics::compute(&raw, &clamped, &truth)
        };
        let all: Vec<&PredictionRecord> = records.iter().collect();
        let overall = metrics(&all)?;
        let mut by_method: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
        for r in &records {
            by_method.entry(&r.method).or_default().push(r);
        }
        let per_method = by_method
            .into_iter()
            .map(|(m, rows)| {
                Ok(MethodMetrics {
                    method: m.to_string(),
                    metrics: metrics(&rows)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            protocol: protocol.to_string(),
            repetitions,
            overall,
            per_method,
            predictions: records,
        })
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_method
            .iter()
            .map(|m| m.method.len())
            .max()
            .unwrap_or(0)
            .max(7);
        let mut out = format!(
            "protocol {}, {} repetition(s), {} images\n{:<width$}  {:>5}  {:>8}  {:>6}\n",
            self.protocol,
            self.repetitions,
            self.overall.n,
            "method",
            "n",
            "spearman",
            "rmse"
        );
        let mut row = |name: &str, m: &Metrics| {
            let _ = writeln!(out, "{name:<width$}  {:>5}  {:>8}  {:>6.3}", m.n, fmt_rho(m.spearman), m.rmse);
        };
        for m in &self.per_method {
            row(&m.method, &m.metrics);
        }
        row("overall", &self.overall);
        out
    }

    /// One row per method plus an `overall` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(to_io)?;
        w.write_record(["scope", "method", "n", "spearman", "rmse"]).map_err(to_io)?;
        let mut row = |scope: &str, method: &str, m: &Metrics| {
            w.write_record([
                scope.to_string(),
                method.to_string(),
                m.n.to_string(),
                m.spearman.map_or(String::new(), |r| r.to_string()),
                m.rmse.to_string(),
            ])
            .map_err(to_io)
        };
        for m in &self.per_method {
            row("method", &m.method, &m.metrics)?;
        }
        row("overall", "", &self.overall)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_predictions_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(to_io)?;
        for p in &self.predictions {
            w.serialize(p).map_err(to_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn to_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}
