//! Aggregation of estimator errors over replicates.

use std::io::Write;

use super::experiment::{fmt_opt, EstimatorResult};
use super::suite::Estimator;
use crate::calibration::quantile_sorted;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::simfield::Design;

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub design: Design,
    pub model: ModelKind,
    pub estimator: Estimator,
    /// Replicates with an estimate.
    pub n: usize,
    pub n_missing: usize,
    pub mean_estimate: Option<f64>,
    pub mean_deployment_rmse: Option<f64>,
    pub mean_error: Option<f64>,
    /// Sample standard deviation of the error (needs two replicates).
    pub sd_error: Option<f64>,
    /// Root mean squared error of the estimator.
    pub rmse: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub median_ess_fraction: Option<f64>,
    pub median_p95_weight: Option<f64>,
}

impl SummaryRow {
    /// Whether the 95% interval of the mean error covers zero.
    pub fn ci_covers_zero(&self) -> Option<bool> {
        Some(self.ci_low? <= 0.0 && 0.0 <= self.ci_high?)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Some(quantile_sorted(&s, 0.5))
}

/// Groups by (design, model, estimator) in order of first appearance.
pub fn aggregate(results: &[EstimatorResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Design, ModelKind, Estimator)> = Vec::new();
    for r in results {
        let k = (r.design, r.model, r.estimator);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(design, model, estimator)| {
            let group: Vec<&EstimatorResult> = results
                .iter()
                .filter(|r| r.design == design && r.model == model && r.estimator == estimator)
                .collect();
            let ok: Vec<&&EstimatorResult> = group.iter().filter(|r| r.error.is_some()).collect();
            let errors: Vec<f64> = ok.iter().filter_map(|r| r.error).collect();
            let estimates: Vec<f64> = ok.iter().filter_map(|r| r.rmse_estimate).collect();
            let deploy: Vec<f64> = ok.iter().filter_map(|r| r.deployment_rmse).collect();
            let ess: Vec<f64> = group.iter().filter_map(|r| r.ess_fraction).collect();
            let p95: Vec<f64> = group.iter().filter_map(|r| r.p95_weight).collect();
            let n = errors.len();
            let mean_error = mean(&errors);
            let sd_error = (n >= 2).then(|| {
                let m = mean_error.expect("n ≥ 2");
                (errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            let half = sd_error.map(|sd| Z_95 * sd / (n as f64).sqrt());
            SummaryRow {
                design,
                model,
                estimator,
                n,
                n_missing: group.len() - n,
                mean_estimate: mean(&estimates),
                mean_deployment_rmse: mean(&deploy),
                mean_error,
                sd_error,
                rmse: mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).map(f64::sqrt),
                ci_low: mean_error.zip(half).map(|(m, h)| m - h),
                ci_high: mean_error.zip(half).map(|(m, h)| m + h),
                median_ess_fraction: median(&ess),
                median_p95_weight: median(&p95),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "design",
    "model",
    "estimator",
    "n",
    "n_missing",
    "mean_estimate",
    "mean_deployment_rmse",
    "mean_error",
    "sd_error",
    "rmse",
    "ci_low",
    "ci_high",
    "median_ess_fraction",
    "median_p95_weight",
    "ci_method",
];

pub fn write_summary(rows: &[SummaryRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Invalid(format!("writing summary: {e}"));
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.design.label().to_string(),
            r.model.label().to_string(),
            r.estimator.label().to_string(),
            r.n.to_string(),
            r.n_missing.to_string(),
            fmt_opt(r.mean_estimate),
            fmt_opt(r.mean_deployment_rmse),
            fmt_opt(r.mean_error),
            fmt_opt(r.sd_error),
            fmt_opt(r.rmse),
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
            fmt_opt(r.median_ess_fraction),
            fmt_opt(r.median_p95_weight),
            "normal".to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing summary: {e}")))?;
    Ok(())
}
