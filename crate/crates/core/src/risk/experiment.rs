//! Monte Carlo experiment: simulate, sample, fit, estimate, compare with the
//! true deployment risk.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::deployment_rmse_of;
use super::suite::{DeploymentDomain, Estimator, PreparedSuite, SuiteSettings};
use crate::error::{Error, Result};
use crate::models::{ForestParams, ModelKind};
use crate::seed::{derive_rng, derive_seed, tags};
use crate::simfield::{draw_sample, make_world, Design, Sample, ScenarioConfig, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub replicates: usize,
    pub master_seed: u64,
    pub estimators: Vec<Estimator>,
    pub models: Vec<ModelKind>,
    /// Covariates used by the prediction models; HRK models the residual
    /// variance in the first one.
    pub predictors: Vec<String>,
    pub forest: ForestParams,
    pub suite: SuiteSettings,
    /// Leave the sampled grid nodes out of the deployment domain.
    pub exclude_sampled_nodes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            replicates: 100,
            master_seed: 1,
            estimators: Estimator::ALL.to_vec(),
            models: vec![ModelKind::Rf, ModelKind::Hrk],
            predictors: vec!["x1".into(), "x2".into()],
            forest: ForestParams::default(),
            suite: SuiteSettings::default(),
            exclude_sampled_nodes: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.suite.validate()?;
        if self.replicates == 0 {
            return Err(Error::Invalid("replicates must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Invalid("the estimator suite is empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Invalid("no models configured".into()));
        }
        if self.predictors.is_empty() {
            return Err(Error::Invalid("no predictors configured".into()));
        }
        Ok(())
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub replicate: usize,
    pub design: Design,
    pub model: ModelKind,
    pub estimator: Estimator,
    pub rmse_estimate: Option<f64>,
    pub deployment_rmse: Option<f64>,
    /// `rmse_estimate − deployment_rmse`.
    pub error: Option<f64>,
    pub ess_fraction: Option<f64>,
    pub p95_weight: Option<f64>,
    pub n_failed_tasks: usize,
    pub status: String,
}

/// Weight diagnostics of one CV estimator in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub replicate: usize,
    pub design: Design,
    pub estimator: Estimator,
    pub n_tasks: Option<usize>,
    pub ess: Option<f64>,
    pub ess_fraction: Option<f64>,
    pub p95_relative_weight: Option<f64>,
    pub max_margin_residual: Option<f64>,
    pub status: String,
}

/// Diagnostics for every task-based estimator of a prepared suite.
pub fn diagnostic_rows(suite: &PreparedSuite, replicate: usize, design: Design) -> Vec<DiagnosticRow> {
    suite
        .estimators
        .iter()
        .filter_map(|&est| {
            let gen = est.generator()?;
            let mut row = DiagnosticRow {
                replicate,
                design,
                estimator: est,
                n_tasks: suite.tasks(gen).map(|t| t.len()),
                ess: None,
                ess_fraction: None,
                p95_relative_weight: None,
                max_margin_residual: None,
                status: "ok".into(),
            };
            match &suite.weights[&est] {
                Ok(w) => {
                    row.ess = Some(w.ess);
                    row.ess_fraction = Some(w.ess_fraction);
                    row.p95_relative_weight = Some(w.p95_weight);
                    row.max_margin_residual = w.max_margin_residual;
                }
                Err(e) => row.status = e.clone(),
            }
            Some(row)
        })
        .collect()
}

/// Output of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutput {
    pub results: Vec<EstimatorResult>,
    pub diagnostics: Vec<DiagnosticRow>,
}

/// Simulated inputs of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateSetup {
    /// Seed of the replicate, derived from the master seed.
    pub seed: u64,
    pub world: World,
    pub sample: Sample,
    pub domain: DeploymentDomain,
    /// True response over the deployment domain.
    pub truth: Vec<f64>,
}

pub fn setup_replicate(cfg: &ExperimentConfig, r: usize) -> Result<ReplicateSetup> {
    cfg.validate()?;
    let seed = derive_seed(cfg.master_seed, &[r as u64]);
    let world = make_world(&cfg.scenario, &mut derive_rng(seed, &[tags::WORLD]))?;
    let sample = draw_sample(&world, &cfg.scenario, &mut derive_rng(seed, &[tags::SAMPLE]))?;
    let mut keep = vec![true; world.len()];
    if cfg.exclude_sampled_nodes {
        sample.nodes.iter().for_each(|&k| keep[k] = false);
    }
    let exclude = cfg.exclude_sampled_nodes.then_some(sample.nodes.as_slice());
    let domain = DeploymentDomain::from_world(&world, sample.dataset.locations(), exclude)?;
    let truth = (0..world.len()).filter(|&k| keep[k]).map(|k| world.z[k]).collect();
    Ok(ReplicateSetup {
        seed,
        world,
        sample,
        domain,
        truth,
    })
}

/// Runs replicate `r`. All randomness derives from `(master_seed, r)`.
pub fn run_replicate(cfg: &ExperimentConfig, r: usize) -> Result<ReplicateOutput> {
    let ReplicateSetup {
        seed: rep,
        sample,
        domain,
        truth,
        ..
    } = setup_replicate(cfg, r)?;
    let data = &sample.dataset;
    let suite = PreparedSuite::prepare(data, &domain, &cfg.estimators, &cfg.suite, rep);

    let mut rows = Vec::new();
    for (m, &kind) in cfg.models.iter().enumerate() {
        let spec = kind.spec(&cfg.predictors, &cfg.forest);
        let row = |estimator, status: String| EstimatorResult {
            replicate: r,
            design: cfg.scenario.design,
            model: kind,
            estimator,
            rmse_estimate: None,
            deployment_rmse: None,
            error: None,
            ess_fraction: None,
            p95_weight: None,
            n_failed_tasks: 0,
            status,
        };
        let full = match spec.fit(data, derive_seed(rep, &[tags::MODEL, m as u64])) {
            Ok(f) => f,
            Err(e) => {
                let msg = format!("model fit failed: {e}");
                rows.extend(cfg.estimators.iter().map(|&est| row(est, msg.clone())));
                continue;
            }
        };
        let deploy = deployment_rmse_of(&full, &domain, &truth)?;
        let estimates = suite.evaluate(
            data,
            &domain,
            &spec,
            &full,
            &cfg.suite,
            derive_seed(rep, &[tags::TASK_FIT, m as u64]),
        );
        for est in estimates {
            rows.push(EstimatorResult {
                rmse_estimate: est.rmse_estimate,
                deployment_rmse: Some(deploy),
                error: est.rmse_estimate.map(|v| v - deploy),
                ess_fraction: est.ess_fraction,
                p95_weight: est.p95_weight,
                n_failed_tasks: est.n_failed_tasks,
                ..row(est.estimator, est.status)
            });
        }
    }
    Ok(ReplicateOutput {
        results: rows,
        diagnostics: diagnostic_rows(&suite, r, cfg.scenario.design),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub results: Vec<EstimatorResult>,
    pub diagnostics: Vec<DiagnosticRow>,
    /// Replicates that failed as a whole, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Runs all replicates on the current rayon pool. Output order is by
/// replicate, independent of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let per_rep: Vec<(usize, Result<ReplicateOutput>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| (r, run_replicate(cfg, r)))
        .collect();
    let mut results = Vec::new();
    let mut diagnostics = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in per_rep {
        match out {
            Ok(out) => {
                results.extend(out.results);
                diagnostics.extend(out.diagnostics);
            }
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    Ok(ExperimentOutcome {
        results,
        diagnostics,
        failures,
    })
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 11] = [
    "replicate",
    "design",
    "model",
    "estimator",
    "rmse_estimate",
    "deployment_rmse",
    "error",
    "ess_fraction",
    "p95_weight",
    "n_failed_tasks",
    "status",
];

pub fn write_results(results: &[EstimatorResult], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Invalid(format!("writing results: {e}"));
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.replicate.to_string(),
            r.design.label().to_string(),
            r.model.label().to_string(),
            r.estimator.label().to_string(),
            fmt_opt(r.rmse_estimate),
            fmt_opt(r.deployment_rmse),
            fmt_opt(r.error),
            fmt_opt(r.ess_fraction),
            fmt_opt(r.p95_weight),
            r.n_failed_tasks.to_string(),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing results: {e}")))?;
    Ok(())
}

pub const DIAGNOSTICS_HEADER: [&str; 9] = [
    "replicate",
    "design",
    "estimator",
    "n_tasks",
    "ess",
    "ess_fraction",
    "p95_relative_weight",
    "max_margin_residual",
    "status",
];

pub fn write_diagnostics(rows: &[DiagnosticRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Invalid(format!("writing diagnostics: {e}"));
    w.write_record(DIAGNOSTICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.design.label().to_string(),
            r.estimator.label().to_string(),
            r.n_tasks.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt(r.ess),
            fmt_opt(r.ess_fraction),
            fmt_opt(r.p95_relative_weight),
            fmt_opt(r.max_margin_residual),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Invalid(format!("writing diagnostics: {e}")))?;
    Ok(())
}
