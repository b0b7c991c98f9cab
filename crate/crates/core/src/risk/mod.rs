//! Risk estimators and the Monte Carlo experiment harness.

pub mod experiment;
pub mod suite;
pub mod summary;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::calibration::WeightVector;
use crate::data::{Dataset, Location};
use crate::error::{Error, Result};
use crate::models::{FittedModel, KrigingModel, ModelSpec};
use crate::seed::derive_seed;
use crate::simfield::World;
use crate::taskgen::TaskSet;

pub use experiment::{
    diagnostic_rows, run_experiment, run_replicate, setup_replicate, write_diagnostics, write_results, DiagnosticRow,
    EstimatorResult, ExperimentConfig, ExperimentOutcome, ReplicateOutput, ReplicateSetup,
};
pub use suite::{
    DeploymentDomain, Estimate, Estimator, Generator, PreparedSuite, RadiusSampling, SuiteSettings, WeightInfo,
};
pub use summary::{aggregate, write_summary, SummaryRow};

/// Squared-error loss of one validation task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub task_id: usize,
    pub loss: f64,
}

/// Per-task losses aligned with a task set; `None` where the refit failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CvLosses {
    pub losses: Vec<Option<f64>>,
    /// Failure messages of failed tasks, by task position.
    pub failures: Vec<(usize, String)>,
}

impl CvLosses {
    pub fn records(&self, tasks: &TaskSet) -> Vec<LossRecord> {
        tasks
            .tasks
            .iter()
            .zip(&self.losses)
            .filter_map(|(t, l)| {
                l.map(|loss| LossRecord {
                    task_id: t.task_id,
                    loss,
                })
            })
            .collect()
    }

    pub fn n_failed(&self) -> usize {
        self.failures.len()
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.losses.len().max(1) as f64
    }
}

/// Refits the model on each task's training set and records the squared
/// error at the held-out target.
///
/// Tasks sharing a training set share one fit; the fit for a group is seeded
/// from `seed` and the id of the group's first task, so results do not
/// depend on scheduling.
pub fn cv_losses(spec: &ModelSpec, tasks: &TaskSet, data: &Dataset, seed: u64) -> CvLosses {
    let mut groups: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for (k, t) in tasks.tasks.iter().enumerate() {
        groups.entry(&t.train_indices).or_default().push(k);
    }
    let groups: Vec<(&[usize], Vec<usize>)> = groups.into_iter().collect();
    let fitted: Vec<Vec<(usize, std::result::Result<f64, String>)>> = groups
        .par_iter()
        .map(|(train, members)| {
            let first = tasks.tasks[members[0]].task_id as u64;
            let model = data
                .subset(train)
                .and_then(|d| spec.fit(&d, derive_seed(seed, &[first])));
            members
                .iter()
                .map(|&k| {
                    let target = tasks.tasks[k].target_index;
                    let out = match &model {
                        Ok(m) => {
                            let pred = m.predict(data.locations()[target], &data.covariate_row(target));
                            let loss = (data.response()[target] - pred).powi(2);
                            if loss.is_finite() {
                                Ok(loss)
                            } else {
                                Err("non-finite prediction".to_string())
                            }
                        }
                        Err(e) => Err(e.to_string()),
                    };
                    (k, out)
                })
                .collect()
        })
        .collect();
    let mut losses = vec![None; tasks.len()];
    let mut failures = Vec::new();
    for (k, out) in fitted.into_iter().flatten() {
        match out {
            Ok(l) => losses[k] = Some(l),
            Err(e) => failures.push((k, e)),
        }
    }
    failures.sort_by_key(|f| f.0);
    CvLosses { losses, failures }
}

/// `√(Σ wᵢ Lᵢ)`; uniform weights reduce to the plain root mean loss.
pub fn weighted_rmse(losses: &[f64], w: &WeightVector) -> Result<f64> {
    if losses.len() != w.len() {
        return Err(Error::Dimension(format!(
            "{} losses but {} weights",
            losses.len(),
            w.len()
        )));
    }
    if losses.is_empty() {
        return Err(Error::Invalid("no losses".into()));
    }
    if w.is_uniform() {
        return Ok(plain_rmse(losses));
    }
    Ok(losses.iter().zip(w.as_slice()).map(|(l, w)| w * l).sum::<f64>().sqrt())
}

/// Root mean loss.
pub fn plain_rmse(losses: &[f64]) -> f64 {
    (losses.iter().sum::<f64>() / losses.len() as f64).sqrt()
}

/// RMSE of a fitted model against the true response over the domain.
pub fn deployment_rmse_of(model: &FittedModel, domain: &DeploymentDomain, truth: &[f64]) -> Result<f64> {
    if truth.len() != domain.len() {
        return Err(Error::Dimension(format!(
            "{} truth values for {} deployment locations",
            truth.len(),
            domain.len()
        )));
    }
    let sse: f64 = (0..domain.len())
        .map(|u| {
            let pred = model.predict(domain.locations[u], &domain.covariate_row(u));
            (truth[u] - pred).powi(2)
        })
        .sum();
    Ok((sse / domain.len() as f64).sqrt())
}

/// Fits on the full dataset and evaluates over every node of the world grid.
pub fn deployment_rmse(spec: &ModelSpec, data: &Dataset, world: &World, seed: u64) -> Result<f64> {
    let model = spec.fit(data, seed)?;
    let domain = DeploymentDomain::from_world(world, data.locations(), None)?;
    deployment_rmse_of(&model, &domain, &world.z)
}

/// `√(mean kriging variance)` over the given locations.
pub fn model_based_rmse(model: &KrigingModel, locations: &[Location], covariates: &[Vec<f64>]) -> Result<f64> {
    if locations.len() != covariates.len() || locations.is_empty() {
        return Err(Error::Dimension(format!(
            "{} locations and {} covariate rows",
            locations.len(),
            covariates.len()
        )));
    }
    let total: f64 = locations
        .iter()
        .zip(covariates)
        .map(|(&l, c)| model.predict(l, c).1)
        .sum();
    Ok((total / locations.len() as f64).sqrt())
}
