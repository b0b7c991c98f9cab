//! The estimator suite: task generation, weighting and risk estimates for
//! one dataset and one deployment domain.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{cv_losses, weighted_rmse, CvLosses};
use crate::calibration::{
    calibrate, collapse_weights, shrink, weight_diagnostics, CalibrationOptions, RakeOptions, WeightVector,
};
use crate::data::{build_deployment_tasks, Dataset, Location, TargetTaskSet, TaskDescriptor};
use crate::density_ratio::{forward_bic_logistic, importance_weights};
use crate::error::{Error, Result};
use crate::models::{rf_oob_mse, FittedModel, ModelSpec};
use crate::seed::{derive_rng, derive_seed, tags};
use crate::simfield::World;
use crate::taskgen::{
    gen_buffered_loo, gen_loocv, gen_random_kfold, gen_spatial_blocks, BufferRadii, BufferedParams, TargetSampling,
    TaskSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Loocv,
    RandomCv,
    LoboCv,
    Dwcv,
    Twcv,
    TwcvFine,
    TwcvExtended,
    TwcvExtendedFine,
    IwcvRandom,
    IwcvBuffered,
    Oob,
    KrigingVariance,
}

/// Task generators used by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Generator {
    Loocv,
    RandomKfold,
    SpatialBlocks,
    Buffered,
}

impl Generator {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Loocv => "loocv",
            Self::RandomKfold => "random_kfold",
            Self::SpatialBlocks => "spatial_blocks",
            Self::Buffered => "buffered_loo",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Self::Loocv => 0,
            Self::RandomKfold => tags::KFOLD,
            Self::SpatialBlocks => tags::BLOCKS,
            Self::Buffered => tags::BUFFERED,
        }
    }
}

impl Estimator {
    pub const ALL: [Estimator; 12] = [
        Estimator::Loocv,
        Estimator::RandomCv,
        Estimator::LoboCv,
        Estimator::Dwcv,
        Estimator::Twcv,
        Estimator::TwcvFine,
        Estimator::TwcvExtended,
        Estimator::TwcvExtendedFine,
        Estimator::IwcvRandom,
        Estimator::IwcvBuffered,
        Estimator::Oob,
        Estimator::KrigingVariance,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Loocv => "loocv",
            Self::RandomCv => "random_cv",
            Self::LoboCv => "lobo_cv",
            Self::Dwcv => "dwcv",
            Self::Twcv => "twcv",
            Self::TwcvFine => "twcv_fine",
            Self::TwcvExtended => "twcv_extended",
            Self::TwcvExtendedFine => "twcv_extended_fine",
            Self::IwcvRandom => "iwcv_random",
            Self::IwcvBuffered => "iwcv_buffered",
            Self::Oob => "oob",
            Self::KrigingVariance => "kriging_variance",
        }
    }

    /// The task generator feeding this estimator; `None` for model-based ones.
    pub fn generator(&self) -> Option<Generator> {
        match self {
            Self::Loocv => Some(Generator::Loocv),
            Self::RandomCv | Self::IwcvRandom => Some(Generator::RandomKfold),
            Self::LoboCv => Some(Generator::SpatialBlocks),
            Self::Dwcv
            | Self::Twcv
            | Self::TwcvFine
            | Self::TwcvExtended
            | Self::TwcvExtendedFine
            | Self::IwcvBuffered => Some(Generator::Buffered),
            Self::Oob | Self::KrigingVariance => None,
        }
    }

    pub fn is_weighted(&self) -> bool {
        !matches!(
            self,
            Self::Loocv | Self::RandomCv | Self::LoboCv | Self::Oob | Self::KrigingVariance
        )
    }

    pub fn applies_to(&self, spec: &ModelSpec) -> bool {
        match self {
            Self::Oob => matches!(spec, ModelSpec::Rf { .. }),
            Self::KrigingVariance => matches!(spec, ModelSpec::Rk(_)),
            _ => true,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.label() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(Estimator::label).collect();
            Error::Invalid(format!(
                "unknown estimator '{s}' (expected one of {})",
                valid.join(", ")
            ))
        })
    }
}

/// How the buffered generator draws buffer radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSampling {
    /// Uniform between zero and the largest admissible radius.
    Uniform,
    /// From the prediction distances of the deployment domain.
    #[default]
    Deployment,
}

/// Settings shared by all estimators of the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSettings {
    pub k_folds: usize,
    pub n_blocks: usize,
    pub n_tasks: usize,
    pub min_train_frac: f64,
    pub n_bins: usize,
    pub fine_bins: usize,
    /// Shrinkage towards uniform weights for the fine and extended TWCV variants.
    pub shrinkage: f64,
    pub merge_empty_bins: bool,
    /// Balancing variables of DWCV.
    pub distance_variables: Vec<String>,
    /// Balancing variables of TWCV and TWCV-fine.
    pub base_variables: Vec<String>,
    /// Balancing variables of the extended TWCV variants and IWCV candidates.
    pub extended_variables: Vec<String>,
    /// Estimates with a larger share of failed task refits are discarded.
    pub max_task_failure_rate: f64,
    /// Draw buffered-LOO targets independently instead of cycling through permutations.
    pub independent_targets: bool,
    pub buffer_radii: RadiusSampling,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            k_folds: 10,
            n_blocks: 10,
            n_tasks: 500,
            min_train_frac: 0.8,
            n_bins: 5,
            fine_bins: 10,
            shrinkage: 0.2,
            merge_empty_bins: false,
            distance_variables: s(&["d"]),
            base_variables: s(&["x1", "d"]),
            extended_variables: s(&["x1", "x2", "x3", "x4", "d"]),
            max_task_failure_rate: 0.05,
            independent_targets: false,
            buffer_radii: RadiusSampling::Deployment,
        }
    }
}

impl SuiteSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(Error::Invalid(format!("shrinkage {} outside [0, 1]", self.shrinkage)));
        }
        if self.n_bins < 2 || self.fine_bins < 2 {
            return Err(Error::Invalid("at least 2 bins per variable are needed".into()));
        }
        if !(0.0..=1.0).contains(&self.max_task_failure_rate) {
            return Err(Error::Invalid("max_task_failure_rate outside [0, 1]".into()));
        }
        if self.n_tasks == 0 {
            return Err(Error::Invalid("n_tasks must be positive".into()));
        }
        Ok(())
    }

    fn raking(&self, est: Estimator) -> Option<(&[String], usize, f64)> {
        match est {
            Estimator::Dwcv => Some((&self.distance_variables, self.n_bins, 0.0)),
            Estimator::Twcv => Some((&self.base_variables, self.n_bins, 0.0)),
            Estimator::TwcvFine => Some((&self.base_variables, self.fine_bins, self.shrinkage)),
            Estimator::TwcvExtended => Some((&self.extended_variables, self.n_bins, self.shrinkage)),
            Estimator::TwcvExtendedFine => Some((&self.extended_variables, self.fine_bins, self.shrinkage)),
            _ => None,
        }
    }
}

/// Deployment locations with their covariates and task descriptors.
#[derive(Debug, Clone)]
pub struct DeploymentDomain {
    pub locations: Vec<Location>,
    pub covariates: DMatrix<f64>,
    pub tasks: TargetTaskSet,
}

impl DeploymentDomain {
    pub fn new(
        locations: Vec<Location>,
        covariates: DMatrix<f64>,
        covariate_names: &[String],
        training_locations: &[Location],
    ) -> Result<Self> {
        let tasks = build_deployment_tasks(&locations, &covariates, covariate_names, training_locations)?;
        Ok(Self {
            locations,
            covariates,
            tasks,
        })
    }

    /// The world grid, optionally without the given nodes.
    pub fn from_world(world: &World, training_locations: &[Location], exclude: Option<&[usize]>) -> Result<Self> {
        let mut keep = vec![true; world.len()];
        for &k in exclude.unwrap_or(&[]) {
            keep[k] = false;
        }
        let nodes: Vec<usize> = (0..world.len()).filter(|&k| keep[k]).collect();
        let locations = nodes.iter().map(|&k| world.grid[k]).collect();
        let p = world.covariate_names().len();
        let covariates = DMatrix::from_fn(nodes.len(), p, |i, j| world.covariate_row(nodes[i])[j]);
        Self::new(locations, covariates, &world.covariate_names(), training_locations)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn covariate_row(&self, u: usize) -> Vec<f64> {
        self.covariates.row(u).iter().copied().collect()
    }
}

/// Task weights with their case-collapsed dispersion diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightInfo {
    pub weights: WeightVector,
    /// Weights before shrinkage towards uniform.
    pub raw_weights: WeightVector,
    pub ess: f64,
    pub ess_fraction: f64,
    pub p95_weight: f64,
    pub max_margin_residual: Option<f64>,
}

/// Task sets and weights for a dataset; independent of the prediction model.
#[derive(Debug, Clone)]
pub struct PreparedSuite {
    pub estimators: Vec<Estimator>,
    pub task_sets: BTreeMap<Generator, std::result::Result<TaskSet, String>>,
    pub weights: BTreeMap<Estimator, std::result::Result<WeightInfo, String>>,
}

fn generate(
    gen: Generator,
    data: &Dataset,
    domain: &DeploymentDomain,
    settings: &SuiteSettings,
    seed: u64,
) -> Result<TaskSet> {
    let mut rng = derive_rng(seed, &[gen.tag()]);
    match gen {
        Generator::Loocv => gen_loocv(data),
        Generator::RandomKfold => gen_random_kfold(data, settings.k_folds, &mut rng),
        Generator::SpatialBlocks => gen_spatial_blocks(data, settings.n_blocks, &mut rng),
        Generator::Buffered => gen_buffered_loo(
            data,
            &BufferedParams {
                n_tasks: settings.n_tasks,
                min_train_frac: settings.min_train_frac,
                targets: if settings.independent_targets {
                    TargetSampling::Independent
                } else {
                    TargetSampling::Balanced
                },
                radii: match settings.buffer_radii {
                    RadiusSampling::Uniform => BufferRadii::Uniform,
                    RadiusSampling::Deployment => {
                        BufferRadii::Matched(domain.tasks.descriptors.iter().map(|t| t.d).collect())
                    }
                },
            },
            &mut rng,
        ),
    }
}

fn with_diagnostics(
    raw_weights: WeightVector,
    weights: WeightVector,
    tasks: &TaskSet,
    n: usize,
    residual: Option<f64>,
) -> Result<WeightInfo> {
    let diag = weight_diagnostics(&collapse_weights(tasks, &weights, n)?)?;
    Ok(WeightInfo {
        weights,
        raw_weights,
        ess: diag.ess,
        ess_fraction: diag.ess_fraction,
        p95_weight: diag.p95_relative_weight,
        max_margin_residual: residual,
    })
}

fn estimator_weights(
    est: Estimator,
    tasks: &TaskSet,
    data: &Dataset,
    domain: &DeploymentDomain,
    settings: &SuiteSettings,
) -> Result<WeightInfo> {
    let descriptors: Vec<TaskDescriptor> = tasks.tasks.iter().map(|t| t.descriptor.clone()).collect();
    if let Some((vars, n_bins, lambda)) = settings.raking(est) {
        let opts = CalibrationOptions {
            n_bins,
            rake: RakeOptions::default(),
            merge_empty_bins: settings.merge_empty_bins,
        };
        let cal = calibrate(&descriptors, &domain.tasks, vars, &opts)?;
        let w = if lambda > 0.0 {
            shrink(&cal.weights, lambda)?
        } else {
            cal.weights.clone()
        };
        return with_diagnostics(cal.weights, w, tasks, data.n(), Some(cal.max_margin_residual));
    }
    match est {
        Estimator::IwcvRandom | Estimator::IwcvBuffered => {
            let model = forward_bic_logistic(&descriptors, &domain.tasks, &settings.extended_variables)?;
            let w = importance_weights(&model, &descriptors)?;
            with_diagnostics(w.clone(), w, tasks, data.n(), None)
        }
        _ => {
            let w = WeightVector::uniform(tasks.len());
            with_diagnostics(w.clone(), w, tasks, data.n(), None)
        }
    }
}

impl PreparedSuite {
    /// Generates the task sets the estimators need and computes their
    /// weights. Failures are kept per estimator rather than aborting.
    pub fn prepare(
        data: &Dataset,
        domain: &DeploymentDomain,
        estimators: &[Estimator],
        settings: &SuiteSettings,
        seed: u64,
    ) -> Self {
        let mut task_sets = BTreeMap::new();
        for gen in estimators.iter().filter_map(Estimator::generator) {
            task_sets
                .entry(gen)
                .or_insert_with(|| generate(gen, data, domain, settings, seed).map_err(|e| e.to_string()));
        }
        let mut weights = BTreeMap::new();
        for &est in estimators {
            let Some(gen) = est.generator() else { continue };
            let w = match &task_sets[&gen] {
                Ok(tasks) => estimator_weights(est, tasks, data, domain, settings).map_err(|e| e.to_string()),
                Err(e) => Err(format!("task generation failed: {e}")),
            };
            weights.insert(est, w);
        }
        Self {
            estimators: estimators.to_vec(),
            task_sets,
            weights,
        }
    }

    pub fn tasks(&self, gen: Generator) -> Option<&TaskSet> {
        self.task_sets.get(&gen).and_then(|t| t.as_ref().ok())
    }

    /// Risk estimates of one model for every estimator of the suite.
    /// `full_model` is the model fitted on all of `data`.
    pub fn evaluate(
        &self,
        data: &Dataset,
        domain: &DeploymentDomain,
        spec: &ModelSpec,
        full_model: &FittedModel,
        settings: &SuiteSettings,
        seed: u64,
    ) -> Vec<Estimate> {
        let mut losses: BTreeMap<Generator, CvLosses> = BTreeMap::new();
        self.estimators
            .iter()
            .map(|&est| {
                let mut out = Estimate::missing(est, "");
                if !est.applies_to(spec) {
                    out.status = "not applicable".into();
                    return out;
                }
                let result = match est.generator() {
                    None => model_based(est, data, domain, full_model),
                    Some(gen) => self.cv_estimate(est, gen, data, spec, settings, seed, &mut losses, &mut out),
                };
                match result {
                    Ok(v) => {
                        out.rmse_estimate = Some(v);
                        out.status = "ok".into();
                    }
                    Err(e) => out.status = e,
                }
                out
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn cv_estimate(
        &self,
        est: Estimator,
        gen: Generator,
        data: &Dataset,
        spec: &ModelSpec,
        settings: &SuiteSettings,
        seed: u64,
        cache: &mut BTreeMap<Generator, CvLosses>,
        out: &mut Estimate,
    ) -> std::result::Result<f64, String> {
        let info = self.weights[&est].as_ref().map_err(|e| e.clone())?;
        out.ess_fraction = Some(info.ess_fraction);
        out.p95_weight = Some(info.p95_weight);
        let tasks = self.tasks(gen).ok_or("task generation failed")?;
        let cv = cache
            .entry(gen)
            .or_insert_with(|| cv_losses(spec, tasks, data, derive_seed(seed, &[gen.tag()])));
        out.n_failed_tasks = cv.n_failed();
        if cv.failure_rate() > settings.max_task_failure_rate {
            return Err(format!(
                "{} of {} task refits failed (first: {})",
                cv.n_failed(),
                tasks.len(),
                cv.failures[0].1
            ));
        }
        let keep: Vec<bool> = cv.losses.iter().map(Option::is_some).collect();
        let w = info.weights.restrict(&keep).map_err(|e| e.to_string())?;
        let l: Vec<f64> = cv.losses.iter().flatten().copied().collect();
        weighted_rmse(&l, &w).map_err(|e| e.to_string())
    }
}

fn model_based(
    est: Estimator,
    data: &Dataset,
    domain: &DeploymentDomain,
    model: &FittedModel,
) -> std::result::Result<f64, String> {
    match (est, model) {
        (Estimator::Oob, FittedModel::Rf(f)) => {
            let x = data.covariates().select_columns(&f.columns);
            rf_oob_mse(f, &x, data.response())
                .map(|o| o.mse.sqrt())
                .map_err(|e| e.to_string())
        }
        (Estimator::KrigingVariance, FittedModel::Rk(k)) => {
            let rows: Vec<Vec<f64>> = (0..domain.len()).map(|u| domain.covariate_row(u)).collect();
            super::model_based_rmse(k, &domain.locations, &rows).map_err(|e| e.to_string())
        }
        _ => Err("not applicable".into()),
    }
}

/// One estimator's risk estimate for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimator: Estimator,
    pub rmse_estimate: Option<f64>,
    pub ess_fraction: Option<f64>,
    pub p95_weight: Option<f64>,
    pub n_failed_tasks: usize,
    /// `ok`, or the reason the estimate is missing.
    pub status: String,
}

impl Estimate {
    pub fn missing(estimator: Estimator, reason: &str) -> Self {
        Self {
            estimator,
            rmse_estimate: None,
            ess_fraction: None,
            p95_weight: None,
            n_failed_tasks: 0,
            status: reason.to_string(),
        }
    }
}
