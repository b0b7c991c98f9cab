//! Prediction models: random forest and (heteroskedastic) regression–kriging.

pub mod forest;
pub mod kriging;
pub mod ols;
pub mod variogram;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Location};
use crate::error::{Error, Result};
pub use forest::{fit_rf, rf_oob_mse, rf_predict, ForestModel, ForestParams, OobError};
pub use kriging::{fit_rk, krige_predict, KrigingModel, KrigingSpec, VarianceModel};
pub use ols::{fit_ols, fit_trend, forward_bic, TrendModel};
pub use variogram::{
    cressie_semivariogram, fit_exponential_svgm, EmpiricalSemivariogram, FitStatus, SemivariogramFit,
    SemivariogramModel,
};

/// The model families used by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Rk,
    Hrk,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rf, ModelKind::Rk, ModelKind::Hrk];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Rf => "rf",
            Self::Rk => "rk",
            Self::Hrk => "hrk",
        }
    }

    /// Model specification using `predictors`; HRK models the residual
    /// variance as linear in the first predictor.
    pub fn spec(&self, predictors: &[String], forest: &ForestParams) -> ModelSpec {
        match self {
            Self::Rf => ModelSpec::Rf {
                params: forest.clone(),
                predictors: predictors.to_vec(),
            },
            Self::Rk => ModelSpec::Rk(KrigingSpec {
                trend_vars: predictors.to_vec(),
                ..Default::default()
            }),
            Self::Hrk => ModelSpec::Rk(KrigingSpec {
                trend_vars: predictors.to_vec(),
                variance_covariate: predictors.first().cloned(),
                ..Default::default()
            }),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model '{s}' (expected rf, rk or hrk)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Rf {
        params: ForestParams,
        predictors: Vec<String>,
    },
    Rk(KrigingSpec),
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Rf(ForestModel),
    Rk(KrigingModel),
}

impl ModelSpec {
    /// Fits on `data`; `seed` drives the forest's randomness and is ignored by kriging.
    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<FittedModel> {
        match self {
            Self::Rf { params, predictors } => {
                let cols = predictors
                    .iter()
                    .map(|v| data.column_index(v))
                    .collect::<Result<Vec<_>>>()?;
                let x = data.covariates().select_columns(&cols);
                let mut model = fit_rf(&x, data.response(), params, seed)?;
                model.columns = cols;
                Ok(FittedModel::Rf(model))
            }
            Self::Rk(spec) => Ok(FittedModel::Rk(fit_rk(data, spec)?)),
        }
    }
}

impl FittedModel {
    pub fn predict(&self, location: Location, covariates: &[f64]) -> f64 {
        match self {
            Self::Rf(m) => m.predict(covariates),
            Self::Rk(m) => m.predict(location, covariates).0,
        }
    }

    /// Prediction and, for kriging, the prediction variance.
    pub fn predict_with_variance(&self, location: Location, covariates: &[f64]) -> (f64, Option<f64>) {
        match self {
            Self::Rf(m) => (m.predict(covariates), None),
            Self::Rk(m) => {
                let (mean, var) = m.predict(location, covariates);
                (mean, Some(var))
            }
        }
    }
}
