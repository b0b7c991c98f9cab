//! Regression–kriging: a linear trend plus simple kriging of the residuals,
//! optionally with a covariate-dependent residual variance (HRK).
//!
//! The residual kriging treats the OLS residuals as having known zero mean,
//! so trend-estimation variance is not part of the reported kriging variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::ols::{fit_ols, fit_trend, TrendModel};
use super::variogram::{
    cressie_semivariogram, default_max_lag, fit_exponential_svgm, FitStatus, SemivariogramModel, DEFAULT_BINS,
};
use crate::data::{pairwise_distance, Dataset, Location};
use crate::error::{Error, Result};

/// Variance floor as a fraction of the residual variance.
pub const VARIANCE_FLOOR_FRACTION: f64 = 0.05;
const DEGENERATE_SILL: f64 = 1e-200;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KrigingSpec {
    pub trend_vars: Vec<String>,
    /// Select trend variables by forward BIC instead of using all of them.
    pub select_trend: bool,
    /// Heteroskedastic variant: residual variance linear in this covariate.
    pub variance_covariate: Option<String>,
    /// Use these semivariogram parameters instead of fitting them.
    pub fixed_variogram: Option<SemivariogramModel>,
}

/// `σ²(s) = max(a + b·v(s), floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceModel {
    pub covariate: String,
    pub column: usize,
    pub a: f64,
    pub b: f64,
    pub floor: f64,
}

impl VarianceModel {
    pub fn variance(&self, covariates: &[f64]) -> f64 {
        (self.a + self.b * covariates[self.column]).max(self.floor)
    }
}

#[derive(Debug, Clone)]
pub struct KrigingModel {
    pub trend: TrendModel,
    pub svgm: SemivariogramModel,
    pub svgm_status: FitStatus,
    pub variance_model: Option<VarianceModel>,
    locations: Vec<Location>,
    factor: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn factor_with_jitter(mut build: impl FnMut(f64) -> DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut jitter = 0.0;
    loop {
        if let Some(f) = Cholesky::new(build(jitter)) {
            return Ok((f, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 10.0 };
        if jitter > 1e-6 * scale * (1.0 + 1e-9) {
            return Err(Error::Factorization(
                "kriging system singular after jitter escalation".into(),
            ));
        }
    }
}

pub fn fit_rk(data: &Dataset, spec: &KrigingSpec) -> Result<KrigingModel> {
    let trend = fit_trend(data, &spec.trend_vars, spec.select_trend)?;
    let n = data.n();
    let residuals: Vec<f64> = (0..n)
        .map(|i| data.response()[i] - trend.predict(&data.covariate_row(i)))
        .collect();

    let variance_model = match &spec.variance_covariate {
        None => None,
        Some(name) => {
            let column = data.column_index(name)?;
            let mean = residuals.iter().sum::<f64>() / n as f64;
            let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
            let v = data.covariates().columns(column, 1).into_owned();
            let (a, b) = match fit_ols(&v, &sq, std::slice::from_ref(name)) {
                Ok(m) => (m.intercept, m.coefficients[0]),
                // constant covariate: no variance gradient to estimate
                Err(Error::RankDeficient(_)) | Err(Error::Invalid(_)) => (sq.iter().sum::<f64>() / n as f64, 0.0),
                Err(e) => return Err(e),
            };
            Some(VarianceModel {
                covariate: name.clone(),
                column,
                a,
                b,
                floor: (VARIANCE_FLOOR_FRACTION * var).max(f64::EPSILON),
            })
        }
    };

    let standardized: Vec<f64> = match &variance_model {
        None => residuals,
        Some(vm) => (0..n)
            .map(|i| residuals[i] / vm.variance(&data.covariate_row(i)).sqrt())
            .collect(),
    };

    let locations = data.locations().to_vec();
    let (svgm, svgm_status) = match spec.fixed_variogram {
        Some(m) => (m, FitStatus::Converged),
        None => {
            let emp = cressie_semivariogram(&standardized, &locations, default_max_lag(&locations), DEFAULT_BINS)?;
            let fit = fit_exponential_svgm(&emp)?;
            (fit.model, fit.status)
        }
    };

    // a vanishing sill means there is no residual field left to krige
    let degenerate = !(svgm.sill() > DEGENERATE_SILL);
    let (factor, jitter) = factor_with_jitter(
        |jitter| {
            DMatrix::from_fn(n, n, |i, j| {
                if degenerate {
                    if i == j {
                        1.0
                    } else {
                        0.0
                    }
                } else if i == j {
                    svgm.partial_sill + svgm.nugget + jitter
                } else {
                    svgm.covariance(pairwise_distance(locations[i], locations[j]))
                }
            })
        },
        svgm.sill(),
    )?;
    let alpha = if degenerate {
        DVector::zeros(n)
    } else {
        factor.solve(&DVector::from_vec(standardized))
    };
    Ok(KrigingModel {
        trend,
        svgm,
        svgm_status,
        variance_model,
        locations,
        factor,
        alpha,
        jitter,
    })
}

impl KrigingModel {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Prediction mean and the variance for a new observation at `location`
    /// (kriging variance plus nugget, rescaled by `σ²(location)` for HRK).
    pub fn predict(&self, location: Location, covariates: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.locations.len(),
            self.locations
                .iter()
                .map(|&s| self.svgm.covariance(pairwise_distance(location, s))),
        );
        let resid = k.dot(&self.alpha);
        let mut v = k;
        self.factor.l_dirty().solve_lower_triangular_mut(&mut v);
        let sk_var = (self.svgm.partial_sill - v.norm_squared()).max(0.0);
        let var = sk_var + self.svgm.nugget;
        let trend = self.trend.predict(covariates);
        match &self.variance_model {
            None => (trend + resid, var),
            Some(vm) => {
                let s2 = vm.variance(covariates);
                (trend + s2.sqrt() * resid, s2 * var)
            }
        }
    }
}

pub fn krige_predict(model: &KrigingModel, location: Location, covariates: &[f64]) -> (f64, f64) {
    model.predict(location, covariates)
}
