//! Importance weights from density ratios estimated by probabilistic
//! classification of deployment tasks (label 1) against validation tasks
//! (label 0).

use nalgebra::{DMatrix, DVector};

use crate::calibration::WeightVector;
use crate::data::{DescriptorColumn, TargetTaskSet, TaskDescriptor};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-8;
/// Standardized coefficient magnitude taken as a sign of (quasi-)separation.
pub const SEPARATION_THRESHOLD: f64 = 15.0;
pub const RIDGE_PENALTY: f64 = 1e-4;
const PROB_CLIP: f64 = 1e-6;

/// Logistic regression fitted on internally standardized columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Column means and standard deviations used for standardization; a
    /// zero standard deviation marks a constant column that was left out.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Intercept followed by one coefficient per column, standardized scale.
    pub beta: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub separated: bool,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.beta[0]
            + row
                .iter()
                .enumerate()
                .filter(|(j, _)| self.sds[*j] > 0.0)
                .map(|(j, &x)| self.beta[j + 1] * (x - self.means[j]) / self.sds[j])
                .sum::<f64>()
    }

    /// Intercept and slopes on the original column scale.
    pub fn original_scale(&self) -> (f64, Vec<f64>) {
        let mut intercept = self.beta[0];
        let slopes = (0..self.means.len())
            .map(|j| {
                if self.sds[j] > 0.0 {
                    let b = self.beta[j + 1] / self.sds[j];
                    intercept -= b * self.means[j];
                    b
                } else {
                    0.0
                }
            })
            .collect();
        (intercept, slopes)
    }
}

fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

struct Problem {
    /// standardized design with a leading column of ones
    z: DMatrix<f64>,
    y: Vec<f64>,
}

impl Problem {
    fn objective(&self, beta: &DVector<f64>, ridge: f64) -> f64 {
        let eta = &self.z * beta;
        let ll: f64 = eta.iter().zip(&self.y).map(|(&t, &y)| y * t - log1p_exp(t)).sum();
        ll - 0.5 * ridge * beta.rows(1, beta.len() - 1).norm_squared()
    }

    /// Newton–Raphson (equivalently IRLS) with step halving.
    fn solve(&self, ridge: f64) -> Result<(DVector<f64>, usize)> {
        let k = self.z.ncols();
        let n1: f64 = self.y.iter().sum();
        let n = self.y.len() as f64;
        let mut beta = DVector::zeros(k);
        beta[0] = (n1 / (n - n1)).ln();
        let mut obj = self.objective(&beta, ridge);
        for it in 1..=MAX_ITER {
            let eta = &self.z * &beta;
            let p: Vec<f64> = eta.iter().map(|&t| sigmoid(t)).collect();
            let mut grad = DVector::zeros(k);
            let mut hess = DMatrix::zeros(k, k);
            for i in 0..self.z.nrows() {
                let r = self.y[i] - p[i];
                let w = p[i] * (1.0 - p[i]);
                let row = self.z.row(i);
                for a in 0..k {
                    grad[a] += r * row[a];
                    for b in 0..=a {
                        hess[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    hess[(b, a)] = hess[(a, b)];
                }
                if a > 0 {
                    grad[a] -= ridge * beta[a];
                    hess[(a, a)] += ridge;
                }
            }
            let step = match hess.clone().cholesky() {
                Some(c) => c.solve(&grad),
                None => {
                    // flat curvature: fall back to a small gradient step
                    grad.clone() * 1e-3
                }
            };
            let mut t = 1.0;
            let mut next = &beta + &step * t;
            let mut next_obj = self.objective(&next, ridge);
            while !(next_obj >= obj - 1e-12 * obj.abs()) && t > 1e-10 {
                t *= 0.5;
                next = &beta + &step * t;
                next_obj = self.objective(&next, ridge);
            }
            let change = (&next - &beta).amax();
            beta = next;
            obj = next_obj;
            if !beta.iter().all(|b| b.is_finite()) {
                return Err(Error::Invalid("logistic fit diverged".into()));
            }
            if change < STEP_TOL {
                return Ok((beta, it));
            }
        }
        Ok((beta, MAX_ITER))
    }
}

/// Maximum-likelihood logistic regression of `y` on the columns of `x`
/// plus an intercept. Coefficients beyond [`SEPARATION_THRESHOLD`] on the
/// standardized scale flag separation and trigger a ridge-stabilized refit.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool]) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", y.len())));
    }
    let n1 = y.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == n {
        return Err(Error::SingleClass);
    }
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let col = x.column(j);
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        sds[j] = if var > 1e-24 * m.abs().max(1.0).powi(2) {
            var.sqrt()
        } else {
            0.0
        };
    }
    let active: Vec<usize> = (0..p).filter(|&j| sds[j] > 0.0).collect();
    let z = DMatrix::from_fn(n, active.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            let j = active[c - 1];
            (x[(i, j)] - means[j]) / sds[j]
        }
    });
    let problem = Problem {
        z,
        y: y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
    };
    let (mut b, mut iterations) = problem.solve(0.0)?;
    let separated = b.iter().skip(1).any(|c| c.abs() > SEPARATION_THRESHOLD);
    if separated {
        (b, iterations) = problem.solve(RIDGE_PENALTY)?;
    }
    let log_likelihood = problem.objective(&b, 0.0);
    let mut beta = vec![0.0; p + 1];
    beta[0] = b[0];
    for (c, &j) in active.iter().enumerate() {
        beta[j + 1] = b[c + 1];
    }
    Ok(LogisticFit {
        means,
        sds,
        beta,
        log_likelihood,
        iterations,
        separated,
    })
}

/// Classifier separating deployment from validation tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub selected_variables: Vec<String>,
    pub columns: Vec<DescriptorColumn>,
    pub fit: LogisticFit,
    pub bic: f64,
    pub n_target: usize,
    pub n_val: usize,
}

impl LogisticModel {
    fn row(&self, d: &TaskDescriptor) -> Vec<f64> {
        self.columns.iter().map(|c| c.value(d)).collect()
    }

    /// Fitted probability that a descriptor is a deployment task.
    pub fn probability(&self, d: &TaskDescriptor) -> f64 {
        sigmoid(self.fit.linear_predictor(&self.row(d)))
    }
}

fn bic(fit: &LogisticFit, k: usize, n: usize) -> f64 {
    -2.0 * fit.log_likelihood + (k + 1) as f64 * (n as f64).ln()
}

/// Forward stepwise selection of descriptor columns by BIC on the pooled
/// deployment/validation data. Ties go to the earlier candidate.
pub fn forward_bic_logistic(
    val: &[TaskDescriptor],
    target: &TargetTaskSet,
    candidates: &[String],
) -> Result<LogisticModel> {
    let columns = candidates
        .iter()
        .map(|c| DescriptorColumn::resolve(&target.covariate_names, c))
        .collect::<Result<Vec<_>>>()?;
    let n = val.len() + target.len();
    let full = DMatrix::from_fn(n, columns.len(), |i, j| {
        let d = if i < target.len() {
            &target.descriptors[i]
        } else {
            &val[i - target.len()]
        };
        columns[j].value(d)
    });
    if full.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite candidate descriptor".into()));
    }
    let y: Vec<bool> = (0..n).map(|i| i < target.len()).collect();

    let mut selected: Vec<usize> = Vec::new();
    let mut fit = fit_logistic(&DMatrix::zeros(n, 0), &y)?;
    let mut best_bic = bic(&fit, 0, n);
    loop {
        let mut step: Option<(usize, LogisticFit, f64)> = None;
        for c in (0..columns.len()).filter(|c| !selected.contains(c)) {
            let mut cols = selected.clone();
            cols.push(c);
            let trial = fit_logistic(&full.select_columns(&cols), &y)?;
            let b = bic(&trial, cols.len(), n);
            if b < best_bic && step.as_ref().map_or(true, |s| b < s.2) {
                step = Some((c, trial, b));
            }
        }
        match step {
            Some((c, trial, b)) => {
                selected.push(c);
                fit = trial;
                best_bic = b;
            }
            None => break,
        }
    }
    Ok(LogisticModel {
        selected_variables: selected.iter().map(|&c| candidates[c].clone()).collect(),
        columns: selected.iter().map(|&c| columns[c]).collect(),
        fit,
        bic: best_bic,
        n_target: target.len(),
        n_val: val.len(),
    })
}

/// Density-ratio weights `[p̂/(1−p̂)]·(n_val/n_target)`, normalized to sum
/// to one. An intercept-only model gives exactly uniform weights.
pub fn importance_weights(model: &LogisticModel, val: &[TaskDescriptor]) -> Result<WeightVector> {
    if val.is_empty() {
        return Err(Error::Invalid("no validation tasks to weight".into()));
    }
    if model.columns.is_empty() {
        return Ok(WeightVector::uniform(val.len()));
    }
    let prior = model.n_val as f64 / model.n_target as f64;
    let raw = val
        .iter()
        .map(|d| {
            let p = model.probability(d).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            p / (1.0 - p) * prior
        })
        .collect();
    WeightVector::from_raw(raw)
}
