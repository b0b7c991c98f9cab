//! Robust empirical semivariogram and weighted least-squares fitting of the
//! exponential model.

use crate::data::{pairwise_distance, Location};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSemivariogram {
    /// Mean pair distance in each retained bin.
    pub lags: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<usize>,
    pub max_lag: f64,
    /// Sample variance of the residuals the estimate was computed from.
    pub sample_variance: f64,
}

impl EmpiricalSemivariogram {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// `γ(h) = nugget + partial_sill · (1 − exp(−h/range))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemivariogramModel {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl SemivariogramModel {
    pub fn new(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0) || !(partial_sill >= 0.0) || !(range > 0.0) {
            return Err(Error::Invalid(format!(
                "semivariogram needs nugget ≥ 0, partial sill ≥ 0, range > 0 (got {nugget}, {partial_sill}, {range})"
            )));
        }
        Ok(Self {
            nugget,
            partial_sill,
            range,
        })
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + self.partial_sill * (1.0 - (-h / self.range).exp())
    }

    /// Covariance of the spatially correlated part at lag `h` (nugget excluded).
    pub fn covariance(&self, h: f64) -> f64 {
        self.partial_sill * (-h / self.range).exp()
    }

    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }
}

/// Half the largest pairwise distance.
pub fn default_max_lag(locations: &[Location]) -> f64 {
    let mut max = 0.0f64;
    for (i, &a) in locations.iter().enumerate() {
        for &b in &locations[i + 1..] {
            max = max.max(pairwise_distance(a, b));
        }
    }
    max / 2.0
}

/// Cressie–Hawkins robust estimator over equal-width lag bins up to `max_lag`:
/// `2γ̂ = (mean |r_i − r_j|^½)⁴ / (0.457 + 0.494/N)`. Empty bins are dropped.
pub fn cressie_semivariogram(
    residuals: &[f64],
    locations: &[Location],
    max_lag: f64,
    n_bins: usize,
) -> Result<EmpiricalSemivariogram> {
    let n = residuals.len();
    if locations.len() != n {
        return Err(Error::Dimension(format!(
            "{n} residuals but {} locations",
            locations.len()
        )));
    }
    if n < 10 {
        return Err(Error::Invalid(format!(
            "semivariogram estimation needs at least 10 observations, got {n}"
        )));
    }
    if !(max_lag > 0.0) || n_bins == 0 {
        return Err(Error::Invalid("max_lag and n_bins must be positive".into()));
    }
    let width = max_lag / n_bins as f64;
    let mut root_sum = vec![0.0; n_bins];
    let mut dist_sum = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..n {
        for j in i + 1..n {
            let h = pairwise_distance(locations[i], locations[j]);
            if h > max_lag {
                continue;
            }
            let b = ((h / width) as usize).min(n_bins - 1);
            root_sum[b] += (residuals[i] - residuals[j]).abs().sqrt();
            dist_sum[b] += h;
            counts[b] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Invalid(format!("no pairs within max_lag {max_lag}")));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let sample_variance = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mut out = EmpiricalSemivariogram {
        lags: Vec::new(),
        gamma: Vec::new(),
        counts: Vec::new(),
        max_lag,
        sample_variance,
    };
    for b in 0..n_bins {
        let nb = counts[b];
        if nb == 0 {
            continue;
        }
        let nf = nb as f64;
        let two_gamma = (root_sum[b] / nf).powi(4) / (0.457 + 0.494 / nf);
        out.lags.push(dist_sum[b] / nf);
        out.gamma.push(two_gamma / 2.0);
        out.counts.push(nb);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// Hit the iteration limit; the best iterate is returned.
    MaxIterations,
    /// The partial sill collapsed or the range ran into a bound, so the
    /// range parameter is not identified by the data.
    RangeUnidentified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemivariogramFit {
    pub model: SemivariogramModel,
    pub status: FitStatus,
    pub iterations: usize,
    pub objective: f64,
}

impl SemivariogramFit {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

struct WlsProblem<'a> {
    lags: &'a [f64],
    gamma: &'a [f64],
    weights: Vec<f64>,
}

impl WlsProblem<'_> {
    fn objective(&self, t: &[f64; 3]) -> f64 {
        self.lags
            .iter()
            .zip(self.gamma)
            .zip(&self.weights)
            .map(|((&h, &g), &w)| {
                let m = t[0] + t[1] * (1.0 - (-h / t[2]).exp());
                w * (g - m).powi(2)
            })
            .sum()
    }

    /// Weighted normal equations `JᵀWJ` and `JᵀW(γ̂ − γ)`.
    fn normal_equations(&self, t: &[f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for ((&h, &g), &w) in self.lags.iter().zip(self.gamma).zip(&self.weights) {
            let e = (-h / t[2]).exp();
            let m = t[0] + t[1] * (1.0 - e);
            let jac = [1.0, 1.0 - e, -t[1] * e * h / (t[2] * t[2])];
            for a in 0..3 {
                jtr[a] += w * jac[a] * (g - m);
                for b in 0..3 {
                    jtj[a][b] += w * jac[a] * jac[b];
                }
            }
        }
        (jtj, jtr)
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let v = m.lu().solve(&nalgebra::Vector3::from(b))?;
    v.iter().all(|x| x.is_finite()).then(|| [v[0], v[1], v[2]])
}

/// Fits the exponential model by Levenberg–Marquardt on the weighted
/// least-squares criterion `Σ N_j/h_j² (γ̂_j − γ(h_j))²`, projecting the
/// sill parameters onto `≥ 0` and the range onto `[max_lag/1000, 10·max_lag]`.
pub fn fit_exponential_svgm(emp: &EmpiricalSemivariogram) -> Result<SemivariogramFit> {
    if emp.len() < 3 {
        return Err(Error::Invalid(format!(
            "semivariogram fitting needs at least 3 lag bins, got {}",
            emp.len()
        )));
    }
    let max_lag = emp.max_lag;
    let floor_h = 1e-9 * max_lag;
    let problem = WlsProblem {
        lags: &emp.lags,
        gamma: &emp.gamma,
        weights: emp
            .lags
            .iter()
            .zip(&emp.counts)
            .map(|(&h, &c)| c as f64 / h.max(floor_h).powi(2))
            .collect(),
    };
    let gamma_scale = emp
        .gamma
        .iter()
        .copied()
        .fold(emp.sample_variance, f64::max)
        .max(f64::MIN_POSITIVE);
    let range_bounds = (max_lag * 1e-3, max_lag * 10.0);
    let project = |t: [f64; 3]| [t[0].max(0.0), t[1].max(0.0), t[2].clamp(range_bounds.0, range_bounds.1)];
    let scales = [gamma_scale, gamma_scale, max_lag];

    let nugget0 = emp.gamma[0].max(0.0);
    let mut theta = project([
        nugget0,
        (emp.sample_variance - nugget0).max(1e-3 * gamma_scale),
        max_lag / 3.0,
    ]);
    let mut obj = problem.objective(&theta);
    let mut mu = 1e-3;
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&theta);
        let max_diag = (0..3).map(|k| jtj[k][k]).fold(0.0, f64::max);
        if max_diag == 0.0 {
            status = FitStatus::Converged;
            break;
        }
        let mut accepted = false;
        while mu < 1e16 {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += mu * jtj[k][k].max(1e-12 * max_diag);
            }
            let Some(delta) = solve3(a, jtr) else {
                mu *= 4.0;
                continue;
            };
            let cand = project([theta[0] + delta[0], theta[1] + delta[1], theta[2] + delta[2]]);
            let cand_obj = problem.objective(&cand);
            if cand_obj <= obj {
                let small = (0..3).all(|k| (cand[k] - theta[k]).abs() <= STEP_TOL * theta[k].abs().max(scales[k]));
                theta = cand;
                obj = cand_obj;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if small {
                    status = FitStatus::Converged;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // no descent direction left: stationary up to rounding
            status = FitStatus::Converged;
        }
        if status == FitStatus::Converged {
            break;
        }
    }
    let degenerate = theta[1] <= 1e-6 * gamma_scale
        || theta[2] <= range_bounds.0 * (1.0 + 1e-9)
        || theta[2] >= range_bounds.1 * (1.0 - 1e-9);
    if degenerate {
        status = FitStatus::RangeUnidentified;
    }
    Ok(SemivariogramFit {
        model: SemivariogramModel {
            nugget: theta[0],
            partial_sill: theta[1],
            range: theta[2],
        },
        status,
        iterations,
        objective: obj,
    })
}
