//! Linear trend models: ordinary least squares and forward BIC selection.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Relative residual norm below which a centred column is treated as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendModel {
    pub selected_variables: Vec<String>,
    /// Position of each selected variable in the covariate rows passed to [`TrendModel::predict`].
    pub columns: Vec<usize>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub residual_variance: f64,
    pub n: usize,
}

impl TrendModel {
    pub fn predict(&self, covariates: &[f64]) -> f64 {
        self.intercept
            + self
                .columns
                .iter()
                .zip(&self.coefficients)
                .map(|(&j, b)| b * covariates[j])
                .sum::<f64>()
    }

    pub fn bic(&self) -> f64 {
        bic(self.rss, self.n, self.coefficients.len())
    }
}

fn bic(rss: f64, n: usize, k: usize) -> f64 {
    let n_f = n as f64;
    n_f * (rss / n_f).ln() + (k + 1) as f64 * n_f.ln()
}

/// Columns `cols` of the dataset's covariate matrix.
pub fn design_matrix(data: &Dataset, cols: &[usize]) -> DMatrix<f64> {
    data.covariates().select_columns(cols)
}

/// Least squares with an intercept. `names` label the columns of `x`.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<TrendModel> {
    let (n, k) = x.shape();
    if y.len() != n || names.len() != k {
        return Err(Error::Dimension(format!(
            "design {n}×{k}, {} responses, {} names",
            y.len(),
            names.len()
        )));
    }
    if n <= k + 1 {
        return Err(Error::Invalid(format!(
            "least squares with {k} predictors needs more than {} observations, got {n}",
            k + 1
        )));
    }
    let n_f = n as f64;
    let y_mean = y.iter().sum::<f64>() / n_f;
    let x_mean: Vec<f64> = (0..k).map(|j| x.column(j).sum() / n_f).collect();

    // Modified Gram-Schmidt with reorthogonalization on the centred columns.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = DMatrix::<f64>::zeros(k, k);
    let mut collinear = Vec::new();
    for j in 0..k {
        let mut v: Vec<f64> = x.column(j).iter().map(|&xi| xi - x_mean[j]).collect();
        let raw_scale = x
            .column(j)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let dot: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
                r[(i, j)] += dot;
                v.iter_mut().zip(qi).for_each(|(vv, qq)| *vv -= dot * qq);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= COLLINEAR_TOL * raw_scale {
            collinear.push(names[j].clone());
            continue;
        }
        r[(j, j)] = norm;
        v.iter_mut().for_each(|a| *a /= norm);
        q.push(v);
    }
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }

    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let qty: Vec<f64> = q
        .iter()
        .map(|qi| qi.iter().zip(&yc).map(|(a, b)| a * b).sum())
        .collect();
    let mut beta = vec![0.0; k];
    for j in (0..k).rev() {
        let s: f64 = (j + 1..k).map(|l| r[(j, l)] * beta[l]).sum();
        beta[j] = (qty[j] - s) / r[(j, j)];
    }
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    let rss: f64 = (0..n)
        .map(|i| {
            let fit = intercept + (0..k).map(|j| beta[j] * x[(i, j)]).sum::<f64>();
            (y[i] - fit).powi(2)
        })
        .sum();
    Ok(TrendModel {
        selected_variables: names.to_vec(),
        columns: (0..k).collect(),
        intercept,
        coefficients: beta,
        rss,
        residual_variance: rss / (n - k - 1) as f64,
        n,
    })
}

/// Greedy forward selection minimizing `n·ln(RSS/n) + k·ln(n)`.
///
/// Candidates are tried in order; a candidate only enters when it strictly
/// lowers the criterion, so ties go to the earlier candidate. Candidates that
/// are collinear with the current selection are skipped.
pub fn forward_bic(x: &DMatrix<f64>, y: &[f64], candidates: &[String]) -> Result<TrendModel> {
    let n = y.len();
    let tss: f64 = {
        let m = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - m).powi(2)).sum()
    };
    // Exact fits would otherwise chase rounding noise through ln(RSS).
    let rss_floor = (1e-24 * tss).max(f64::MIN_POSITIVE);
    let score = |m: &TrendModel| bic(m.rss.max(rss_floor), n, m.coefficients.len());

    let fit_subset = |cols: &[usize]| {
        let names: Vec<String> = cols.iter().map(|&j| candidates[j].clone()).collect();
        fit_ols(&x.select_columns(cols), y, &names).map(|mut m| {
            m.columns = cols.to_vec();
            m
        })
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut best = fit_subset(&selected)?;
    let mut best_score = score(&best);
    loop {
        let mut step: Option<(f64, usize, TrendModel)> = None;
        for c in 0..candidates.len() {
            if selected.contains(&c) || n <= selected.len() + 2 {
                continue;
            }
            let mut cols = selected.clone();
            cols.push(c);
            let model = match fit_subset(&cols) {
                Ok(m) => m,
                Err(Error::RankDeficient(_)) => continue,
                Err(e) => return Err(e),
            };
            let s = score(&model);
            if s < step.as_ref().map_or(best_score, |t| t.0) {
                step = Some((s, c, model));
            }
        }
        match step {
            Some((s, c, model)) => {
                selected.push(c);
                best = model;
                best_score = s;
            }
            None => return Ok(best),
        }
    }
}

/// Fits the trend on named dataset columns; `columns` of the result index the
/// dataset's covariate rows.
pub fn fit_trend(data: &Dataset, vars: &[String], select: bool) -> Result<TrendModel> {
    let cols = vars.iter().map(|v| data.column_index(v)).collect::<Result<Vec<_>>>()?;
    let x = design_matrix(data, &cols);
    let mut model = if select {
        forward_bic(&x, data.response(), vars)?
    } else {
        fit_ols(&x, data.response(), vars)?
    };
    model.columns = model.columns.iter().map(|&j| cols[j]).collect();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn noiseless_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 + 3.0 * x).collect();
        let m = fit_ols(&DMatrix::from_column_slice(10, 1, &xs), &y, &names(&["x"])).unwrap();
        assert!((m.intercept - 2.0).abs() < 1e-12);
        assert!((m.coefficients[0] - 3.0).abs() < 1e-12);
        assert!(m.residual_variance < 1e-20);
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [1.0, 4.0, 2.0, 7.0];
        let m = fit_ols(&DMatrix::zeros(4, 0), &y, &[]).unwrap();
        assert!((m.intercept - 3.5).abs() < 1e-15);
        let tss: f64 = y.iter().map(|v| (v - 3.5f64).powi(2)).sum();
        assert!((m.residual_variance - tss / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = rng_from_seed(9);
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + x[(i, 0)] - 2.0 * x[(i, 1)] + 0.5 * x[(i, 2)] + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m = fit_ols(&x, &y, &names(&["a", "b", "c"])).unwrap();
        // oracle: solve [1 X]'[1 X] b = [1 X]'y directly
        let xa = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let yv = nalgebra::DVector::from_column_slice(&y);
        let b = (xa.transpose() * &xa).lu().solve(&(xa.transpose() * yv)).unwrap();
        assert!((m.intercept - b[0]).abs() < 1e-10);
        for j in 0..3 {
            assert!((m.coefficients[j] - b[j + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let a: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let mut data = a.clone();
        data.extend(a.iter().map(|v| 2.0 * v + 1.0));
        data.extend((0..8).map(|i| ((i * 7) % 5) as f64));
        let x = DMatrix::from_column_slice(8, 3, &data);
        let y: Vec<f64> = a.iter().map(|v| v.sin()).collect();
        match fit_ols(&x, &y, &names(&["a", "twice_a", "c"])) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["twice_a".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let constant = DMatrix::from_element(8, 1, 4.0);
        assert!(matches!(
            fit_ols(&constant, &y, &names(&["k"])),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn too_few_observations() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(fit_ols(&x, &[1.0, 2.0], &names(&["x"])).is_err());
    }

    #[test]
    fn noise_slopes_have_small_t_statistics() {
        let mut rng = rng_from_seed(21);
        let n = 50;
        let reps = 200;
        let mut mean_abs_t = 0.0;
        for _ in 0..reps {
            let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let m = fit_ols(&x, &y, &names(&["x"])).unwrap();
            let xm = x.column(0).mean();
            let sxx: f64 = x.column(0).iter().map(|v| (v - xm).powi(2)).sum();
            let se = (m.residual_variance / sxx).sqrt();
            mean_abs_t += (m.coefficients[0] / se).abs() / reps as f64;
        }
        // E|t| ≈ √(2/π) ≈ 0.80 under the null
        assert!(mean_abs_t < 1.0, "mean |t| = {mean_abs_t}");
    }

    #[test]
    fn forward_bic_empty_candidates() {
        let y = [1.0, 2.0, 3.0, 5.0];
        let m = forward_bic(&DMatrix::zeros(4, 0), &y, &[]).unwrap();
        assert!(m.selected_variables.is_empty());
        assert!((m.intercept - 2.75).abs() < 1e-15);
    }

    #[test]
    fn forward_bic_selects_signal() {
        let mut rng = rng_from_seed(33);
        let n = 60;
        let reps = 100;
        let mut hits = 0;
        let mut noise_only_empty = 0;
        for _ in 0..reps {
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
            let y: Vec<f64> = (0..n)
                .map(|i| 2.0 + 3.0 * x[(i, 0)] + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let m = forward_bic(&x, &y, &names(&["x1", "noise"])).unwrap();
            if m.selected_variables == names(&["x1"]) {
                hits += 1;
            }
            let pure: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            if forward_bic(&x, &pure, &names(&["a", "b"]))
                .unwrap()
                .selected_variables
                .is_empty()
            {
                noise_only_empty += 1;
            }
        }
        assert!(hits > 95, "x1 selected alone in {hits}/100");
        assert!(noise_only_empty > 85, "intercept-only in {noise_only_empty}/100");
    }

    #[test]
    fn forward_bic_exact_line() {
        let x = DMatrix::from_fn(
            20,
            2,
            |i, j| if j == 0 { i as f64 / 19.0 } else { ((i * 13) % 7) as f64 },
        );
        let y: Vec<f64> = (0..20).map(|i| 2.0 + 3.0 * x[(i, 0)]).collect();
        let m = forward_bic(&x, &y, &names(&["x1", "noise"])).unwrap();
        assert_eq!(m.selected_variables, names(&["x1"]));
        assert_eq!(m.columns, vec![0]);
    }

    #[test]
    fn forward_bic_ignores_duplicated_selected_candidate() {
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let n = 40;
            let base = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
            let y: Vec<f64> = (0..n)
                .map(|i| base[(i, 0)] * 4.0 - base[(i, 2)] + 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let m = forward_bic(&base, &y, &names(&["a", "b", "c"])).unwrap();
            let Some(first) = m.columns.first().copied() else {
                continue;
            };
            let mut dup = base.clone().insert_column(3, 0.0);
            dup.set_column(3, &base.column(first));
            let m2 = forward_bic(&dup, &y, &names(&["a", "b", "c", "copy"])).unwrap();
            assert_eq!(m.selected_variables, m2.selected_variables);
        }
    }
}
