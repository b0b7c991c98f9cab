//! Calibration weighting of validation tasks.
//!
//! Task descriptors are discretized on bins taken from the deployment
//! distribution, and raking (iterative proportional fitting) finds task
//! weights whose weighted bin proportions match the deployment margins for
//! every balancing variable. Weights use the sum-to-one convention.

use crate::data::{DescriptorColumn, TargetTaskSet, TaskDescriptor};
use crate::error::{EmptyBin, Error, Result};
use crate::taskgen::TaskSet;

/// Bins of one balancing variable. `edges` are interior cut points; bin `b`
/// is `(edges[b−1], edges[b]]` with the outermost bins unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBins {
    pub label: String,
    pub column: DescriptorColumn,
    pub edges: Vec<f64>,
}

impl VariableBins {
    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Right-closed bin index; values outside the edges land in the outermost bins.
    pub fn bin_of(&self, value: f64) -> usize {
        self.edges.partition_point(|&e| e < value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinningScheme {
    pub variables: Vec<VariableBins>,
    /// Variables requested but left with a single bin.
    pub dropped: Vec<String>,
}

impl BinningScheme {
    pub fn indicator_len(&self) -> usize {
        self.variables.iter().map(VariableBins::n_bins).sum()
    }
}

/// Per-variable target bin proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginVector {
    pub margins: Vec<Vec<f64>>,
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn column_values(target: &TargetTaskSet, column: DescriptorColumn) -> Result<Vec<f64>> {
    let values: Vec<f64> = target.descriptors.iter().map(|t| column.value(t)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite deployment descriptor".into()));
    }
    Ok(values)
}

fn quantile_edges(mut values: Vec<f64>, n_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let max = *values.last().expect("non-empty");
    let mut edges: Vec<f64> = (1..n_bins)
        .map(|j| quantile_sorted(&values, j as f64 / n_bins as f64))
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}

/// Quantile bins of the deployment descriptors for each balancing variable.
/// Variables whose quantiles collapse to a single bin are dropped.
pub fn make_bins(target: &TargetTaskSet, variables: &[String], n_bins: usize) -> Result<BinningScheme> {
    if target.is_empty() {
        return Err(Error::Invalid("empty deployment task set".into()));
    }
    if n_bins < 2 {
        return Err(Error::Invalid(format!("{n_bins} bins per variable")));
    }
    let mut scheme = BinningScheme {
        variables: Vec::new(),
        dropped: Vec::new(),
    };
    for label in variables {
        let column = DescriptorColumn::resolve(&target.covariate_names, label)?;
        let edges = quantile_edges(column_values(target, column)?, n_bins);
        if edges.is_empty() {
            log::warn!("balancing variable '{label}' is constant over the deployment domain; dropped");
            scheme.dropped.push(label.clone());
        } else {
            scheme.variables.push(VariableBins {
                label: label.clone(),
                column,
                edges,
            });
        }
    }
    Ok(scheme)
}

/// Bin index of each balancing variable for one descriptor.
pub fn encode(descriptor: &TaskDescriptor, bins: &BinningScheme) -> Result<Vec<usize>> {
    bins.variables
        .iter()
        .map(|v| {
            let value = v.column.value(descriptor);
            if value.is_finite() {
                Ok(v.bin_of(value))
            } else {
                Err(Error::Invalid(format!("non-finite value for '{}'", v.label)))
            }
        })
        .collect()
}

/// One-hot encoding concatenated over variables.
pub fn indicator(descriptor: &TaskDescriptor, bins: &BinningScheme) -> Result<Vec<f64>> {
    let codes = encode(descriptor, bins)?;
    let mut out = vec![0.0; bins.indicator_len()];
    let mut offset = 0;
    for (v, &b) in bins.variables.iter().zip(&codes) {
        out[offset + b] = 1.0;
        offset += v.n_bins();
    }
    Ok(out)
}

/// Bin codes of many descriptors, stored per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTasks {
    pub n_bins: Vec<usize>,
    /// `codes[v][i]`: bin of task `i` for variable `v`.
    pub codes: Vec<Vec<usize>>,
}

impl EncodedTasks {
    pub fn len(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode_all<'a>(
    descriptors: impl IntoIterator<Item = &'a TaskDescriptor>,
    bins: &BinningScheme,
) -> Result<EncodedTasks> {
    let mut codes = vec![Vec::new(); bins.variables.len()];
    for d in descriptors {
        for (v, b) in encode(d, bins)?.into_iter().enumerate() {
            codes[v].push(b);
        }
    }
    Ok(EncodedTasks {
        n_bins: bins.variables.iter().map(VariableBins::n_bins).collect(),
        codes,
    })
}

pub fn target_margins(target: &TargetTaskSet, bins: &BinningScheme) -> Result<MarginVector> {
    if target.is_empty() {
        return Err(Error::Invalid("empty deployment task set".into()));
    }
    let enc = encode_all(&target.descriptors, bins)?;
    let n = target.len() as f64;
    let margins = enc
        .codes
        .iter()
        .zip(&enc.n_bins)
        .map(|(codes, &nb)| {
            let mut m = vec![0.0; nb];
            codes.iter().for_each(|&b| m[b] += 1.0);
            m.iter_mut().for_each(|c| *c /= n);
            m
        })
        .collect();
    Ok(MarginVector { margins })
}

/// Task weights summing to one, with uniform weights flagged so that
/// weighted averages can reduce to plain means exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    uniform: bool,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            uniform: true,
        }
    }

    /// Normalizes nonnegative raw weights to sum to one.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("weights must be finite and nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("weights sum to zero".into()));
        }
        Ok(Self {
            weights: raw.into_iter().map(|w| w / total).collect(),
            uniform: false,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Drops the tasks where `keep` is false and renormalizes.
    pub fn restrict(&self, keep: &[bool]) -> Result<Self> {
        let kept: Vec<f64> = self
            .weights
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(&w, _)| w)
            .collect();
        if self.uniform {
            return Ok(Self::uniform(kept.len()));
        }
        Self::from_raw(kept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RakeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RakeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

fn weighted_margins(w: &[f64], codes: &[usize], n_bins: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_bins];
    for (&wi, &b) in w.iter().zip(codes) {
        m[b] += wi;
    }
    m
}

/// Largest absolute gap between weighted task margins and target margins.
pub fn max_margin_residual(w: &[f64], tasks: &EncodedTasks, margins: &MarginVector) -> f64 {
    tasks
        .codes
        .iter()
        .zip(&tasks.n_bins)
        .zip(&margins.margins)
        .flat_map(|((codes, &nb), target)| {
            weighted_margins(w, codes, nb)
                .into_iter()
                .zip(target)
                .map(|(c, t)| (c - t).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Bins with positive target margin that contain no validation task.
pub fn empty_bins(tasks: &EncodedTasks, margins: &MarginVector, labels: &[String]) -> Vec<EmptyBin> {
    let mut out = Vec::new();
    for (v, (codes, target)) in tasks.codes.iter().zip(&margins.margins).enumerate() {
        let mut count = vec![0usize; target.len()];
        codes.iter().for_each(|&b| count[b] += 1);
        for (b, (&c, &t)) in count.iter().zip(target).enumerate() {
            if c == 0 && t > 0.0 {
                out.push(EmptyBin {
                    variable: labels.get(v).cloned().unwrap_or_else(|| v.to_string()),
                    bin: b,
                    target_margin: t,
                });
            }
        }
    }
    out
}

/// Raking by iterative proportional fitting, starting from uniform weights.
///
/// Each sweep rescales the weights within every bin of every variable in
/// turn so that the bin matches its target margin. Iteration stops once the
/// largest margin residual is below `tol`.
pub fn rake(tasks: &EncodedTasks, margins: &MarginVector, opts: &RakeOptions) -> Result<WeightVector> {
    let n = tasks.len();
    if n == 0 {
        return Err(Error::Invalid("no validation tasks to weight".into()));
    }
    if margins.margins.len() != tasks.codes.len()
        || margins.margins.iter().zip(&tasks.n_bins).any(|(m, &nb)| m.len() != nb)
    {
        return Err(Error::Dimension("margins do not match the binning".into()));
    }
    let empty = empty_bins(tasks, margins, &[]);
    if !empty.is_empty() {
        return Err(Error::InsufficientCoverage(empty));
    }
    let mut w = vec![1.0 / n as f64; n];
    let mut deviation = max_margin_residual(&w, tasks, margins);
    let mut sweeps = 0;
    while deviation >= opts.tol {
        if sweeps == opts.max_iter {
            return Err(Error::RakingDiverged { deviation, sweeps });
        }
        for ((codes, &nb), target) in tasks.codes.iter().zip(&tasks.n_bins).zip(&margins.margins) {
            let current = weighted_margins(&w, codes, nb);
            let factor: Vec<f64> = current
                .iter()
                .zip(target)
                .map(|(&c, &t)| if c > 0.0 { t / c } else { 0.0 })
                .collect();
            for (wi, &b) in w.iter_mut().zip(codes) {
                *wi *= factor[b];
            }
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::RakingDiverged { deviation, sweeps });
        }
        w.iter_mut().for_each(|wi| *wi /= total);
        sweeps += 1;
        deviation = max_margin_residual(&w, tasks, margins);
    }
    WeightVector::from_raw(w)
}

/// Removes the edge between each covered-by-nobody bin and its nearest
/// bin holding validation tasks, until every target bin is covered.
/// Variables reduced to one bin are dropped.
pub fn merge_empty_bins<'a>(
    scheme: &BinningScheme,
    validation: impl IntoIterator<Item = &'a TaskDescriptor> + Clone,
    target: &TargetTaskSet,
) -> Result<BinningScheme> {
    let mut out = BinningScheme {
        variables: Vec::new(),
        dropped: scheme.dropped.clone(),
    };
    for var in &scheme.variables {
        let mut var = var.clone();
        loop {
            let single = BinningScheme {
                variables: vec![var.clone()],
                dropped: vec![],
            };
            let enc = encode_all(validation.clone(), &single)?;
            let margins = target_margins(target, &single)?;
            let mut count = vec![0usize; var.n_bins()];
            enc.codes[0].iter().for_each(|&b| count[b] += 1);
            let Some(b) = (0..var.n_bins()).find(|&b| count[b] == 0 && margins.margins[0][b] > 0.0) else {
                break;
            };
            let nearest = (0..var.n_bins())
                .filter(|&c| count[c] > 0)
                .min_by_key(|&c| (c.abs_diff(b), c));
            let Some(c) = nearest else {
                return Err(Error::InsufficientCoverage(vec![EmptyBin {
                    variable: var.label.clone(),
                    bin: b,
                    target_margin: margins.margins[0][b],
                }]));
            };
            let edge = if c < b { b - 1 } else { b };
            var.edges.remove(edge);
            if var.edges.is_empty() {
                break;
            }
        }
        if var.edges.is_empty() {
            log::warn!("balancing variable '{}' merged into a single bin; dropped", var.label);
            out.dropped.push(var.label.clone());
        } else {
            out.variables.push(var);
        }
    }
    Ok(out)
}

/// Result of calibrating validation tasks to a deployment domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub scheme: BinningScheme,
    pub margins: MarginVector,
    pub weights: WeightVector,
    pub max_margin_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub n_bins: usize,
    pub rake: RakeOptions,
    pub merge_empty_bins: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_bins: 5,
            rake: RakeOptions::default(),
            merge_empty_bins: false,
        }
    }
}

/// Bins the deployment descriptors, computes margins and rakes the
/// validation descriptors to them.
pub fn calibrate(
    validation: &[TaskDescriptor],
    target: &TargetTaskSet,
    variables: &[String],
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let mut scheme = make_bins(target, variables, opts.n_bins)?;
    if opts.merge_empty_bins {
        scheme = merge_empty_bins(&scheme, validation, target)?;
    }
    let margins = target_margins(target, &scheme)?;
    let enc = encode_all(validation, &scheme)?;
    if enc.codes.is_empty() {
        let weights = WeightVector::uniform(validation.len());
        return Ok(Calibration {
            scheme,
            margins,
            weights,
            max_margin_residual: 0.0,
        });
    }
    let labels: Vec<String> = scheme.variables.iter().map(|v| v.label.clone()).collect();
    let empty = empty_bins(&enc, &margins, &labels);
    if !empty.is_empty() {
        return Err(Error::InsufficientCoverage(empty));
    }
    let weights = rake(&enc, &margins, &opts.rake)?;
    let max_margin_residual = max_margin_residual(weights.as_slice(), &enc, &margins);
    Ok(Calibration {
        scheme,
        margins,
        weights,
        max_margin_residual,
    })
}

/// `w' = (1−λ)·w + λ/n`.
pub fn shrink(w: &WeightVector, lambda: f64) -> Result<WeightVector> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("shrinkage {lambda} outside [0, 1]")));
    }
    if w.uniform || lambda == 1.0 {
        return Ok(WeightVector::uniform(w.len()));
    }
    let u = lambda / w.len() as f64;
    Ok(WeightVector {
        weights: w.weights.iter().map(|&x| (1.0 - lambda) * x + u).collect(),
        uniform: false,
    })
}

/// Effective sample size `(Σw)²/Σw²`.
pub fn ess(w: &[f64]) -> Result<f64> {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        return Err(Error::Invalid("ESS of all-zero weights".into()));
    }
    Ok(s * s / s2)
}

/// Sums task weights per anchoring observation.
pub fn collapse_weights(tasks: &TaskSet, w: &WeightVector, n_obs: usize) -> Result<Vec<f64>> {
    if tasks.len() != w.len() {
        return Err(Error::Dimension(format!(
            "{} tasks but {} weights",
            tasks.len(),
            w.len()
        )));
    }
    let mut out = vec![0.0; n_obs];
    for (t, &wi) in tasks.tasks.iter().zip(&w.weights) {
        if t.target_index >= n_obs {
            return Err(Error::Dimension(format!("target {} ≥ n = {n_obs}", t.target_index)));
        }
        out[t.target_index] += wi;
    }
    Ok(out)
}

/// Dispersion of case-collapsed weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDiagnostics {
    pub ess: f64,
    /// ESS divided by the number of observations.
    pub ess_fraction: f64,
    /// 95th percentile of `n·w` over observations (1 for uniform weights).
    pub p95_relative_weight: f64,
    pub max_relative_weight: f64,
}

pub fn weight_diagnostics(collapsed: &[f64]) -> Result<WeightDiagnostics> {
    let n = collapsed.len() as f64;
    let e = ess(collapsed)?;
    let total: f64 = collapsed.iter().sum();
    let mut rel: Vec<f64> = collapsed.iter().map(|w| w / total * n).collect();
    rel.sort_by(f64::total_cmp);
    Ok(WeightDiagnostics {
        ess: e,
        ess_fraction: e / n,
        p95_relative_weight: quantile_sorted(&rel, 0.95),
        max_relative_weight: *rel.last().expect("non-empty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target_1d(values: &[f64]) -> TargetTaskSet {
        TargetTaskSet {
            covariate_names: vec!["x1".into()],
            descriptors: values
                .iter()
                .map(|&v| TaskDescriptor {
                    covariates: vec![v],
                    d: v * 2.0,
                })
                .collect(),
        }
    }

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn quintile_edges_of_uniform_values() {
        let values: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let scheme = make_bins(&target_1d(&values), &labels(&["x1"]), 5).unwrap();
        let e = &scheme.variables[0].edges;
        for (got, want) in e.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_variable_dropped() {
        let scheme = make_bins(&target_1d(&[0.3; 20]), &labels(&["x1", "d"]), 5).unwrap();
        assert!(scheme.variables.is_empty());
        assert_eq!(scheme.dropped, labels(&["x1", "d"]));
    }

    #[test]
    fn unknown_variable() {
        assert!(matches!(
            make_bins(&target_1d(&[0.1, 0.2]), &labels(&["x9"]), 5),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn decile_bins() {
        let values: Vec<f64> = (0..500).map(|i| (i as f64).sqrt()).collect();
        let scheme = make_bins(&target_1d(&values), &labels(&["d"]), 10).unwrap();
        assert_eq!(scheme.variables[0].n_bins(), 10);
    }

    #[test]
    fn encoding_rules() {
        let v = VariableBins {
            label: "x1".into(),
            column: DescriptorColumn::Covariate(0),
            edges: vec![0.2, 0.4, 0.6, 0.8],
        };
        assert_eq!(v.bin_of(-5.0), 0);
        assert_eq!(v.bin_of(0.2), 0);
        assert_eq!(v.bin_of(0.2000001), 1);
        assert_eq!(v.bin_of(9.0), 4);
        let scheme = BinningScheme {
            variables: vec![
                v.clone(),
                VariableBins {
                    label: "d".into(),
                    column: DescriptorColumn::Distance,
                    ..v
                },
            ],
            dropped: vec![],
        };
        let ind = indicator(
            &TaskDescriptor {
                covariates: vec![0.5],
                d: 0.9,
            },
            &scheme,
        )
        .unwrap();
        assert_eq!(ind.len(), 10);
        assert_eq!(ind.iter().sum::<f64>(), 2.0);
        assert_eq!(ind[2], 1.0);
        assert_eq!(ind[9], 1.0);
        assert!(encode(
            &TaskDescriptor {
                covariates: vec![f64::NAN],
                d: 0.1
            },
            &scheme
        )
        .is_err());
    }

    #[test]
    fn self_quantile_margins() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let t = target_1d(&values);
        let scheme = make_bins(&t, &labels(&["x1"]), 5).unwrap();
        let m = target_margins(&t, &scheme).unwrap();
        for p in &m.margins[0] {
            assert!((p - 0.2).abs() <= 1.0 / 1000.0 + 1e-15);
        }
        let single = target_margins(&target_1d(&[0.5]), &scheme).unwrap();
        assert_eq!(single.margins[0].iter().sum::<f64>(), 1.0);
        assert!(single.margins[0].iter().all(|&p| p == 0.0 || p == 1.0));
    }

    fn binary_tasks(n_first: usize, n_second: usize) -> EncodedTasks {
        let mut codes = vec![0; n_first];
        codes.extend(vec![1; n_second]);
        EncodedTasks {
            n_bins: vec![2],
            codes: vec![codes],
        }
    }

    #[test]
    fn post_stratification_oracle() {
        let margins = MarginVector {
            margins: vec![vec![0.5, 0.5]],
        };
        let w = rake(&binary_tasks(80, 20), &margins, &RakeOptions::default()).unwrap();
        for (i, &wi) in w.as_slice().iter().enumerate() {
            let want = if i < 80 { 0.5 / 80.0 } else { 0.5 / 20.0 };
            assert!((wi - want).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_point_is_uniform() {
        let margins = MarginVector {
            margins: vec![vec![0.8, 0.2]],
        };
        let w = rake(&binary_tasks(80, 20), &margins, &RakeOptions::default()).unwrap();
        assert!(w.as_slice().iter().all(|&x| (x - 0.01).abs() < 1e-12));
    }

    #[test]
    fn two_independent_binaries_give_product_weights() {
        // tasks in cells (a, b) with counts; target margins independent
        let cells = [((0, 0), 30), ((0, 1), 10), ((1, 0), 20), ((1, 1), 40)];
        let mut codes = vec![Vec::new(), Vec::new()];
        for &((a, b), c) in &cells {
            for _ in 0..c {
                codes[0].push(a);
                codes[1].push(b);
            }
        }
        let tasks = EncodedTasks {
            n_bins: vec![2, 2],
            codes,
        };
        let margins = MarginVector {
            margins: vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        };
        let w = rake(
            &tasks,
            &margins,
            &RakeOptions {
                tol: 1e-13,
                max_iter: 10_000,
            },
        )
        .unwrap();
        // the raking solution has the product form w = α_a·β_b; check it
        // against the 2×2 cell totals implied by that form
        let cell_w = |a: usize, b: usize| -> f64 {
            (0..tasks.len())
                .filter(|&i| tasks.codes[0][i] == a && tasks.codes[1][i] == b)
                .map(|i| w.as_slice()[i])
                .next()
                .unwrap()
        };
        let ratio = cell_w(0, 0) * cell_w(1, 1) / (cell_w(0, 1) * cell_w(1, 0));
        assert!((ratio - 1.0).abs() < 1e-9);
        assert!(max_margin_residual(w.as_slice(), &tasks, &margins) < 1e-12);
    }

    #[test]
    fn coverage_violation_lists_bins() {
        let margins = MarginVector {
            margins: vec![vec![0.5, 0.3, 0.2]],
        };
        let tasks = EncodedTasks {
            n_bins: vec![3],
            codes: vec![vec![0, 0, 2]],
        };
        match rake(&tasks, &margins, &RakeOptions::default()) {
            Err(Error::InsufficientCoverage(bins)) => {
                assert_eq!(bins.len(), 1);
                assert_eq!(bins[0].bin, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_target_margin_zeroes_weights() {
        let margins = MarginVector {
            margins: vec![vec![1.0, 0.0]],
        };
        let w = rake(&binary_tasks(3, 2), &margins, &RakeOptions::default()).unwrap();
        assert_eq!(&w.as_slice()[3..], &[0.0, 0.0]);
    }

    #[test]
    fn merge_fills_empty_bin() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let target = target_1d(&values);
        let scheme = make_bins(&target, &labels(&["x1"]), 5).unwrap();
        // no validation task in the second quintile
        let val: Vec<TaskDescriptor> = [0.05, 0.1, 0.5, 0.7, 0.9, 0.95]
            .iter()
            .map(|&v| TaskDescriptor {
                covariates: vec![v],
                d: 0.0,
            })
            .collect();
        let opts = CalibrationOptions::default();
        assert!(matches!(
            calibrate(&val, &target, &labels(&["x1"]), &opts),
            Err(Error::InsufficientCoverage(_))
        ));
        let merged = merge_empty_bins(&scheme, &val, &target).unwrap();
        assert_eq!(merged.variables[0].n_bins(), 4);
        let cal = calibrate(
            &val,
            &target,
            &labels(&["x1"]),
            &CalibrationOptions {
                merge_empty_bins: true,
                ..opts
            },
        )
        .unwrap();
        assert!(cal.max_margin_residual < 1e-8);
    }

    #[test]
    fn shrink_examples() {
        let w = WeightVector::from_raw(vec![0.9, 0.1]).unwrap();
        assert_eq!(shrink(&w, 0.0).unwrap().as_slice(), w.as_slice());
        assert_eq!(shrink(&w, 1.0).unwrap().as_slice(), &[0.5, 0.5]);
        let s = shrink(&w, 0.2).unwrap();
        assert!((s.as_slice()[0] - 0.82).abs() < 1e-12);
        assert!((s.as_slice()[1] - 0.18).abs() < 1e-12);
        assert!(shrink(&w, 1.5).is_err());
        assert!(shrink(&w, -0.1).is_err());
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.25; 4]).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(ess(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((ess(&[0.5, 0.25, 0.25]).unwrap() - 1.0 / 0.375).abs() < 1e-12);
        assert!(ess(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn diagnostics_of_uniform_weights() {
        let d = weight_diagnostics(&[0.1; 10]).unwrap();
        assert!((d.ess_fraction - 1.0).abs() < 1e-12);
        assert!((d.p95_relative_weight - 1.0).abs() < 1e-12);
    }
}
