//! Random forest regression: bagged CART trees with variance-reduction splits.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_rng, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Variables tried per split; `None` means `max(1, ⌊p/3⌋)`.
    pub mtry: Option<usize>,
    /// Nodes with at most this many cases are not split.
    pub min_node_size: usize,
    /// Sample cases with replacement per tree; otherwise every tree sees all cases once.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node_size: 5,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Split {
        var: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    /// Case indices drawn for this tree (with multiplicity).
    pub bootstrap: Vec<u32>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[var as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub mtry: usize,
    /// Positions of the model's features in the covariate rows passed to `predict`.
    pub columns: Vec<usize>,
    n_train: usize,
}

struct Builder {
    mtry: usize,
    min_node_size: usize,
    /// per variable, segmented by node and sorted by that variable within each
    /// segment: case index, feature value, response
    idx: Vec<Vec<u32>>,
    val: Vec<Vec<f64>>,
    resp: Vec<Vec<f64>>,
    goes_left: Vec<bool>,
    scratch_idx: Vec<u32>,
    scratch_val: Vec<f64>,
    scratch_resp: Vec<f64>,
    vars: Vec<usize>,
    chosen: Vec<usize>,
    nodes: Vec<Node>,
}

struct BestSplit {
    var: usize,
    threshold: f64,
    score: f64,
}

impl Builder {
    fn best_split(&self, start: usize, end: usize, total: f64) -> Option<BestSplit> {
        let n = (end - start) as f64;
        let parent = total * total / n;
        let mut best: Option<BestSplit> = None;
        let mut best_score = f64::NEG_INFINITY;
        for &var in &self.chosen {
            let vals = &self.val[var][start..end];
            let resp = &self.resp[var][start..end];
            let mut left_sum = 0.0;
            for i in 0..vals.len() - 1 {
                left_sum += resp[i];
                let lo = vals[i];
                let hi = vals[i + 1];
                if lo == hi {
                    continue;
                }
                let nl = (i + 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
                if score > best_score {
                    best_score = score;
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit { var, threshold, score });
                }
            }
        }
        // require a genuine reduction in squared error
        best.filter(|b| b.score - parent > 1e-12 * parent.abs().max(1e-300))
    }

    fn choose_vars(&mut self, rng: &mut SimRng) {
        let p = self.vars.len();
        self.chosen.clear();
        if self.mtry == p {
            self.chosen.extend(0..p);
            return;
        }
        for i in 0..self.mtry {
            let j = rng.random_range(i..p);
            self.vars.swap(i, j);
        }
        self.chosen.extend_from_slice(&self.vars[..self.mtry]);
        self.chosen.sort_unstable();
    }

    fn partition(&mut self, v: usize, start: usize, end: usize) -> usize {
        let len = end - start;
        let idx = &mut self.idx[v][start..end];
        let val = &mut self.val[v][start..end];
        let resp = &mut self.resp[v][start..end];
        let s_idx = &mut self.scratch_idx[..len];
        let s_val = &mut self.scratch_val[..len];
        let s_resp = &mut self.scratch_resp[..len];
        let mut write = 0;
        let mut spill = 0;
        for k in 0..len {
            let i = idx[k];
            if self.goes_left[i as usize] {
                idx[write] = i;
                val[write] = val[k];
                resp[write] = resp[k];
                write += 1;
            } else {
                s_idx[spill] = i;
                s_val[spill] = val[k];
                s_resp[spill] = resp[k];
                spill += 1;
            }
        }
        idx[write..].copy_from_slice(&s_idx[..spill]);
        val[write..].copy_from_slice(&s_val[..spill]);
        resp[write..].copy_from_slice(&s_resp[..spill]);
        start + write
    }

    fn build(&mut self, start: usize, end: usize, rng: &mut SimRng) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf(0.0));
        let total: f64 = self.resp[0][start..end].iter().sum();
        let mean = total / (end - start) as f64;
        if end - start <= self.min_node_size {
            self.nodes[id as usize] = Node::Leaf(mean);
            return id;
        }
        self.choose_vars(rng);
        let Some(split) = self.best_split(start, end, total) else {
            self.nodes[id as usize] = Node::Leaf(mean);
            return id;
        };

        for k in start..end {
            let i = self.idx[split.var][k] as usize;
            self.goes_left[i] = self.val[split.var][k] <= split.threshold;
        }
        let mut mid = start;
        for v in 0..self.idx.len() {
            mid = self.partition(v, start, end);
        }
        let left = self.build(start, mid, rng);
        let right = self.build(mid, end, rng);
        self.nodes[id as usize] = Node::Split {
            var: split.var as u32,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// `sorted[v]` lists case indices ordered by variable `v`.
fn grow_tree(
    x: &[Vec<f64>],
    y: &[f64],
    sorted: &[Vec<u32>],
    mtry: usize,
    params: &ForestParams,
    rng: &mut SimRng,
) -> Tree {
    let n = y.len();
    let sample: Vec<u32> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n) as u32).collect()
    } else {
        (0..n as u32).collect()
    };
    let mut counts = vec![0u32; n];
    for &s in &sample {
        counts[s as usize] += 1;
    }
    let p = x.len();
    let mut idx = Vec::with_capacity(p);
    let mut val = Vec::with_capacity(p);
    let mut resp = Vec::with_capacity(p);
    for (col, order) in x.iter().zip(sorted) {
        let mut vi = Vec::with_capacity(n);
        let mut vv = Vec::with_capacity(n);
        let mut vr = Vec::with_capacity(n);
        for &i in order {
            for _ in 0..counts[i as usize] {
                vi.push(i);
                vv.push(col[i as usize]);
                vr.push(y[i as usize]);
            }
        }
        idx.push(vi);
        val.push(vv);
        resp.push(vr);
    }
    let mut builder = Builder {
        mtry,
        min_node_size: params.min_node_size,
        idx,
        val,
        resp,
        goes_left: vec![false; n],
        scratch_idx: vec![0; n],
        scratch_val: vec![0.0; n],
        scratch_resp: vec![0.0; n],
        vars: (0..p).collect(),
        chosen: Vec::with_capacity(p),
        nodes: Vec::new(),
    };
    builder.build(0, n, rng);
    Tree {
        nodes: builder.nodes,
        bootstrap: sample,
    }
}

/// Fits the forest on the `n × p` feature matrix `x`. Tree `t` draws from a
/// stream derived from `(seed, t)`, so the fit is independent of scheduling.
pub fn fit_rf(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} responses", y.len())));
    }
    if p == 0 {
        return Err(Error::Invalid("random forest needs at least one feature".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Invalid("n_trees must be positive".into()));
    }
    if params.min_node_size == 0 || n < params.min_node_size {
        return Err(Error::Invalid(format!(
            "{n} observations for min_node_size {}",
            params.min_node_size
        )));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::Invalid("non-finite training data".into()));
    }
    let mtry = params.mtry.unwrap_or((p / 3).max(1));
    if mtry == 0 || mtry > p {
        return Err(Error::Invalid(format!("mtry {mtry} outside 1..={p}")));
    }
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).iter().copied().collect()).collect();
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|col| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            o
        })
        .collect();
    let trees = (0..params.n_trees)
        .map(|t| grow_tree(&cols, y, &sorted, mtry, params, &mut derive_rng(seed, &[t as u64])))
        .collect();
    Ok(ForestModel {
        trees,
        params: params.clone(),
        mtry,
        columns: (0..p).collect(),
        n_train: n,
    })
}

impl ForestModel {
    /// Mean of the per-tree predictions; `covariates` is indexed through `columns`.
    pub fn predict(&self, covariates: &[f64]) -> f64 {
        let mut buf = [0.0; 16];
        let features: &[f64] = if self.columns.len() <= buf.len() {
            for (b, &j) in buf.iter_mut().zip(&self.columns) {
                *b = covariates[j];
            }
            &buf[..self.columns.len()]
        } else {
            return self.predict_alloc(covariates);
        };
        self.trees.iter().map(|t| t.predict(features)).sum::<f64>() / self.trees.len() as f64
    }

    fn predict_alloc(&self, covariates: &[f64]) -> f64 {
        let features: Vec<f64> = self.columns.iter().map(|&j| covariates[j]).collect();
        self.trees.iter().map(|t| t.predict(&features)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Out-of-bag predictions for the training rows of `x`; `None` where a
    /// case was in-bag for every tree.
    pub fn oob_predictions(&self, x: &DMatrix<f64>) -> Vec<Option<f64>> {
        let n = self.n_train;
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        let mut inbag = vec![false; n];
        let mut row = vec![0.0; x.ncols()];
        for tree in &self.trees {
            inbag.iter_mut().for_each(|b| *b = false);
            for &s in &tree.bootstrap {
                inbag[s as usize] = true;
            }
            for i in (0..n).filter(|&i| !inbag[i]) {
                row.iter_mut().enumerate().for_each(|(j, v)| *v = x[(i, j)]);
                sum[i] += tree.predict(&row);
                count[i] += 1;
            }
        }
        (0..n)
            .map(|i| (count[i] > 0).then(|| sum[i] / count[i] as f64))
            .collect()
    }
}

pub fn rf_predict(model: &ForestModel, covariates: &[f64]) -> f64 {
    model.predict(covariates)
}

/// Out-of-bag MSE and the number of cases skipped for never being out of bag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobError {
    pub mse: f64,
    pub skipped: usize,
}

/// `x`/`y` must be the training data the forest was fitted on.
pub fn rf_oob_mse(model: &ForestModel, x: &DMatrix<f64>, y: &[f64]) -> Result<OobError> {
    if x.nrows() != model.n_train || y.len() != model.n_train {
        return Err(Error::Dimension("OOB error needs the training data".into()));
    }
    let preds = model.oob_predictions(x);
    let mut sse = 0.0;
    let mut used = 0usize;
    for (p, &yi) in preds.iter().zip(y) {
        if let Some(p) = p {
            sse += (yi - p).powi(2);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoOutOfBag);
    }
    Ok(OobError {
        mse: sse / used as f64,
        skipped: model.n_train - used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand_distr::StandardNormal;

    fn uniform_x(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
    }

    #[test]
    fn constant_response_predicts_constant() {
        let x = uniform_x(50, 2, 1);
        let y = vec![3.25; 50];
        let f = fit_rf(
            &x,
            &y,
            &ForestParams {
                n_trees: 20,
                ..Default::default()
            },
            7,
        )
        .unwrap();
        for probe in [[0.1, 0.9], [0.5, 0.5], [2.0, -1.0]] {
            assert_eq!(f.predict(&probe), 3.25);
        }
        assert!(f.trees.iter().all(|t| t.n_leaves() == 1));
        assert_eq!(rf_oob_mse(&f, &x, &y).unwrap().mse, 0.0);
    }

    #[test]
    fn single_leaf_tree_predicts_mean() {
        let x = uniform_x(30, 2, 2);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let params = ForestParams {
            n_trees: 1,
            min_node_size: 30,
            bootstrap: false,
            ..Default::default()
        };
        let f = fit_rf(&x, &y, &params, 0).unwrap();
        assert!((f.predict(&[0.3, 0.3]) - 14.5).abs() < 1e-12);
    }

    #[test]
    fn step_function_is_learned() {
        let x = uniform_x(200, 2, 3);
        let y: Vec<f64> = (0..200).map(|i| if x[(i, 0)] > 0.5 { 1.0 } else { 0.0 }).collect();
        let f = fit_rf(&x, &y, &ForestParams::default(), 11).unwrap();
        let mean = y.iter().sum::<f64>() / 200.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        let mse = (0..200)
            .map(|i| (f.predict(&[x[(i, 0)], x[(i, 1)]]) - y[i]).powi(2))
            .sum::<f64>()
            / 200.0;
        assert!(mse < 0.05 * var, "in-sample MSE {mse} vs var {var}");
    }

    #[test]
    fn predictions_stay_within_response_range() {
        let x = uniform_x(80, 3, 4);
        let mut rng = rng_from_seed(5);
        let y: Vec<f64> = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let f = fit_rf(
            &x,
            &y,
            &ForestParams {
                n_trees: 50,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        for _ in 0..200 {
            let probe = [rng.random::<f64>() * 3.0 - 1.0, rng.random(), rng.random()];
            let p = f.predict(&probe);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn fitting_is_deterministic_given_seed() {
        let x = uniform_x(60, 2, 6);
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)] * 2.0 + x[(i, 1)]).collect();
        let p = ForestParams {
            n_trees: 30,
            ..Default::default()
        };
        let a = fit_rf(&x, &y, &p, 9).unwrap();
        let b = fit_rf(&x, &y, &p, 9).unwrap();
        let c = fit_rf(&x, &y, &p, 10).unwrap();
        let probe = [0.37, 0.61];
        assert_eq!(a.predict(&probe).to_bits(), b.predict(&probe).to_bits());
        assert_ne!(a.predict(&probe).to_bits(), c.predict(&probe).to_bits());
    }

    #[test]
    fn monotone_signal_gives_monotone_predictions() {
        let reps = 10;
        let grid: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
        let mut avg = vec![0.0; grid.len()];
        for r in 0..reps {
            let x = uniform_x(150, 2, 100 + r);
            let mut rng = rng_from_seed(200 + r);
            let y: Vec<f64> = (0..150)
                .map(|i| 4.0 * x[(i, 0)] + 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let f = fit_rf(
                &x,
                &y,
                &ForestParams {
                    n_trees: 100,
                    ..Default::default()
                },
                r,
            )
            .unwrap();
            for (k, &g) in grid.iter().enumerate() {
                avg[k] += f.predict(&[g, 0.5]) / reps as f64;
            }
        }
        assert!(avg.windows(2).all(|w| w[0] < w[1]), "{avg:?}");
    }

    #[test]
    fn every_leaf_has_cases_and_bootstrap_has_size_n() {
        let x = uniform_x(40, 2, 7);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 1)]).collect();
        let f = fit_rf(
            &x,
            &y,
            &ForestParams {
                n_trees: 10,
                min_node_size: 1,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        for t in &f.trees {
            assert_eq!(t.bootstrap.len(), 40);
            assert!(t.nodes.iter().all(|n| match n {
                Node::Leaf(v) => v.is_finite(),
                _ => true,
            }));
        }
    }

    #[test]
    fn oob_skips_nothing_with_many_trees() {
        let x = uniform_x(200, 2, 8);
        let y: Vec<f64> = (0..200).map(|i| x[(i, 0)]).collect();
        let f = fit_rf(&x, &y, &ForestParams::default(), 2).unwrap();
        let oob = rf_oob_mse(&f, &x, &y).unwrap();
        assert_eq!(oob.skipped, 0);
        assert!(oob.mse > 0.0);
    }

    #[test]
    fn oob_requires_out_of_bag_cases() {
        let x = uniform_x(20, 1, 9);
        let y: Vec<f64> = (0..20).map(|i| x[(i, 0)]).collect();
        let p = ForestParams {
            n_trees: 5,
            bootstrap: false,
            ..Default::default()
        };
        let f = fit_rf(&x, &y, &p, 1).unwrap();
        assert!(matches!(rf_oob_mse(&f, &x, &y), Err(Error::NoOutOfBag)));
    }

    #[test]
    fn input_validation() {
        let x = uniform_x(3, 1, 1);
        assert!(fit_rf(&x, &[1.0, 2.0, 3.0], &ForestParams::default(), 0).is_err());
        assert!(fit_rf(
            &x,
            &[1.0, 2.0],
            &ForestParams {
                min_node_size: 1,
                ..Default::default()
            },
            0
        )
        .is_err());
    }
}
