//! Shared data model: locations, datasets, task descriptors and the
//! deployment task set.
//!
//! Distances are planar Euclidean throughout, so ingested coordinates must
//! already be in a projected reference system.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of the prediction-distance descriptor in balancing specifications.
pub const DISTANCE_LABEL: &str = "d";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

pub fn pairwise_distance(a: Location, b: Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Distance from `target` to its nearest neighbour in `pool`.
pub fn nn_distance(target: Location, pool: &[Location]) -> Result<f64> {
    pool.iter()
        .map(|&p| pairwise_distance(target, p))
        .reduce(f64::min)
        .ok_or(Error::EmptyPool)
}

/// Nearest-neighbour distance restricted to the pool members listed in `indices`.
pub fn nn_distance_subset(target: Location, pool: &[Location], indices: &[usize]) -> Result<f64> {
    indices
        .iter()
        .map(|&j| pairwise_distance(target, pool[j]))
        .reduce(f64::min)
        .ok_or(Error::EmptyPool)
}

/// Training sample: locations, an `n × p` covariate matrix and the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    locations: Vec<Location>,
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    response: Vec<f64>,
    response_name: String,
}

impl Dataset {
    pub fn new(
        locations: Vec<Location>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        response: Vec<f64>,
    ) -> Result<Self> {
        let n = locations.len();
        if n < 2 {
            return Err(Error::Invalid(format!(
                "a dataset needs at least 2 observations, got {n}"
            )));
        }
        if covariates.nrows() != n || response.len() != n {
            return Err(Error::Dimension(format!(
                "{} locations, {} covariate rows, {} responses",
                n,
                covariates.nrows(),
                response.len()
            )));
        }
        if covariates.ncols() != covariate_names.len() {
            return Err(Error::Dimension(format!(
                "{} covariate columns but {} names",
                covariates.ncols(),
                covariate_names.len()
            )));
        }
        for (i, name) in covariate_names.iter().enumerate() {
            if covariate_names[..i].contains(name) {
                return Err(Error::Invalid(format!("duplicate covariate name `{name}`")));
            }
            if name == DISTANCE_LABEL {
                return Err(Error::Invalid(format!(
                    "covariate name `{DISTANCE_LABEL}` is reserved for prediction distance"
                )));
            }
        }
        if !locations.iter().all(Location::is_finite)
            || !covariates.iter().all(|v| v.is_finite())
            || !response.iter().all(|v| v.is_finite())
        {
            return Err(Error::Invalid("dataset contains non-finite values".into()));
        }
        Ok(Self {
            locations,
            covariates,
            covariate_names,
            response,
            response_name: "z".into(),
        })
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn covariate_row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Rows `indices` as a new dataset (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let locations = indices.iter().map(|&i| self.locations[i]).collect();
        let covariates = self.covariates.select_rows(indices);
        let response = indices.iter().map(|&i| self.response[i]).collect();
        Ok(
            Self::new(locations, covariates, self.covariate_names.clone(), response)?
                .with_response_name(self.response_name.clone()),
        )
    }
}

/// Descriptor `(x, d)` of one prediction task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub covariates: Vec<f64>,
    pub d: f64,
}

/// A held-out evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTask {
    pub task_id: usize,
    pub target_index: usize,
    pub train_indices: Vec<usize>,
    pub descriptor: TaskDescriptor,
}

impl ValidationTask {
    /// Builds the task, computing `d` from the training set.
    pub fn new(task_id: usize, target_index: usize, mut train_indices: Vec<usize>, data: &Dataset) -> Result<Self> {
        if train_indices.is_empty() {
            return Err(Error::EmptyPool);
        }
        train_indices.sort_unstable();
        if train_indices.binary_search(&target_index).is_ok() {
            return Err(Error::Invalid(format!(
                "task {task_id}: target {target_index} is in its own training set"
            )));
        }
        let d = nn_distance_subset(data.locations()[target_index], data.locations(), &train_indices)?;
        Ok(Self {
            task_id,
            target_index,
            train_indices,
            descriptor: TaskDescriptor {
                covariates: data.covariate_row(target_index),
                d,
            },
        })
    }
}

/// Deployment task descriptors over the target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTaskSet {
    pub covariate_names: Vec<String>,
    pub descriptors: Vec<TaskDescriptor>,
}

impl TargetTaskSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Deployment tasks for every grid location; `d` is measured against the
/// full training sample because the deployed model is fitted on all data.
pub fn build_deployment_tasks(
    grid_locations: &[Location],
    grid_covariates: &DMatrix<f64>,
    covariate_names: &[String],
    training_locations: &[Location],
) -> Result<TargetTaskSet> {
    if training_locations.is_empty() {
        return Err(Error::EmptyPool);
    }
    if grid_locations.is_empty() {
        return Err(Error::Invalid("deployment grid is empty".into()));
    }
    if grid_covariates.nrows() != grid_locations.len() {
        return Err(Error::Dimension(format!(
            "{} grid locations but {} covariate rows",
            grid_locations.len(),
            grid_covariates.nrows()
        )));
    }
    if grid_covariates.ncols() != covariate_names.len() {
        return Err(Error::Dimension(format!(
            "{} grid covariate columns but {} names",
            grid_covariates.ncols(),
            covariate_names.len()
        )));
    }
    let descriptors = grid_locations
        .iter()
        .enumerate()
        .map(|(u, &loc)| {
            Ok(TaskDescriptor {
                covariates: grid_covariates.row(u).iter().copied().collect(),
                d: nn_distance(loc, training_locations)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetTaskSet {
        covariate_names: covariate_names.to_vec(),
        descriptors,
    })
}

/// A scalar read from a task descriptor: one covariate or the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorColumn {
    Covariate(usize),
    Distance,
}

impl DescriptorColumn {
    pub fn resolve(covariate_names: &[String], label: &str) -> Result<Self> {
        if label == DISTANCE_LABEL {
            return Ok(Self::Distance);
        }
        covariate_names
            .iter()
            .position(|c| c == label)
            .map(Self::Covariate)
            .ok_or_else(|| Error::UnknownVariable(label.to_string()))
    }

    pub fn value(&self, descriptor: &TaskDescriptor) -> f64 {
        match *self {
            Self::Covariate(j) => descriptor.covariates[j],
            Self::Distance => descriptor.d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn loc(x: f64, y: f64) -> Location {
        Location::new(x, y)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(pairwise_distance(loc(0.0, 0.0), loc(0.0, 0.0)), 0.0);
        assert_eq!(pairwise_distance(loc(0.0, 0.0), loc(3.0, 4.0)), 5.0);
        assert!((pairwise_distance(loc(0.2, 0.2), loc(0.2, 0.7)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nn_distance_examples() {
        let pool = [loc(0.0, 0.3), loc(1.0, 1.0)];
        assert!((nn_distance(loc(0.0, 0.0), &pool).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(nn_distance(loc(1.0, 1.0), &pool).unwrap(), 0.0);
        assert!(matches!(nn_distance(loc(0.0, 0.0), &[]), Err(Error::EmptyPool)));
    }

    #[test]
    fn nn_distance_on_dense_grid_is_within_half_spacing() {
        let side = 100;
        let spacing = 0.01;
        let grid: Vec<Location> = (0..side * side)
            .map(|k| loc((k % side) as f64 * spacing, (k / side) as f64 * spacing))
            .collect();
        for target in [loc(0.5, 0.5), loc(0.123, 0.877), loc(0.995, 0.0)] {
            let d = nn_distance(target, &grid).unwrap();
            let brute = grid
                .iter()
                .map(|g| ((g.x - target.x).powi(2) + (g.y - target.y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((d - brute).abs() < 1e-15);
            assert!(d <= spacing / 2.0 + 1e-12);
        }
    }

    #[test]
    fn deployment_tasks_examples() {
        let names = vec!["x1".to_string()];
        let tasks = build_deployment_tasks(
            &[loc(0.1, 0.1)],
            &DMatrix::from_row_slice(1, 1, &[0.5]),
            &names,
            &[loc(0.1, 0.1)],
        )
        .unwrap();
        assert_eq!(tasks.descriptors[0].d, 0.0);

        let grid = [loc(0.0, 0.0), loc(1.0, 0.0), loc(0.3, 0.4)];
        let tasks = build_deployment_tasks(
            &grid,
            &DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]),
            &names,
            &[loc(0.0, 0.0)],
        )
        .unwrap();
        let expected = [0.0, 1.0, 0.5];
        for (t, e) in tasks.descriptors.iter().zip(expected) {
            assert!((t.d - e).abs() < 1e-15);
        }
        assert_eq!(tasks.descriptors[1].covariates, vec![2.0]);

        let err = build_deployment_tasks(
            &grid,
            &DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            &names,
            &[loc(0.0, 0.0)],
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn deployment_tasks_on_a_fine_grid() {
        let side = 100;
        let grid: Vec<Location> = (0..side * side)
            .map(|k| loc((k % side) as f64 / 99.0, (k / side) as f64 / 99.0))
            .collect();
        let cov = DMatrix::from_fn(grid.len(), 1, |i, _| grid[i].x);
        let train: Vec<Location> = (0..200).map(|i| loc(i as f64 / 199.0, 0.5)).collect();
        let tasks = build_deployment_tasks(&grid, &cov, &["x1".into()], &train).unwrap();
        assert_eq!(tasks.len(), 10_000);
    }

    #[test]
    fn dataset_validation() {
        let locs = vec![loc(0.0, 0.0), loc(1.0, 0.0)];
        let cov = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(Dataset::new(locs.clone(), cov.clone(), vec!["a".into()], vec![0.0, 1.0]).is_ok());
        assert!(Dataset::new(locs[..1].to_vec(), cov.rows(0, 1).into(), vec!["a".into()], vec![0.0]).is_err());
        assert!(Dataset::new(locs.clone(), cov.clone(), vec!["a".into()], vec![0.0, f64::NAN]).is_err());
        assert!(Dataset::new(locs.clone(), cov.clone(), vec!["d".into()], vec![0.0, 1.0]).is_err());
        let cov2 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(Dataset::new(locs, cov2, vec!["a".into(), "a".into()], vec![0.0, 1.0]).is_err());
    }

    fn arb_locations(max: usize) -> impl Strategy<Value = Vec<Location>> {
        prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..max)
            .prop_map(|v| v.into_iter().map(|(x, y)| loc(x, y)).collect())
    }

    proptest! {
        #[test]
        fn nn_distance_is_a_lower_bound(pool in arb_locations(30), tx in 0.0..1.0f64, ty in 0.0..1.0f64) {
            let t = loc(tx, ty);
            let d = nn_distance(t, &pool).unwrap();
            for &p in &pool {
                prop_assert!(d <= pairwise_distance(t, p));
            }
            prop_assert!(pool.iter().any(|&p| pairwise_distance(t, p) == d));
        }

        #[test]
        fn deployment_tasks_ignore_training_order(
            train in arb_locations(20),
            grid in arb_locations(20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let cov = DMatrix::from_fn(grid.len(), 1, |i, _| grid[i].x);
            let names = vec!["x1".to_string()];
            let a = build_deployment_tasks(&grid, &cov, &names, &train).unwrap();
            let mut shuffled = train.clone();
            shuffled.shuffle(&mut crate::seed::rng_from_seed(seed));
            let b = build_deployment_tasks(&grid, &cov, &names, &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
