//! Deployment-risk estimation for spatial prediction models.
//!
//! Cross-validation is treated as two stages: a task generator that produces
//! held-out validation tasks ([`taskgen`]) and a risk estimator that aggregates
//! their losses ([`risk`]). Target-weighted CV reweights the validation losses
//! so that the weighted distribution of task descriptors (covariates plus
//! prediction distance) matches the distribution of prediction tasks over a
//! deployment domain ([`calibration`]). Importance-weighted CV via
//! probabilistic classification is provided as a baseline
//! ([`density_ratio`]), together with the simulation machinery ([`simfield`])
//! and prediction models ([`models`]) needed to run the Monte Carlo harness.

pub mod calibration;
pub mod data;
pub mod density_ratio;
pub mod error;
pub mod ingest;
pub mod models;
pub mod risk;
pub mod seed;
pub mod simfield;
pub mod taskgen;

pub use data::{
    build_deployment_tasks, nn_distance, pairwise_distance, Dataset, DescriptorColumn, Location, TargetTaskSet,
    TaskDescriptor, ValidationTask,
};
pub use error::{Error, Result};
