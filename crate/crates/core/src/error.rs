use std::path::PathBuf;

use thiserror::Error;

/// A bin with positive target margin that no validation task falls into.
#[derive(Debug, Clone, PartialEq)]
pub struct EmptyBin {
    pub variable: String,
    pub bin: usize,
    pub target_margin: f64,
}

impl std::fmt::Display for EmptyBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[bin {}] (target margin {:.4})",
            self.variable, self.bin, self.target_margin
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty training pool")]
    EmptyPool,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("non-finite or missing values in {} row(s): {}", .rows.len(), format_rows(.rows))]
    NonFiniteRows { rows: Vec<(usize, usize)> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("insufficient task coverage; empty bins: {}", join_bins(.0))]
    InsufficientCoverage(Vec<EmptyBin>),

    #[error("raking did not converge: max margin deviation {deviation:.3e} after {sweeps} sweeps")]
    RakingDiverged { deviation: f64, sweeps: usize },

    #[error("classification needs both classes present")]
    SingleClass,

    #[error("all cases are in-bag for every tree")]
    NoOutOfBag,
}

fn format_rows(rows: &[(usize, usize)]) -> String {
    rows.iter()
        .map(|(row, line)| format!("row {row} (line {line})"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn join_bins(bins: &[EmptyBin]) -> String {
    bins.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
