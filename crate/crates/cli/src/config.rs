use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use twcv::risk::ExperimentConfig;
use twcv::simfield::Design;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "TWCV_WORKERS";

/// Contents of a run configuration file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Worker threads; unset means one per core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Designs to run; empty means the scenario's design only.
    pub designs: Vec<Design>,
    pub experiment: ExperimentConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            workers: None,
            designs: Vec::new(),
            experiment: ExperimentConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Column layout of user-supplied dataset and grid files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub x_column: String,
    pub y_column: String,
    pub response_column: String,
    /// Covariates read from both files.
    pub covariates: Vec<String>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            x_column: "x".into(),
            y_column: "y".into(),
            response_column: "z".into(),
            covariates: ["x1", "x2", "x3", "x4"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub replicates: Option<usize>,
    pub design: Option<Design>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.experiment.master_seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(r) = o.replicates {
            self.experiment.replicates = r;
        }
        if let Some(d) = o.design {
            self.designs = vec![d];
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
    }

    pub fn designs(&self) -> Vec<Design> {
        if self.designs.is_empty() {
            vec![self.experiment.scenario.design]
        } else {
            self.designs.clone()
        }
    }

    /// The experiment configuration for one design.
    pub fn experiment_for(&self, design: Design) -> ExperimentConfig {
        let mut cfg = self.experiment.clone();
        cfg.scenario.design = design;
        cfg
    }

    /// SHA-256 of the canonical serialization, excluding settings that
    /// cannot change outputs.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.workers = None;
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }
}

/// Worker count from flags or file, else the environment; `None` means one
/// per core.
pub fn resolve_workers(configured: Option<usize>) -> Result<Option<usize>> {
    if configured.is_some() {
        return Ok(configured);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n = v
                .trim()
                .parse()
                .with_context(|| format!("{WORKERS_ENV}={v} is not a worker count"))?;
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}
