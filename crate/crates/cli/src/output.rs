use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Writes a CSV file from a header and string records.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let ctx = || format!("writing {}", path.display());
    w.write_record(header).with_context(ctx)?;
    for row in rows {
        w.write_record(&row).with_context(ctx)?;
    }
    w.flush().with_context(ctx)?;
    Ok(())
}

/// Writes through a core writer function, attaching the path to errors.
pub fn write_with(path: &Path, f: impl FnOnce(BufWriter<File>) -> twcv::Result<()>) -> Result<()> {
    f(create(path)?).with_context(|| format!("writing {}", path.display()))
}

pub fn fmt(v: f64) -> String {
    v.to_string()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config_sha256: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub designs: Vec<&'static str>,
    pub files: Vec<String>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub design: String,
    pub replicate: Option<usize>,
    pub error: String,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: cfg.hash()?,
            master_seed: cfg.experiment.master_seed,
            replicates: cfg.experiment.replicates,
            designs: cfg.designs().iter().map(|d| d.label()).collect(),
            files: Vec::new(),
            failures: Vec::new(),
        })
    }

    /// Records a written file relative to the output directory.
    pub fn add(&mut self, out_dir: &Path, path: &Path) {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.files.push(rel.display().to_string());
    }

    /// Writes `config.toml` and `manifest.json` into the output directory.
    pub fn finish(mut self, cfg: &RunConfig) -> Result<PathBuf> {
        let out = &cfg.out_dir;
        let config_path = out.join("config.toml");
        let mut canonical = cfg.clone();
        canonical.workers = None;
        let mut w = create(&config_path)?;
        w.write_all(canonical.to_toml()?.as_bytes())
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", config_path.display()))?;
        self.add(out, &config_path);
        let path = out.join("manifest.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &self).with_context(|| format!("writing {}", path.display()))?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
