use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use twcv::ingest::{ingest_dataset, ingest_grid};
use twcv::models::FittedModel;
use twcv::risk::{
    aggregate, diagnostic_rows, run_experiment, setup_replicate, write_diagnostics, write_results, write_summary,
    DeploymentDomain, PreparedSuite, ReplicateSetup,
};
use twcv::seed::{derive_seed, tags};
use twcv::simfield::{Design, World};
use twcv::Dataset;

use crate::config::{resolve_workers, RunConfig};
use crate::output::{fmt, fmt_opt, write_csv, write_with, Failure, Manifest};

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = resolve_workers(cfg.workers)? {
        if n == 0 {
            bail!("the worker count must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    builder.build().context("starting the worker pool")
}

/// Replicates of every design, computed on the pool and returned in
/// (design, replicate) order.
fn replicates<T: Send>(
    cfg: &RunConfig,
    f: impl Fn(Design, usize) -> Result<T> + Sync,
) -> Result<Vec<(Design, usize, Result<T>)>> {
    let units: Vec<(Design, usize)> = cfg
        .designs()
        .into_iter()
        .flat_map(|d| (0..cfg.experiment.replicates).map(move |r| (d, r)))
        .collect();
    Ok(pool(cfg)?.install(|| units.into_par_iter().map(|(d, r)| (d, r, f(d, r))).collect()))
}

fn replicate_dir(cfg: &RunConfig, design: Design, r: usize) -> std::path::PathBuf {
    cfg.out_dir.join(design.label()).join(format!("replicate_{r:03}"))
}

fn failure(design: Design, replicate: Option<usize>, e: &anyhow::Error) -> Failure {
    warn!("{design} replicate {replicate:?}: {e:#}");
    Failure {
        design: design.label().to_string(),
        replicate,
        error: format!("{e:#}"),
    }
}

fn write_world(path: &Path, world: &World) -> Result<()> {
    let mut header = vec!["node", "x", "y", "x1", "x2"];
    if world.x4.is_some() {
        header.extend(["x3", "x4"]);
    }
    header.extend(["eps", "z"]);
    let rows = (0..world.len()).map(|k| {
        let loc = world.grid[k];
        let mut row = vec![k.to_string(), fmt(loc.x), fmt(loc.y)];
        row.extend(world.covariate_row(k).into_iter().map(fmt));
        row.extend([fmt(world.eps[k]), fmt(world.z[k])]);
        row
    });
    write_csv(path, &header, rows)
}

fn write_sample(path: &Path, data: &Dataset, nodes: &[usize]) -> Result<()> {
    let mut header = vec!["node", "x", "y", data.response_name()];
    header.extend(data.covariate_names().iter().map(String::as_str));
    let rows = (0..data.n()).map(|i| {
        let loc = data.locations()[i];
        let mut row = vec![nodes[i].to_string(), fmt(loc.x), fmt(loc.y), fmt(data.response()[i])];
        row.extend(data.covariate_row(i).into_iter().map(fmt));
        row
    });
    write_csv(path, &header, rows)
}

pub fn simulate(cfg: &RunConfig) -> Result<bool> {
    let mut manifest = Manifest::new("simulate", cfg)?;
    let out = replicates(cfg, |d, r| Ok(setup_replicate(&cfg.experiment_for(d), r)?))?;
    for (design, r, setup) in out {
        match setup {
            Ok(setup) => {
                let dir = replicate_dir(cfg, design, r);
                let world = dir.join("world.csv");
                write_world(&world, &setup.world)?;
                manifest.add(&cfg.out_dir, &world);
                let sample = dir.join("sample.csv");
                write_sample(&sample, &setup.sample.dataset, &setup.sample.nodes)?;
                manifest.add(&cfg.out_dir, &sample);
            }
            Err(e) => manifest.failures.push(failure(design, Some(r), &e)),
        }
    }
    finish(manifest, cfg)
}

fn finish(manifest: Manifest<'_>, cfg: &RunConfig) -> Result<bool> {
    let ok = manifest.failures.is_empty();
    let path = manifest.finish(cfg)?;
    info!("wrote {}", path.display());
    Ok(ok)
}

fn prepared(cfg: &RunConfig, design: Design, r: usize) -> Result<(ReplicateSetup, PreparedSuite)> {
    let exp = cfg.experiment_for(design);
    let setup = setup_replicate(&exp, r)?;
    let suite = PreparedSuite::prepare(
        &setup.sample.dataset,
        &setup.domain,
        &exp.estimators,
        &exp.suite,
        setup.seed,
    );
    Ok((setup, suite))
}

pub fn tasks(cfg: &RunConfig) -> Result<bool> {
    let mut manifest = Manifest::new("tasks", cfg)?;
    let out = replicates(cfg, |d, r| prepared(cfg, d, r))?;
    let covariates = cfg.experiment.scenario.covariate_names();
    let mut header = vec![
        "design",
        "replicate",
        "generator",
        "task_id",
        "target_index",
        "train_size",
        "d",
    ];
    header.extend(covariates.iter().map(String::as_str));
    let mut rows = Vec::new();
    for (design, r, prep) in out {
        let (_, suite) = match prep {
            Ok(p) => p,
            Err(e) => {
                manifest.failures.push(failure(design, Some(r), &e));
                continue;
            }
        };
        for (gen, ts) in &suite.task_sets {
            let ts = match ts {
                Ok(ts) => ts,
                Err(e) => {
                    let e = anyhow::anyhow!("{} task generation failed: {e}", gen.label());
                    manifest.failures.push(failure(design, Some(r), &e));
                    continue;
                }
            };
            for t in &ts.tasks {
                let mut row = vec![
                    design.label().to_string(),
                    r.to_string(),
                    ts.generator_label.clone(),
                    t.task_id.to_string(),
                    t.target_index.to_string(),
                    t.train_indices.len().to_string(),
                    fmt(t.descriptor.d),
                ];
                row.extend(t.descriptor.covariates.iter().map(|&v| fmt(v)));
                rows.push(row);
            }
        }
    }
    let path = cfg.out_dir.join("tasks.csv");
    write_csv(&path, &header, rows)?;
    manifest.add(&cfg.out_dir, &path);
    finish(manifest, cfg)
}

const WEIGHTS_HEADER: [&str; 4] = ["estimator", "task_id", "raw_weight", "shrunk_weight"];

fn weight_rows(suite: &PreparedSuite, prefix: &[String]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for &est in &suite.estimators {
        let (Some(gen), Ok(info)) = (est.generator(), &suite.weights[&est]) else {
            continue;
        };
        let Some(ts) = suite.tasks(gen) else { continue };
        for ((t, raw), w) in ts
            .tasks
            .iter()
            .zip(info.raw_weights.as_slice())
            .zip(info.weights.as_slice())
        {
            let mut row = prefix.to_vec();
            row.extend([est.label().to_string(), t.task_id.to_string(), fmt(*raw), fmt(*w)]);
            rows.push(row);
        }
    }
    rows
}

pub fn weights(cfg: &RunConfig) -> Result<bool> {
    let mut manifest = Manifest::new("weights", cfg)?;
    let out = replicates(cfg, |d, r| prepared(cfg, d, r))?;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (design, r, prep) in out {
        match prep {
            Ok((_, suite)) => {
                rows.extend(weight_rows(&suite, &[design.label().to_string(), r.to_string()]));
                diagnostics.extend(diagnostic_rows(&suite, r, design));
            }
            Err(e) => manifest.failures.push(failure(design, Some(r), &e)),
        }
    }
    let mut header = vec!["design", "replicate"];
    header.extend(WEIGHTS_HEADER);
    let path = cfg.out_dir.join("weights.csv");
    write_csv(&path, &header, rows)?;
    manifest.add(&cfg.out_dir, &path);
    let path = cfg.out_dir.join("diagnostics.csv");
    write_with(&path, |w| write_diagnostics(&diagnostics, w))?;
    manifest.add(&cfg.out_dir, &path);
    finish(manifest, cfg)
}

pub fn experiment(cfg: &RunConfig) -> Result<bool> {
    let mut manifest = Manifest::new("experiment", cfg)?;
    let pool = pool(cfg)?;
    let mut results = Vec::new();
    let mut diagnostics = Vec::new();
    for design in cfg.designs() {
        let exp = cfg.experiment_for(design);
        let out = pool.install(|| run_experiment(&exp))?;
        for (r, e) in &out.failures {
            manifest
                .failures
                .push(failure(design, Some(*r), &anyhow::anyhow!("{e}")));
        }
        results.extend(out.results);
        diagnostics.extend(out.diagnostics);
    }
    let out = &cfg.out_dir;
    let path = out.join("results.csv");
    write_with(&path, |w| write_results(&results, w))?;
    manifest.add(out, &path);
    let path = out.join("summary.csv");
    write_with(&path, |w| write_summary(&aggregate(&results), w))?;
    manifest.add(out, &path);
    let path = out.join("diagnostics.csv");
    write_with(&path, |w| write_diagnostics(&diagnostics, w))?;
    manifest.add(out, &path);
    finish(manifest, cfg)
}

/// Every covariate the configured models and balancing schemes need must be
/// read from the input files.
fn check_columns(cfg: &RunConfig) -> Result<()> {
    let exp = &cfg.experiment;
    let suite = &exp.suite;
    let needed = exp
        .predictors
        .iter()
        .chain(&suite.distance_variables)
        .chain(&suite.base_variables)
        .chain(&suite.extended_variables);
    for name in needed {
        if name != twcv::data::DISTANCE_LABEL && !cfg.evaluate.covariates.contains(name) {
            bail!("variable `{name}` is used by the configuration but not listed in evaluate.covariates");
        }
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, dataset: &Path, grid: &Path) -> Result<bool> {
    check_columns(cfg)?;
    let ev = &cfg.evaluate;
    let exp = &cfg.experiment;
    let data = ingest_dataset(dataset, &ev.x_column, &ev.y_column, &ev.response_column, &ev.covariates)
        .with_context(|| format!("reading dataset {}", dataset.display()))?;
    let grid = ingest_grid(grid, &ev.x_column, &ev.y_column, &ev.covariates)
        .with_context(|| format!("reading grid {}", grid.display()))?;
    let domain = DeploymentDomain::new(grid.locations, grid.covariates, &grid.covariate_names, data.locations())?;
    let seed = exp.master_seed;
    let mut manifest = Manifest::new("evaluate", cfg)?;

    let (suite, estimates) = pool(cfg)?.install(|| -> Result<_> {
        let suite = PreparedSuite::prepare(&data, &domain, &exp.estimators, &exp.suite, seed);
        let mut estimates = Vec::new();
        for (m, &kind) in exp.models.iter().enumerate() {
            let spec = kind.spec(&exp.predictors, &exp.forest);
            let full: FittedModel = match spec.fit(&data, derive_seed(seed, &[tags::MODEL, m as u64])) {
                Ok(f) => f,
                Err(e) => {
                    let e = anyhow::anyhow!("{kind} fit failed: {e}");
                    warn!("{e}");
                    manifest.failures.push(Failure {
                        design: String::new(),
                        replicate: None,
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let task_seed = derive_seed(seed, &[tags::TASK_FIT, m as u64]);
            for est in suite.evaluate(&data, &domain, &spec, &full, &exp.suite, task_seed) {
                estimates.push((kind, est));
            }
        }
        Ok((suite, estimates))
    })?;

    for (est, w) in &suite.weights {
        if let Err(e) = w {
            warn!("{}: {e}", est.label());
        }
    }
    let out = &cfg.out_dir;
    let path = out.join("estimates.csv");
    let header = [
        "model",
        "estimator",
        "rmse_estimate",
        "ess_fraction",
        "p95_weight",
        "n_failed_tasks",
        "status",
    ];
    let rows = estimates.iter().map(|(kind, e)| {
        vec![
            kind.label().to_string(),
            e.estimator.label().to_string(),
            fmt_opt(e.rmse_estimate),
            fmt_opt(e.ess_fraction),
            fmt_opt(e.p95_weight),
            e.n_failed_tasks.to_string(),
            e.status.clone(),
        ]
    });
    write_csv(&path, &header, rows)?;
    manifest.add(out, &path);

    let path = out.join("weights.csv");
    write_csv(&path, &WEIGHTS_HEADER, weight_rows(&suite, &[]))?;
    manifest.add(out, &path);

    let path = out.join("diagnostics.csv");
    let header = [
        "estimator",
        "n_tasks",
        "ess",
        "ess_fraction",
        "p95_relative_weight",
        "max_margin_residual",
        "status",
    ];
    let rows = diagnostic_rows(&suite, 0, exp.scenario.design).into_iter().map(|d| {
        vec![
            d.estimator.label().to_string(),
            d.n_tasks.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt(d.ess),
            fmt_opt(d.ess_fraction),
            fmt_opt(d.p95_relative_weight),
            fmt_opt(d.max_margin_residual),
            d.status,
        ]
    });
    write_csv(&path, &header, rows)?;
    manifest.add(out, &path);
    finish(manifest, cfg)
}
