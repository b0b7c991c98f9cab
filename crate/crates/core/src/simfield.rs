//! Gaussian random fields, the simulated world and the three sampling designs.
//!
//! Fields are drawn exactly by a dense Cholesky factor of the exponential
//! covariance matrix. Factors for a given grid and covariance are cached per
//! process because every replicate of an experiment reuses them.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{pairwise_distance, Dataset, Location};
use crate::error::{Error, Result};

/// Range of the auxiliary predictor fields `x2` and `x4`.
pub const AUX_FIELD_RANGE: f64 = 0.2;
pub const N_CLUSTERS: usize = 10;
/// Standard deviation of offspring offsets around cluster parents.
pub const CLUSTER_SD: f64 = 0.05;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Exponential covariance `sill · exp(−h/range)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub range: f64,
    pub sill: f64,
}

impl CovarianceSpec {
    pub fn new(range: f64, sill: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) || !(sill > 0.0 && sill.is_finite()) {
            return Err(Error::Invalid(format!(
                "covariance needs range > 0 and sill > 0 (got {range}, {sill})"
            )));
        }
        Ok(Self { range, sill })
    }
}

pub fn exp_covariance(h: f64, spec: CovarianceSpec) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::Invalid(format!("negative lag {h}")));
    }
    Ok(spec.sill * (-h / spec.range).exp())
}

/// Factorized covariance over a fixed set of locations, ready for repeated draws.
pub struct GrfSampler {
    factor: Cholesky<f64, Dyn>,
    /// location index → row of the factor (coincident locations share a row)
    map: Vec<usize>,
    jitter: f64,
}

impl GrfSampler {
    pub fn new(locations: &[Location], spec: CovarianceSpec) -> Result<Self> {
        if !locations.iter().all(Location::is_finite) {
            return Err(Error::Invalid("non-finite location".into()));
        }
        let mut unique: Vec<Location> = Vec::new();
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        let map = locations
            .iter()
            .map(|l| {
                *seen.entry((l.x.to_bits(), l.y.to_bits())).or_insert_with(|| {
                    unique.push(*l);
                    unique.len() - 1
                })
            })
            .collect();
        let m = unique.len();
        let build = |jitter: f64| {
            DMatrix::from_fn(m, m, |i, j| {
                let c = spec.sill * (-pairwise_distance(unique[i], unique[j]) / spec.range).exp();
                if i == j {
                    c + jitter
                } else {
                    c
                }
            })
        };
        let mut jitter = 0.0;
        loop {
            if let Some(factor) = Cholesky::new(build(jitter)) {
                return Ok(Self { factor, map, jitter });
            }
            jitter = if jitter == 0.0 {
                JITTER_START * spec.sill
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * spec.sill * (1.0 + 1e-9) {
                return Err(Error::Factorization(format!(
                    "covariance over {m} locations not positive definite with jitter up to {:e}",
                    JITTER_MAX * spec.sill
                )));
            }
        }
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = self.factor.l_dirty();
        let m = l.nrows();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mut v = vec![0.0; m];
        for (j, &zj) in z.iter().enumerate() {
            let col = l.column(j);
            for i in j..m {
                v[i] += col[i] * zj;
            }
        }
        self.map.iter().map(|&k| v[k]).collect()
    }
}

/// One draw from the mean-zero field with exponential covariance.
pub fn simulate_grf<R: Rng + ?Sized>(locations: &[Location], spec: CovarianceSpec, rng: &mut R) -> Result<Vec<f64>> {
    Ok(GrfSampler::new(locations, spec)?.sample(rng))
}

type CacheKey = (usize, u64, u64);

fn sampler_cache() -> &'static Mutex<HashMap<CacheKey, Arc<GrfSampler>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<GrfSampler>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached sampler for the regular `side × side` grid.
pub fn grid_sampler(side: usize, spec: CovarianceSpec) -> Result<Arc<GrfSampler>> {
    let key = (side, spec.range.to_bits(), spec.sill.to_bits());
    let mut cache = sampler_cache().lock().unwrap_or_else(|e| e.into_inner());
    if let Some(s) = cache.get(&key) {
        return Ok(Arc::clone(s));
    }
    let sampler = Arc::new(GrfSampler::new(&grid_locations(side), spec)?);
    cache.insert(key, Arc::clone(&sampler));
    Ok(sampler)
}

/// Node `iy * side + ix` sits at `(ix, iy) / (side − 1)`.
pub fn grid_locations(side: usize) -> Vec<Location> {
    let step = 1.0 / (side - 1) as f64;
    (0..side * side)
        .map(|k| Location::new((k % side) as f64 * step, (k / side) as f64 * step))
        .collect()
}

/// Residual standard deviation: variance `0.4 + 1.2·s.x`, fourfold from left to right.
pub fn residual_sd(s: Location) -> f64 {
    (0.4 + 1.2 * s.x).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Random,
    Clustered,
    Biased,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Random, Design::Clustered, Design::Biased];

    pub fn label(&self) -> &'static str {
        match self {
            Design::Random => "random",
            Design::Clustered => "clustered",
            Design::Biased => "biased",
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL.into_iter().find(|d| d.label() == s).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown design `{s}`; valid designs: random, clustered, biased"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub n: usize,
    pub design: Design,
    pub grid_side: usize,
    pub include_extra_predictors: bool,
}

impl Default for ScenarioConfig {
    /// Strong-trend, `ρ = 0.1` scenario with `n = 200` on a 60 × 60 grid.
    fn default() -> Self {
        Self {
            beta0: 0.0,
            beta1: 3.0,
            beta2: 1.0,
            rho: 0.1,
            n: 200,
            design: Design::Random,
            grid_side: 60,
            include_extra_predictors: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("sample size must be positive".into()));
        }
        if self.grid_side < 10 {
            return Err(Error::Invalid(format!(
                "grid_side must be at least 10, got {}",
                self.grid_side
            )));
        }
        if self.n > self.grid_side * self.grid_side {
            return Err(Error::Invalid(format!(
                "n = {} exceeds the {} grid nodes",
                self.n,
                self.grid_side * self.grid_side
            )));
        }
        CovarianceSpec::new(self.rho, 1.0)?;
        for b in [self.beta0, self.beta1, self.beta2] {
            if !b.is_finite() {
                return Err(Error::Invalid("non-finite trend coefficient".into()));
            }
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let names: &[&str] = if self.include_extra_predictors {
            &["x1", "x2", "x3", "x4"]
        } else {
            &["x1", "x2"]
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Simulated ground truth on the grid.
#[derive(Debug, Clone)]
pub struct World {
    pub grid_side: usize,
    pub grid: Vec<Location>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
    pub x4: Option<Vec<f64>>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

impl World {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let mut names = vec!["x1".to_string(), "x2".to_string()];
        if self.x4.is_some() {
            names.extend(["x3".to_string(), "x4".to_string()]);
        }
        names
    }

    pub fn covariate_row(&self, node: usize) -> Vec<f64> {
        let mut row = vec![self.x1[node], self.x2[node]];
        if let Some(x4) = &self.x4 {
            row.extend([self.x3[node], x4[node]]);
        }
        row
    }

    /// Grid covariates in the column order of [`World::covariate_names`].
    pub fn covariate_matrix(&self) -> DMatrix<f64> {
        let p = self.covariate_names().len();
        DMatrix::from_fn(self.len(), p, |i, j| self.covariate_row(i)[j])
    }
}

pub fn make_world<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<World> {
    cfg.validate()?;
    let side = cfg.grid_side;
    let grid = grid_locations(side);
    let aux = grid_sampler(side, CovarianceSpec::new(AUX_FIELD_RANGE, 1.0)?)?;
    let resid = grid_sampler(side, CovarianceSpec::new(cfg.rho, 1.0)?)?;

    let x2 = aux.sample(rng);
    let eps0 = resid.sample(rng);
    let x4 = cfg.include_extra_predictors.then(|| aux.sample(rng));

    let x1: Vec<f64> = grid.iter().map(|s| s.x).collect();
    let x3: Vec<f64> = grid.iter().map(|s| s.y).collect();
    let eps: Vec<f64> = grid.iter().zip(&eps0).map(|(&s, e)| residual_sd(s) * e).collect();
    let z = (0..grid.len())
        .map(|k| cfg.beta0 + cfg.beta1 * x1[k] + cfg.beta2 * x2[k] + eps[k])
        .collect();
    Ok(World {
        grid_side: side,
        grid,
        x1,
        x2,
        x3,
        x4,
        eps,
        z,
    })
}

/// A sample drawn from a world: the dataset plus the grid node of each row.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dataset: Dataset,
    pub nodes: Vec<usize>,
}

fn reflect_unit(mut v: f64) -> f64 {
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > 1.0 {
            v = 2.0 - v;
        } else {
            return v;
        }
    }
}

struct Snapper<'a> {
    side: usize,
    grid: &'a [Location],
    taken: Vec<bool>,
}

impl Snapper<'_> {
    /// Nearest untaken node to `s` (ties to the lowest node index).
    fn snap(&mut self, s: Location) -> usize {
        let step = (self.side - 1) as f64;
        let ix = (s.x * step).round().clamp(0.0, step) as usize;
        let iy = (s.y * step).round().clamp(0.0, step) as usize;
        let mut node = iy * self.side + ix;
        if self.taken[node] {
            node = (0..self.grid.len())
                .filter(|&k| !self.taken[k])
                .map(|k| (pairwise_distance(s, self.grid[k]), k))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, k)| k)
                .expect("n never exceeds the node count");
        }
        self.taken[node] = true;
        node
    }
}

fn uniform_location<R: Rng + ?Sized>(rng: &mut R) -> Location {
    Location::new(rng.random::<f64>(), rng.random::<f64>())
}

/// Draws `cfg.n` distinct grid nodes according to the sampling design.
///
/// Locations are generated in continuous space and snapped to the nearest
/// untaken node, so covariates and response are read exactly from the world.
/// The biased design accepts a uniform proposal with probability
/// `(1 − s.x)²`, oversampling the low-variance western end.
pub fn draw_sample<R: Rng + ?Sized>(world: &World, cfg: &ScenarioConfig, rng: &mut R) -> Result<Sample> {
    if cfg.n > world.len() {
        return Err(Error::Invalid(format!(
            "n = {} exceeds the {} distinct grid nodes",
            cfg.n,
            world.len()
        )));
    }
    if cfg.n < 2 {
        return Err(Error::Invalid("a sample needs at least 2 observations".into()));
    }
    let mut snapper = Snapper {
        side: world.grid_side,
        grid: &world.grid,
        taken: vec![false; world.len()],
    };
    let nodes: Vec<usize> = match cfg.design {
        Design::Random => (0..cfg.n).map(|_| snapper.snap(uniform_location(rng))).collect(),
        Design::Clustered => {
            let parents: Vec<Location> = (0..N_CLUSTERS).map(|_| uniform_location(rng)).collect();
            let base = cfg.n / N_CLUSTERS;
            let extra = cfg.n % N_CLUSTERS;
            let mut nodes = Vec::with_capacity(cfg.n);
            for (c, parent) in parents.iter().enumerate() {
                let size = base + usize::from(c < extra);
                for _ in 0..size {
                    let dx: f64 = rng.sample::<f64, _>(StandardNormal) * CLUSTER_SD;
                    let dy: f64 = rng.sample::<f64, _>(StandardNormal) * CLUSTER_SD;
                    let s = Location::new(reflect_unit(parent.x + dx), reflect_unit(parent.y + dy));
                    nodes.push(snapper.snap(s));
                }
            }
            nodes
        }
        Design::Biased => {
            let mut nodes = Vec::with_capacity(cfg.n);
            while nodes.len() < cfg.n {
                let s = uniform_location(rng);
                if rng.random::<f64>() < (1.0 - s.x).powi(2) {
                    nodes.push(snapper.snap(s));
                }
            }
            nodes
        }
    };
    let locations = nodes.iter().map(|&k| world.grid[k]).collect();
    let names = world.covariate_names();
    let covariates = DMatrix::from_fn(nodes.len(), names.len(), |i, j| world.covariate_row(nodes[i])[j]);
    let response = nodes.iter().map(|&k| world.z[k]).collect();
    Ok(Sample {
        dataset: Dataset::new(locations, covariates, names, response)?,
        nodes,
    })
}
