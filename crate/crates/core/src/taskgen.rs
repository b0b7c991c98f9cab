//! Validation task generators.
//!
//! Each generator turns a dataset into a [`TaskSet`]: a list of held-out
//! targets, each with the training set a model is refitted on and the
//! descriptor `(x, d)` of the resulting prediction task.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{pairwise_distance, Dataset, Location, ValidationTask};
use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<ValidationTask>,
    pub generator_label: String,
    pub generator_params: Vec<(String, String)>,
}

impl TaskSet {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Task targets, in task order.
    pub fn targets(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.target_index).collect()
    }
}

fn all_but(n: usize, excluded: usize) -> Vec<usize> {
    (0..n).filter(|&j| j != excluded).collect()
}

/// One task per observation trained on all other observations.
pub fn gen_loocv(data: &Dataset) -> Result<TaskSet> {
    let n = data.n();
    let tasks = (0..n)
        .map(|i| ValidationTask::new(i, i, all_but(n, i), data))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSet {
        tasks,
        generator_label: "loocv".into(),
        generator_params: vec![],
    })
}

/// Tasks for a partition: observation `i` is predicted from everything
/// outside `labels[i]`'s group.
fn tasks_from_partition(data: &Dataset, labels: &[usize], k: usize) -> Result<Vec<ValidationTask>> {
    let mut members = vec![Vec::new(); k];
    for (i, &g) in labels.iter().enumerate() {
        members[g].push(i);
    }
    let mut outside: Vec<Vec<usize>> = Vec::with_capacity(k);
    for g in 0..k {
        outside.push((0..data.n()).filter(|&j| labels[j] != g).collect());
    }
    (0..data.n())
        .map(|i| ValidationTask::new(i, i, outside[labels[i]].clone(), data))
        .collect()
}

/// Random partition into `k` folds whose sizes differ by at most one.
pub fn random_folds<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut labels = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        labels[i] = pos % k;
    }
    labels
}

pub fn gen_random_kfold<R: Rng + ?Sized>(data: &Dataset, k: usize, rng: &mut R) -> Result<TaskSet> {
    let n = data.n();
    if k < 2 || k > n {
        return Err(Error::Invalid(format!("k = {k} folds for n = {n} observations")));
    }
    let labels = random_folds(n, k, rng);
    Ok(TaskSet {
        tasks: tasks_from_partition(data, &labels, k)?,
        generator_label: "random_kfold".into(),
        generator_params: vec![("k".into(), k.to_string())],
    })
}

/// Result of k-means clustering of point coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centers: Vec<Location>,
    pub within_ss: f64,
}

fn sq_dist(a: Location, b: Location) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
}

fn nearest_center(p: Location, centers: &[Location]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, &m)| (c, sq_dist(p, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_pp_init<R: Rng + ?Sized>(points: &[Location], k: usize, rng: &mut R) -> Vec<Location> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|&p| sq_dist(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            if d2[pick] == 0.0 {
                pick = d2.iter().position(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centers.push(c);
        for (i, &p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, c));
        }
    }
    centers
}

fn lloyd(points: &[Location], mut centers: Vec<Location>) -> KMeans {
    let k = centers.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let (c, _) = nearest_center(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sx = vec![0.0; k];
        let mut sy = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (i, &p) in points.iter().enumerate() {
            sx[labels[i]] += p.x;
            sy[labels[i]] += p.y;
            count[labels[i]] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centers[c] = Location::new(sx[c] / count[c] as f64, sy[c] / count[c] as f64);
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(points[a], centers[labels[a]])
                            .total_cmp(&sq_dist(points[b], centers[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("points is non-empty");
                centers[c] = points[far];
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let within_ss = points.iter().zip(&labels).map(|(&p, &c)| sq_dist(p, centers[c])).sum();
    KMeans {
        labels,
        centers,
        within_ss,
    }
}

/// Lloyd's k-means with k-means++ seeding, keeping the best of `restarts`
/// runs by within-cluster sum of squares.
pub fn kmeans<R: Rng + ?Sized>(points: &[Location], k: usize, restarts: usize, rng: &mut R) -> Result<KMeans> {
    let mut distinct: Vec<(u64, u64)> = points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        return Err(Error::Invalid(format!(
            "{} distinct locations cannot form {k} clusters",
            distinct.len()
        )));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, kmeans_pp_init(points, k, rng));
        let used = {
            let mut seen = vec![false; k];
            fit.labels.iter().for_each(|&c| seen[c] = true);
            seen.iter().all(|&s| s)
        };
        if used && best.as_ref().map_or(true, |b| fit.within_ss < b.within_ss) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Invalid(format!("k-means could not populate {k} clusters")))
}

/// Leave-one-block-out tasks with blocks from k-means on the coordinates.
pub fn gen_spatial_blocks<R: Rng + ?Sized>(data: &Dataset, k: usize, rng: &mut R) -> Result<TaskSet> {
    if k < 2 {
        return Err(Error::Invalid(format!("{k} spatial block(s) leave no training data")));
    }
    let fit = kmeans(data.locations(), k, KMEANS_RESTARTS, rng)?;
    Ok(TaskSet {
        tasks: tasks_from_partition(data, &fit.labels, k)?,
        generator_label: "spatial_blocks".into(),
        generator_params: vec![("k".into(), k.to_string())],
    })
}

/// How buffered LOO picks its targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSampling {
    /// Concatenated random permutations of the observations, so that every
    /// observation anchors either ⌊n_tasks/n⌋ or ⌈n_tasks/n⌉ tasks.
    #[default]
    Balanced,
    /// Independent uniform draws with replacement.
    Independent,
}

/// Distribution of buffer radii; every radius is capped at the target's `r_max`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BufferRadii {
    /// `u ~ U(0, r_max)`.
    #[default]
    Uniform,
    /// `u` drawn from the given prediction distances, typically those of the
    /// deployment tasks.
    Matched(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedParams {
    pub n_tasks: usize,
    pub min_train_frac: f64,
    pub targets: TargetSampling,
    pub radii: BufferRadii,
}

impl Default for BufferedParams {
    fn default() -> Self {
        Self {
            n_tasks: 500,
            min_train_frac: 0.8,
            targets: TargetSampling::Balanced,
            radii: BufferRadii::Uniform,
        }
    }
}

/// Smallest admissible training-set size `⌈frac·n⌉`, clamped to `1..=n−1`.
pub fn min_train_size(n: usize, frac: f64) -> usize {
    ((frac * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n - 1)
}

/// Position of the first element of sorted `s` among those closest to `v`.
fn nearest_first(s: &[f64], v: f64) -> usize {
    let hi = s.partition_point(|&x| x < v);
    let k = if hi == 0 {
        0
    } else if hi == s.len() || v - s[hi - 1] <= s[hi] - v {
        hi - 1
    } else {
        hi
    };
    s.partition_point(|&x| x < s[k])
}

/// Leave-m-out tasks with random buffer radii.
///
/// For target `i` with sorted distances `s₁ ≤ … ≤ s_{n−1}` to the other
/// observations, `r_max = s_{n−m}` where `m` is the minimum training size.
/// A radius `u ~ U(0, r_max)` is drawn and the model trains on every
/// observation farther than `u` from the target. With matched radii a
/// reference distance is drawn instead, and `u` is set just below the
/// admissible neighbour distance closest to it, so that the task's
/// prediction distance reproduces the draw as far as the sample allows.
pub fn gen_buffered_loo<R: Rng + ?Sized>(data: &Dataset, params: &BufferedParams, rng: &mut R) -> Result<TaskSet> {
    let n = data.n();
    if n < 5 {
        return Err(Error::Invalid(format!("buffered LOO needs n ≥ 5, got {n}")));
    }
    if !(params.min_train_frac > 0.0 && params.min_train_frac < 1.0) {
        return Err(Error::Invalid(format!(
            "min_train_frac {} outside (0, 1)",
            params.min_train_frac
        )));
    }
    if params.n_tasks == 0 {
        return Err(Error::Invalid("n_tasks must be positive".into()));
    }
    if let BufferRadii::Matched(d) = &params.radii {
        if d.is_empty() || !d.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Invalid(
                "matched buffer radii need non-empty, finite, non-negative distances".into(),
            ));
        }
    }
    let m = min_train_size(n, params.min_train_frac);
    let locs = data.locations();

    let targets: Vec<usize> = match params.targets {
        TargetSampling::Independent => (0..params.n_tasks).map(|_| rng.random_range(0..n)).collect(),
        TargetSampling::Balanced => {
            let mut out = Vec::with_capacity(params.n_tasks);
            let mut perm: Vec<usize> = (0..n).collect();
            while out.len() < params.n_tasks {
                perm.shuffle(rng);
                out.extend(perm.iter().take(params.n_tasks - out.len()));
            }
            out
        }
    };

    let mut tasks = Vec::with_capacity(params.n_tasks);
    for (task_id, &i) in targets.iter().enumerate() {
        let dist: Vec<f64> = locs.iter().map(|&l| pairwise_distance(locs[i], l)).collect();
        let mut sorted: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[j]).collect();
        sorted.sort_by(f64::total_cmp);
        let r_max = sorted[n - m - 1];
        // With co-located observations r_max can be 0; the task is then plain LOO.
        let mut keep_all = r_max == 0.0;
        let u = match &params.radii {
            BufferRadii::Uniform => rng.random::<f64>() * r_max,
            BufferRadii::Matched(d) => {
                let v = d[rng.random_range(0..d.len())];
                let admissible = &sorted[..n - m];
                let k = nearest_first(admissible, v);
                keep_all |= admissible[k] == 0.0;
                admissible[..k]
                    .iter()
                    .rev()
                    .find(|&&s| s < admissible[k])
                    .copied()
                    .unwrap_or(0.0)
            }
        };
        let train: Vec<usize> = (0..n).filter(|&j| j != i && (dist[j] > u || keep_all)).collect();
        tasks.push(ValidationTask::new(task_id, i, train, data)?);
    }
    Ok(TaskSet {
        tasks,
        generator_label: "buffered_loo".into(),
        generator_params: vec![
            ("n_tasks".into(), params.n_tasks.to_string()),
            ("min_train_frac".into(), params.min_train_frac.to_string()),
            (
                "radii".into(),
                match params.radii {
                    BufferRadii::Uniform => "uniform".into(),
                    BufferRadii::Matched(_) => "matched".into(),
                },
            ),
        ],
    })
}
