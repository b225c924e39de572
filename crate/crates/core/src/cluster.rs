//! Feature standardization, k-means with k-means++ seeding, silhouette
//! scoring, and a sweep over the number of clusters.

use std::io::Write;
use std::ops::RangeInclusive;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub input_dim: usize,
    /// Columns of the input kept after dropping zero-variance features.
    pub retained: Vec<usize>,
    pub mean: Vec<f64>,
    /// Population standard deviation of each retained column.
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        self.retained.iter().enumerate().map(|(j, &c)| (row[c] - self.mean[j]) / self.std[j]).collect()
    }

    /// Maps a standardized row back to the retained input columns.
    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, z)| z * self.std[j] + self.mean[j]).collect()
    }
}

/// Z-scores every column; constant columns are dropped with a warning.
pub fn standardize(x: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, StandardizationStats)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFew { what: "rows to standardize", needed: 2, found: n });
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: r.len() });
    }
    let mut retained = Vec::with_capacity(d);
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for c in 0..d {
        let m = x.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        if s > 1e-12 * (1.0 + m.abs()) {
            retained.push(c);
            mean.push(m);
            std.push(s);
        }
    }
    if retained.len() < d {
        log::warn!("dropped {} zero-variance feature(s)", d - retained.len());
    }
    let stats = StandardizationStats { input_dim: d, retained, mean, std };
    let out = x.iter().map(|r| stats.apply(r)).collect();
    Ok((out, stats))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if k > n {
        return Err(Error::TooFew { what: "points for k clusters", needed: k, found: n });
    }
    Ok(())
}

/// Indices of the k-means++ seeds: the first uniformly, each next with
/// probability proportional to its squared distance to the nearest seed so
/// far (uniformly if every point coincides with a seed).
pub fn kmeans_pp_indices(x: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    check_k(x.len(), k)?;
    let n = x.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = x.iter().map(|p| squared_distance(p, &x[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just past the running sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in x.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &x[next]));
        }
    }
    Ok(chosen)
}

pub fn kmeans_pp_init(x: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    Ok(kmeans_pp_indices(x, k, rng)?.into_iter().map(|i| x[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Converged when no centroid moves more than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster label of each input row.
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// `None` when k = 1.
    pub silhouette: Option<f64>,
    pub stats: Option<StandardizationStats>,
    /// Seed of the winning restart.
    pub seed: u64,
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

/// Nearest centroid per point (lowest index on ties) and its squared distance.
pub fn assign(x: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    x.iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that has more than one member.
fn repair_empty(labels: &mut [usize], dists: &mut [f64], k: usize) -> bool {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut repaired = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        if let Some(i) = donor {
            counts[labels[i]] -= 1;
            counts[c] += 1;
            labels[i] = c;
            dists[i] = 0.0;
            repaired = true;
        }
    }
    repaired
}

fn means(x: &[Vec<f64>], labels: &[usize], k: usize, previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in x.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| if n == 0 { previous[c].clone() } else { s.into_iter().map(|v| v / n as f64).collect() })
        .collect()
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn lloyd(x: &[Vec<f64>], k: usize, rng: &mut Rng, opts: &KMeansOptions) -> Result<LloydRun> {
    let mut centroids = kmeans_pp_init(x, k, rng)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let (mut labels, mut dists) = assign(x, &centroids);
        trace.push(dists.iter().sum());
        repair_empty(&mut labels, &mut dists, k);
        let next = means(x, &labels, k, &centroids);
        let shift = centroids.iter().zip(&next).map(|(a, b)| squared_distance(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        if shift < opts.tol {
            break;
        }
    }
    let (mut labels, mut dists) = assign(x, &centroids);
    if repair_empty(&mut labels, &mut dists, k) {
        centroids = means(x, &labels, k, &centroids);
        dists = x.iter().zip(&labels).map(|(p, &l)| squared_distance(p, &centroids[l])).collect();
    }
    let inertia = dists.iter().sum();
    trace.push(inertia);
    Ok(LloydRun { centroids, labels, inertia, iterations, trace })
}

/// Best-of-restarts Lloyd's algorithm. Restart seeds are drawn from `rng`; the
/// run with the lowest inertia wins (earliest restart on ties).
pub fn kmeans_fit(x: &[Vec<f64>], k: usize, rng: &mut Rng, opts: &KMeansOptions) -> Result<ClusterModel> {
    check_k(x.len(), k)?;
    if opts.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be positive".into()));
    }
    let seeds: Vec<u64> = (0..opts.restarts).map(|_| rng.random()).collect();
    let runs = seeds
        .par_iter()
        .map(|&s| lloyd(x, k, &mut seed::rng_from_seed(s), opts).map(|r| (s, r)))
        .collect::<Result<Vec<_>>>()?;
    let (seed, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, (_, a)), (ib, (_, b))| a.inertia.total_cmp(&b.inertia).then(ia.cmp(ib)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    let silhouette = if k >= 2 && best.labels.iter().any(|&l| l != best.labels[0]) {
        Some(silhouette(x, &best.labels)?)
    } else {
        None
    };
    Ok(ClusterModel {
        k,
        centroids: best.centroids,
        labels: best.labels,
        inertia: best.inertia,
        silhouette,
        stats: None,
        seed,
        iterations: best.iterations,
        inertia_trace: best.trace,
    })
}

/// Standardizes embeddings, then fits k-means on the result.
pub fn cluster_embeddings(x: &[Vec<f64>], k: usize, rng: &mut Rng, opts: &KMeansOptions) -> Result<ClusterModel> {
    let (z, stats) = standardize(x)?;
    let mut model = kmeans_fit(&z, k, rng, opts)?;
    model.stats = Some(stats);
    Ok(model)
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their cluster score 0, as do points with a = b = 0.
pub fn silhouette(x: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if x.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: labels.len() });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    if nonempty < 2 {
        return Err(Error::TooFew { what: "clusters for silhouette", needed: 2, found: nonempty });
    }
    let scores: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, p) in x.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += squared_distance(&x[i], p).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub models: Vec<ClusterModel>,
    /// Highest silhouette; the smaller k wins ties.
    pub best_k: usize,
}

impl SweepResult {
    pub fn best(&self) -> &ClusterModel {
        self.models.iter().find(|m| m.k == self.best_k).expect("best model present")
    }
}

pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 2..=10;

/// Fits one model per k. Each k draws its own seed from `rng` up front, so
/// the per-k fits are independent.
pub fn sweep_k(x: &[Vec<f64>], ks: RangeInclusive<usize>, rng: &mut Rng, opts: &KMeansOptions) -> Result<SweepResult> {
    let ks: Vec<usize> = ks.collect();
    if ks.is_empty() || ks[0] < 2 {
        return Err(Error::InvalidConfig("k range must be nonempty and start at 2 or more".into()));
    }
    check_k(x.len(), *ks.last().expect("nonempty"))?;
    let seeds: Vec<u64> = ks.iter().map(|_| rng.random()).collect();
    let models = ks
        .par_iter()
        .zip(&seeds)
        .map(|(&k, &s)| kmeans_fit(x, k, &mut seed::rng_from_seed(s), opts))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SweepRow> = models
        .iter()
        .map(|m| SweepRow { k: m.k, silhouette: m.silhouette.unwrap_or(0.0), inertia: m.inertia })
        .collect();
    let best_k = rows
        .iter()
        .fold(None::<SweepRow>, |best, r| match best {
            Some(b) if b.silhouette >= r.silhouette => Some(b),
            _ => Some(*r),
        })
        .expect("nonempty")
        .k;
    Ok(SweepResult { rows, models, best_k })
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["k", "silhouette", "inertia"])?;
    for r in rows {
        wtr.write_record([r.k.to_string(), r.silhouette.to_string(), r.inertia.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
