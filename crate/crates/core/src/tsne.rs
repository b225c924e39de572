//! Exact t-SNE to two dimensions.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{squared_distance, standardize};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningRate {
    /// `n / 48`
    Auto,
    Fixed(f64),
}

impl LearningRate {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            LearningRate::Auto => n as f64 / 48.0,
            LearningRate::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub early_exaggeration: f64,
    pub learning_rate: LearningRate,
    pub n_iter: usize,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_std: f64,
    /// Z-score the input columns before computing affinities.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            early_exaggeration: 12.0,
            learning_rate: LearningRate::Auto,
            n_iter: 1000,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_std: 1e-4,
            standardize: true,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::TooFew { what: "points for t-SNE", needed: 4, found: n });
        }
        if !(self.perplexity > 0.0) || self.perplexity >= (n as f64 - 1.0) / 3.0 {
            return Err(Error::InvalidConfig(format!(
                "perplexity {} must be below (n - 1) / 3 = {}",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            )));
        }
        if self.n_iter < self.exaggeration_iters {
            return Err(Error::InvalidConfig("n_iter must be at least exaggeration_iters".into()));
        }
        Ok(())
    }
}

/// Symmetric joint affinities (row-major n×n) plus the per-row precisions
/// `beta_i = 1 / (2 sigma_i^2)` that produced them.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    pub p: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 50;
const LOG_BETA_RANGE: f64 = 60.0;

/// Conditional distribution `P(·|i)` for squared distances `d` (with `d[i]`
/// ignored) at precision `beta`. Returns the distribution and its entropy in nats.
pub fn conditional_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d.iter().enumerate().map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - min)).exp() }).collect();
    let z: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, pj) in p.iter_mut().enumerate() {
        *pj /= z;
        if j != i {
            weighted += *pj * (d[j] - min);
        }
    }
    (p, z.ln() + beta * weighted)
}

fn row_search(d: &[f64], i: usize, target: f64) -> Result<(Vec<f64>, f64)> {
    let others = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v);
    let (lo_d, hi_d) = others.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi_d - lo_d <= f64::EPSILON * hi_d.abs().max(1.0) {
        // equidistant neighbours: the row is uniform at every bandwidth
        return Ok((conditional_row(d, i, 0.0).0, 0.0));
    }
    let n_others = (d.len() - 1) as f64;
    let scale = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v - lo_d).sum::<f64>() / n_others;
    let (mut lo, mut hi) = (-LOG_BETA_RANGE, LOG_BETA_RANGE);
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let beta = mid.exp() / scale;
        let (row, h) = conditional_row(d, i, beta);
        if (h - target).abs() < ENTROPY_TOL {
            return Ok((row, beta));
        }
        // entropy falls as beta grows
        if h > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BisectionNonConvergence { row: i })
}

/// Gaussian affinities with per-row bandwidths matched to `perplexity`,
/// symmetrized as `(P_{j|i} + P_{i|j}) / 2n`.
pub fn pairwise_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooFew { what: "points for affinities", needed: 4, found: n });
    }
    if !(perplexity >= 1.0) || perplexity > (n - 1) as f64 {
        return Err(Error::InvalidConfig(format!("perplexity {perplexity} infeasible for {n} points")));
    }
    let target = perplexity.ln();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = x.iter().map(|p| squared_distance(&x[i], p)).collect();
            row_search(&d, i, target)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
            }
        }
    }
    Ok(Affinities { n, p, betas: rows.into_iter().map(|r| r.1).collect() })
}

/// Student-t kernel values `(1 + |y_i - y_j|^2)^-1` (zero diagonal) and their sum.
fn student_t_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
        }
    }
    let z = num.iter().sum();
    (num, z)
}

/// Low-dimensional affinities Q (row-major n×n).
pub fn student_t_affinities(y: &[[f64; 2]]) -> Vec<f64> {
    let (num, z) = student_t_kernel(y);
    num.into_iter().map(|v| v / z).collect()
}

/// KL(P ‖ Q) over pairs with p > 0.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_t_kernel(y);
    p.iter().zip(&num).filter(|(&pij, _)| pij > 0.0).map(|(&pij, &v)| pij * (pij / (v / z)).ln()).sum()
}

/// Gradient of KL(P ‖ Q) with respect to each low-dimensional point.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, z) = student_t_kernel(y);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                g[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TsneResult {
    pub y: Vec<[f64; 2]>,
    /// KL(P ‖ Q) with the unexaggerated P, one entry per iteration.
    pub kl_history: Vec<f64>,
    pub learning_rate: f64,
}

/// Gradient descent with momentum and per-coordinate gains; P is multiplied
/// by `early_exaggeration` for the first `exaggeration_iters` iterations,
/// during which the initial momentum applies.
pub fn tsne_fit(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    config.validate(n)?;
    let data = if config.standardize { standardize(x)?.0 } else { x.to_vec() };
    let aff = pairwise_affinities(&data, config.perplexity)?;
    let lr = config.learning_rate.resolve(n);

    let mut rng = seed::derive_rng(config.seed, "tsne", "init");
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let exaggerated: Vec<f64> = aff.p.iter().map(|v| v * config.early_exaggeration).collect();
    let mut kl_history = Vec::with_capacity(config.n_iter);

    for it in 0..config.n_iter {
        let in_exaggeration = it < config.exaggeration_iters;
        let p = if in_exaggeration { &exaggerated } else { &aff.p };
        let momentum = if in_exaggeration { config.initial_momentum } else { config.final_momentum };
        kl_history.push(kl_divergence(&aff.p, &y));
        let grad = kl_gradient(p, &y);
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                gains[i][c] = if (g > 0.0) != (update[i][c] > 0.0) { gains[i][c] + 0.2 } else { gains[i][c] * 0.8 };
                gains[i][c] = gains[i][c].max(0.01);
                update[i][c] = momentum * update[i][c] - lr * gains[i][c] * g;
                y[i][c] += update[i][c];
            }
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("t-SNE coordinates at iteration {it}")));
        }
    }
    Ok(TsneResult { y, kl_history, learning_rate: lr })
}

/// `participant_id,date,y1,y2`
pub fn write_coordinates<W: Write>(out: W, keys: &[(String, chrono::NaiveDate)], y: &[[f64; 2]]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["participant_id", "date", "y1", "y2"])?;
    for ((p, d), v) in keys.iter().zip(y) {
        wtr.write_record([p.clone(), d.to_string(), v[0].to_string(), v[1].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `iteration,kl`
pub fn write_kl_history<W: Write>(out: W, kl: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["iteration", "kl"])?;
    for (i, v) in kl.iter().enumerate() {
        wtr.write_record([i.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
