//! Exact t-SNE.
//!
//! Gaussian input affinities are calibrated per point to a target perplexity,
//! symmetrized, and matched by a Student-t (one degree of freedom) kernel in
//! two dimensions using gradient descent with momentum, per-parameter gains
//! and early exaggeration. Costs are O(n²) in time and memory.

mod plot;

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub use plot::{read_points_csv, render_svg, stratified_cap, write_points_csv, ProjectedPoint, SVG_HEIGHT, SVG_WIDTH};

pub const MAX_POINTS: usize = 20_000;
const SEARCH_STEPS: usize = 64;
const SEARCH_TOLERANCE: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;
const DUPLICATE_JITTER: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TsneError {
    #[error("row {0} has zero distance to every other point")]
    DegenerateRow(usize),
    #[error("perplexity {perplexity} must be positive and below (n - 1) / 3 for n = {n}")]
    InvalidPerplexity { perplexity: f64, n: usize },
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("exact t-SNE supports at most {MAX_POINTS} points, got {0}")]
    TooManyPoints(usize),
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("KL divergence became non-finite at iteration {0}")]
    NonFiniteKL(usize),
    #[error("invalid t-SNE config: {0}")]
    InvalidConfig(String),
    #[error("output error: {0}")]
    Output(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    /// Iterations that use exaggerated affinities and the initial momentum.
    pub exaggeration_iterations: usize,
    pub step_size: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            step_size: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    fn validate(&self, n: usize) -> Result<(), TsneError> {
        if !(self.perplexity > 0.0 && self.perplexity < (n as f64 - 1.0) / 3.0) {
            return Err(TsneError::InvalidPerplexity {
                perplexity: self.perplexity,
                n,
            });
        }
        if !(self.step_size > 0.0 && self.early_exaggeration > 0.0) {
            return Err(TsneError::InvalidConfig("step_size and early_exaggeration must be positive".into()));
        }
        Ok(())
    }
}

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    d.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        let xi = x.row(i);
        for j in 0..n {
            row[j] = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Fills `row` with the Gaussian kernel over `shifted` distances at precision
/// `beta`, normalized, and returns the entropy in nats.
fn kernel_row(shifted: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, &d) in shifted.iter().enumerate() {
        let v = if j == i { 0.0 } else { (-beta * d).exp() };
        row[j] = v;
        z += v;
        weighted += v * d;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    z.ln() + beta * weighted / z
}

/// Row-stochastic conditional affinities `p_{j|i}` whose rows each reach the
/// target perplexity. Distances are shifted by the row's nearest-neighbour
/// distance before exponentiating, which leaves the normalized row unchanged.
pub fn conditional_affinities(x: ArrayView2<f64>, perplexity: f64) -> Result<Array2<f64>, TsneError> {
    let n = x.nrows();
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TsneError::NonFiniteInput);
    }
    if !(perplexity > 0.0) {
        return Err(TsneError::InvalidPerplexity { perplexity, n });
    }
    let target = perplexity.ln();
    let d = squared_distances(x);
    let mut p = Array2::zeros((n, n));
    let failures: Vec<usize> = p
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .filter_map(|(i, mut out)| {
            let row = d.row(i);
            let min = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
            let max = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(0.0, f64::max);
            if max == 0.0 {
                return Some(i);
            }
            let shifted: Vec<f64> = row.iter().map(|v| (v - min).max(0.0)).collect();
            let spread = shifted.iter().sum::<f64>() / (n - 1) as f64;
            let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
            let (mut lo, mut hi) = (0.0, f64::INFINITY);
            let out = out.as_slice_mut().expect("standard layout");
            for _ in 0..SEARCH_STEPS {
                let h = kernel_row(&shifted, i, beta, out);
                if (h - target).abs() < SEARCH_TOLERANCE {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            None
        })
        .collect();
    match failures.first() {
        Some(&i) => Err(TsneError::DegenerateRow(i)),
        None => Ok(p),
    }
}

/// `(C + Cᵀ) / 2n`, written so `P_ij` and `P_ji` are the same float, then
/// renormalized to sum to one.
pub fn symmetrize(conditional: &Array2<f64>) -> Array2<f64> {
    let n = conditional.nrows();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (conditional[[i, j]] + conditional[[j, i]]) / (2.0 * n as f64);
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
    }
    let total: f64 = p.sum();
    if total > 0.0 {
        p.mapv_inplace(|v| v / total);
    }
    p
}

/// Student-t kernel numerators `(1 + |y_i − y_j|²)⁻¹` with a zero diagonal and their sum.
fn student_kernel(y: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let mut w = Array2::zeros((n, n));
    let row_sums: Vec<f64> = w
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    let d: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    row[j] = 1.0 / (1.0 + d);
                    s += row[j];
                }
            }
            s
        })
        .collect();
    (w, row_sums.iter().sum())
}

/// `KL(P ‖ Q)` for an embedding `y`.
pub fn kl_divergence(p: &Array2<f64>, y: ArrayView2<f64>) -> f64 {
    let (w, z) = student_kernel(y);
    let rows: Vec<f64> = (0..p.nrows())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..p.ncols() {
                let pij = p[[i, j]];
                if pij > 0.0 {
                    s += pij * (pij / (w[[i, j]] / z)).ln();
                }
            }
            s
        })
        .collect();
    rows.iter().sum()
}

/// `∂KL/∂y_i = 4 Σ_j (P_ij − Q_ij)(y_i − y_j)(1 + |y_i − y_j|²)⁻¹`.
pub fn kl_gradient(p: &Array2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let (w, z) = student_kernel(y);
    let mut grad = Array2::zeros(y.raw_dim());
    grad.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut g)| {
        for j in 0..y.nrows() {
            if j == i {
                continue;
            }
            let coeff = 4.0 * (p[[i, j]] - w[[i, j]] / z) * w[[i, j]];
            for k in 0..y.ncols() {
                g[k] += coeff * (y[[i, k]] - y[[j, k]]);
            }
        }
    });
    grad
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// `n × 2` coordinates, centered.
    pub embedding: Array2<f64>,
    /// KL divergence against the unexaggerated affinities after each iteration.
    pub kl_trace: Vec<f64>,
}

/// Moves exact duplicate rows apart by seeded noise of size 1e-10.
fn jitter_duplicates(x: &mut Array2<f64>, seed: u64) -> usize {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut stream = rng::stream(seed, &["tsne", "duplicates"]);
    let mut moved = 0;
    for i in 0..x.nrows() {
        let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
        if seen.insert(key, i).is_some() {
            for v in x.row_mut(i) {
                *v += DUPLICATE_JITTER * stream.random_range(-1.0..1.0);
            }
            moved += 1;
        }
    }
    moved
}

pub fn run_tsne(x: ArrayView2<f64>, cfg: &TsneConfig) -> Result<TsneResult, TsneError> {
    let n = x.nrows();
    if n > MAX_POINTS {
        return Err(TsneError::TooManyPoints(n));
    }
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    cfg.validate(n)?;
    let mut x = x.to_owned();
    let moved = jitter_duplicates(&mut x, cfg.seed);
    if moved > 0 {
        log::warn!(target: "tsne", "perturbed {moved} duplicate input rows");
    }
    let p = symmetrize(&conditional_affinities(x.view(), cfg.perplexity)?);
    let p_exaggerated = &p * cfg.early_exaggeration;

    let init = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut stream = rng::stream(cfg.seed, &["tsne", "init"]);
    let mut y = Array2::from_shape_fn((n, 2), |_| init.sample(&mut stream));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for t in 0..cfg.iterations {
        let early = t < cfg.exaggeration_iterations;
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };
        let grad = kl_gradient(if early { &p_exaggerated } else { &p }, y.view());
        ndarray::Zip::from(&mut gains).and(&mut update).and(&grad).for_each(|g, u, &d| {
            *g = if (d > 0.0) != (*u > 0.0) { *g + 0.2 } else { *g * 0.8 };
            *g = g.max(MIN_GAIN);
            *u = momentum * *u - cfg.step_size * *g * d;
        });
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;
        let kl = kl_divergence(&p, y.view());
        if !kl.is_finite() {
            return Err(TsneError::NonFiniteKL(t + 1));
        }
        kl_trace.push(kl);
        if (t + 1) % 250 == 0 {
            log::debug!(target: "tsne", "iteration {}: KL {kl:.6}", t + 1);
        }
    }
    Ok(TsneResult { embedding: y, kl_trace })
}

/// Mean silhouette coefficient of `points` under `labels`, Euclidean.
pub fn silhouette_score(points: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let dist = squared_distances(points).mapv(f64::sqrt);
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let members: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == c).collect();
            if members.is_empty() {
                None
            } else {
                Some(members.iter().map(|&j| dist[[i, j]]).sum::<f64>() / members.len() as f64)
            }
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .filter_map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
