use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

const BISECTION_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;
const MIN_PROB: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-2;
const KL_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    /// Target perplexity, clamped to `(n - 1) / 3` for small inputs.
    pub perplexity: f64,
    pub iterations: usize,
    /// Fixed step size; `None` scales it with the input as `n / early_exaggeration`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn learning_rate_for(&self, n: usize) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| n as f64 / self.early_exaggeration)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0) {
            return Err(Error::Validation(format!("perplexity must be at least 2, got {}", self.perplexity)));
        }
        if self.iterations <= self.exaggeration_iterations {
            return Err(Error::Validation(format!(
                "iterations ({}) must exceed the exaggeration phase ({})",
                self.iterations, self.exaggeration_iterations
            )));
        }
        if self.learning_rate.is_some_and(|lr| !(lr > 0.0)) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::Validation("learning_rate must be positive and early_exaggeration ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    #[serde(skip)]
    pub embedding: Array2<f64>,
    pub perplexity_used: f64,
    pub learning_rate_used: f64,
    pub seed: u64,
    /// `(iteration, KL(P‖Q))` after every 50th iteration, with unexaggerated P.
    pub kl_trace: Vec<(usize, f64)>,
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Conditional row `p_{j|i}` whose perplexity matches `perplexity`, found by
/// bisection on the Gaussian precision.
fn conditional_row(d: &Array2<f64>, i: usize, perplexity: f64, row: &mut [f64]) {
    let n = d.ncols();
    let target = perplexity.ln();
    let dmin = (0..n)
        .filter(|&j| j != i)
        .map(|j| d[[i, j]])
        .fold(f64::INFINITY, f64::min);
    let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..BISECTION_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            row[j] = if j == i { 0.0 } else { (-(d[[i, j]] - dmin) * beta).exp() };
            sum += row[j];
            weighted += (d[[i, j]] - dmin) * row[j];
        }
        let entropy = sum.ln() + beta * weighted / sum;
        row.iter_mut().for_each(|p| *p /= sum);
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
}

fn joint_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = squared_distances(x);
    let mut cond = Array2::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        conditional_row(&d, i, perplexity, &mut row);
        cond.row_mut(i).iter_mut().zip(&row).for_each(|(c, r)| *c = *r);
    }
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[[i, j]] = ((cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64)).max(MIN_PROB);
            }
        }
    }
    p
}

/// Student-t kernel `1 / (1 + ‖y_i - y_j‖²)` and its off-diagonal sum.
fn kernel(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let mut num = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[[i, 0]] - y[[j, 0]];
            let dy = y[[i, 1]] - y[[j, 1]];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[[i, j]] = k;
            num[[j, i]] = k;
            sum += 2.0 * k;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (num, sum) = kernel(y);
    let n = p.nrows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[[i, j]] / sum).max(MIN_PROB);
                kl += p[[i, j]] * (p[[i, j]] / q).ln();
            }
        }
    }
    kl
}

/// Exact t-SNE to two dimensions. Deterministic for a given seed; the
/// embedding is re-centred after every update.
pub fn tsne(points: &Array2<f64>, cfg: &TsneConfig) -> Result<TsneResult> {
    cfg.validate()?;
    let n = points.nrows();
    if n < 5 {
        return Err(Error::Input(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if points.ncols() == 0 {
        return Err(Error::Input("t-SNE points have no dimensions".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE input contains non-finite values".into()));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    let p = joint_affinities(points, perplexity);
    let lr = cfg.learning_rate_for(n);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = Array2::from_shape_simple_fn((n, 2), || INIT_STD * rng.sample::<f64, _>(StandardNormal));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut grad = Array2::<f64>::zeros((n, 2));
    let mut kl_trace = Vec::new();

    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iterations;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };

        let (num, sum) = kernel(&y);
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / sum).max(MIN_PROB);
                let m = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                grad[[i, 0]] += m * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += m * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = gain.max(MIN_GAIN);
            *u = momentum * *u - lr * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("n ≥ 5");
        y -= &mean;

        if (iter + 1) % KL_EVERY == 0 {
            let kl = kl_divergence(&p, &y);
            if !kl.is_finite() {
                return Err(Error::Numeric(format!("t-SNE objective diverged at iteration {}", iter + 1)));
            }
            kl_trace.push((iter + 1, kl));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE produced non-finite coordinates".into()));
    }
    Ok(TsneResult {
        embedding: y,
        perplexity_used: perplexity,
        learning_rate_used: lr,
        seed: cfg.seed,
        kl_trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneRow {
    pub segment_id: String,
    pub x: f64,
    pub y: f64,
    pub pseudo_label: Option<usize>,
    pub situational_label: Option<String>,
}

pub fn write_tsne_csv(path: &Path, rows: &[TsneRow]) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    w.write_record(["segment_id", "x", "y", "pseudo_label", "situational_label"])?;
    for r in rows {
        w.write_record([
            r.segment_id.clone(),
            io::fmt_f64(r.x),
            io::fmt_f64(r.y),
            r.pseudo_label.map(|l| l.to_string()).unwrap_or_default(),
            r.situational_label.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
