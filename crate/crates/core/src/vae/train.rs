use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{elbo_loss, lr_at, sgd_momentum_step, LossBreakdown, OptimizerState, VaeConfig, VaeModel};
use crate::embed::fit_scaler;
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 20;

// ChaCha stream ids, so each consumer of the seed draws independently.
const SPLIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

/// Row indices of the held-out and training partitions, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Size-weighted mean of the train-mode batch losses.
    pub train: LossBreakdown,
    /// Eval-mode loss on the held-out split after the epoch.
    pub test: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best held-out epoch.
    pub model: VaeModel,
    pub history: Vec<EpochRecord>,
    pub split: SplitRecord,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Seeded shuffle; the first `⌈fraction·n⌉` shuffled rows are held out.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> SplitRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // The tolerance keeps products such as 0.15 · 20 from rounding up past an integer.
    let n_test = ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut test = perm[..n_test.min(n)].to_vec();
    let mut train = perm[n_test.min(n)..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    SplitRecord { train, test }
}

fn stack(rows: &[&Vec<f64>], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.iter_mut().zip(src.iter()).for_each(|(d, s)| *d = *s);
    }
    out
}

/// Trains one model on already-scaled vectors.
///
/// Mini-batches of `batch_size` (a trailing batch of fewer than 2 rows is
/// dropped) use the learning rate of the current epoch. Training stops once
/// the held-out loss has not improved by `min_delta` for `patience` epochs,
/// or at `max_epochs`; the best held-out parameters are returned.
pub fn train(data: &[Vec<f64>], cfg: &VaeConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < MIN_SAMPLES {
        return Err(Error::Input(format!(
            "training needs at least {MIN_SAMPLES} samples, got {}",
            data.len()
        )));
    }
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| v.len() != cfg.input_dim) {
        return Err(Error::Shape(format!(
            "sample {i} has {} values, expected {}",
            v.len(),
            cfg.input_dim
        )));
    }

    let split = split_indices(data.len(), cfg.test_fraction, cfg.seed);
    let train_x = stack(&split.train.iter().map(|&i| &data[i]).collect::<Vec<_>>(), cfg.input_dim);
    let test_x = stack(&split.test.iter().map(|&i| &data[i]).collect::<Vec<_>>(), cfg.input_dim);

    let mut model = VaeModel::init(cfg)?;
    let mut opt = OptimizerState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, VaeModel)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let xb = train_x.select(Axis(0), chunk);
            let eps = Array2::from_shape_simple_fn((chunk.len(), cfg.latent_dim), || {
                rng.sample::<f64, _>(StandardNormal)
            });
            let cache = model.forward_train(&xb, &eps)?;
            let out = &cache.output;
            let loss = elbo_loss(&xb, &out.x_hat, &out.mu, &out.logvar)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {batch_no}: {e}")))?;
            model.update_running_stats(&cache);
            let grads = model.backward(&xb, &cache);
            sgd_momentum_step(&mut model, &grads, &mut opt, lr, cfg.momentum)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {batch_no}: {e}")))?;
            let w = chunk.len() as f64;
            sum.reconstruction += loss.reconstruction * w;
            sum.kl += loss.kl * w;
            sum.total += loss.total * w;
            seen += chunk.len();
        }
        let w = seen.max(1) as f64;
        let train_loss = LossBreakdown {
            reconstruction: sum.reconstruction / w,
            kl: sum.kl / w,
            total: sum.total / w,
        };

        let eval = model.forward_eval(&test_x)?;
        let test_loss = elbo_loss(&test_x, &eval.x_hat, &eval.mu, &eval.logvar)
            .map_err(|e| Error::Numeric(format!("epoch {epoch}, held-out evaluation: {e}")))?;
        model.epochs_trained = epoch + 1;
        history.push(EpochRecord {
            epoch,
            lr,
            train: train_loss,
            test: test_loss,
        });

        let improved = best
            .as_ref()
            .is_none_or(|(b, _, _)| test_loss.total < b - cfg.min_delta);
        if improved {
            best = Some((test_loss.total, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let epochs_run = history.len();
    let (_, best_epoch, mut best_model) = best.ok_or_else(|| Error::Input("max_epochs is 0".into()))?;
    best_model.best_epoch = best_epoch;
    best_model.epochs_trained = epochs_run;
    Ok(TrainOutcome {
        model: best_model,
        history,
        split,
        best_epoch,
        stopped_early: epochs_run < cfg.max_epochs,
    })
}

/// Fits the input scaler on the training partition of raw embeddings,
/// scales every row, trains, and stores the scaler in the model.
pub fn fit_and_train(raw: &[Vec<f64>], cfg: &VaeConfig) -> Result<TrainOutcome> {
    if raw.len() < MIN_SAMPLES {
        return Err(Error::Input(format!(
            "training needs at least {MIN_SAMPLES} samples, got {}",
            raw.len()
        )));
    }
    let split = split_indices(raw.len(), cfg.test_fraction, cfg.seed);
    let scaler = fit_scaler(split.train.iter().map(|&i| raw[i].as_slice()))?;
    let scaled: Vec<Vec<f64>> = raw.iter().map(|v| scaler.apply(v)).collect();
    let mut outcome = train(&scaled, cfg)?;
    outcome.model.scaler = scaler;
    Ok(outcome)
}
