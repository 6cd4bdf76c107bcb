//! Per-user linear variational autoencoder with batch normalization,
//! trained by SGD with momentum under an exponentially decaying learning
//! rate. Forward and backward passes are written out by hand.
//!
//! Objective (minimized): `mean_b Σ_d (x - x̂)² + mean_b KL(N(μ, σ²) ‖ N(0, I))`.

mod gradcheck;
mod model;
mod optim;
mod train;

pub use model::{
    BatchNorm, Dense, ForwardCache, ForwardOutput, ForwardResult, Grads, Hidden, HiddenGrads, Mode,
    VaeModel,
};
pub use gradcheck::{check_gradients, GradientProbe};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use train::{fit_and_train, split_indices, train, EpochRecord, SplitRecord, TrainOutcome};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embed::FLAT_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Smallest held-out decrease that counts as an improvement.
    pub min_delta: f64,
    /// β: velocity decay of SGD with momentum.
    pub momentum: f64,
    /// γ: per-epoch learning-rate decay.
    pub lr_decay: f64,
    /// α0: learning rate at epoch 0.
    pub initial_lr: f64,
    pub test_fraction: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            input_dim: FLAT_DIM,
            encoder_hidden: vec![512, 128],
            latent_dim: 16,
            decoder_hidden: vec![128, 512],
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-6,
            momentum: 0.9,
            lr_decay: 0.99,
            initial_lr: 1e-5,
            test_fraction: 0.15,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim > 0
            && self.latent_dim > 0
            && self.encoder_hidden.iter().chain(&self.decoder_hidden).all(|&d| d > 0);
        if !dims_ok {
            return Err(Error::Validation("all layer dimensions must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Validation("batch_size must be at least 2".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Validation(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::Validation("initial_lr must be positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Validation("invalid batch-norm settings".into()));
        }
        Ok(())
    }
}

/// Exponential schedule `α_t = α0 · γ^t`.
pub fn lr_at(cfg: &VaeConfig, epoch: usize) -> f64 {
    cfg.initial_lr * cfg.lr_decay.powi(epoch as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Batch-mean squared reconstruction error plus batch-mean Gaussian KL.
pub fn elbo_loss(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    mu: &Array2<f64>,
    logvar: &Array2<f64>,
) -> Result<LossBreakdown> {
    if x.dim() != x_hat.dim() || mu.dim() != logvar.dim() || x.nrows() != mu.nrows() {
        return Err(Error::Shape(format!(
            "loss inputs disagree: x {:?}, x_hat {:?}, mu {:?}, logvar {:?}",
            x.dim(),
            x_hat.dim(),
            mu.dim(),
            logvar.dim()
        )));
    }
    let b = x.nrows() as f64;
    let reconstruction = ndarray::Zip::from(x)
        .and(x_hat)
        .fold(0.0, |acc, a, r| acc + (a - r) * (a - r))
        / b;
    let kl = ndarray::Zip::from(mu)
        .and(logvar)
        .fold(0.0, |acc, m, lv| acc - 0.5 * (1.0 + lv - m * m - lv.exp()))
        / b;
    if !reconstruction.is_finite() || !kl.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (reconstruction {reconstruction}, kl {kl})"
        )));
    }
    Ok(LossBreakdown {
        reconstruction,
        kl,
        total: reconstruction + kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults() {
        let c = VaeConfig::default();
        assert_eq!(c.input_dim, 3126);
        assert_eq!((c.momentum, c.lr_decay, c.initial_lr, c.test_fraction), (0.9, 0.99, 1e-5, 0.15));
        c.validate().unwrap();
    }

    #[test]
    fn schedule_values() {
        let c = VaeConfig::default();
        assert_eq!(lr_at(&c, 0), 1e-5);
        assert!((lr_at(&c, 1) - 9.9e-6).abs() < 1e-20);
        assert!((lr_at(&c, 10) - 9.043820750088e-6).abs() < 1e-17);
        for t in 0..300 {
            assert!(lr_at(&c, t + 1) < lr_at(&c, t));
        }
    }

    #[test]
    fn loss_zero_at_identity() {
        let x = array![[0.3, -0.2], [0.1, 0.9]];
        let z = Array2::zeros((2, 3));
        let l = elbo_loss(&x, &x, &z, &z).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn kl_unit_mean() {
        let x = array![[0.0]];
        let l = elbo_loss(&x, &x, &array![[1.0]], &array![[0.0]]).unwrap();
        assert_eq!(l.kl, 0.5);
    }

    #[test]
    fn kl_non_negative_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = array![[0.0]];
        for _ in 0..10_000 {
            let mu = array![[rng.random_range(-5.0..5.0)]];
            let lv = array![[rng.random_range(-8.0..8.0)]];
            let l = elbo_loss(&x, &x, &mu, &lv).unwrap();
            assert!(l.kl >= -1e-12);
            assert!(l.total >= l.reconstruction - 1e-12);
        }
    }

    #[test]
    fn loss_rejects_non_finite() {
        let x = array![[f64::NAN]];
        let z = array![[0.0]];
        assert!(matches!(elbo_loss(&x, &z, &z, &z), Err(Error::Numeric(_))));
    }

    #[test]
    fn config_validation() {
        let bad = VaeConfig { test_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = VaeConfig { momentum: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = VaeConfig { encoder_hidden: vec![0], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
