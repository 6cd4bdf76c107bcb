use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{elbo_loss, VaeModel};
use crate::error::Result;

/// One analytic-versus-numeric comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientProbe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|, 1e-6)`.
    pub relative_error: f64,
}

/// Compares backpropagated gradients of the train-mode loss with central
/// differences of step `step · max(1, |θ|)` at `probes` parameter entries. Tensors are visited in
/// round-robin order so every tensor is probed when `probes` allows; the
/// entry within each tensor is drawn from `seed`. The noise `eps` is held
/// fixed so the loss is a deterministic function of the parameters.
pub fn check_gradients(
    model: &VaeModel,
    x: &Array2<f64>,
    eps: &Array2<f64>,
    probes: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<GradientProbe>> {
    let loss_at = |m: &VaeModel| -> Result<f64> {
        let cache = m.forward_train(x, eps)?;
        let o = &cache.output;
        Ok(elbo_loss(x, &o.x_hat, &o.mu, &o.logvar)?.total)
    };
    let cache = model.forward_train(x, eps)?;
    let grads = model.backward(x, &cache);
    let tensors: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, g)| (n, g.to_vec()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = model.clone();
    let mut out = Vec::with_capacity(probes);
    for p in 0..probes {
        let t = p % tensors.len();
        let index = rng.random_range(0..tensors[t].1.len());
        let theta = work.params_mut()[t].1[index];
        let h = step * theta.abs().max(1.0);

        work.params_mut()[t].1[index] = theta + h;
        let up = loss_at(&work)?;
        work.params_mut()[t].1[index] = theta - h;
        let down = loss_at(&work)?;
        work.params_mut()[t].1[index] = theta;

        let numeric = (up - down) / (2.0 * h);
        let analytic = tensors[t].1[index];
        let relative_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        out.push(GradientProbe {
            tensor: tensors[t].0.clone(),
            index,
            analytic,
            numeric,
            relative_error,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeConfig;
    use rand_distr::StandardNormal;

    #[test]
    fn toy_net_gradients_match() {
        let cfg = VaeConfig {
            input_dim: 8,
            encoder_hidden: vec![4],
            latent_dim: 2,
            decoder_hidden: vec![4],
            seed: 9,
            ..Default::default()
        };
        let model = VaeModel::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((6, 8), || rng.random_range(-1.0..1.0));
        let eps = Array2::from_shape_simple_fn((6, 2), || rng.sample::<f64, _>(StandardNormal));
        let probes = check_gradients(&model, &x, &eps, 40, 1e-5, 2).unwrap();
        for p in &probes {
            assert!(p.relative_error < 1e-4, "{p:?}");
        }
        assert!(probes.iter().any(|p| p.tensor.contains("bn.gain")));
        assert!(probes.iter().any(|p| p.tensor.starts_with("logvar_head")));
    }
}
