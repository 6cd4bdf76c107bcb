use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::VaeConfig;
use crate::embed::InputScaler;
use crate::error::{Error, Result};
use crate::io;

const FORMAT: &str = "scene-latent-vae/1";

/// Affine layer `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..=limit)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        match sparse_rows(x) {
            Some(rows) => {
                // Row by row of W so each weight row stays cache-resident.
                let mut out = Array2::zeros((x.nrows(), self.out_dim()));
                for (o, w) in self.weight.rows().into_iter().enumerate() {
                    let w = w.as_slice().expect("standard layout");
                    for (i, row) in rows.iter().enumerate() {
                        out[[i, o]] = row.iter().map(|&(j, v)| w[j] * v).sum::<f64>();
                    }
                }
                out + &self.bias
            }
            None => x.dot(&self.weight.t()) + &self.bias,
        }
    }

    fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gain: Array1::ones(dim),
            shift: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

/// affine → batch-norm → ReLU
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hidden {
    pub dense: Dense,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, sampled noise, running statistics updated.
    Train,
    /// Running statistics, `z = μ`.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub x_hat: Array2<f64>,
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub z: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    invstd: Array1<f64>,
    act: Array2<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Intermediate values of a train-mode pass, consumed by [`VaeModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub output: ForwardOutput,
    pub eps: Array2<f64>,
    encoder: Vec<LayerCache>,
    decoder: Vec<LayerCache>,
    encoded: Array2<f64>,
    decoded: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrads {
    pub dense: Dense,
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
}

/// Gradients of the total loss, mirroring the model's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub encoder: Vec<HiddenGrads>,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Vec<HiddenGrads>,
    pub output: Dense,
}

/// Inputs with at most this fraction of non-zeros take the sparse path.
const SPARSE_FRACTION: f64 = 0.25;

/// Per-row `(column, value)` lists when `x` is sparse enough to benefit.
fn sparse_rows(x: &Array2<f64>) -> Option<Vec<Vec<(usize, f64)>>> {
    let nnz = x.iter().filter(|&&v| v != 0.0).count();
    if x.ncols() < 64 || nnz as f64 > SPARSE_FRACTION * x.len() as f64 {
        return None;
    }
    Some(
        x.rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect())
            .collect(),
    )
}

/// `dᵀ x`: weight gradient of an affine layer with upstream `d` and input `x`.
fn weight_grad(d: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    match sparse_rows(x) {
        Some(rows) => {
            let mut g = Array2::zeros((d.ncols(), x.ncols()));
            for (o, mut grow) in g.rows_mut().into_iter().enumerate() {
                let grow = grow.as_slice_mut().expect("standard layout");
                for (i, row) in rows.iter().enumerate() {
                    let di = d[[i, o]];
                    for &(j, v) in row {
                        grow[j] += di * v;
                    }
                }
            }
            g
        }
        None => d.t().dot(x),
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn push_hidden<'a>(prefix: &str, layers: &'a mut [Hidden], out: &mut Vec<(String, &'a mut [f64])>) {
    for (i, l) in layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), l.dense.weight.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.{i}.bias"), l.dense.bias.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.{i}.bn.gain"), l.bn.gain.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.{i}.bn.shift"), l.bn.shift.as_slice_mut().unwrap()));
    }
}

impl Grads {
    /// Named gradient tensors in [`VaeModel::params_mut`] order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (prefix, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            if prefix == "decoder" {
                out.push(("mu_head.weight".into(), slice(&self.mu_head.weight)));
                out.push(("mu_head.bias".into(), self.mu_head.bias.as_slice().unwrap()));
                out.push(("logvar_head.weight".into(), slice(&self.logvar_head.weight)));
                out.push(("logvar_head.bias".into(), self.logvar_head.bias.as_slice().unwrap()));
            }
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), slice(&l.dense.weight)));
                out.push((format!("{prefix}.{i}.bias"), l.dense.bias.as_slice().unwrap()));
                out.push((format!("{prefix}.{i}.bn.gain"), l.gain.as_slice().unwrap()));
                out.push((format!("{prefix}.{i}.bn.shift"), l.shift.as_slice().unwrap()));
            }
        }
        out.push(("output.weight".into(), slice(&self.output.weight)));
        out.push(("output.bias".into(), self.output.bias.as_slice().unwrap()));
        out
    }
}

/// Encoder hiddens → (μ, log σ²) heads → decoder hiddens → tanh output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub format: String,
    pub config: VaeConfig,
    #[serde(default)]
    pub vocabulary_hash: Option<String>,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub scaler: InputScaler,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    /// Train-mode batches folded into the running statistics so far.
    #[serde(default)]
    pub running_updates: u64,
    pub encoder: Vec<Hidden>,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Vec<Hidden>,
    pub output: Dense,
}

fn hidden_stack(dims: &[usize], input: usize, rng: &mut impl Rng) -> Vec<Hidden> {
    let mut prev = input;
    dims.iter()
        .map(|&d| {
            let layer = Hidden {
                dense: Dense::glorot(prev, d, rng),
                bn: BatchNorm::new(d),
            };
            prev = d;
            layer
        })
        .collect()
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn hidden_train(layer: &Hidden, input: &Array2<f64>, eps: f64) -> LayerCache {
    let h = layer.dense.apply(input);
    let b = h.nrows() as f64;
    let mean = h.sum_axis(Axis(0)) / b;
    let centered = &h - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
    let invstd = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * &invstd;
    let mut act = &xhat * &layer.bn.gain + &layer.bn.shift;
    relu_inplace(&mut act);
    LayerCache {
        input: input.clone(),
        xhat,
        invstd,
        act,
        mean,
        var,
    }
}

fn hidden_eval(layer: &Hidden, input: &Array2<f64>, eps: f64) -> Array2<f64> {
    let bn = &layer.bn;
    let scale = Zip::from(&bn.gain)
        .and(&bn.running_var)
        .map_collect(|g, v| g / (v + eps).sqrt());
    let offset = &bn.shift - &(&bn.running_mean * &scale);
    let mut act = layer.dense.apply(input) * &scale + &offset;
    relu_inplace(&mut act);
    act
}

/// Back through ReLU, batch-norm and the affine map. Returns the gradient
/// with respect to the layer input when `need_input` is set.
fn hidden_backward(
    layer: &Hidden,
    cache: &LayerCache,
    d_act: Array2<f64>,
    need_input: bool,
) -> (HiddenGrads, Option<Array2<f64>>) {
    let b = d_act.nrows() as f64;
    let mut d_y = d_act;
    Zip::from(&mut d_y).and(&cache.act).for_each(|d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
    let gain_grad = (&d_y * &cache.xhat).sum_axis(Axis(0));
    let shift_grad = d_y.sum_axis(Axis(0));
    // d_xhat = d_y * gain; d_h = invstd / B * (B d_xhat - Σ d_xhat - xhat Σ d_xhat xhat)
    let d_xhat = d_y * &layer.bn.gain;
    let sum_dx = d_xhat.sum_axis(Axis(0));
    let sum_dx_xhat = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
    let d_h = (d_xhat * b - &sum_dx - &cache.xhat * &sum_dx_xhat) * &(&cache.invstd / b);
    let grads = HiddenGrads {
        dense: Dense {
            weight: weight_grad(&d_h, &cache.input),
            bias: d_h.sum_axis(Axis(0)),
        },
        gain: gain_grad,
        shift: shift_grad,
    };
    let d_input = need_input.then(|| d_h.dot(&layer.dense.weight));
    (grads, d_input)
}

impl VaeModel {
    /// Glorot-uniform weights, zero biases, unit batch-norm gains.
    pub fn init(cfg: &VaeConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = hidden_stack(&cfg.encoder_hidden, cfg.input_dim, &mut rng);
        let enc_out = cfg.encoder_hidden.last().copied().unwrap_or(cfg.input_dim);
        let mu_head = Dense::glorot(enc_out, cfg.latent_dim, &mut rng);
        let logvar_head = Dense::glorot(enc_out, cfg.latent_dim, &mut rng);
        let decoder = hidden_stack(&cfg.decoder_hidden, cfg.latent_dim, &mut rng);
        let dec_out = cfg.decoder_hidden.last().copied().unwrap_or(cfg.latent_dim);
        let output = Dense::glorot(dec_out, cfg.input_dim, &mut rng);
        Ok(VaeModel {
            format: FORMAT.to_string(),
            config: cfg.clone(),
            vocabulary_hash: None,
            config_hash: None,
            scaler: InputScaler::identity(cfg.input_dim),
            epochs_trained: 0,
            best_epoch: 0,
            running_updates: 0,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_batch(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch rows have {} values, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pure train-mode pass with the given reparameterization noise.
    pub fn forward_train(&self, batch: &Array2<f64>, eps: &Array2<f64>) -> Result<ForwardCache> {
        self.check_batch(batch)?;
        if batch.nrows() < 2 {
            return Err(Error::Input("train-mode forward needs at least 2 rows".into()));
        }
        if eps.dim() != (batch.nrows(), self.latent_dim()) {
            return Err(Error::Shape("noise shape must be batch × latent".into()));
        }
        let bn_eps = self.config.bn_eps;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut cur = batch.clone();
        for layer in &self.encoder {
            let c = hidden_train(layer, &cur, bn_eps);
            cur = c.act.clone();
            encoder.push(c);
        }
        let encoded = cur;
        let mu = self.mu_head.apply(&encoded);
        let logvar = self.logvar_head.apply(&encoded);
        let z = &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * eps);
        let mut decoder = Vec::with_capacity(self.decoder.len());
        let mut cur = z.clone();
        for layer in &self.decoder {
            let c = hidden_train(layer, &cur, bn_eps);
            cur = c.act.clone();
            decoder.push(c);
        }
        let decoded = cur;
        let x_hat = self.output.apply(&decoded).mapv(f64::tanh);
        Ok(ForwardCache {
            output: ForwardOutput { x_hat, mu, logvar, z },
            eps: eps.clone(),
            encoder,
            decoder,
            encoded,
            decoded,
        })
    }

    /// Eval-mode pass: running statistics, `z = μ`.
    pub fn forward_eval(&self, batch: &Array2<f64>) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let bn_eps = self.config.bn_eps;
        let encoded = self
            .encoder
            .iter()
            .fold(batch.clone(), |x, l| hidden_eval(l, &x, bn_eps));
        let mu = self.mu_head.apply(&encoded);
        let logvar = self.logvar_head.apply(&encoded);
        let z = mu.clone();
        let decoded = self.decoder.iter().fold(z.clone(), |x, l| hidden_eval(l, &x, bn_eps));
        let x_hat = self.output.apply(&decoded).mapv(f64::tanh);
        Ok(ForwardOutput { x_hat, mu, logvar, z })
    }

    /// Folds a train-mode pass's batch statistics into the running estimates
    /// (unbiased variance, as in common frameworks). The first batch replaces
    /// the placeholder (0, 1) statistics outright, so eval-mode passes early
    /// in training reflect the data rather than the initial values.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = if self.running_updates == 0 { 1.0 } else { self.config.bn_momentum };
        self.running_updates += 1;
        let pairs = self
            .encoder
            .iter_mut()
            .zip(&cache.encoder)
            .chain(self.decoder.iter_mut().zip(&cache.decoder));
        for (layer, c) in pairs {
            let b = c.input.nrows() as f64;
            let unbiased = &c.var * (b / (b - 1.0));
            layer.bn.running_mean = &layer.bn.running_mean * (1.0 - m) + &c.mean * m;
            layer.bn.running_var = &layer.bn.running_var * (1.0 - m) + unbiased * m;
        }
    }

    /// Forward pass in either mode. Train mode draws `ε ~ N(0, I)` from `rng`
    /// and updates running statistics.
    pub fn forward(&mut self, batch: &Array2<f64>, mode: Mode, rng: &mut impl Rng) -> Result<ForwardResult> {
        match mode {
            Mode::Eval => Ok(ForwardResult::Output(self.forward_eval(batch)?)),
            Mode::Train => {
                let eps = Array2::from_shape_simple_fn((batch.nrows(), self.latent_dim()), || {
                    rng.sample(StandardNormal)
                });
                let cache = self.forward_train(batch, &eps)?;
                self.update_running_stats(&cache);
                Ok(ForwardResult::Cache(Box::new(cache)))
            }
        }
    }

    /// Analytic gradients of the total loss for the batch behind `cache`.
    pub fn backward(&self, x: &Array2<f64>, cache: &ForwardCache) -> Grads {
        let out = &cache.output;
        let b = x.nrows() as f64;

        // d/dx̂ of the squared error, then through tanh.
        let mut d_pre = Zip::from(&out.x_hat)
            .and(x)
            .map_collect(|&r, &t| 2.0 * (r - t) / b * (1.0 - r * r));
        let output = Dense {
            weight: d_pre.t().dot(&cache.decoded),
            bias: d_pre.sum_axis(Axis(0)),
        };
        d_pre = d_pre.dot(&self.output.weight);

        let mut decoder = Vec::with_capacity(self.decoder.len());
        let mut d_act = d_pre;
        for (layer, c) in self.decoder.iter().zip(&cache.decoder).rev() {
            let (g, d_in) = hidden_backward(layer, c, d_act, true);
            decoder.push(g);
            d_act = d_in.expect("requested");
        }
        decoder.reverse();
        let d_z = d_act;

        // z = μ + exp(logvar / 2) ε, plus the KL term's own gradients.
        let d_mu = &d_z + &(&out.mu / b);
        let d_logvar = Zip::from(&d_z)
            .and(&cache.eps)
            .and(&out.logvar)
            .map_collect(|&dz, &e, &lv| dz * e * 0.5 * (0.5 * lv).exp() + 0.5 * (lv.exp() - 1.0) / b);
        let mu_head = Dense {
            weight: d_mu.t().dot(&cache.encoded),
            bias: d_mu.sum_axis(Axis(0)),
        };
        let logvar_head = Dense {
            weight: d_logvar.t().dot(&cache.encoded),
            bias: d_logvar.sum_axis(Axis(0)),
        };
        let mut d_act = d_mu.dot(&self.mu_head.weight) + d_logvar.dot(&self.logvar_head.weight);

        let mut encoder = Vec::with_capacity(self.encoder.len());
        for (i, (layer, c)) in self.encoder.iter().zip(&cache.encoder).enumerate().rev() {
            let (g, d_in) = hidden_backward(layer, c, d_act, i > 0);
            encoder.push(g);
            d_act = d_in.unwrap_or_default();
        }
        encoder.reverse();

        Grads {
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
        }
    }

    /// Named trainable tensors, in a fixed order shared with [`Grads::tensors`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        let VaeModel {
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
            ..
        } = self;
        push_hidden("encoder", encoder, &mut out);
        out.push(("mu_head.weight".into(), mu_head.weight.as_slice_mut().unwrap()));
        out.push(("mu_head.bias".into(), mu_head.bias.as_slice_mut().unwrap()));
        out.push(("logvar_head.weight".into(), logvar_head.weight.as_slice_mut().unwrap()));
        out.push(("logvar_head.bias".into(), logvar_head.bias.as_slice_mut().unwrap()));
        push_hidden("decoder", decoder, &mut out);
        out.push(("output.weight".into(), output.weight.as_slice_mut().unwrap()));
        out.push(("output.bias".into(), output.bias.as_slice_mut().unwrap()));
        out
    }

    pub fn zero_grads(&self) -> Grads {
        let hg = |l: &Hidden| HiddenGrads {
            dense: l.dense.zeros_like(),
            gain: Array1::zeros(l.bn.gain.len()),
            shift: Array1::zeros(l.bn.shift.len()),
        };
        Grads {
            encoder: self.encoder.iter().map(hg).collect(),
            mu_head: self.mu_head.zeros_like(),
            logvar_head: self.logvar_head.zeros_like(),
            decoder: self.decoder.iter().map(hg).collect(),
            output: self.output.zeros_like(),
        }
    }

    /// Posterior mean `μ(x)` for one scaled input, using running statistics.
    pub fn encode_latent(&self, v: &[f64]) -> Result<Vec<f64>> {
        let batch = Array2::from_shape_vec((1, v.len()), v.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_eval(&batch)?.mu.row(0).to_vec())
    }

    /// Scales a raw embedding with the stored scaler, then encodes it.
    pub fn encode_raw(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.scaler.dim() {
            return Err(Error::Shape(format!(
                "embedding has {} values, scaler expects {}",
                raw.len(),
                self.scaler.dim()
            )));
        }
        self.encode_latent(&self.scaler.apply(raw))
    }

    /// Checks layer chaining, positive running variances and finiteness.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.format != FORMAT {
            return Err(Error::Validation(format!("unknown model format `{}`", self.format)));
        }
        let mut prev = cfg.input_dim;
        let check = |d: &Dense, inp: usize, out: usize, name: &str| -> Result<()> {
            if d.in_dim() != inp || d.out_dim() != out || d.bias.len() != out {
                return Err(Error::Validation(format!(
                    "{name}: shape {:?} does not chain ({inp} -> {out})",
                    d.weight.dim()
                )));
            }
            Ok(())
        };
        if self.encoder.len() != cfg.encoder_hidden.len() || self.decoder.len() != cfg.decoder_hidden.len() {
            return Err(Error::Validation("layer count disagrees with config".into()));
        }
        for (i, (l, &d)) in self.encoder.iter().zip(&cfg.encoder_hidden).enumerate() {
            check(&l.dense, prev, d, &format!("encoder.{i}"))?;
            prev = d;
        }
        check(&self.mu_head, prev, cfg.latent_dim, "mu_head")?;
        check(&self.logvar_head, prev, cfg.latent_dim, "logvar_head")?;
        prev = cfg.latent_dim;
        for (i, (l, &d)) in self.decoder.iter().zip(&cfg.decoder_hidden).enumerate() {
            check(&l.dense, prev, d, &format!("decoder.{i}"))?;
            prev = d;
        }
        check(&self.output, prev, cfg.input_dim, "output")?;
        for l in self.encoder.iter().chain(&self.decoder) {
            let n = l.dense.out_dim();
            let bn = &l.bn;
            if [&bn.gain, &bn.shift, &bn.running_mean, &bn.running_var]
                .iter()
                .any(|a| a.len() != n)
            {
                return Err(Error::Validation("batch-norm size disagrees with its layer".into()));
            }
            if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Validation("non-positive running variance".into()));
            }
        }
        if self.scaler.dim() != cfg.input_dim || self.scaler.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation("input scaler disagrees with input_dim".into()));
        }
        let mut all_finite = true;
        let mut probe = self.clone();
        for (_, t) in probe.params_mut() {
            all_finite &= t.iter().all(|v| v.is_finite());
        }
        if !all_finite {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Compact JSON document; floats use shortest round-trip formatting, so
    /// save → load → save reproduces identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: VaeModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = io::create(path)?;
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: VaeModel = serde_json::from_reader(io::open(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }
}

/// Result of [`VaeModel::forward`].
#[derive(Debug, Clone)]
pub enum ForwardResult {
    Cache(Box<ForwardCache>),
    Output(ForwardOutput),
}

impl ForwardResult {
    pub fn output(&self) -> &ForwardOutput {
        match self {
            ForwardResult::Cache(c) => &c.output,
            ForwardResult::Output(o) => o,
        }
    }
}
