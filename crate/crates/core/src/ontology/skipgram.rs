//! Skip-gram with negative sampling over a walk corpus.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WalkCorpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate, decayed linearly to `min_lr` over training.
    pub lr: f64,
    pub min_lr: f64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        SkipGramParams {
            dim: 5,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_lr: 1e-4,
        }
    }
}

/// Per-node input and context vectors, rows in `node_ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub node_ids: Vec<String>,
    pub input: Array2<f64>,
    pub context: Array2<f64>,
}

impl NodeEmbeddings {
    pub fn dim(&self) -> usize {
        self.input.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramReport {
    pub embeddings: NodeEmbeddings,
    /// Mean pair objective `-ln σ(u_ctx·v) - Σ ln σ(-u_neg·v)` after each
    /// epoch, with the negative term taken in expectation over the noise
    /// distribution (same skip rule as training).
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Unigram^0.75 noise distribution; alias table for O(1) draws.
struct NoiseTable {
    probs: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

impl NoiseTable {
    fn new(counts: &[usize]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        let alias = WeightedAliasIndex::new(weights.clone())
            .map_err(|e| Error::Input(format!("cannot build noise distribution: {e}")))?;
        Ok(NoiseTable {
            probs: weights.iter().map(|w| w / total).collect(),
            alias,
        })
    }

    fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        self.alias.sample(rng)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Total objective over the pair multiset with negatives in expectation:
/// `k Σ_{n ∉ {c, x}} P(n) · -ln σ(-u_n·v_c)` per pair `(c, x)`.
fn expected_objective(
    input: &[f64],
    context: &[f64],
    dim: usize,
    pair_counts: &BTreeMap<(usize, usize), usize>,
    noise: &NoiseTable,
    negatives: usize,
) -> f64 {
    let n = input.len() / dim;
    let neg_term = |c: usize, t: usize| {
        noise.prob(t) * neg_log_sigmoid(-dot(&input[c * dim..(c + 1) * dim], &context[t * dim..(t + 1) * dim]))
    };
    let mut per_center: Vec<Option<f64>> = vec![None; n];
    let k = negatives as f64;
    let mut total = 0.0;
    for (&(c, x), &m) in pair_counts {
        let all = *per_center[c].get_or_insert_with(|| (0..n).map(|t| neg_term(c, t)).sum());
        let mut neg = all - neg_term(c, c);
        if x != c {
            neg -= neg_term(c, x);
        }
        let pos = neg_log_sigmoid(dot(&input[c * dim..(c + 1) * dim], &context[x * dim..(x + 1) * dim]));
        total += m as f64 * (pos + k * neg);
    }
    total
}

/// Trains input/context vectors by SGD over every (centre, context) pair
/// within `window` positions. Negatives equal to the centre or the context
/// node are skipped. Single-threaded and deterministic for a given seed.
pub fn train_skipgram(corpus: &WalkCorpus, params: &SkipGramParams, seed: u64) -> Result<SkipGramReport> {
    if params.dim == 0 || params.window == 0 || params.negatives == 0 || params.epochs == 0 {
        return Err(Error::Input(
            "skip-gram dim, window, negatives and epochs must be positive".into(),
        ));
    }
    let n = corpus.node_ids.len();
    let mut counts = vec![0usize; n];
    let mut pairs_per_epoch = 0usize;
    let mut pair_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for walk in &corpus.walks {
        if let Some(&bad) = walk.iter().find(|&&node| node >= n) {
            return Err(Error::Input(format!("walk references unknown node {bad}")));
        }
        for (i, &node) in walk.iter().enumerate() {
            counts[node] += 1;
            let lo = i.saturating_sub(params.window);
            let hi = (i + params.window).min(walk.len() - 1);
            pairs_per_epoch += hi - lo;
            for j in (lo..=hi).filter(|&j| j != i) {
                *pair_counts.entry((node, walk[j])).or_default() += 1;
            }
        }
    }
    if pairs_per_epoch == 0 {
        return Err(Error::Input("walk corpus contains no context pairs".into()));
    }

    let dim = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-bound..bound)).collect();
    let mut context = vec![0.0; n * dim];
    let noise = NoiseTable::new(&counts)?;

    let total_pairs = (pairs_per_epoch * params.epochs) as f64;
    let mut done = 0usize;
    let mut grad_in = vec![0.0; dim];
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    for _ in 0..params.epochs {
        for walk in &corpus.walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(params.window);
                let hi = (i + params.window).min(walk.len() - 1);
                for j in (lo..=hi).filter(|&j| j != i) {
                    let ctx = walk[j];
                    let lr = params.lr - (params.lr - params.min_lr) * (done as f64 / total_pairs);
                    done += 1;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let v = center * dim..(center + 1) * dim;

                    let mut step = |target: usize, label: f64, input: &[f64], context: &mut [f64]| {
                        let t = target * dim..(target + 1) * dim;
                        let score = dot(&input[v.clone()], &context[t.clone()]);
                        let g = lr * (label - sigmoid(score));
                        for k in 0..dim {
                            grad_in[k] += g * context[t.start + k];
                            context[t.start + k] += g * input[v.start + k];
                        }
                    };

                    step(ctx, 1.0, &input, &mut context);
                    for _ in 0..params.negatives {
                        let neg = noise.draw(&mut rng);
                        if neg == ctx || neg == center {
                            continue;
                        }
                        step(neg, 0.0, &input, &mut context);
                    }
                    for k in 0..dim {
                        input[v.start + k] += grad_in[k];
                    }
                }
            }
        }
        epoch_losses.push(
            expected_objective(&input, &context, dim, &pair_counts, &noise, params.negatives)
                / pairs_per_epoch as f64,
        );
    }

    if input.iter().chain(&context).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("skip-gram produced non-finite embeddings".into()));
    }
    let shape = (n, dim);
    Ok(SkipGramReport {
        embeddings: NodeEmbeddings {
            node_ids: corpus.node_ids.clone(),
            input: Array2::from_shape_vec(shape, input).expect("shape"),
            context: Array2::from_shape_vec(shape, context).expect("shape"),
        },
        epoch_losses,
    })
}
