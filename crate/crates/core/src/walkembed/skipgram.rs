use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::NodeCounts;
use crate::walkembed::{EmbeddingTable, WalkConfig};

const WALKS_PER_CHUNK: usize = 64;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln sigmoid(x)`, computed without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative-sampling loss for one center vector `v`, its context output
/// vector and the output vectors of the sampled negatives.
pub fn sample_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(context, center)) + negatives.iter().map(|u| neg_log_sigmoid(-dot(u, center))).sum::<f64>()
}

/// Gradients of [`sample_loss`] with respect to the center, the context and
/// each negative, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `label - sigmoid(u.v)`: the descent direction coefficient shared by the
/// analytic gradient and the in-place trainer.
fn coefficient(label: f64, score: f64) -> f64 {
    label - sigmoid(score)
}

pub fn sample_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SampleGradients {
    let mut gv = vec![0.0; center.len()];
    let mut out = |u: &[f64], label: f64| {
        let g = coefficient(label, dot(u, center));
        for (acc, x) in gv.iter_mut().zip(u) {
            *acc -= g * x;
        }
        center.iter().map(|x| -g * x).collect::<Vec<f64>>()
    };
    let context_grad = out(context, 1.0);
    let negative_grads = negatives.iter().map(|u| out(u, 0.0)).collect();
    SampleGradients {
        center: gv,
        context: context_grad,
        negatives: negative_grads,
    }
}

/// Shared-memory weight matrix. Updates use relaxed atomics, which makes
/// the parallel mode lock-free (and racy by design).
struct Shared {
    dim: usize,
    cells: Vec<AtomicU64>,
}

impl Shared {
    fn new(values: impl Iterator<Item = f64>, dim: usize) -> Self {
        Shared {
            dim,
            cells: values.map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    fn load(&self, row: usize, out: &mut [f64]) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn add_scaled(&self, row: usize, k: f64, x: &[f64]) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (c, v) in cells.iter().zip(x) {
            let old = f64::from_bits(c.load(Ordering::Relaxed));
            c.store((old + k * v).to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f64> {
        self.cells.into_iter().map(|c| f64::from_bits(c.into_inner())).collect()
    }
}

struct Trainer<'a> {
    cfg: &'a WalkConfig,
    input: Shared,
    output: Shared,
    noise: WeightedAliasIndex<f64>,
    total_walks: usize,
}

struct Scratch {
    v: Vec<f64>,
    u: Vec<f64>,
    grad_v: Vec<f64>,
}

impl Trainer<'_> {
    fn step_size(&self, epoch: usize, walk: usize) -> f64 {
        let done = (epoch * self.total_walks + walk) as f64;
        let progress = done / (self.cfg.epochs * self.total_walks) as f64;
        self.cfg.step_size * (1.0 - 0.99 * progress)
    }

    /// One SGD update for a (center, context) pair plus sampled negatives.
    fn update<R: Rng>(&self, center: usize, context: usize, lr: f64, rng: &mut R, s: &mut Scratch) {
        self.input.load(center, &mut s.v);
        s.grad_v.fill(0.0);
        let negatives = (0..self.cfg.negatives).map(|_| self.noise.sample(rng));
        let targets = std::iter::once((context, 1.0)).chain(negatives.map(|n| (n, 0.0)));
        for (target, label) in targets {
            if label == 0.0 && target == context {
                continue;
            }
            self.output.load(target, &mut s.u);
            let g = coefficient(label, dot(&s.u, &s.v));
            for (acc, x) in s.grad_v.iter_mut().zip(&s.u) {
                *acc += g * x;
            }
            self.output.add_scaled(target, lr * g, &s.v);
        }
        self.input.add_scaled(center, lr, &s.grad_v);
    }

    fn train_chunk(&self, epoch: usize, chunk: usize, walks: &[Vec<usize>]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream((epoch * self.total_walks.div_ceil(WALKS_PER_CHUNK) + chunk) as u64);
        let dim = self.cfg.dim;
        let mut s = Scratch {
            v: vec![0.0; dim],
            u: vec![0.0; dim],
            grad_v: vec![0.0; dim],
        };
        for (k, walk) in walks.iter().enumerate() {
            let lr = self.step_size(epoch, chunk * WALKS_PER_CHUNK + k);
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(self.cfg.window);
                let hi = (i + self.cfg.window + 1).min(walk.len());
                for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j != i {
                        self.update(center, context, lr, &mut rng, &mut s);
                    }
                }
            }
        }
    }
}

/// Trains node vectors on `walks` (global indices into `counts`). Nodes that
/// never appear in a walk of length two or more keep a zero vector.
pub fn train_skipgram(walks: &[Vec<usize>], counts: NodeCounts, cfg: &WalkConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    let n = counts.total();
    let mut freq = vec![0usize; n];
    for w in walks.iter().filter(|w| w.len() >= 2) {
        for &node in w {
            if node >= n {
                return Err(Error::UnknownNode(format!("walk node {node} outside {n} nodes")));
            }
            freq[node] += 1;
        }
    }
    if freq.iter().all(|&f| f == 0) {
        return Err(Error::DegenerateInput("every walk has length one".into()));
    }
    let weights = freq.iter().map(|&f| (f as f64).powf(0.75)).collect();
    let noise = WeightedAliasIndex::new(weights).map_err(|e| Error::DegenerateInput(format!("noise distribution: {e}")))?;

    let dim = cfg.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = 0.5 / dim as f64;
    let init: Vec<f64> = (0..n * dim).map(|_| init_rng.random_range(-half..half)).collect();
    let trainer = Trainer {
        cfg,
        input: Shared::new(init.into_iter(), dim),
        output: Shared::new(std::iter::repeat_n(0.0, n * dim), dim),
        noise,
        total_walks: walks.len(),
    };
    for epoch in 0..cfg.epochs {
        let chunks = walks.chunks(WALKS_PER_CHUNK).enumerate();
        if cfg.parallel {
            chunks
                .collect::<Vec<_>>()
                .into_par_iter()
                .for_each(|(c, w)| trainer.train_chunk(epoch, c, w));
        } else {
            chunks.for_each(|(c, w)| trainer.train_chunk(epoch, c, w));
        }
        log::debug!("skip-gram epoch {} of {} done", epoch + 1, cfg.epochs);
    }
    let mut data = trainer.input.into_values();
    for (node, &f) in freq.iter().enumerate() {
        if f == 0 {
            data[node * dim..(node + 1) * dim].fill(0.0);
        }
    }
    let table = EmbeddingTable::new(counts, dim, data)?;
    if !table.is_finite() {
        return Err(Error::Divergence("skip-gram produced non-finite vectors".into()));
    }
    Ok(table)
}
