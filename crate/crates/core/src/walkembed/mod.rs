//! Second-order biased random walks and skip-gram with negative sampling.

mod skipgram;
mod table;
mod walks;

pub use skipgram::{sample_gradients, sample_loss, train_skipgram, SampleGradients};
pub use table::EmbeddingTable;
pub use walks::{generate_walks, transition_probs, transition_weight, Walker};

use crate::error::{Error, Result};
use crate::graph::CqaGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial SGD step; decays linearly to a hundredth of this.
    pub step_size: f64,
    pub seed: u64,
    /// Maximum number of cached `(prev, cur)` alias tables per worker.
    pub alias_cache: usize,
    /// Lock-free parallel skip-gram updates. Faster, but not reproducible.
    pub parallel: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            window: 10,
            dim: 128,
            negatives: 5,
            epochs: 1,
            step_size: 0.025,
            seed: 0,
            alias_cache: 1 << 16,
            parallel: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("walk_length", self.walk_length),
            ("walks_per_node", self.walks_per_node),
            ("window", self.window),
            ("dim", self.dim),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        for (name, v) in [("p", self.p), ("q", self.q), ("step_size", self.step_size)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a positive number")));
            }
        }
        Ok(())
    }
}

/// Walks from every node, then skip-gram over the walks.
pub fn embed_graph(graph: &CqaGraph, cfg: &WalkConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    let walks = generate_walks(graph, cfg);
    log::info!("generated {} walks over {} nodes", walks.len(), graph.node_count());
    train_skipgram(&walks, graph.counts(), cfg)
}
