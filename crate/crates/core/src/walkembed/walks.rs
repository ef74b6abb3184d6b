use std::num::NonZeroUsize;

use lru::LruCache;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;

use crate::graph::CqaGraph;
use crate::walkembed::WalkConfig;

/// Unnormalized second-order weight of stepping `prev -> cur -> next`.
pub fn transition_weight(graph: &CqaGraph, prev: usize, next: usize, p: f64, q: f64) -> f64 {
    if next == prev {
        1.0 / p
    } else if graph.has_edge(prev, next) {
        1.0
    } else {
        1.0 / q
    }
}

/// Normalized distribution over `cur`'s neighbors given the previous node,
/// in neighbor order.
pub fn transition_probs(graph: &CqaGraph, prev: usize, cur: usize, p: f64, q: f64) -> Vec<(usize, f64)> {
    let w: Vec<f64> = graph
        .neighbors(cur)
        .iter()
        .map(|&x| transition_weight(graph, prev, x, p, q))
        .collect();
    let total: f64 = w.iter().sum();
    graph.neighbors(cur).iter().zip(w).map(|(&x, v)| (x, v / total)).collect()
}

/// Biased second-order walker with a bounded cache of alias tables keyed by
/// `(prev, cur)`.
pub struct Walker<'g> {
    graph: &'g CqaGraph,
    p: f64,
    q: f64,
    cache: LruCache<(usize, usize), WeightedAliasIndex<f64>>,
}

impl<'g> Walker<'g> {
    pub fn new(graph: &'g CqaGraph, p: f64, q: f64, cache_size: usize) -> Self {
        let cap = NonZeroUsize::new(cache_size.max(1)).expect("nonzero");
        Walker {
            graph,
            p,
            q,
            cache: LruCache::new(cap),
        }
    }

    /// Samples the node after `cur`, having arrived from `prev`.
    /// Returns `None` at a dead end.
    pub fn step<R: Rng>(&mut self, prev: Option<usize>, cur: usize, rng: &mut R) -> Option<usize> {
        let nbrs = self.graph.neighbors(cur);
        if nbrs.is_empty() {
            return None;
        }
        let Some(prev) = prev else {
            return Some(nbrs[rng.random_range(0..nbrs.len())]);
        };
        if nbrs.len() == 1 {
            return Some(nbrs[0]);
        }
        let (graph, p, q) = (self.graph, self.p, self.q);
        let table = self.cache.get_or_insert((prev, cur), || {
            let w = nbrs.iter().map(|&x| transition_weight(graph, prev, x, p, q)).collect();
            WeightedAliasIndex::new(w).expect("positive finite transition weights")
        });
        Some(nbrs[table.sample(rng)])
    }

    pub fn walk<R: Rng>(&mut self, start: usize, length: usize, rng: &mut R) -> Vec<usize> {
        let mut walk = Vec::with_capacity(length);
        walk.push(start);
        let mut prev = None;
        while walk.len() < length {
            let cur = *walk.last().expect("non-empty");
            match self.step(prev, cur, rng) {
                Some(next) => {
                    prev = Some(cur);
                    walk.push(next);
                }
                None => break,
            }
        }
        walk
    }
}

/// Walk `r` from `start` gets its own ChaCha stream, so the result does not
/// depend on the number of worker threads.
fn walk_rng(seed: u64, round: usize, start: usize, nodes: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((round * nodes + start) as u64);
    rng
}

/// `walks_per_node` rounds; each round starts one walk at every node, in a
/// seeded shuffled order.
pub fn generate_walks(graph: &CqaGraph, cfg: &WalkConfig) -> Vec<Vec<usize>> {
    let n = graph.node_count();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_7A1C);
    let mut starts = Vec::with_capacity(n * cfg.walks_per_node);
    for round in 0..cfg.walks_per_node {
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(&mut order_rng);
        starts.extend(nodes.into_iter().map(|s| (round, s)));
    }
    starts
        .par_iter()
        .map_init(
            || Walker::new(graph, cfg.p, cfg.q, cfg.alias_cache),
            |walker, &(round, s)| {
                let mut rng = walk_rng(cfg.seed, round, s, n);
                walker.walk(s, cfg.walk_length, &mut rng)
            },
        )
        .collect()
}
