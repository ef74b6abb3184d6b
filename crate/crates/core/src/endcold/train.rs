use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::endcold::{EndColdConfig, EndColdModel};
use crate::error::{Error, Result};
use crate::grad::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::graph::{normalize, CqaGraph, EdgeKind, NormalizedAdjacency};
use crate::model::{NodeId, Quad, TrainingCase};
use crate::seq::{derive_pairs, PairConstraint};

/// Training objective for the end-to-end model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Mean squared error against vote scores.
    Mse,
    /// Hinge on same-question answerer pairs, `max(0, margin + f(-) - f(+))`.
    Pairwise { margin: f64 },
}

impl EndColdModel {
    /// Minibatch Adam over full-graph encodings, with the step decaying
    /// linearly to a hundredth. Returns the mean batch loss of every epoch.
    pub fn train(&mut self, graph: &CqaGraph, cases: &[TrainingCase], cfg: &EndColdConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if graph.counts() != self.counts {
            return Err(Error::ShapeMismatch {
                op: "train",
                left: (graph.node_count(), 0),
                right: (self.counts.total(), 0),
            });
        }
        let full = normalize(graph);
        if cases.is_empty() {
            return Err(Error::EmptyInput("no training cases".into()));
        }
        let pairs = match cfg.objective {
            Objective::Mse => Vec::new(),
            Objective::Pairwise { .. } => {
                let p = derive_pairs(cases);
                if p.is_empty() {
                    return Err(Error::DegenerateInput("no ranking pairs among the training cases".into()));
                }
                p
            }
        };
        let items = if pairs.is_empty() { cases.len() } else { pairs.len() };
        let mut state = AdamState::new(self.params());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..items).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        let total_steps = cfg.epochs * items.div_ceil(cfg.batch_size);
        let mut step = 0usize;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(cfg.batch_size) {
                let questions: BTreeSet<NodeId> = match cfg.objective {
                    Objective::Mse => batch.iter().map(|&i| cases[i].q).collect(),
                    Objective::Pairwise { .. } => batch.iter().map(|&i| pairs[i].q).collect(),
                };
                let (adj, hidden) = if cfg.cold_start {
                    let (g, hidden) = hide_questions(graph, &questions)?;
                    (normalize(&g), hidden)
                } else {
                    (full.clone(), Vec::new())
                };
                let (loss, grads) = match cfg.objective {
                    Objective::Mse => {
                        let quads: Vec<Quad> = batch.iter().map(|&i| cases[i].quad()).collect();
                        let y: Vec<f64> = batch.iter().map(|&i| cases[i].y).collect();
                        self.mse_gradients_hiding(&adj, &quads, &y, &hidden)?
                    }
                    Objective::Pairwise { margin } => {
                        let chosen: Vec<&PairConstraint> = batch.iter().map(|&i| &pairs[i]).collect();
                        self.pair_gradients_hiding(&adj, &chosen, margin, &hidden)?
                    }
                };
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("endcold loss is {loss} in epoch {epoch}")));
                }
                let adam = AdamConfig {
                    step_size: cfg.step_size * (1.0 - 0.99 * step as f64 / total_steps as f64),
                    ..AdamConfig::default()
                };
                adam_step(&mut self.params_mut(), &grads, &mut state, &adam)?;
                step += 1;
                total += loss;
                batches += 1;
            }
            let mean = total / batches as f64;
            log::debug!("endcold epoch {epoch}: loss {mean:.6}");
            trace.push(mean);
        }
        Ok(trace)
    }

    /// Mean pair hinge and its gradients, in [`EndColdModel::params`] order.
    pub fn pair_gradients(&self, adj: &NormalizedAdjacency, pairs: &[&PairConstraint], margin: f64) -> Result<(f64, Vec<Tensor>)> {
        self.pair_gradients_hiding(adj, pairs, margin, &[])
    }

    fn pair_gradients_hiding(
        &self,
        adj: &NormalizedAdjacency,
        pairs: &[&PairConstraint],
        margin: f64,
        hidden: &[usize],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let h2 = self.encode_on_tape(&mut tape, &vars, adj, hidden)?;
        let (plus, minus): (Vec<Quad>, Vec<Quad>) = pairs.iter().map(|p| (p.quad(p.u_plus), p.quad(p.u_minus))).unzip();
        let pos = self.score_on_tape(&mut tape, &vars, h2, &plus)?;
        let neg = self.score_on_tape(&mut tape, &vars, h2, &minus)?;
        let sum = tape.hinge(pos, neg, margin)?;
        let loss = tape.scale(sum, 1.0 / pairs.len().max(1) as f64)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item(), vars.all().into_iter().map(|v| grads.wrt(v)).collect()))
    }
}

/// `graph` without the answer edges of `questions`, plus the global rows of
/// those questions.
fn hide_questions(graph: &CqaGraph, questions: &BTreeSet<NodeId>) -> Result<(CqaGraph, Vec<usize>)> {
    let edges = graph
        .edges()
        .iter()
        .copied()
        .filter(|e| !(e.kind == EdgeKind::Answered && questions.contains(&e.dst)));
    let g = CqaGraph::from_edges(graph.counts(), edges)?;
    Ok((g, questions.iter().map(|&q| graph.global(q)).collect()))
}

/// Builds and trains in one go. Returns the model and its per-epoch loss
/// trace.
pub fn fit(graph: &CqaGraph, cases: &[TrainingCase], cfg: &EndColdConfig) -> Result<(EndColdModel, Vec<f64>)> {
    let mut model = EndColdModel::new(graph, cfg)?;
    let trace = model.train(graph, cases, cfg)?;
    Ok((model, trace))
}
