//! Ranking candidate answerers for a cold question.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::endcold::{score_cold, EndColdModel};
use crate::error::{Error, Result};
use crate::graph::{CqaGraph, UnknownTagPolicy};
use crate::model::{NodeId, Quad};
use crate::seq::RegressorModel;
use crate::walkembed::EmbeddingTable;

/// What is known about a cold question at routing time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RouteContext {
    pub tags: Vec<NodeId>,
    /// `None` for a new asker.
    pub asker: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingResult {
    pub context: RouteContext,
    /// Best first; equal scores ordered by ascending user index.
    pub ranked: Vec<(NodeId, f64)>,
    pub best: NodeId,
}

/// Anything that can score a candidate list for a context.
pub trait CandidateScorer: Sync {
    fn score(&self, ctx: &RouteContext, candidates: &[NodeId]) -> Result<Vec<f64>>;
}

impl<F> CandidateScorer for F
where
    F: Fn(&RouteContext, &[NodeId]) -> Result<Vec<f64>> + Sync,
{
    fn score(&self, ctx: &RouteContext, candidates: &[NodeId]) -> Result<Vec<f64>> {
        self(ctx, candidates)
    }
}

/// The end-to-end model over its training graph.
pub struct EndColdScorer<'a> {
    pub model: &'a EndColdModel,
    pub graph: &'a CqaGraph,
    pub policy: UnknownTagPolicy,
}

impl CandidateScorer for EndColdScorer<'_> {
    fn score(&self, ctx: &RouteContext, candidates: &[NodeId]) -> Result<Vec<f64>> {
        Ok(score_cold(self.model, self.graph, &ctx.tags, ctx.asker, candidates, self.policy)?.scores)
    }
}

/// A sequential regressor over fixed embeddings. The question slot is
/// always zero at routing time; tags missing from the table count as zero
/// vectors.
pub struct SeqScorer<'a> {
    pub model: &'a RegressorModel,
    pub table: &'a EmbeddingTable,
}

impl CandidateScorer for SeqScorer<'_> {
    fn score(&self, ctx: &RouteContext, candidates: &[NodeId]) -> Result<Vec<f64>> {
        let quads: Vec<Quad> = candidates
            .iter()
            .map(|&u| Quad {
                q: None,
                u,
                a: ctx.asker,
                t: ctx.tags.clone(),
            })
            .collect();
        self.model.predict_quads(self.table, &quads)
    }
}

fn by_rank(a: &(NodeId, f64), b: &(NodeId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.local.cmp(&b.0.local))
}

/// Sorts candidates by score, highest first, breaking ties by user index.
pub fn rank_candidates(candidates: &[NodeId], scores: &[f64]) -> Vec<(NodeId, f64)> {
    let mut ranked: Vec<(NodeId, f64)> = candidates.iter().copied().zip(scores.iter().copied()).collect();
    ranked.sort_by(by_rank);
    ranked
}

pub fn route(scorer: &dyn CandidateScorer, ctx: &RouteContext, candidates: &[NodeId]) -> Result<RoutingResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let scores = scorer.score(ctx, candidates)?;
    if scores.len() != candidates.len() {
        return Err(Error::ShapeMismatch {
            op: "route",
            left: (scores.len(), 1),
            right: (candidates.len(), 1),
        });
    }
    let ranked = rank_candidates(candidates, &scores);
    Ok(RoutingResult {
        context: ctx.clone(),
        best: ranked[0].0,
        ranked,
    })
}

/// Routes every item on a pool of `threads` workers. Results keep input
/// order; a failing item does not stop the others.
pub fn route_batch(
    scorer: &dyn CandidateScorer,
    items: &[(RouteContext, Vec<NodeId>)],
    threads: usize,
) -> Result<Vec<Result<RoutingResult>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(|(ctx, cands)| route(scorer, ctx, cands)).collect()))
}
