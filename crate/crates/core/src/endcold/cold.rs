use crate::endcold::EndColdModel;
use crate::error::{Error, Result};
use crate::graph::{attach_cold_question, normalize, CqaGraph, UnknownTagPolicy};
use crate::model::{NodeId, NodeKind, Quad};

/// Scores for one cold question against a list of candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdScores {
    /// The node the question was attached as.
    pub question: NodeId,
    /// Tags that survived the unknown-tag policy.
    pub tags: Vec<NodeId>,
    /// One score per candidate, in input order.
    pub scores: Vec<f64>,
}

/// Attaches the question to `base`, re-normalizes, encodes once and scores
/// every candidate. Candidates the graph has never seen are added as
/// isolated, zero-feature users, so they all receive the same score. An
/// asker with no training edges is treated as absent (zero asker slot).
pub fn score_cold(
    model: &EndColdModel,
    base: &CqaGraph,
    tags: &[NodeId],
    asker: Option<NodeId>,
    candidates: &[NodeId],
    policy: UnknownTagPolicy,
) -> Result<ColdScores> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    if let Some(c) = candidates.iter().find(|c| c.kind != NodeKind::User) {
        return Err(Error::UnknownNode(format!("candidate {c} is not a user")));
    }
    if let Some(a) = asker.filter(|a| a.kind != NodeKind::User) {
        return Err(Error::UnknownNode(format!("asker {a} is not a user")));
    }
    let asker = asker.filter(|&a| base.is_connected_node(a));
    let (mut ext, cold) = attach_cold_question(base, tags, asker, policy)?;
    let mut counts = ext.counts();
    for &c in candidates {
        counts.include(c);
    }
    if counts != ext.counts() {
        ext = CqaGraph::from_edges(counts, ext.edges().iter().copied())?;
    }
    let kept: Vec<NodeId> = ext
        .neighbors(ext.global(cold))
        .iter()
        .map(|&n| ext.node_at(n))
        .filter(|n| n.kind == NodeKind::Tag)
        .collect();
    let adj = normalize(&ext);
    let h2 = model.encode_features(&model.features_for(counts), &adj)?;
    let quads: Vec<Quad> = candidates
        .iter()
        .map(|&u| Quad {
            q: Some(cold),
            u,
            a: asker,
            t: kept.clone(),
        })
        .collect();
    let scores = model.predict_encoded(&h2, counts, &quads)?;
    Ok(ColdScores {
        question: cold,
        tags: kept,
        scores,
    })
}

/// Single-candidate form of [`score_cold`] with the default tag policy.
pub fn predict_cold(model: &EndColdModel, base: &CqaGraph, tags: &[NodeId], asker: Option<NodeId>, candidate: NodeId) -> Result<f64> {
    Ok(score_cold(model, base, tags, asker, &[candidate], UnknownTagPolicy::Drop)?.scores[0])
}
