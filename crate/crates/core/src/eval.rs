//! Ranking metrics and the test-split evaluation harness.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, NodeId, Split};
use crate::route::{route_batch, CandidateScorer, RouteContext, RoutingResult};

/// 1-based position of `truth`, counting every candidate whose score is at
/// least the truth's score (so ties always go against the truth).
pub fn rank_of_best(result: &RoutingResult, truth: NodeId) -> Result<usize> {
    let score = result
        .ranked
        .iter()
        .find(|(u, _)| *u == truth)
        .map(|p| p.1)
        .ok_or(Error::TruthNotInCandidates)?;
    Ok(result.ranked.iter().filter(|p| p.1 >= score).count())
}

/// Fraction of ranks that are at most `k`.
pub fn precision_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Mean of `(|C| - rank) / (|C| - 1)`.
pub fn accuracy(ranks: &[usize], candidate_counts: &[usize]) -> Result<f64> {
    if ranks.len() != candidate_counts.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            left: (ranks.len(), 1),
            right: (candidate_counts.len(), 1),
        });
    }
    if let Some(&n) = candidate_counts.iter().find(|&&n| n < 2) {
        return Err(Error::DegenerateCandidateSet(n));
    }
    if ranks.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ranks
        .iter()
        .zip(candidate_counts)
        .map(|(&r, &n)| (n - r) as f64 / (n - 1) as f64)
        .sum();
    Ok(total / ranks.len() as f64)
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionDetail {
    pub question: NodeId,
    pub rank: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub questions: usize,
    pub precision_at_1: f64,
    pub precision_at_3: f64,
    pub accuracy: f64,
    pub mrr: f64,
    /// Test questions left out because none of their tags occur in training.
    pub skipped: usize,
    pub details: Vec<QuestionDetail>,
}

impl MetricReport {
    pub fn from_details(details: Vec<QuestionDetail>) -> Result<Self> {
        if details.is_empty() {
            return Err(Error::EmptyInput("no evaluated questions".into()));
        }
        let ranks: Vec<usize> = details.iter().map(|d| d.rank).collect();
        let counts: Vec<usize> = details.iter().map(|d| d.candidates).collect();
        Ok(MetricReport {
            questions: details.len(),
            precision_at_1: precision_at_k(&ranks, 1),
            precision_at_3: precision_at_k(&ranks, 3),
            accuracy: accuracy(&ranks, &counts)?,
            mrr: mean_reciprocal_rank(&ranks),
            skipped: 0,
            details,
        })
    }
}

/// One routing problem with a known answer.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub question: NodeId,
    pub context: RouteContext,
    pub candidates: Vec<NodeId>,
    pub truth: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Pad candidate pools with users who answer in training, up to this
    /// size; 0 keeps the actual answerers only.
    pub pool_size: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            pool_size: 0,
            seed: 0,
            threads: 1,
        }
    }
}

/// Builds the routing problems of a test split. Candidates are the distinct
/// answerers (by index) followed by distractors drawn uniformly from users
/// who answer in training; the truth is the best answerer. New-asker
/// questions carry no asker. Tags unseen in training are dropped, and
/// questions left with no tags are skipped (the count is returned).
pub fn eval_items(dataset: &Dataset, split: Split, opts: &EvalOptions) -> Result<(Vec<EvalItem>, usize)> {
    let pool: Vec<NodeId> = dataset
        .train_records()
        .map(|r| r.answerer)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let seed = opts.seed;
    eval_items_with(dataset, split, opts.pool_size, |q, exclude, n| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(q.local as u64);
        let others: Vec<NodeId> = pool.iter().copied().filter(|u| !exclude.contains(u)).collect();
        others.choose_multiple(&mut rng, n).copied().collect()
    })
}

/// [`eval_items`] with a caller-supplied distractor source, called as
/// `distract(question, excluded users, count)` where the excluded users are
/// the answerers and the asker.
pub fn eval_items_with<F>(dataset: &Dataset, split: Split, pool_size: usize, mut distract: F) -> Result<(Vec<EvalItem>, usize)>
where
    F: FnMut(NodeId, &BTreeSet<NodeId>, usize) -> Vec<NodeId>,
{
    if split == Split::Train {
        return Err(Error::InvalidConfig("evaluation needs a test split".into()));
    }
    let corpus = &dataset.corpus;
    let groups = corpus.by_question();
    let best = corpus.best_answerers();
    let train_tags: BTreeSet<NodeId> = dataset.train_records().flat_map(|r| r.tags.iter().copied()).collect();
    let mut items = Vec::new();
    let mut skipped = 0;
    for q in dataset.questions_in(split) {
        let Some(idx) = groups.get(&q) else { continue };
        let first = &corpus.records[idx[0]];
        let tags: Vec<NodeId> = first.tags.iter().copied().filter(|t| train_tags.contains(t)).collect();
        if tags.is_empty() {
            log::warn!("skipping {}: no tag seen in training", corpus.ids.name(q));
            skipped += 1;
            continue;
        }
        let answerers: BTreeSet<NodeId> = idx.iter().map(|&i| corpus.records[i].answerer).collect();
        let mut candidates: Vec<NodeId> = answerers.iter().copied().collect();
        if pool_size > candidates.len() {
            let mut exclude = answerers.clone();
            exclude.insert(first.asker);
            candidates.extend(distract(q, &exclude, pool_size - candidates.len()));
        }
        let asker = (split == Split::TestExistingAsker).then_some(first.asker);
        items.push(EvalItem {
            question: q,
            context: RouteContext { tags, asker },
            candidates,
            truth: best[&q],
        });
    }
    Ok((items, skipped))
}

/// Routes every item and aggregates the metrics; the first failing item
/// aborts the evaluation.
pub fn evaluate_items(scorer: &dyn CandidateScorer, items: &[EvalItem], threads: usize) -> Result<MetricReport> {
    let batch: Vec<(RouteContext, Vec<NodeId>)> = items.iter().map(|it| (it.context.clone(), it.candidates.clone())).collect();
    let results = route_batch(scorer, &batch, threads)?;
    let mut details = Vec::with_capacity(items.len());
    for (item, result) in items.iter().zip(results) {
        let result = result?;
        details.push(QuestionDetail {
            question: item.question,
            rank: rank_of_best(&result, item.truth)?,
            candidates: item.candidates.len(),
        });
    }
    MetricReport::from_details(details)
}

pub fn evaluate(scorer: &dyn CandidateScorer, dataset: &Dataset, split: Split, opts: &EvalOptions) -> Result<MetricReport> {
    let (items, skipped) = eval_items(dataset, split, opts)?;
    if items.is_empty() {
        return Err(Error::EmptyInput(format!("split {} has no evaluable questions", split.as_str())));
    }
    let mut report = evaluate_items(scorer, &items, opts.threads)?;
    report.skipped = skipped;
    Ok(report)
}
