//! The full synthetic benchmark: generate, split, train every model and
//! evaluate on both cold-question pools.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::endcold::{fit, EndColdConfig, EndColdModel};
use crate::error::Result;
use crate::eval::{eval_items, eval_items_with, evaluate_items, EvalItem, EvalOptions, MetricReport};
use crate::graph::{build_graph_with_counts, CqaGraph, UnknownTagPolicy};
use crate::model::{make_splits, CorpusStats, Dataset, NodeId, Quad, Split, SplitConfig};
use crate::route::{CandidateScorer, EndColdScorer, RouteContext, SeqScorer};
use crate::seq::{
    assemble_batch, derive_pairs, train_pairwise, train_pointwise, FeatureSpec, RegressorKind, RegressorModel, SeqHyper, Variant,
};
use crate::synth::{generate, SynthConfig, SynthCorpus};
use crate::walkembed::{embed_graph, EmbeddingTable, WalkConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub walk: WalkConfig,
    pub endcold: EndColdConfig,
    pub seq: SeqHyper,
    /// Candidate pool size per test question.
    pub pool_size: usize,
    pub distractors: Distractors,
    pub threads: usize,
}

/// How candidate pools are filled up beyond the actual answerers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distractors {
    /// Uniformly from users who answer in training.
    Uniform,
    /// Drawn like answerers from the latent affinities.
    Plausible,
}

impl Distractors {
    pub fn as_str(self) -> &'static str {
        match self {
            Distractors::Uniform => "uniform",
            Distractors::Plausible => "plausible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(Distractors::Uniform),
            "plausible" => Some(Distractors::Plausible),
            _ => None,
        }
    }
}

impl ExperimentConfig {
    /// Widths and walk budgets small enough for a single core in a few
    /// minutes, every random stream derived from `seed`.
    pub fn desk_scale(seed: u64) -> Self {
        let dim = 32;
        let hidden = [64, 32, 16];
        ExperimentConfig {
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            split: SplitConfig {
                test_fraction: 0.15,
                seed,
                ..SplitConfig::default()
            },
            walk: WalkConfig {
                walk_length: 40,
                walks_per_node: 5,
                window: 5,
                dim,
                seed,
                ..WalkConfig::default()
            },
            endcold: EndColdConfig {
                d0: dim,
                d1: dim,
                d2: dim,
                hidden,
                seed,
                ..EndColdConfig::default()
            },
            seq: SeqHyper {
                hidden,
                seed,
                ..SeqHyper::default()
            },
            pool_size: 10,
            distractors: Distractors::Uniform,
            threads: 1,
        }
    }
}

/// The four headline metrics of one model on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub questions: usize,
    pub precision_at_1: f64,
    pub precision_at_3: f64,
    pub accuracy: f64,
    pub mrr: f64,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        MetricSummary {
            questions: r.questions,
            precision_at_1: r.precision_at_1,
            precision_at_3: r.precision_at_3,
            accuracy: r.accuracy,
            mrr: r.mrr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub model: String,
    pub split: String,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub corpus: CorpusStats,
    pub train_questions: usize,
    pub rows: Vec<ResultRow>,
    /// Wall-clock seconds per stage; not part of the reproducible output.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn get(&self, model: &str, split: Split) -> Option<&MetricSummary> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.split == split.as_str())
            .map(|r| &r.metrics)
    }

    /// Fixed-width text table, one line per model and split.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<14} {:>6} {:>7} {:>7} {:>8} {:>7}\n",
            "model", "split", "n", "P@1", "P@3", "Acc", "MRR"
        );
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{:<16} {:<14} {:>6} {:>7.4} {:>7.4} {:>8.4} {:>7.4}\n",
                r.model, r.split, m.questions, m.precision_at_1, m.precision_at_3, m.accuracy, m.mrr
            ));
        }
        out
    }
}

pub const SPLITS: [Split; 2] = [Split::TestExistingAsker, Split::TestNewAsker];

/// Model names used in reports.
pub fn seq_pointwise_name(v: Variant) -> String {
    format!("seq-{}", v.as_str())
}
pub const ENDCOLD: &str = "endcold";
pub const SEQ_PAIRWISE: &str = "seq-pairwise";
pub const ORACLE: &str = "oracle";

/// Training graph over the full id space, holding only training records.
pub fn training_graph(dataset: &Dataset) -> Result<CqaGraph> {
    build_graph_with_counts(dataset.train_records(), dataset.counts())
}

pub fn fit_seq_pointwise(
    dataset: &Dataset,
    table: &EmbeddingTable,
    variant: Variant,
    kind: RegressorKind,
    hyper: &SeqHyper,
) -> Result<RegressorModel> {
    let cases = dataset.training_cases();
    let quads: Vec<Quad> = cases.iter().map(|c| c.quad()).collect();
    let y: Vec<f64> = cases.iter().map(|c| c.y).collect();
    let spec = FeatureSpec::new(variant, table.dim());
    let x = assemble_batch(table, &quads, spec)?;
    Ok(train_pointwise(&x, &y, spec, kind, hyper)?.0)
}

pub fn fit_seq_pairwise(dataset: &Dataset, table: &EmbeddingTable, variant: Variant, hyper: &SeqHyper) -> Result<RegressorModel> {
    let pairs = derive_pairs(&dataset.training_cases());
    Ok(train_pairwise(&pairs, table, FeatureSpec::new(variant, table.dim()), hyper)?.0)
}

/// Scores candidates by their latent affinity for the question's tags.
pub fn oracle_scorer(s: &SynthCorpus) -> impl Fn(&RouteContext, &[NodeId]) -> Result<Vec<f64>> + Sync + '_ {
    move |ctx: &RouteContext, c: &[NodeId]| Ok(c.iter().map(|&u| s.affinity(u, &ctx.tags)).collect())
}

/// Everything trained by one benchmark run.
pub struct Trained {
    pub synth: SynthCorpus,
    pub dataset: Dataset,
    pub graph: CqaGraph,
    pub table: EmbeddingTable,
    /// Pointwise models in TA, A, T, Un order.
    pub seq: Vec<(Variant, RegressorModel)>,
    pub pairwise: RegressorModel,
    pub endcold: EndColdModel,
    pub timings: BTreeMap<String, f64>,
}

struct Lap(Instant);

impl Lap {
    fn record(&mut self, name: &str, timings: &mut BTreeMap<String, f64>) {
        let secs = self.0.elapsed().as_secs_f64();
        log::info!("{name}: {secs:.1}s");
        timings.insert(name.to_string(), secs);
        self.0 = Instant::now();
    }
}

pub fn train_all(cfg: &ExperimentConfig) -> Result<Trained> {
    let mut timings = BTreeMap::new();
    let mut lap = Lap(Instant::now());
    let synth = generate(&cfg.synth)?;
    let dataset = make_splits(synth.corpus.clone(), &cfg.split)?;
    let graph = training_graph(&dataset)?;
    lap.record("generate", &mut timings);
    let table = embed_graph(&graph, &cfg.walk)?;
    lap.record("embed", &mut timings);
    let mut seq = Vec::new();
    for v in [Variant::TA, Variant::A, Variant::T, Variant::Un] {
        seq.push((v, fit_seq_pointwise(&dataset, &table, v, RegressorKind::Mlp, &cfg.seq)?));
    }
    lap.record("seq-pointwise", &mut timings);
    let pairwise = fit_seq_pairwise(&dataset, &table, Variant::TA, &cfg.seq)?;
    lap.record("seq-pairwise", &mut timings);
    let (endcold, _) = fit(&graph, &dataset.training_cases(), &cfg.endcold)?;
    lap.record("endcold", &mut timings);
    Ok(Trained {
        synth,
        dataset,
        graph,
        table,
        seq,
        pairwise,
        endcold,
        timings,
    })
}

/// The routing problems of one split under the configured pools.
pub fn benchmark_items(t: &Trained, cfg: &ExperimentConfig, split: Split) -> Result<Vec<EvalItem>> {
    let (items, _) = match cfg.distractors {
        Distractors::Uniform => {
            let opts = EvalOptions {
                pool_size: cfg.pool_size,
                seed: cfg.split.seed,
                threads: cfg.threads,
            };
            eval_items(&t.dataset, split, &opts)?
        }
        Distractors::Plausible => {
            let groups = t.dataset.corpus.by_question();
            eval_items_with(&t.dataset, split, cfg.pool_size, |q, exclude, n| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.split.seed);
                rng.set_stream(q.local as u64);
                let tags = &t.dataset.corpus.records[groups[&q][0]].tags;
                t.synth.plausible_distractors(tags, exclude, n, &mut rng)
            })?
        }
    };
    Ok(items)
}

pub fn evaluate_trained(t: &Trained, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let oracle = oracle_scorer(&t.synth);
    let mut scorers: Vec<(String, Box<dyn CandidateScorer + '_>)> =
        vec![(ENDCOLD.to_string(), Box::new(endcold_scorer(&t.endcold, &t.graph)))];
    for (v, m) in &t.seq {
        scorers.push((seq_pointwise_name(*v), Box::new(SeqScorer { model: m, table: &t.table })));
    }
    scorers.push((
        SEQ_PAIRWISE.to_string(),
        Box::new(SeqScorer {
            model: &t.pairwise,
            table: &t.table,
        }),
    ));
    scorers.push((ORACLE.to_string(), Box::new(oracle)));

    let mut rows = Vec::new();
    for split in SPLITS {
        let items = benchmark_items(t, cfg, split)?;
        for (name, scorer) in &scorers {
            let report = evaluate_items(scorer.as_ref(), &items, cfg.threads)?;
            rows.push(ResultRow {
                model: name.clone(),
                split: split.as_str().to_string(),
                metrics: MetricSummary::from(&report),
            });
        }
    }
    rows.sort_by_key(|r| (scorers.iter().position(|(n, _)| *n == r.model), r.split.clone()));
    Ok(rows)
}

pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut trained = train_all(cfg)?;
    let mut lap = Lap(Instant::now());
    let rows = evaluate_trained(&trained, cfg)?;
    lap.record("evaluate", &mut trained.timings);
    Ok(ExperimentReport {
        seed: cfg.synth.seed,
        corpus: trained.synth.corpus.stats(),
        train_questions: trained.dataset.questions_in(Split::Train).len(),
        rows,
        timings: trained.timings,
    })
}

fn endcold_scorer<'a>(model: &'a EndColdModel, graph: &'a CqaGraph) -> EndColdScorer<'a> {
    EndColdScorer {
        model,
        graph,
        policy: UnknownTagPolicy::Drop,
    }
}
