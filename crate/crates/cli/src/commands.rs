use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};

use log::{info, warn};
use serde::Deserialize;
use serde_json::json;

use endcold_core::endcold::{fit, EndColdConfig, EndColdModel, Objective};
use endcold_core::eval::{evaluate, EvalOptions};
use endcold_core::experiment::{fit_seq_pairwise, fit_seq_pointwise, run_synthetic, training_graph, Distractors, ExperimentConfig};
use endcold_core::graph::{CqaGraph, UnknownTagPolicy};
use endcold_core::ingest::{parse_stackexchange, read_dataset, write_canonical, write_dataset};
use endcold_core::model::{make_splits, Dataset, NodeId, NodeKind, Split, SplitConfig};
use endcold_core::route::{route, route_batch, CandidateScorer, EndColdScorer, RouteContext, RoutingResult, SeqScorer};
use endcold_core::seq::{RegressorKind, RegressorModel, SeqHyper, Variant};
use endcold_core::synth::{generate, SynthConfig};
use endcold_core::walkembed::{embed_graph, EmbeddingTable, WalkConfig};
use endcold_core::Error;

use crate::args::*;

/// Why a command failed, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String, io::Error),
    Core(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::InvalidConfig(_)) => 1,
            Failure::Core(e) if e.is_divergence() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Io(path, e) => write!(f, "{path}: {e}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn open_in(path: &str) -> Result<Box<dyn BufRead>> {
    if path == "-" {
        return Ok(Box::new(io::stdin().lock()));
    }
    let f = File::open(path).map_err(|e| Failure::Io(path.into(), e))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_out(path: &str) -> Result<Box<dyn Write>> {
    if path == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let f = File::create(path).map_err(|e| Failure::Io(path.into(), e))?;
    Ok(Box::new(BufWriter::new(f)))
}

/// Runs `body` against the opened output and flushes it.
fn write_to(path: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut out = open_out(path)?;
    body(&mut out)?;
    out.flush().map_err(|e| Failure::Io(path.into(), e))
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::TrainEmbed(a) => train_embed(a, threads),
        Command::TrainSeq(a) => train_seq(a),
        Command::TrainEndcold(a) => train_endcold(a),
        Command::Route(a) => route_cmd(a, threads),
        Command::Evaluate(a) => evaluate_cmd(a, threads),
        Command::SynthGen(a) => synth_gen(a),
        Command::ReproduceSynthetic(a) => reproduce(a, threads),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let input = open_in(&a.input)?;
    let mut dataset = match a.format {
        InputFormat::Jsonl => read_dataset(input)?,
        InputFormat::SeXml => {
            let (corpus, stats) = parse_stackexchange(input)?;
            info!("{stats:?}");
            Dataset::all_train(corpus)
        }
    };
    if a.test_fraction > 0.0 {
        let cfg = SplitConfig {
            test_fraction: a.test_fraction,
            seed: a.seed,
            min_answers: a.min_answers,
            temporal: a.temporal,
        };
        dataset = make_splits(dataset.corpus, &cfg)?;
    }
    info!("{:?}", dataset.corpus.stats());
    let all_train = dataset.splits().iter().all(|&s| s == Split::Train);
    write_to(&a.output, |out| {
        if all_train {
            write_canonical(&dataset.corpus, out)?;
        } else {
            write_dataset(&dataset, out)?;
        }
        Ok(())
    })
}

fn build_graph(a: BuildGraphArgs) -> Result<()> {
    let dataset = read_dataset(open_in(&a.input)?)?;
    let graph = training_graph(&dataset)?;
    info!("graph: {} nodes, {} edges", graph.node_count(), graph.edge_count());
    write_to(&a.output, |out| Ok(graph.write_to(out)?))
}

fn train_embed(a: TrainEmbedArgs, threads: usize) -> Result<()> {
    let graph = CqaGraph::read_from(open_in(&a.graph)?)?;
    let cfg = WalkConfig {
        p: a.p,
        q: a.q,
        walk_length: a.walk_length,
        walks_per_node: a.walks_per_node,
        window: a.window,
        dim: a.dim,
        negatives: a.negatives,
        epochs: a.epochs,
        step_size: a.step_size,
        seed: a.seed,
        parallel: threads > 1,
        ..WalkConfig::default()
    };
    let table = embed_graph(&graph, &cfg)?;
    if !table.is_finite() {
        return Err(Error::Divergence("embedding contains non-finite values".into()).into());
    }
    write_to(&a.out, |out| Ok(table.write_to(out)?))
}

fn hidden(v: &[usize]) -> Result<[usize; 3]> {
    v.try_into()
        .map_err(|_| Failure::Usage(format!("--hidden takes three widths, got {}", v.len())))
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Un => Variant::Un,
        VariantArg::T => Variant::T,
        VariantArg::A => Variant::A,
        VariantArg::Ta => Variant::TA,
    }
}

fn check_counts(what: &str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Failure::Core(Error::Format(format!(
            "{what}: {left} nodes vs {right} in the dataset; were both built from the same data?"
        ))));
    }
    Ok(())
}

fn train_seq(a: TrainSeqArgs) -> Result<()> {
    let widths = hidden(&a.hidden)?;
    let table = EmbeddingTable::read_from(open_in(&a.emb)?)?;
    let dataset = read_dataset(open_in(&a.cases)?)?;
    check_counts("embedding", table.counts().total(), dataset.counts().total())?;
    let hyper = SeqHyper {
        eps_ins: a.eps_ins,
        lambda: a.lambda,
        margin: a.margin,
        hidden: widths,
        step_size: a.step_size,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let v = variant(a.variant);
    let model = match a.mode {
        SeqMode::Pointwise => {
            let kind = match a.kind {
                PointwiseKind::Mlp => RegressorKind::Mlp,
                PointwiseKind::Linear => RegressorKind::LinearEps,
            };
            fit_seq_pointwise(&dataset, &table, v, kind, &hyper)?
        }
        SeqMode::Pairwise => fit_seq_pairwise(&dataset, &table, v, &hyper)?,
    };
    write_to(&a.out, |out| Ok(model.write_to(out)?))
}

fn train_endcold(a: TrainEndcoldArgs) -> Result<()> {
    let widths = hidden(&a.hidden)?;
    let graph = CqaGraph::read_from(open_in(&a.graph)?)?;
    let dataset = read_dataset(open_in(&a.cases)?)?;
    check_counts("graph", graph.node_count(), dataset.counts().total())?;
    let cfg = EndColdConfig {
        d0: a.dim,
        d1: a.dim,
        d2: a.dim,
        hidden: widths,
        step_size: a.step_size,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        objective: match a.objective {
            ObjectiveArg::Mse => Objective::Mse,
            ObjectiveArg::Pairwise => Objective::Pairwise { margin: a.margin },
        },
        cold_start: a.cold_start,
    };
    let (model, trace) = fit(&graph, &dataset.training_cases(), &cfg)?;
    if let Some(last) = trace.last() {
        info!("final epoch loss {last:.6}");
    }
    write_to(&a.out, |out| Ok(model.write_to(out)?))
}

// built once per command
#[allow(clippy::large_enum_variant)]
enum Scorer {
    EndCold(EndColdModel, CqaGraph),
    Seq(RegressorModel, EmbeddingTable),
}

impl Scorer {
    fn as_scorer(&self) -> Box<dyn CandidateScorer + '_> {
        match self {
            Scorer::EndCold(model, graph) => Box::new(EndColdScorer {
                model,
                graph,
                policy: UnknownTagPolicy::Drop,
            }),
            Scorer::Seq(model, table) => Box::new(SeqScorer { model, table }),
        }
    }
}

/// Loads a checkpoint of either family plus its dataset.
fn load(a: &ModelArgs) -> Result<(Scorer, Dataset)> {
    let mut text = Vec::new();
    open_in(&a.model)?
        .read_to_end(&mut text)
        .map_err(|e| Failure::Io(a.model.clone(), e))?;
    let dataset = read_dataset(open_in(&a.data)?)?;
    let total = dataset.counts().total();
    let scorer = if text.starts_with(b"endcold ") {
        let model = EndColdModel::read_from(&text[..])?;
        let path = a
            .graph
            .as_deref()
            .ok_or_else(|| Failure::Usage("end-to-end checkpoints need --graph".into()))?;
        let graph = CqaGraph::read_from(open_in(path)?)?;
        check_counts("graph", graph.node_count(), total)?;
        check_counts("checkpoint", model.counts().total(), total)?;
        Scorer::EndCold(model, graph)
    } else if text.starts_with(b"seqmodel ") {
        let model = RegressorModel::read_from(&text[..])?;
        let path = a
            .emb
            .as_deref()
            .ok_or_else(|| Failure::Usage("sequential models need --emb".into()))?;
        let table = EmbeddingTable::read_from(open_in(path)?)?;
        check_counts("embedding", table.counts().total(), total)?;
        Scorer::Seq(model, table)
    } else {
        return Err(Error::Format(format!("{}: not a model checkpoint", a.model)).into());
    };
    Ok((scorer, dataset))
}

#[derive(Debug, Deserialize)]
struct ContextLine {
    tags: Vec<String>,
    #[serde(default)]
    asker: Option<String>,
    candidates: Vec<String>,
}

/// Maps names to node ids. Unknown candidates get fresh user indices past
/// the known ones, so they are scored as never-seen users.
fn resolve(dataset: &Dataset, c: &ContextLine) -> Result<(RouteContext, Vec<NodeId>, BTreeMap<NodeId, String>)> {
    let ids = &dataset.corpus.ids;
    let mut tags = Vec::new();
    for t in &c.tags {
        match ids.lookup(NodeKind::Tag, t) {
            Some(id) => tags.push(id),
            None => warn!("dropping unknown tag {t}"),
        }
    }
    if tags.is_empty() {
        return Err(Error::EmptyTagSet.into());
    }
    let asker = c.asker.as_deref().and_then(|a| {
        let id = ids.lookup(NodeKind::User, a);
        if id.is_none() {
            info!("asker {a} is new");
        }
        id
    });
    let mut next = dataset.counts().users as u32;
    let mut names = BTreeMap::new();
    let mut candidates = Vec::with_capacity(c.candidates.len());
    for name in &c.candidates {
        let id = ids.lookup(NodeKind::User, name).unwrap_or_else(|| {
            next += 1;
            NodeId::user(next - 1)
        });
        names.insert(id, name.clone());
        candidates.push(id);
    }
    Ok((RouteContext { tags, asker }, candidates, names))
}

fn route_cmd(a: RouteArgs, threads: usize) -> Result<()> {
    let (scorer, dataset) = load(&a.model)?;
    let scorer = scorer.as_scorer();
    let top = |r: &RoutingResult| a.top.unwrap_or(r.ranked.len()).min(r.ranked.len());

    let Some(input) = &a.input else {
        if a.tags.is_empty() || a.candidates.is_empty() {
            return Err(Failure::Usage("route needs --tags and --candidates, or --input".into()));
        }
        let line = ContextLine {
            tags: a.tags.clone(),
            asker: a.asker.clone(),
            candidates: a.candidates.clone(),
        };
        let (ctx, cands, names) = resolve(&dataset, &line)?;
        let r = route(scorer.as_ref(), &ctx, &cands)?;
        return write_to(&a.output, |out| {
            for (i, (u, s)) in r.ranked[..top(&r)].iter().enumerate() {
                writeln!(out, "{} {} {}", i + 1, names[u], s).map_err(|e| Failure::Io(a.output.clone(), e))?;
            }
            Ok(())
        });
    };

    let mut items = Vec::new();
    let mut prepared = Vec::new();
    for (n, line) in open_in(input)?.lines().enumerate() {
        let line = line.map_err(|e| Failure::Io(input.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: ContextLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?;
        match resolve(&dataset, &c) {
            Ok((ctx, cands, names)) => {
                prepared.push(Ok(names));
                items.push((ctx, cands));
            }
            Err(e) => prepared.push(Err(e.to_string())),
        }
    }
    let mut results = route_batch(scorer.as_ref(), &items, threads)?.into_iter();
    write_to(&a.output, |out| {
        for p in prepared {
            let value = match p.and_then(|names| {
                results
                    .next()
                    .expect("one result per item")
                    .map(|r| (r, names))
                    .map_err(|e| e.to_string())
            }) {
                Ok((r, names)) => json!({
                    "best": names[&r.best],
                    "ranked": r.ranked[..top(&r)].iter().map(|(u, s)| json!([names[u], s])).collect::<Vec<_>>(),
                }),
                Err(e) => json!({ "error": e }),
            };
            serde_json::to_writer(&mut *out, &value)?;
            out.write_all(b"\n").map_err(|e| Failure::Io(a.output.clone(), e))?;
        }
        Ok(())
    })
}

fn evaluate_cmd(a: EvaluateArgs, threads: usize) -> Result<()> {
    let (scorer, dataset) = load(&a.model)?;
    let split = match a.split {
        SplitArg::Existing => Split::TestExistingAsker,
        SplitArg::New => Split::TestNewAsker,
    };
    let opts = EvalOptions {
        pool_size: a.pool_size,
        seed: a.seed,
        threads,
    };
    let report = evaluate(scorer.as_scorer().as_ref(), &dataset, split, &opts)?;
    let ids = &dataset.corpus.ids;
    let details: Vec<_> = report
        .details
        .iter()
        .map(|d| json!({"question": ids.name(d.question), "rank": d.rank, "candidates": d.candidates}))
        .collect();
    let value = json!({
        "split": split.as_str(),
        "questions": report.questions,
        "skipped": report.skipped,
        "precision_at_1": report.precision_at_1,
        "precision_at_3": report.precision_at_3,
        "accuracy": report.accuracy,
        "mrr": report.mrr,
        "details": details,
    });
    write_to(&a.report, |out| {
        serde_json::to_writer_pretty(&mut *out, &value)?;
        out.write_all(b"\n").map_err(|e| Failure::Io(a.report.clone(), e))
    })?;
    let table = format!(
        "split {}  n {}  P@1 {:.4}  P@3 {:.4}  Acc {:.4}  MRR {:.4}",
        split.as_str(),
        report.questions,
        report.precision_at_1,
        report.precision_at_3,
        report.accuracy,
        report.mrr
    );
    if a.report == "-" {
        eprintln!("{table}");
    } else {
        println!("{table}");
    }
    Ok(())
}

fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_users: a.users,
        n_questions: a.questions,
        n_tags: a.tags,
        topic_dim: a.topic_dim,
        tags_per_question_mean: a.tags_per_question,
        answers_per_question_mean: a.answers_per_question,
        noise_sd: a.noise_sd,
        seed: a.seed,
        new_asker_fraction: a.new_asker_fraction,
        single_answer_fraction: a.single_answer_fraction,
        ..SynthConfig::default()
    };
    let synth = generate(&cfg)?;
    info!("{:?}", synth.corpus.stats());
    write_to(&a.out, |out| Ok(write_canonical(&synth.corpus, out)?))?;
    if let Some(path) = &a.truth {
        write_to(path, |out| {
            serde_json::to_writer_pretty(&mut *out, &synth.named_truth())?;
            out.write_all(b"\n").map_err(|e| Failure::Io(path.clone(), e))
        })?;
    }
    Ok(())
}

fn reproduce(a: ReproduceArgs, threads: usize) -> Result<()> {
    let mut cfg = ExperimentConfig::desk_scale(a.seed);
    cfg.pool_size = a.pool_size;
    cfg.split.test_fraction = a.test_fraction;
    cfg.threads = threads;
    cfg.distractors = match a.distractors {
        DistractorArg::Uniform => Distractors::Uniform,
        DistractorArg::Plausible => Distractors::Plausible,
    };
    let report = run_synthetic(&cfg)?;
    for (stage, secs) in &report.timings {
        info!("{stage}: {secs:.1}s");
    }
    write_to(&a.report, |out| {
        serde_json::to_writer_pretty(&mut *out, &report)?;
        out.write_all(b"\n").map_err(|e| Failure::Io(a.report.clone(), e))
    })?;
    if a.report == "-" {
        eprint!("{}", report.table());
    } else {
        print!("{}", report.table());
    }
    Ok(())
}
