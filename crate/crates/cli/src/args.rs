use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "endcold", version, about = "Route cold questions to likely answerers")]
pub struct Cli {
    /// Plain `key = value` file of flag defaults for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads. 1 makes every command bit-reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a posts dump or JSON lines into canonical records.
    Ingest(IngestArgs),
    /// Build the training graph of a dataset.
    BuildGraph(BuildGraphArgs),
    /// Learn walk-based node embeddings from a graph.
    TrainEmbed(TrainEmbedArgs),
    /// Train a sequential regressor over fixed embeddings.
    TrainSeq(TrainSeqArgs),
    /// Train the end-to-end graph model.
    TrainEndcold(TrainEndcoldArgs),
    /// Rank candidate answerers for cold questions.
    #[command(alias = "route-endcold")]
    Route(RouteArgs),
    /// Score a model on a held-out split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic community with known experts.
    SynthGen(SynthGenArgs),
    /// Run the full synthetic benchmark and write a metric report.
    ReproduceSynthetic(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    SeXml,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum, default_value_t = InputFormat::Jsonl)]
    pub format: InputFormat,
    #[arg(long, default_value = "-")]
    pub input: String,
    #[arg(long, default_value = "-")]
    pub output: String,
    /// Hold out this fraction of questions as test data (0 keeps all in training).
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    /// Distinct answerers a question needs to be held out.
    #[arg(long, default_value_t = 2)]
    pub min_answers: usize,
    /// Hold out the most recent questions instead of a random sample.
    #[arg(long)]
    pub temporal: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long, default_value = "-")]
    pub input: String,
    #[arg(long, default_value = "-")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct TrainEmbedArgs {
    #[arg(long)]
    pub graph: String,
    #[arg(long, alias = "output", default_value = "-")]
    pub out: String,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 80)]
    pub walk_length: usize,
    #[arg(long, default_value_t = 10)]
    pub walks_per_node: usize,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// Return parameter.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// In-out parameter.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeqMode {
    Pointwise,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PointwiseKind {
    Mlp,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Un,
    T,
    A,
    Ta,
}

#[derive(Debug, Args)]
pub struct TrainSeqArgs {
    #[arg(long)]
    pub emb: String,
    /// Dataset whose training records are the examples.
    #[arg(long, alias = "input")]
    pub cases: String,
    #[arg(long, value_enum, default_value_t = VariantArg::Ta)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = SeqMode::Pointwise)]
    pub mode: SeqMode,
    /// Pointwise regressor family.
    #[arg(long, value_enum, default_value_t = PointwiseKind::Mlp)]
    pub kind: PointwiseKind,
    #[arg(long, alias = "output", default_value = "-")]
    pub out: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step_size: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Three hidden widths of the MLP.
    #[arg(long, value_delimiter = ',', default_values_t = [256, 128, 64])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub eps_ins: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Mse,
    Pairwise,
}

#[derive(Debug, Args)]
pub struct TrainEndcoldArgs {
    #[arg(long)]
    pub graph: String,
    /// Dataset whose training records are the examples.
    #[arg(long, alias = "input")]
    pub cases: String,
    #[arg(long, alias = "output", default_value = "-")]
    pub out: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Width of the input features and both graph layers.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 128, 64])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub step_size: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Mse)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Hide each minibatch's questions from the graph while training.
    #[arg(long)]
    pub cold_start: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Model inputs shared by `route` and `evaluate`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint from train-endcold or train-seq.
    #[arg(long, alias = "ckpt")]
    pub model: String,
    /// Dataset the model was trained on; maps names to indices.
    #[arg(long)]
    pub data: String,
    /// Training graph (end-to-end checkpoints).
    #[arg(long)]
    pub graph: Option<String>,
    /// Embedding file (sequential models).
    #[arg(long)]
    pub emb: Option<String>,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub tags: Vec<String>,
    #[arg(long)]
    pub asker: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    /// Print only the best K candidates.
    #[arg(long)]
    pub top: Option<usize>,
    /// JSON lines of `{"tags": [..], "asker": .., "candidates": [..]}`.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long, default_value = "-")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Existing,
    New,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub split: SplitArg,
    /// Machine-readable report; the table goes to stdout unless this is `-`.
    #[arg(long, alias = "output", default_value = "-")]
    pub report: String,
    /// Pad pools with training answerers up to this size (0: answerers only).
    #[arg(long, default_value_t = 0)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 5000)]
    pub questions: usize,
    #[arg(long, default_value_t = 50)]
    pub tags: usize,
    #[arg(long, default_value_t = 8)]
    pub topic_dim: usize,
    #[arg(long, default_value_t = 2.8)]
    pub tags_per_question: f64,
    #[arg(long, default_value_t = 1.8)]
    pub answers_per_question: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.3)]
    pub new_asker_fraction: f64,
    /// Force this share of single-answer questions.
    #[arg(long)]
    pub single_answer_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, alias = "output", default_value = "-")]
    pub out: String,
    /// Where to write the question to best-user map as JSON.
    #[arg(long)]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistractorArg {
    Uniform,
    Plausible,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, alias = "output", default_value = "report.json")]
    pub report: String,
    #[arg(long, default_value_t = 10)]
    pub pool_size: usize,
    #[arg(long, value_enum, default_value_t = DistractorArg::Uniform)]
    pub distractors: DistractorArg,
    #[arg(long, default_value_t = 0.15)]
    pub test_fraction: f64,
}
