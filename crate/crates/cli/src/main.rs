use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(
    name = "santext",
    version,
    about = "Token-level local differential privacy for text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary, frequency table and aligned embedding cache.
    BuildVocab(BuildVocabArgs),
    /// Materialize the substitution matrix into a cache file.
    Precompute(PrecomputeArgs),
    /// Sanitize a corpus line by line.
    Sanitize(SanitizeArgs),
    /// Estimate N_x, S_x, S*_y and Renyi entropies by repeated sampling.
    Audit(AuditArgs),
    /// Check the (utility-optimized) metric LDP inequalities on a model.
    VerifyDp(VerifyArgs),
    /// Run the masked-token inference attack and report the defense rate.
    AttackEval(AttackArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Santext,
    #[value(name = "santext_plus", alias = "santext+")]
    SantextPlus,
    #[value(name = "uniform_random", alias = "random")]
    UniformRandom,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    Whitespace,
    Pretokenized,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct CorpusArgs {
    /// Input corpus, one document per line.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Treat the input as TSV with the text in `--text-column`.
    #[arg(long)]
    pub tsv: bool,
    #[arg(long, default_value_t = 0)]
    pub text_column: usize,
    /// The first TSV line is a header and is copied through.
    #[arg(long)]
    pub header: bool,
    #[arg(long, value_enum, default_value_t = Tokenizer::Whitespace)]
    pub tokenizer: Tokenizer,
}

/// Vocabulary, embeddings and mechanism parameters shared by the model commands.
#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct ModelArgs {
    /// Vocabulary file (one token per line).
    #[arg(long)]
    pub vocab: PathBuf,
    /// Frequency dump; defaults to `freq.tsv` next to the vocabulary.
    #[arg(long)]
    pub freq: Option<PathBuf>,
    /// GloVe text file or binary embedding cache aligned with the vocabulary.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = Mechanism::Santext)]
    pub mechanism: Mechanism,
    /// Privacy parameter; repeat for a sweep.
    #[arg(long = "epsilon", required = true, value_parser = config::non_negative)]
    pub epsilons: Vec<f64>,
    /// SanText+ probability of replacing a non-sensitive token.
    #[arg(long, default_value_t = 0.3, value_parser = config::unit_interval)]
    pub p: f64,
    /// SanText+ fraction of lowest-frequency tokens marked sensitive.
    #[arg(long, default_value_t = 0.9, value_parser = config::unit_interval)]
    pub w: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bytes allowed for the full substitution matrix (suffixes k, m, g).
    #[arg(long, default_value = "4g", value_parser = config::byte_size)]
    pub mem_budget: u64,
    /// Precomputed model cache from `precompute` (single epsilon only).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// GloVe text file; restricts the vocabulary to tokens with a vector.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use this token list (one per line) as the vocabulary.
    #[arg(long)]
    pub external_vocab: Option<PathBuf>,
    /// Directory for vocab.txt, freq.tsv, embeddings.bin and build-vocab.json.
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model cache file to write.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SanitizeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output corpus. Sweeps write one file per epsilon with an `.eps<value>` suffix.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct AuditArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Samples per token.
    #[arg(long, default_value_t = 1000, value_parser = config::positive)]
    pub runs: usize,
    /// JSON report (a list of reports for sweeps).
    #[arg(long, short)]
    pub output: PathBuf,
    /// Per-epsilon median/quartile CSV for plotting.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Mldp,
    Umldp,
    Ldp,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Inequality to check; defaults to umldp for santext_plus, else mldp.
    #[arg(long, value_enum)]
    pub bound: Option<Bound>,
    /// Pure-LDP parameter for `--bound ldp` (defaults to epsilon).
    #[arg(long)]
    pub ldp_epsilon: Option<f64>,
    /// Largest vocabulary checked over every triple.
    #[arg(long, default_value_t = 200)]
    pub exhaustive_cap: usize,
    /// Random (x, x') pairs checked above the cap.
    #[arg(long, default_value_t = 2000)]
    pub sampled_pairs: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Unigram,
    Ngram,
    External,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct AttackArgs {
    /// Raw corpus (ground truth).
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Already-sanitized corpus aligned with the input.
    #[arg(long, conflicts_with = "epsilons")]
    pub sanitized: Option<PathBuf>,
    /// Sanitize the input on the fly at each epsilon (needs --vocab and --embeddings).
    #[arg(long = "epsilon", value_parser = config::non_negative)]
    pub epsilons: Vec<f64>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mechanism::Santext)]
    pub mechanism: Mechanism,
    #[arg(long, default_value_t = 0.3, value_parser = config::unit_interval)]
    pub p: f64,
    #[arg(long, default_value_t = 0.9, value_parser = config::unit_interval)]
    pub w: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "4g", value_parser = config::byte_size)]
    pub mem_budget: u64,
    #[arg(long, value_enum, default_value_t = PredictorKind::Unigram)]
    pub predictor: PredictorKind,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Corpus the built-in predictors are trained on (defaults to the input).
    #[arg(long)]
    pub public: Option<PathBuf>,
    /// JSON Lines predictions for `--predictor external`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::BuildVocab(args) => commands::build_vocab(args),
        Command::Precompute(args) => commands::precompute(args),
        Command::Sanitize(args) => commands::sanitize(args),
        Command::Audit(args) => commands::audit(args),
        Command::VerifyDp(args) => commands::verify_dp(args),
        Command::AttackEval(args) => commands::attack_eval(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
