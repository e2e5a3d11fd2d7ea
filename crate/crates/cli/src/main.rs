mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Compact cross-modal binary codes: train hashing heads, pack codes,
/// search by Hamming distance and evaluate retrieval.
#[derive(Parser, Debug)]
#[command(name = "hypercube", version)]
struct Cli {
    /// Worker threads for search and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress wall-clock measurements so output is byte-identical across runs.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset (text.hcem, obs.hcem, shared_text.hcem).
    Gen(GenArgs),
    /// Train text and observation hashing heads.
    Train(TrainArgs),
    /// Encode embeddings with a trained head into a packed code index.
    Encode(EncodeArgs),
    /// Print a summary of a packed code index.
    Index(IndexArgs),
    /// Hamming top-k search of query codes against an index (JSON lines).
    Search(SearchArgs),
    /// mAP@k of binary and/or cosine retrieval.
    Eval(EvalArgs),
    /// Measure scan throughput and the binary vs cosine speed ratio.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    items_per_class: usize,
    #[arg(long, default_value_t = 64)]
    dim_text: usize,
    #[arg(long, default_value_t = 64)]
    dim_obs: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    categories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Receives text_head.hchd, obs_head.hchd and train_log.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 256)]
    bits: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    /// Single linear layer instead of the two-layer perceptron.
    #[arg(long)]
    linear: bool,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IndexArgs {
    index: PathBuf,
    /// Float dimension to compare storage against.
    #[arg(long, default_value_t = 768)]
    dim: usize,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Only search database items in these categories.
    #[arg(long = "category")]
    categories: Vec<u32>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EvalMode {
    Binary,
    Cosine,
    Both,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum, default_value_t = EvalMode::Binary)]
    mode: EvalMode,
    /// Packed database codes (binary mode).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Packed query codes (binary mode).
    #[arg(long)]
    query_codes: Option<PathBuf>,
    /// Database embeddings (cosine mode; also supplies category names).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Query embeddings (cosine mode).
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Rank against the whole database instead of the query's category.
    #[arg(long)]
    whole_database: bool,
    /// Only score queries in these categories.
    #[arg(long = "category")]
    categories: Vec<u32>,
    /// Also write per-category and summary records here.
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Dimension of the random float database for the cosine comparison.
    #[arg(long, default_value_t = 768)]
    cosine_dim: usize,
    /// Items in the cosine database (default: index size, at most 250000).
    #[arg(long)]
    cosine_items: Option<usize>,
    /// Queries used for the cosine comparison.
    #[arg(long, default_value_t = 4)]
    cosine_queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!(
                "{}",
                commands::CliError::Usage(commands::one_line(&e.to_string())).diagnostic()
            );
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code())
        }
    }
}
