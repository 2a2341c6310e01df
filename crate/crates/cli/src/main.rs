//! `sbs`: sampling, estimation, diversity sweeps and self-verification for
//! stochastic beam search on small sequence models.

mod commands;
mod io;
mod stats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "sbs", version, about = "Stochastic beam search sampling and estimation")]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, env = "SBS_SEED", default_value_t = 0, global = true)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one sample of k sequences.
    Sample(SampleArgs),
    /// Estimate an expectation under the model, replicated over seeds.
    Estimate(EstimateArgs),
    /// BLEU against a reference and n-gram diversity of sample sets.
    Diversity(DiversityArgs),
    /// Run the self-verification suites.
    Verify(VerifyArgs),
    /// Train a character Markov model and write it in text form.
    TrainModel(TrainArgs),
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false, id = "source")]
pub struct ModelSource {
    /// Tree file or saved Markov model.
    #[arg(long, group = "source")]
    model: Option<PathBuf>,
    /// Text corpus, one sequence per line; trains a Markov model.
    #[arg(long, group = "source")]
    corpus: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct MarkovOptions {
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Additive smoothing.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 40)]
    max_len: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum SampleMethod {
    Sbs,
    Bs,
    Ancestral,
    Rejection,
    Naive,
}

/// Which beam gives up its last entry for the threshold.
#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum KappaConvention {
    /// Beam of k, keep k - 1.
    Sacrifice,
    /// Beam of k + 1, keep k.
    Extra,
}

impl KappaConvention {
    pub fn beam_width(self, k: usize) -> usize {
        match self {
            KappaConvention::Sacrifice => k,
            KappaConvention::Extra => k + 1,
        }
    }
}

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    markov: MarkovOptions,
    #[arg(long, value_enum, default_value_t = SampleMethod::Sbs)]
    method: SampleMethod,
    #[arg(short, long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Report the threshold; only with `--method sbs`.
    #[arg(long)]
    estimator: bool,
    #[arg(long, value_enum, default_value_t = KappaConvention::Sacrifice)]
    kappa_convention: KappaConvention,
    /// Draw budget for `--method rejection`.
    #[arg(long, default_value_t = 100_000)]
    max_draws: usize,
    /// CSV destination; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum FunctionalKind {
    /// `-log p(y)` under the (tempered) model.
    Entropy,
    /// Sentence BLEU against the reference.
    Bleu,
}

#[derive(Args, Clone)]
pub struct ReferenceArgs {
    /// Reference sequence, in the model's text form.
    #[arg(long, conflicts_with = "reference_beam")]
    reference: Option<String>,
    /// Use the best sequence of a beam search of this width as reference.
    #[arg(long)]
    reference_beam: Option<usize>,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    markov: MarkovOptions,
    #[arg(long, value_enum)]
    functional: FunctionalKind,
    #[command(flatten)]
    reference: ReferenceArgs,
    /// Comma-separated methods: mc, sbs_raw, sbs_normalized, bs_bound,
    /// bs_normalized, or all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    temperatures: Vec<f64>,
    /// Sample budgets.
    #[arg(short, long, value_delimiter = ',', default_value = "5")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, value_enum, default_value_t = KappaConvention::Sacrifice)]
    kappa_convention: KappaConvention,
    /// Raw rows; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Summary rows; stderr when absent.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum DiversityMethod {
    Bs,
    Sampling,
    Sbs,
}

#[derive(Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    markov: MarkovOptions,
    #[command(flatten)]
    reference: ReferenceArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bs,sampling,sbs")]
    methods: Vec<DiversityMethod>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    temperatures: Vec<f64>,
    #[arg(short, long, value_delimiter = ',', default_value = "5")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Suites to run; all when absent.
    #[arg(long = "suite")]
    suites: Vec<String>,
    /// Tree file for the tree-based suites; the bundled eight-leaf tree when
    /// absent.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    markov: MarkovOptions,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => commands::sample(&a, cli.seed),
        Command::Estimate(a) => commands::estimate(&a, cli.seed),
        Command::Diversity(a) => commands::diversity(&a, cli.seed),
        Command::Verify(a) => commands::verify(&a, cli.seed),
        Command::TrainModel(a) => commands::train_model(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
