//! `featvec` command-line front end.

mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use featvec::pipeline::{DepthChoice, DEFAULT_CV_FOLDS, DEFAULT_CV_TREES, DEFAULT_RULES, DEFAULT_TEST_FRACTION};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "featvec", version, about = "Feature Vectors embeddings for tabular tree ensembles")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "FEATVEC_THREADS")]
    threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the rule forest and write the model directory.
    Fit(FitArgs),
    /// Embed a fitted model's sentences and plot the feature vectors.
    Embed(EmbedArgs),
    /// Compare importance methods with retraining curves.
    Eval(EvalArgs),
    /// Gaussian-mixture knockoffs and the angle permutation test.
    KnockoffTest(KnockoffArgs),
    /// Write one of the synthetic datasets.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Headered CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema; inferred from the CSV when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Target column for an inferred schema (default: last column).
    #[arg(long)]
    pub target: Option<String>,
    /// Fill missing cells with the column median or mode.
    #[arg(long)]
    pub impute: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ForestArgs {
    /// Number of rules (decision paths) to collect.
    #[arg(long = "rules", default_value_t = DEFAULT_RULES)]
    pub rules: usize,
    /// Co-occurrence window.
    #[arg(long, default_value_t = featvec::embedding::DEFAULT_WINDOW)]
    pub window: usize,
    /// Tree depth, or `auto` to cross-validate it.
    #[arg(long, default_value = "auto")]
    pub depth: DepthChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of rows held out for evaluation (0 disables the split).
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_CV_FOLDS)]
    pub cv_folds: usize,
    /// Trees per cross-validation model.
    #[arg(long, default_value_t = DEFAULT_CV_TREES)]
    pub cv_trees: usize,
    /// Train each tree on a bootstrap resample.
    #[arg(long)]
    pub bootstrap: bool,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Model directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory (default: <model>/embedding).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fv,
    Gini,
    Perm,
    External,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fv => "fv",
            Method::Gini => "gini",
            Method::Perm => "perm",
            Method::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Sds,
    Sss,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Data file (default: the one the model was fitted on).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "fv,gini,perm")]
    pub methods: Vec<Method>,
    /// Score file for the `external` method (`feature<TAB>score`).
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "sds,sss")]
    pub curves: Vec<CurveKind>,
    /// Trees per retrained model.
    #[arg(long, default_value_t = 50)]
    pub retrain_trees: usize,
    /// Depth of retrained models (default: the model's depth).
    #[arg(long)]
    pub retrain_depth: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub perm_repeats: usize,
    /// Seed (default: the model's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: <model>/eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KnockoffArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long, default_value_t = 3)]
    pub gmm_components: usize,
    #[arg(long, default_value_t = 500)]
    pub gmm_max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub gmm_tol: f64,
    /// Use this mixture (JSON) instead of fitting one.
    #[arg(long)]
    pub oracle_gmm: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n_perm: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Pairs,
    Gmm,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let ctx = run_dir::Context::new(rayon::current_num_threads());
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a, &ctx),
        Command::Embed(a) => commands::embed(a, &ctx),
        Command::Eval(a) => commands::eval(a, &ctx),
        Command::KnockoffTest(a) => commands::knockoff_test(a, &ctx),
        Command::Synth(a) => commands::synth(a, &ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
