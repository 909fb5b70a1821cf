//! `ssn`: run sub-sampled Newton experiments and sampling diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssn_core::{Coherence, DataFormat, LabelPosition, LossKind, SamplingScheme, SyntheticSpec};

use crate::commands::CliError;
use crate::config::{DatasetSource, ProblemSource};

#[derive(Parser)]
#[command(name = "ssn", version, about = "Sub-sampled Newton experiments for regularized GLMs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Overrides the seed list of a config (run) or seeds the sampler (other commands).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) pair of an experiment config.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute block partial leverage scores of A(0).
    Levscores(LevscoresArgs),
    /// Estimate how often a sampling plan meets the approximation conditions.
    Certify(CertifyArgs),
    /// Report condition numbers at the optimum and at zero.
    Condnums(CondnumsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// Dataset file; omit to use a synthetic instance.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "libsvm")]
    pub format: FormatArg,
    /// Label is the first CSV column instead of the last.
    #[arg(long)]
    pub label_first: bool,
    #[arg(long)]
    pub has_header: bool,
    #[arg(long)]
    pub n_features: Option<usize>,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub no_intercept: bool,
    /// Synthetic rows.
    #[arg(long = "n", default_value_t = 1000)]
    pub n: usize,
    /// Synthetic columns.
    #[arg(long = "d", default_value_t = 10)]
    pub d: usize,
    /// incoherent, one_heavy_row:WEIGHT or power_law:EXPONENT.
    #[arg(long, default_value = "incoherent", value_parser = parse_coherence)]
    pub coherence: Coherence,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: LossArg,
}

impl ProblemArgs {
    pub fn source(&self) -> Result<ProblemSource, CliError> {
        Ok(match &self.dataset {
            Some(path) => ProblemSource::Dataset(DatasetSource {
                path: path.clone(),
                format: match self.format {
                    FormatArg::Libsvm => DataFormat::Libsvm,
                    FormatArg::Csv => DataFormat::Csv,
                },
                label_position: if self.label_first { LabelPosition::First } else { LabelPosition::Last },
                has_header: self.has_header,
                n_features: self.n_features,
                normalize_columns: !self.no_normalize,
                add_intercept: !self.no_intercept,
            }),
            None => {
                let spec = SyntheticSpec::new(self.n, self.d, self.coherence, self.data_seed);
                spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
                ProblemSource::Synthetic(spec)
            }
        })
    }
}

fn parse_coherence(s: &str) -> Result<Coherence, String> {
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (s, None),
    };
    let value = |a: Option<&str>| -> Result<f64, String> {
        a.ok_or_else(|| format!("'{kind}' needs a value, e.g. {kind}:0.9"))?
            .parse::<f64>()
            .map_err(|e| e.to_string())
    };
    match kind {
        "incoherent" => Ok(Coherence::Incoherent),
        "one_heavy_row" => Ok(Coherence::OneHeavyRow { weight: value(arg)? }),
        "power_law" => Ok(Coherence::PowerLaw { exponent: value(arg)? }),
        other => Err(format!("unknown coherence '{other}'")),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Logistic,
    Squared,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Logistic => LossKind::Logistic,
            LossArg::Squared => LossKind::Squared,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevMode {
    Exact,
    Fast,
}

#[derive(Args, Debug, Clone)]
pub struct LevscoresArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: LevMode,
    /// Sketch rows for fast mode (default 20 d).
    #[arg(long)]
    pub sketch_rows: Option<usize>,
    /// Safety factor applied to fast estimates.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Output CSV (default `<out-dir>/levscores.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// uniform, rnorm (block_norm_squares) or plev (block_partial_leverage).
    #[arg(long, default_value = "plev", value_parser = |s: &str| s.parse::<SamplingScheme>().map_err(|e| e.to_string()))]
    pub scheme: SamplingScheme,
    /// Sampling budget; defaults to the size the scheme's guarantee asks for.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Output JSON (default `<out-dir>/certify.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CondnumsArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Gradient-norm tolerance for the Newton reference (default 1e-10 (1 + |F(0)|)).
    #[arg(long)]
    pub reference_tol: Option<f64>,
    /// Output JSON (default `<out-dir>/condnums.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run { config } => commands::cmd_run(config, &cli.global),
        Command::Levscores(a) => commands::cmd_levscores(a, &cli.global),
        Command::Certify(a) => commands::cmd_certify(a, &cli.global),
        Command::Condnums(a) => commands::cmd_condnums(a, &cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
