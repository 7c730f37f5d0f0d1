//! `sqa`: MOS tables, subject-model fits, bias drift, simulation and
//! recovery campaigns for subjective quality experiments.
//!
//! Exit codes: 0 success, 1 completed without convergence, 2 input or
//! validation error, 3 I/O error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sqa_core::estimators::OrderWindow;
use sqa_core::io::{ColumnAliasMap, ReportFormat};
use sqa_core::mle::{ModelKind, ModelSpec};
use sqa_core::Scale;

#[derive(Debug, Parser)]
#[command(name = "sqa", version, about, long_about = None)]
struct Cli {
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a ratings file and print a summary
    Validate {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Per-PVS MOS with normal-approximation confidence intervals
    Mos {
        #[command(flatten)]
        input: InputArgs,
        /// Confidence level of the intervals, in (0, 1)
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Maximum-likelihood fit of a subject model
    Fit {
        #[command(flatten)]
        input: InputArgs,
        /// Subject model
        #[arg(long, value_enum, default_value_t = ModelArg::Jp)]
        model: ModelArg,
        #[command(flatten)]
        solver: SolverArgs,
        /// Include approximate standard errors in the report
        #[arg(long)]
        standard_errors: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mean subject bias over windows of presentation order
    BiasDrift {
        #[command(flatten)]
        input: InputArgs,
        /// Quality estimate the residuals are taken against
        #[arg(long, value_enum, default_value_t = PsiSource::Mos)]
        psi_source: PsiSource,
        /// Inclusive order window START:END; repeat for several windows
        #[arg(long = "window", value_name = "START:END", value_parser = parse_window,
              default_values = ["1:25", "176:200"])]
        windows: Vec<OrderWindow>,
        /// Subject model used with --psi-source fitted
        #[arg(long, value_enum, default_value_t = ModelArg::Jp)]
        model: ModelArg,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate a synthetic ratings CSV from a simulation config
    Simulate {
        /// Simulation config file
        #[arg(long, short)]
        config: PathBuf,
        /// Seed; overrides the config's `seed` key [default: the config's seed]
        #[arg(long)]
        seed: Option<u64>,
        /// Output path, `-` for stdout
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
    },
    /// Generate and refit many seeded datasets and report estimation errors
    Recover {
        /// Simulation config file; its model is the one fitted
        #[arg(long, short)]
        config: PathBuf,
        /// First seed; seeds run SEED, SEED+1, ... [default: the config's seed]
        #[arg(long)]
        seed: Option<u64>,
        /// Number of seeds
        #[arg(long, default_value_t = 20)]
        n_seeds: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Ratings CSV file
    #[arg(long, short)]
    input: PathBuf,
    /// Header alias preset
    #[arg(long, value_enum, default_value_t = Preset::Canonical)]
    aliases: Preset,
    /// Without a pvs column, identify PVSs by their (src, hrc) pair
    #[arg(long)]
    synthesize_pvs: bool,
    /// Rating scale: discrete:S, continuous:LO:HI or continuous
    #[arg(long, default_value = "discrete:5")]
    scale: Scale,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Convergence tolerance on the largest parameter change
    #[arg(long, default_value_t = ModelSpec::DEFAULT_TOL)]
    tol: f64,
    /// Iteration cap
    #[arg(long, default_value_t = ModelSpec::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Lower bound on every fitted variance
    #[arg(long, default_value_t = ModelSpec::DEFAULT_VARIANCE_FLOOR)]
    variance_floor: f64,
}

impl SolverArgs {
    fn spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            variance_floor: self.variance_floor,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Report format
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Output path, `-` for stdout
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Jp,
    Lb,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Jp => ModelKind::Jp,
            ModelArg::Lb => ModelKind::Lb,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PsiSource {
    Mos,
    Fitted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Canonical,
    Bt500,
    P1401,
}

impl Preset {
    fn aliases(self) -> ColumnAliasMap {
        match self {
            Preset::Canonical => ColumnAliasMap::canonical(),
            Preset::Bt500 => ColumnAliasMap::bt500(),
            Preset::P1401 => ColumnAliasMap::p1401(),
        }
    }
}

fn parse_window(s: &str) -> Result<OrderWindow, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got '{s}'"))?;
    let num = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|_| format!("'{t}' is not a positive integer"))
    };
    OrderWindow::new(num(a)?, num(b)?).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();

    match commands::run(cli.command) {
        Ok(outcome) => ExitCode::from(outcome as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
