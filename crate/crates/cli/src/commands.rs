use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use sqa_core::estimators::{self, windowed_bias, EstimatorError};
use sqa_core::io::{
    parse_csv, parse_sim_config, write_csv, write_report, BiasDriftReport, ConfigError,
    FitReport, MosReport, ParseError, ParseOptions, RecoveryJson, Report, ReportFormat,
};
use sqa_core::mle::{self, MleError, ModelSpec};
use sqa_core::simulate::{self, SimulationConfig};
use sqa_core::Dataset;

use super::{Command, InputArgs, OutputArgs, PsiSource};

/// Successful exit states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done = 0,
    NotConverged = 1,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

fn input_err(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<MleError> for CliError {
    fn from(e: MleError) -> Self {
        input_err(e)
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        input_err(e)
    }
}

impl From<simulate::SimulationError> for CliError {
    fn from(e: simulate::SimulationError) -> Self {
        input_err(e)
    }
}

impl From<sqa_core::io::ReportError> for CliError {
    fn from(e: sqa_core::io::ReportError) -> Self {
        input_err(e)
    }
}

pub fn run(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Validate { input } => {
            let ds = load(&input)?;
            println!(
                "ok: {} records, {} subjects, {} PVSs, {} SRCs, {} HRCs, scale {}",
                ds.records().len(),
                ds.n_subjects(),
                ds.n_pvss(),
                ds.n_srcs(),
                ds.n_hrcs(),
                ds.scale()
            );
            Ok(Outcome::Done)
        }
        Command::Mos {
            input,
            level,
            output,
        } => {
            let ds = load(&input)?;
            let table = estimators::mos(&ds, level)?;
            emit_report(&output, &MosReport::new(&ds, &table), None)?;
            Ok(Outcome::Done)
        }
        Command::Fit {
            input,
            model,
            solver,
            standard_errors,
            output,
        } => {
            let ds = load(&input)?;
            let spec = checked_spec(solver.spec(model.into()))?;
            let fit = mle::fit(&ds, &spec)?;
            let se = if standard_errors {
                match mle::standard_errors(&ds, &spec, &fit) {
                    Ok(se) => Some(se),
                    Err(e) => {
                        log::warn!("standard errors omitted: {e}");
                        None
                    }
                }
            } else {
                None
            };
            let summary = format!(
                "{} fit: loglik {} iterations {} converged {}",
                spec.kind,
                sqa_core::io::round_sig(fit.loglik(), 9),
                fit.iterations,
                fit.converged
            );
            emit_report(&output, &FitReport::new(&ds, &fit, se.as_ref()), Some(summary))?;
            Ok(converged(fit.converged))
        }
        Command::BiasDrift {
            input,
            psi_source,
            windows,
            model,
            solver,
            output,
        } => {
            let ds = load(&input)?;
            let (psi, estimator, done) = match psi_source {
                PsiSource::Mos => (estimators::mos(&ds, 0.95)?.means(), "mos", true),
                PsiSource::Fitted => {
                    let spec = checked_spec(solver.spec(model.into()))?;
                    let fit = mle::fit(&ds, &spec)?;
                    let done = fit.converged;
                    (fit.params.psi, "adjusted_mos", done)
                }
            };
            let mut rows = Vec::with_capacity(ds.n_subjects() * windows.len());
            for subject in 0..ds.n_subjects() {
                for &w in &windows {
                    rows.push(windowed_bias(&ds, &psi, subject, w)?);
                }
            }
            emit_report(&output, &BiasDriftReport::new(&ds, estimator, &rows), None)?;
            Ok(converged(done))
        }
        Command::Simulate {
            config,
            seed,
            output,
        } => {
            let cfg = load_config(&config, seed)?;
            let ds = simulate::generate(&cfg)?;
            let summary = format!(
                "simulated {} records, seed {}",
                ds.records().len(),
                cfg.seed
            );
            emit(&output, &write_csv(&ds), Some(summary))?;
            Ok(Outcome::Done)
        }
        Command::Recover {
            config,
            seed,
            n_seeds,
            solver,
            output,
        } => {
            let cfg = load_config(&config, seed)?;
            let spec = checked_spec(solver.spec(cfg.model))?;
            let report = simulate::recovery_experiment(&cfg, &spec, n_seeds)?;
            let all_converged = report
                .seeds
                .iter()
                .all(|s| s.result.as_ref().is_ok_and(|e| e.converged));
            let summary = format!(
                "recovered {} seeds from {}: {} failed, {} converged",
                n_seeds,
                cfg.seed,
                report.failed(),
                if all_converged { "all" } else { "not all" }
            );
            emit_report(&output, &RecoveryJson::new(&report), Some(summary))?;
            Ok(converged(all_converged))
        }
    }
}

fn converged(ok: bool) -> Outcome {
    if ok {
        Outcome::Done
    } else {
        Outcome::NotConverged
    }
}

fn checked_spec(spec: ModelSpec) -> Result<ModelSpec, CliError> {
    spec.validate()?;
    Ok(spec)
}

fn load(args: &InputArgs) -> Result<Dataset, CliError> {
    let file = File::open(&args.input)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", args.input.display())))?;
    let options = ParseOptions {
        synthesize_pvs: args.synthesize_pvs,
    };
    let ds = parse_csv(BufReader::new(file), &args.aliases.aliases(), args.scale, options)
        .map_err(|e| match e {
            ParseError::Csv(ref inner) if inner.is_io_error() => {
                CliError::Io(format!("{}: {e}", args.input.display()))
            }
            e => CliError::Input(format!("{}: {e}", args.input.display())),
        })?;
    log::info!(
        "read {} records from {}",
        ds.records().len(),
        args.input.display()
    );
    Ok(ds)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SimulationConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_sim_config(&text, base).map_err(|e| match e {
        ConfigError::Sidecar { .. } => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::Input(format!("{}: {e}", path.display())),
    })?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    log::info!(
        "config {}: {} model, {} subjects, {} PVSs",
        path.display(),
        cfg.model,
        cfg.n_subjects(),
        cfg.n_pvss()
    );
    Ok(cfg)
}

fn emit_report<R: Report>(
    output: &OutputArgs,
    report: &R,
    summary: Option<String>,
) -> Result<(), CliError> {
    let format: ReportFormat = output.format.into();
    let text = write_report(report, format)?;
    emit(&output.output, &text, summary)
}

/// Writes `text` to `path` (`-` is stdout). The summary line goes to stdout
/// when the payload went to a file and to stderr otherwise.
fn emit(path: &Path, text: &str, summary: Option<String>) -> Result<(), CliError> {
    let to_stdout = path.as_os_str() == "-";
    if to_stdout {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write stdout: {e}")))?;
    } else {
        std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(line) = summary {
        if to_stdout {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
    Ok(())
}
