//! Report serialization.
//!
//! Parameters go under their ASCII names (`psi`, `delta`, `upsilon`, `phi`,
//! `rho`). The `estimator` field says whether a quality vector is the plain
//! MOS (`mos`) or a model estimate (`adjusted_mos`). Floats are rounded to 9
//! significant digits; key order is fixed by the struct layouts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::estimators::{MosTable, WindowedBias};
use crate::mle::{ModelFit, ModelKind, Params};
use crate::simulate::{RecoveryErrors, RecoveryReport, Summary};

pub const TOOL_NAME: &str = "sqa";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("non-finite value in field '{0}'")]
    NonFiniteValue(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format '{other}' (expected json or csv)")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Json => "json",
            Self::Csv => "csv",
        })
    }
}

/// Rounds to `digits` significant decimal digits. Non-finite values pass
/// through.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

fn r9(x: f64) -> f64 {
    round_sig(x, SIGNIFICANT_DIGITS)
}

fn r9v(v: &[f64]) -> Vec<f64> {
    v.iter().copied().map(r9).collect()
}

fn fmt_f(x: f64) -> String {
    r9(x).to_string()
}

/// A serializable report with a flat CSV rendering.
pub trait Report: Serialize {
    /// Every float in the report, tagged with its field name.
    fn floats(&self) -> Vec<(&'static str, f64)>;
    fn csv_header(&self) -> &'static [&'static str];
    fn csv_rows(&self) -> Vec<Vec<String>>;
}

/// Renders `report` as pretty JSON or CSV, rejecting NaN and infinities.
pub fn write_report<R: Report>(report: &R, format: ReportFormat) -> Result<String, ReportError> {
    if let Some((field, _)) = report.floats().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ReportError::NonFiniteValue(field.to_owned()));
    }
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(report.csv_header()).expect("in-memory write");
            for row in report.csv_rows() {
                w.write_record(&row).expect("in-memory write");
            }
            Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub psi: Vec<f64>,
    pub delta: Vec<f64>,
    pub upsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tool: String,
    pub version: String,
    pub kind: ModelKind,
    pub estimator: String,
    pub subjects: Vec<String>,
    pub pvs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub srcs: Option<Vec<String>>,
    pub psi: Vec<f64>,
    pub delta: Vec<f64>,
    pub upsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<SeReport>,
}

fn split_dispersion(kind: ModelKind, v: &[f64]) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    match kind {
        ModelKind::Jp => (Some(r9v(v)), None),
        ModelKind::Lb => (None, Some(r9v(v))),
    }
}

impl FitReport {
    pub fn new(ds: &Dataset, fit: &ModelFit, se: Option<&Params>) -> Self {
        let (phi, rho) = split_dispersion(fit.kind, &fit.params.dispersion);
        let standard_errors = se.map(|se| {
            let (phi, rho) = split_dispersion(fit.kind, &se.dispersion);
            SeReport {
                psi: r9v(&se.psi),
                delta: r9v(&se.delta),
                upsilon: r9v(&se.upsilon),
                phi,
                rho,
            }
        });
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            kind: fit.kind,
            estimator: "adjusted_mos".to_owned(),
            subjects: ds.subjects().labels().to_vec(),
            pvs: ds.pvss().labels().to_vec(),
            srcs: (fit.kind == ModelKind::Lb).then(|| ds.srcs().labels().to_vec()),
            psi: r9v(&fit.params.psi),
            delta: r9v(&fit.params.delta),
            upsilon: r9v(&fit.params.upsilon),
            phi,
            rho,
            loglik: r9(fit.loglik()),
            loglik_trace: r9v(&fit.loglik_trace),
            converged: fit.converged,
            iterations: fit.iterations,
            standard_errors,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    fn dispersion(&self) -> (&'static str, &[f64], &[String]) {
        match (&self.phi, &self.rho) {
            (Some(phi), _) => ("phi", phi, &self.pvs),
            (None, Some(rho)) => ("rho", rho, self.srcs.as_deref().unwrap_or(&[])),
            (None, None) => ("phi", &[], &[]),
        }
    }
}

impl Report for FitReport {
    fn floats(&self) -> Vec<(&'static str, f64)> {
        let (disp_name, disp, _) = self.dispersion();
        let mut out: Vec<(&'static str, f64)> = Vec::new();
        out.extend(self.psi.iter().map(|&v| ("psi", v)));
        out.extend(self.delta.iter().map(|&v| ("delta", v)));
        out.extend(self.upsilon.iter().map(|&v| ("upsilon", v)));
        out.extend(disp.iter().map(|&v| (disp_name, v)));
        out.push(("loglik", self.loglik));
        out.extend(self.loglik_trace.iter().map(|&v| ("loglik_trace", v)));
        if let Some(se) = &self.standard_errors {
            let disp = se.phi.as_ref().or(se.rho.as_ref());
            out.extend(
                se.psi
                    .iter()
                    .chain(&se.delta)
                    .chain(&se.upsilon)
                    .chain(disp.into_iter().flatten())
                    .map(|&v| ("standard_errors", v)),
            );
        }
        out
    }

    fn csv_header(&self) -> &'static [&'static str] {
        &["parameter", "index", "label", "value", "se"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let (disp_name, disp, disp_labels) = self.dispersion();
        let se = self.standard_errors.as_ref();
        let se_disp = se.and_then(|s| s.phi.as_ref().or(s.rho.as_ref()));
        let blocks: [(&str, &[f64], &[String], Option<&Vec<f64>>); 4] = [
            ("psi", &self.psi, &self.pvs, se.map(|s| &s.psi)),
            ("delta", &self.delta, &self.subjects, se.map(|s| &s.delta)),
            ("upsilon", &self.upsilon, &self.subjects, se.map(|s| &s.upsilon)),
            (disp_name, disp, disp_labels, se_disp),
        ];
        let mut rows = Vec::new();
        for (name, values, labels, ses) in blocks {
            for (idx, v) in values.iter().enumerate() {
                rows.push(vec![
                    name.to_owned(),
                    idx.to_string(),
                    labels.get(idx).cloned().unwrap_or_default(),
                    fmt_f(*v),
                    ses.and_then(|s| s.get(idx)).map(|&s| fmt_f(s)).unwrap_or_default(),
                ]);
            }
        }
        rows.push(vec![
            "loglik".into(),
            String::new(),
            String::new(),
            fmt_f(self.loglik),
            String::new(),
        ]);
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosReport {
    pub tool: String,
    pub version: String,
    pub estimator: String,
    pub level: f64,
    pub pvs: Vec<String>,
    pub mos: Vec<f64>,
    /// `null` where a PVS has a single rating.
    pub std: Vec<Option<f64>>,
    pub n: Vec<usize>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl MosReport {
    pub fn new(ds: &Dataset, table: &MosTable) -> Self {
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            estimator: "mos".to_owned(),
            level: r9(table.level),
            pvs: ds.pvss().labels().to_vec(),
            mos: table.rows.iter().map(|r| r9(r.mean)).collect(),
            std: table.rows.iter().map(|r| r.std.map(r9)).collect(),
            n: table.rows.iter().map(|r| r.n).collect(),
            ci_lo: table.rows.iter().map(|r| r9(r.ci_lo)).collect(),
            ci_hi: table.rows.iter().map(|r| r9(r.ci_hi)).collect(),
        }
    }
}

impl Report for MosReport {
    fn floats(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("level", self.level)];
        out.extend(self.mos.iter().map(|&v| ("mos", v)));
        out.extend(self.std.iter().flatten().map(|&v| ("std", v)));
        out.extend(self.ci_lo.iter().map(|&v| ("ci_lo", v)));
        out.extend(self.ci_hi.iter().map(|&v| ("ci_hi", v)));
        out
    }

    fn csv_header(&self) -> &'static [&'static str] {
        &["pvs", "mos", "std", "n", "ci_lo", "ci_hi"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        (0..self.pvs.len())
            .map(|j| {
                vec![
                    self.pvs[j].clone(),
                    fmt_f(self.mos[j]),
                    self.std[j].map(fmt_f).unwrap_or_default(),
                    self.n[j].to_string(),
                    fmt_f(self.ci_lo[j]),
                    fmt_f(self.ci_hi[j]),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub subject: String,
    pub window_start: u32,
    pub window_end: u32,
    pub terms: usize,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDriftReport {
    pub tool: String,
    pub version: String,
    /// Which quality estimate the residuals are taken against.
    pub estimator: String,
    pub rows: Vec<BiasRow>,
}

impl BiasDriftReport {
    pub fn new(ds: &Dataset, estimator: &str, biases: &[WindowedBias]) -> Self {
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            estimator: estimator.to_owned(),
            rows: biases
                .iter()
                .map(|b| BiasRow {
                    subject: ds.subjects().label(b.subject).to_owned(),
                    window_start: b.window.start,
                    window_end: b.window.end,
                    terms: b.terms,
                    bias: r9(b.value),
                })
                .collect(),
        }
    }
}

impl Report for BiasDriftReport {
    fn floats(&self) -> Vec<(&'static str, f64)> {
        self.rows.iter().map(|r| ("bias", r.bias)).collect()
    }

    fn csv_header(&self) -> &'static [&'static str] {
        &["subject", "window_start", "window_end", "terms", "bias"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.subject.clone(),
                    r.window_start.to_string(),
                    r.window_end.to_string(),
                    r.terms.to_string(),
                    fmt_f(r.bias),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySeedRow {
    pub seed: u64,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub rmse_psi: Option<f64>,
    pub rmse_delta: Option<f64>,
    pub rmse_upsilon: Option<f64>,
    pub rmse_dispersion: Option<f64>,
    pub pearson_psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryJson {
    pub median: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryAggregate {
    pub rmse_psi: Option<SummaryJson>,
    pub rmse_delta: Option<SummaryJson>,
    pub rmse_upsilon: Option<SummaryJson>,
    pub rmse_dispersion: Option<SummaryJson>,
    pub pearson_psi: Option<SummaryJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryJson {
    pub tool: String,
    pub version: String,
    pub model: ModelKind,
    pub failed: usize,
    pub seeds: Vec<RecoverySeedRow>,
    pub aggregate: RecoveryAggregate,
}

type Metric = fn(&RecoveryErrors) -> Option<f64>;

const METRICS: [(&str, Metric); 5] = [
    ("rmse_psi", |e| Some(e.rmse_psi)),
    ("rmse_delta", |e| Some(e.rmse_delta)),
    ("rmse_upsilon", |e| Some(e.rmse_upsilon)),
    ("rmse_dispersion", |e| Some(e.rmse_dispersion)),
    ("pearson_psi", |e| e.pearson_psi),
];

impl RecoveryJson {
    pub fn new(report: &RecoveryReport) -> Self {
        let summary = |m: Metric| {
            report.summarize(m).map(|Summary { median, p95 }| SummaryJson {
                median: r9(median),
                p95: r9(p95),
            })
        };
        let seeds = report
            .seeds
            .iter()
            .map(|s| match &s.result {
                Ok(e) => RecoverySeedRow {
                    seed: s.seed,
                    converged: Some(e.converged),
                    iterations: Some(e.iterations),
                    rmse_psi: Some(r9(e.rmse_psi)),
                    rmse_delta: Some(r9(e.rmse_delta)),
                    rmse_upsilon: Some(r9(e.rmse_upsilon)),
                    rmse_dispersion: Some(r9(e.rmse_dispersion)),
                    pearson_psi: e.pearson_psi.map(r9),
                    error: None,
                },
                Err(msg) => RecoverySeedRow {
                    seed: s.seed,
                    converged: None,
                    iterations: None,
                    rmse_psi: None,
                    rmse_delta: None,
                    rmse_upsilon: None,
                    rmse_dispersion: None,
                    pearson_psi: None,
                    error: Some(msg.clone()),
                },
            })
            .collect();
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            model: report.model,
            failed: report.failed(),
            seeds,
            aggregate: RecoveryAggregate {
                rmse_psi: summary(METRICS[0].1),
                rmse_delta: summary(METRICS[1].1),
                rmse_upsilon: summary(METRICS[2].1),
                rmse_dispersion: summary(METRICS[3].1),
                pearson_psi: summary(METRICS[4].1),
            },
        }
    }

    fn aggregates(&self) -> [Option<SummaryJson>; 5] {
        let a = &self.aggregate;
        [a.rmse_psi, a.rmse_delta, a.rmse_upsilon, a.rmse_dispersion, a.pearson_psi]
    }
}

impl Report for RecoveryJson {
    fn floats(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        for s in &self.seeds {
            let vals = [s.rmse_psi, s.rmse_delta, s.rmse_upsilon, s.rmse_dispersion, s.pearson_psi];
            for ((name, _), v) in METRICS.iter().zip(vals) {
                out.extend(v.map(|v| (*name, v)));
            }
        }
        for ((name, _), agg) in METRICS.iter().zip(self.aggregates()) {
            if let Some(a) = agg {
                out.push((*name, a.median));
                out.push((*name, a.p95));
            }
        }
        out
    }

    fn csv_header(&self) -> &'static [&'static str] {
        &[
            "row",
            "seed",
            "converged",
            "iterations",
            "rmse_psi",
            "rmse_delta",
            "rmse_upsilon",
            "rmse_dispersion",
            "pearson_psi",
            "error",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_default();
        let mut rows: Vec<Vec<String>> = self
            .seeds
            .iter()
            .map(|s| {
                vec![
                    "seed".into(),
                    s.seed.to_string(),
                    s.converged.map(|c| c.to_string()).unwrap_or_default(),
                    s.iterations.map(|c| c.to_string()).unwrap_or_default(),
                    opt(s.rmse_psi),
                    opt(s.rmse_delta),
                    opt(s.rmse_upsilon),
                    opt(s.rmse_dispersion),
                    opt(s.pearson_psi),
                    s.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        for (label, pick) in [
            ("median", (|s: SummaryJson| s.median) as fn(SummaryJson) -> f64),
            ("p95", |s: SummaryJson| s.p95),
        ] {
            let mut row = vec![label.to_owned(), String::new(), String::new(), String::new()];
            row.extend(self.aggregates().iter().map(|a| opt(a.map(pick))));
            row.push(String::new());
            rows.push(row);
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_to_nine_digits() {
        assert_eq!(round_sig(1.234_567_891_23, 9), 1.234_567_89);
        assert_eq!(round_sig(-0.000_123_456_789_9, 9), -0.000_123_456_79);
        assert_eq!(round_sig(0.0, 9), 0.0);
        assert!(round_sig(f64::NAN, 9).is_nan());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!("xml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let report = BiasDriftReport {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            estimator: "mos".into(),
            rows: vec![BiasRow {
                subject: "s1".into(),
                window_start: 1,
                window_end: 2,
                terms: 2,
                bias: f64::NAN,
            }],
        };
        assert!(matches!(
            write_report(&report, ReportFormat::Json),
            Err(ReportError::NonFiniteValue(f)) if f == "bias"
        ));
    }
}
