//! File formats: the canonical ratings CSV with legacy header aliases,
//! JSON/CSV reports, and the flat key-value simulation config.

mod config;
mod ratings;
mod report;

pub use config::{parse_sim_config, ConfigError};
pub use ratings::{
    parse_csv, write_csv, Column, ColumnAliasMap, ParseError, ParseOptions, DEFAULT_HRC,
};
pub use report::{
    round_sig, write_report, BiasDriftReport, BiasRow, FitReport, MosReport, RecoveryAggregate,
    RecoveryJson, RecoverySeedRow, Report, ReportError, ReportFormat, SeReport, SummaryJson,
    TOOL_NAME, TOOL_VERSION,
};
