//! Subject models and estimators for subjective quality experiments.
//!
//! A raw opinion score `u` is indexed by subject `i`, PVS `j`, repetition
//! `r` and presentation order `o`; each PVS maps to an SRC `k(j)` and an HRC
//! `h(j)`. Model parameters are the true quality `ψ`, the subject bias `Δ`,
//! the subject inconsistency `υ`, and a per-PVS (`φ`) or per-SRC (`ρ`)
//! dispersion. A bar marks an average (`ū_j`, the MOS) and a hat an
//! estimate (`ψ̂_j`, the adjusted MOS).
//!
//! - [`dataset`]: validated experiment data model.
//! - [`estimators`]: MOS, confidence intervals, answer probabilities,
//!   order-windowed bias.
//! - [`mle`]: maximum-likelihood fits of the JP and LB subject models.
//! - [`simulate`]: seeded synthetic experiments and parameter recovery.
//! - [`io`]: CSV ingestion with legacy header aliases, reports, configs.

pub mod dataset;
pub mod estimators;
pub mod io;
pub mod mle;
pub mod simulate;

pub use dataset::{Dataset, DatasetError, RatingRecord, Record, Scale};
pub use estimators::{MosTable, OrderWindow, WindowedBias};
pub use mle::{ModelFit, ModelKind, ModelSpec, Params};
pub use simulate::{OrderPolicy, SimulationConfig};
