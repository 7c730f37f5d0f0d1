//! Seeded synthetic experiments and the parameter-recovery harness.
//!
//! # Random stream
//!
//! Every dataset is a pure function of its [`SimulationConfig`]. The stream
//! is xoshiro256** seeded from the 64-bit seed through SplitMix64 (the
//! `seed_from_u64` of `rand_xoshiro`). Uniforms take the top 53 bits of a
//! draw, `(x >> 11) · 2⁻⁵³ ∈ [0, 1)`. Each record consumes one Box–Muller
//! pair built from two uniforms `a`, `b`:
//!
//! ```text
//! R = sqrt(−2 ln(1 − a)),  θ = 2π b,  x = R cos θ,  y = R sin θ
//! ```
//!
//! Records are drawn subjects ascending, then PVSs ascending, then
//! repetitions ascending. Presentation orders (`RandomPerSubject`) are drawn
//! after all scores: one Fisher–Yates shuffle per subject, ascending, with
//! swap index `⌊u · (m + 1)⌋` for position `m` going down.

use std::collections::HashMap;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, RatingRecord, Scale};
use crate::mle::{self, ModelKind, ModelSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// How presentation orders are attached to generated records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderPolicy {
    #[default]
    None,
    /// Seeded shuffle of each subject's session.
    RandomPerSubject,
    /// Every subject sees the PVSs in index order, repetition blocks after
    /// each other: `o = (r − 1) · J + j + 1`.
    FixedSequence,
}

/// Ground truth and design of one synthetic experiment.
///
/// `dispersion` holds `φ_j` per PVS for JP and `ρ_k` per SRC for LB.
/// `src_of` and `hrc_of` are 0-based group indices per PVS. Generated labels
/// are `s1…`, `j1…`, `k1…`, `h1…`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub model: ModelKind,
    pub psi: Vec<f64>,
    pub delta: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub dispersion: Vec<f64>,
    pub src_of: Vec<usize>,
    pub hrc_of: Vec<usize>,
    pub repetitions: u32,
    pub scale: Scale,
    pub seed: u64,
    pub order_policy: OrderPolicy,
}

impl SimulationConfig {
    pub fn n_subjects(&self) -> usize {
        self.delta.len()
    }

    pub fn n_pvss(&self) -> usize {
        self.psi.len()
    }

    pub fn n_srcs(&self) -> usize {
        self.src_of.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let (ni, nj) = (self.n_subjects(), self.n_pvss());
        if ni == 0 || nj == 0 {
            return Err(SimulationError::InvalidConfig(
                "need at least one subject and one pvs".into(),
            ));
        }
        let n_disp = match self.model {
            ModelKind::Jp => nj,
            ModelKind::Lb => self.n_srcs(),
        };
        for (what, expected, got) in [
            ("upsilon", ni, self.upsilon.len()),
            ("src_of", nj, self.src_of.len()),
            ("hrc_of", nj, self.hrc_of.len()),
            ("dispersion", n_disp, self.dispersion.len()),
        ] {
            if expected != got {
                return Err(SimulationError::DimensionMismatch { what, expected, got });
            }
        }
        let mut used = vec![false; self.n_srcs()];
        self.src_of.iter().for_each(|&k| used[k] = true);
        if used.contains(&false) {
            return Err(SimulationError::InvalidConfig(
                "src_of skips an SRC index".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(SimulationError::InvalidConfig(
                "repetitions must be at least 1".into(),
            ));
        }
        if self
            .psi
            .iter()
            .chain(&self.delta)
            .chain(&self.upsilon)
            .chain(&self.dispersion)
            .any(|v| !v.is_finite())
        {
            return Err(SimulationError::InvalidConfig(
                "parameters must be finite".into(),
            ));
        }
        if self.upsilon.iter().chain(&self.dispersion).any(|&v| v < 0.0) {
            return Err(SimulationError::InvalidConfig(
                "dispersions must be nonnegative".into(),
            ));
        }
        let sum: f64 = self.delta.iter().sum();
        if sum.abs() > 1e-12 {
            return Err(SimulationError::InvalidConfig(format!(
                "delta must sum to 0, sums to {sum:e}"
            )));
        }
        self.scale.validate()?;
        Ok(())
    }

    fn dispersion_of(&self, pvs: usize) -> f64 {
        match self.model {
            ModelKind::Jp => self.dispersion[pvs],
            ModelKind::Lb => self.dispersion[self.src_of[pvs]],
        }
    }
}

/// Deterministic stream of uniforms and normal pairs.
pub struct NormalStream {
    rng: Xoshiro256StarStar,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Two independent standard normals (Box–Muller).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let a = self.uniform();
        let b = self.uniform();
        let radius = (-2.0 * (1.0 - a).ln()).sqrt();
        let theta = std::f64::consts::TAU * b;
        (radius * theta.cos(), radius * theta.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    fn shuffle<T>(&mut self, items: &mut [T]) {
        for m in (1..items.len()).rev() {
            let swap = ((self.uniform() * (m + 1) as f64) as usize).min(m);
            items.swap(m, swap);
        }
    }
}

/// Round half up to the nearest category, then clamp to `[1, S]`.
pub fn discretize(u: f64, categories: u32) -> u32 {
    let rounded = (u + 0.5).floor();
    rounded.clamp(1.0, f64::from(categories.max(1))) as u32
}

/// Draws a dataset from the configured model.
///
/// Continuous scores are not clamped; the returned dataset's continuous
/// bounds are the realized minimum and maximum (widened by 0.5 on each side
/// when all scores coincide). Discrete scales round and clamp every score.
pub fn generate(cfg: &SimulationConfig) -> Result<Dataset, SimulationError> {
    cfg.validate()?;
    let mut stream = NormalStream::new(cfg.seed);
    let (ni, nj, nr) = (cfg.n_subjects(), cfg.n_pvss(), cfg.repetitions);

    let mut records = Vec::with_capacity(ni * nj * nr as usize);
    for i in 0..ni {
        for j in 0..nj {
            for r in 1..=nr {
                let (x, y) = stream.normal_pair();
                let u = cfg.psi[j] + cfg.delta[i] + cfg.upsilon[i] * x + cfg.dispersion_of(j) * y;
                let score = match cfg.scale {
                    Scale::Discrete { categories } => f64::from(discretize(u, categories)),
                    Scale::Continuous { .. } => u,
                };
                let mut rec = RatingRecord::new(format!("s{}", i + 1), format!("j{}", j + 1), score)
                    .with_repetition(r);
                if cfg.order_policy == OrderPolicy::FixedSequence {
                    rec.order = Some((r - 1) * nj as u32 + j as u32 + 1);
                }
                records.push(rec);
            }
        }
    }

    if cfg.order_policy == OrderPolicy::RandomPerSubject {
        let per_subject = nj * nr as usize;
        for session in records.chunks_mut(per_subject) {
            let mut orders: Vec<u32> = (1..=per_subject as u32).collect();
            stream.shuffle(&mut orders);
            for (rec, o) in session.iter_mut().zip(orders) {
                rec.order = Some(o);
            }
        }
    }

    let scale = match cfg.scale {
        Scale::Discrete { .. } => cfg.scale,
        Scale::Continuous { .. } => {
            let lo = records.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
            let hi = records.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                Scale::continuous(lo, hi)?
            } else {
                Scale::continuous(lo - 0.5, hi + 0.5)?
            }
        }
    };
    let src_of: HashMap<String, String> = (0..nj)
        .map(|j| (format!("j{}", j + 1), format!("k{}", cfg.src_of[j] + 1)))
        .collect();
    let hrc_of: HashMap<String, String> = (0..nj)
        .map(|j| (format!("j{}", j + 1), format!("h{}", cfg.hrc_of[j] + 1)))
        .collect();
    Ok(Dataset::build(&records, &src_of, &hrc_of, scale)?)
}

/// Shape and spread of a randomly drawn ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPrior {
    pub model: ModelKind,
    pub subjects: usize,
    pub pvss: usize,
    /// PVSs per SRC; the last SRC may hold fewer.
    pub pvss_per_src: usize,
    /// `ψ_j` uniform on this range.
    pub psi_range: (f64, f64),
    /// `Δ_i ~ N(0, sd²)`, re-centered to sum 0.
    pub delta_sd: f64,
    /// `υ_i` uniform on this range.
    pub upsilon_range: (f64, f64),
    /// `φ_j` or `ρ_k` uniform on this range.
    pub dispersion_range: (f64, f64),
}

impl TruthPrior {
    /// Draws a configuration from the prior using its own stream `truth_seed`;
    /// the returned config carries `seed` for the score draws.
    pub fn draw(
        &self,
        truth_seed: u64,
        seed: u64,
        scale: Scale,
        order_policy: OrderPolicy,
    ) -> SimulationConfig {
        let mut s = NormalStream::new(truth_seed);
        let uniform_in = |(lo, hi): (f64, f64), s: &mut NormalStream| lo + (hi - lo) * s.uniform();
        let psi: Vec<f64> = (0..self.pvss).map(|_| uniform_in(self.psi_range, &mut s)).collect();
        let mut delta: Vec<f64> = (0..self.subjects).map(|_| self.delta_sd * s.normal()).collect();
        let mean = delta.iter().sum::<f64>() / delta.len().max(1) as f64;
        delta.iter_mut().for_each(|d| *d -= mean);
        let upsilon = (0..self.subjects)
            .map(|_| uniform_in(self.upsilon_range, &mut s))
            .collect();
        let per_src = self.pvss_per_src.max(1);
        let src_of: Vec<usize> = (0..self.pvss).map(|j| j / per_src).collect();
        let n_disp = match self.model {
            ModelKind::Jp => self.pvss,
            ModelKind::Lb => src_of.last().map_or(0, |k| k + 1),
        };
        let dispersion = (0..n_disp)
            .map(|_| uniform_in(self.dispersion_range, &mut s))
            .collect();
        SimulationConfig {
            model: self.model,
            psi,
            delta,
            upsilon,
            dispersion,
            src_of,
            hrc_of: vec![0; self.pvss],
            repetitions: 1,
            scale,
            seed,
            order_policy,
        }
    }
}

/// Recovery errors of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: Result<RecoveryErrors, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryErrors {
    pub rmse_psi: f64,
    pub rmse_delta: f64,
    pub rmse_upsilon: f64,
    pub rmse_dispersion: f64,
    /// `None` when either vector has zero variance.
    pub pearson_psi: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Median and 95th percentile of one metric over successful seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub model: ModelKind,
    pub seeds: Vec<SeedOutcome>,
}

impl RecoveryReport {
    fn successes(&self) -> impl Iterator<Item = &RecoveryErrors> {
        self.seeds.iter().filter_map(|s| s.result.as_ref().ok())
    }

    pub fn failed(&self) -> usize {
        self.seeds.iter().filter(|s| s.result.is_err()).count()
    }

    /// Aggregate of `metric` over successful seeds, `None` if there are none.
    pub fn summarize(&self, metric: impl Fn(&RecoveryErrors) -> Option<f64>) -> Option<Summary> {
        let values: Vec<f64> = self.successes().filter_map(metric).collect();
        Some(Summary {
            median: percentile(&values, 0.5)?,
            p95: percentile(&values, 0.95)?,
        })
    }
}

/// Linear-interpolation percentile (the "type 7" definition) of `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn rmse(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimate.len(), truth.len());
    let ss: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    (ss / truth.len() as f64).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn recover_one(cfg: &SimulationConfig, spec: &ModelSpec) -> Result<RecoveryErrors, String> {
    let ds = generate(cfg).map_err(|e| e.to_string())?;
    let fit = mle::fit(&ds, spec).map_err(|e| e.to_string())?;
    // Generated labels keep the config's index order.
    let truth_disp: Vec<f64> = match spec.kind {
        ModelKind::Jp => (0..cfg.n_pvss()).map(|j| cfg.dispersion_of(j)).collect(),
        ModelKind::Lb => cfg.dispersion.clone(),
    };
    Ok(RecoveryErrors {
        rmse_psi: rmse(fit.psi_hat(), &cfg.psi),
        rmse_delta: rmse(fit.delta_hat(), &cfg.delta),
        rmse_upsilon: rmse(fit.upsilon_hat(), &cfg.upsilon),
        rmse_dispersion: rmse(&fit.params.dispersion, &truth_disp),
        pearson_psi: pearson(fit.psi_hat(), &cfg.psi),
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

/// Generates and refits `n_seeds` datasets with seeds `cfg.seed`,
/// `cfg.seed + 1`, … and records the estimation errors of each. A failing
/// seed is recorded and does not abort the batch. Seeds run in parallel;
/// results are ordered by seed.
pub fn recovery_experiment(
    cfg: &SimulationConfig,
    spec: &ModelSpec,
    n_seeds: usize,
) -> Result<RecoveryReport, SimulationError> {
    if n_seeds == 0 {
        return Err(SimulationError::InvalidConfig(
            "n_seeds must be at least 1".into(),
        ));
    }
    cfg.validate()?;
    if spec.kind != cfg.model {
        return Err(SimulationError::InvalidConfig(format!(
            "cannot score a {} fit against {} ground truth",
            spec.kind, cfg.model
        )));
    }
    let seeds: Vec<SeedOutcome> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|offset| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(offset);
            SeedOutcome {
                seed: c.seed,
                result: recover_one(&c, spec),
            }
        })
        .collect();
    Ok(RecoveryReport {
        model: spec.kind,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(model: ModelKind) -> SimulationConfig {
        SimulationConfig {
            model,
            psi: vec![1.0, 2.0, 3.0],
            delta: vec![0.5, -0.5],
            upsilon: vec![0.3, 0.4],
            dispersion: match model {
                ModelKind::Jp => vec![0.2, 0.3, 0.1],
                ModelKind::Lb => vec![0.2, 0.3],
            },
            src_of: vec![0, 0, 1],
            hrc_of: vec![0, 1, 0],
            repetitions: 1,
            scale: Scale::continuous(f64::NEG_INFINITY, f64::INFINITY).unwrap(),
            seed: 7,
            order_policy: OrderPolicy::None,
        }
    }

    #[test]
    fn discretize_rule() {
        assert_eq!(discretize(3.4, 5), 3);
        assert_eq!(discretize(3.5, 5), 4);
        assert_eq!(discretize(6.2, 5), 5);
        assert_eq!(discretize(-0.3, 5), 1);
        for s in 1..=5 {
            assert_eq!(discretize(f64::from(s), 5), s);
        }
    }

    #[test]
    fn noiseless_generation_is_exact() {
        let mut cfg = small_cfg(ModelKind::Jp);
        cfg.upsilon = vec![0.0; 2];
        cfg.dispersion = vec![0.0; 3];
        let ds = generate(&cfg).unwrap();
        for r in ds.records() {
            assert_eq!(r.score, cfg.psi[r.pvs] + cfg.delta[r.subject]);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = small_cfg(ModelKind::Lb);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = small_cfg(ModelKind::Jp);
        cfg.delta = vec![0.5, -0.4];
        assert!(matches!(generate(&cfg), Err(SimulationError::InvalidConfig(_))));
        let mut cfg = small_cfg(ModelKind::Jp);
        cfg.dispersion.pop();
        assert!(matches!(
            generate(&cfg),
            Err(SimulationError::DimensionMismatch { what: "dispersion", .. })
        ));
        let mut cfg = small_cfg(ModelKind::Lb);
        cfg.upsilon[0] = -0.1;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn order_policies() {
        let mut cfg = small_cfg(ModelKind::Jp);
        cfg.repetitions = 2;
        cfg.order_policy = OrderPolicy::FixedSequence;
        let ds = generate(&cfg).unwrap();
        for r in ds.records() {
            assert_eq!(r.order, Some((r.repetition - 1) * 3 + r.pvs as u32 + 1));
        }
        cfg.order_policy = OrderPolicy::RandomPerSubject;
        let ds = generate(&cfg).unwrap();
        for i in 0..2 {
            let mut orders: Vec<u32> = ds
                .records()
                .iter()
                .filter(|r| r.subject == i)
                .map(|r| r.order.unwrap())
                .collect();
            orders.sort_unstable();
            assert_eq!(orders, (1..=6).collect::<Vec<_>>());
        }
        // orders are drawn after the scores, so the scores do not move
        cfg.order_policy = OrderPolicy::None;
        let plain = generate(&cfg).unwrap();
        let scores = |d: &Dataset| d.records().iter().map(|r| r.score).collect::<Vec<_>>();
        assert_eq!(scores(&plain), scores(&ds));
    }

    #[test]
    fn continuous_bounds_follow_the_data() {
        let ds = generate(&small_cfg(ModelKind::Jp)).unwrap();
        let Scale::Continuous { lo, hi } = ds.scale() else {
            panic!("continuous expected")
        };
        let min = ds.records().iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
        let max = ds.records().iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (min, max));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 1.0), Some(4.0));
        assert_eq!(percentile(&v, 0.5), Some(2.5));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn pearson_and_rmse() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert!((rmse(&[1.0, 3.0], &[0.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn truth_prior_is_centered_and_in_range() {
        let prior = TruthPrior {
            model: ModelKind::Lb,
            subjects: 6,
            pvss: 10,
            pvss_per_src: 3,
            psi_range: (1.0, 5.0),
            delta_sd: 0.3,
            upsilon_range: (0.2, 0.8),
            dispersion_range: (0.2, 0.8),
        };
        let cfg = prior.draw(1, 2, Scale::continuous(f64::NEG_INFINITY, f64::INFINITY).unwrap(), OrderPolicy::None);
        cfg.validate().unwrap();
        assert_eq!(cfg.dispersion.len(), 4);
        assert!(cfg.psi.iter().all(|p| (1.0..5.0).contains(p)));
        assert!(cfg.upsilon.iter().all(|p| (0.2..0.8).contains(p)));
    }
}
