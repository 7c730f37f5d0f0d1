//! Nonparametric statistics: MOS `ū_j`, per-PVS dispersion, confidence
//! intervals, empirical answer probabilities `P(U_j = s)` and the
//! order-windowed subject bias `Δ̄_i`.

use std::collections::HashMap;

use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("pvs index {0} has no ratings")]
    EmptyPvs(usize),

    #[error("pvs index {0} is not part of the dataset")]
    UnknownPvs(usize),

    #[error("subject index {0} is not part of the dataset")]
    UnknownSubject(usize),

    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("answer probabilities need a discrete scale")]
    ContinuousScaleUnsupported,

    #[error("subject '{0}' has no order values")]
    OrderMissing(String),

    #[error("subject '{subject}' has no rating at order {order}")]
    WindowNotCovered { subject: String, order: u32 },

    #[error("no quality estimate for pvs '{0}'")]
    PsiMissing(String),

    #[error("invalid order window [{start}, {end}]")]
    InvalidWindow { start: u32, end: u32 },
}

/// Running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Sample standard deviation, `None` below two observations.
    fn std(&self) -> Option<f64> {
        (self.n >= 2).then(|| (self.m2.max(0.0) / (self.n - 1) as f64).sqrt())
    }
}

fn per_pvs_moments(ds: &Dataset) -> Vec<Moments> {
    let mut acc = vec![Moments::default(); ds.n_pvss()];
    for r in ds.records() {
        acc[r.pvs].push(r.score);
    }
    acc
}

/// One row of a [`MosTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosRow {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); `None` when `n = 1`.
    pub std: Option<f64>,
    pub n: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Per-PVS MOS with dispersion and confidence interval, indexed by the
/// dataset's dense PVS index.
#[derive(Debug, Clone, PartialEq)]
pub struct MosTable {
    pub level: f64,
    pub rows: Vec<MosRow>,
}

impl MosTable {
    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean).collect()
    }
}

/// Mean opinion score of every PVS over all subjects and repetitions.
pub fn mos(ds: &Dataset, level: f64) -> Result<MosTable, EstimatorError> {
    check_level(level)?;
    let rows = per_pvs_moments(ds)
        .into_iter()
        .enumerate()
        .map(|(j, m)| {
            if m.n == 0 {
                return Err(EstimatorError::EmptyPvs(j));
            }
            let (ci_lo, ci_hi) = mos_ci(m.mean, m.std().unwrap_or(0.0), m.n, level)?;
            Ok(MosRow {
                mean: m.mean,
                std: m.std(),
                n: m.n,
                ci_lo,
                ci_hi,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(MosTable { level, rows })
}

/// Normal-approximation interval `mean ± z_{(1+level)/2} · std / √n`.
/// Degenerates to `[mean, mean]` when `n = 1` or `std = 0`.
pub fn mos_ci(mean: f64, std: f64, n: usize, level: f64) -> Result<(f64, f64), EstimatorError> {
    check_level(level)?;
    if n == 0 {
        return Err(EstimatorError::InvalidArgument("n must be at least 1"));
    }
    if !(std >= 0.0) {
        return Err(EstimatorError::InvalidArgument("std must be nonnegative"));
    }
    if n == 1 || std == 0.0 {
        return Ok((mean, mean));
    }
    let half = normal_quantile(0.5 * (1.0 + level)) * std / (n as f64).sqrt();
    Ok((mean - half, mean + half))
}

fn check_level(level: f64) -> Result<(), EstimatorError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(EstimatorError::InvalidLevel(level))
    }
}

/// Sample standard deviation of the scores of every PVS; `None` where a PVS
/// has fewer than two ratings.
pub fn per_pvs_std(ds: &Dataset) -> Vec<Option<f64>> {
    per_pvs_moments(ds).iter().map(Moments::std).collect()
}

/// Empirical probability of every answer `s = 1..S` for one PVS.
pub fn empirical_pmf(ds: &Dataset, pvs: usize) -> Result<Vec<f64>, EstimatorError> {
    let categories = ds
        .scale()
        .categories()
        .ok_or(EstimatorError::ContinuousScaleUnsupported)?;
    if pvs >= ds.n_pvss() {
        return Err(EstimatorError::UnknownPvs(pvs));
    }
    let mut counts = vec![0usize; categories as usize];
    for r in ds.records().iter().filter(|r| r.pvs == pvs) {
        // scores on a discrete scale are validated integers in 1..=S
        counts[r.score as usize - 1] += 1;
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(EstimatorError::EmptyPvs(pvs));
    }
    Ok(counts.into_iter().map(|c| c as f64 / n as f64).collect())
}

/// Inclusive range of presentation orders `[start, end]`, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderWindow {
    pub start: u32,
    pub end: u32,
}

impl OrderWindow {
    pub fn new(start: u32, end: u32) -> Result<Self, EstimatorError> {
        if start == 0 || start > end {
            return Err(EstimatorError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowedBias {
    pub subject: usize,
    pub window: OrderWindow,
    pub value: f64,
    /// Number of summed terms, always `window.len()`.
    pub terms: usize,
}

/// Mean residual `u_{ijo} − ψ̂_j` of one subject over a window of
/// presentation orders, where `j` is the PVS rated at order `o`.
pub fn windowed_bias(
    ds: &Dataset,
    psi_hat: &[f64],
    subject: usize,
    window: OrderWindow,
) -> Result<WindowedBias, EstimatorError> {
    if subject >= ds.n_subjects() {
        return Err(EstimatorError::UnknownSubject(subject));
    }
    let label = || ds.subjects().label(subject).to_owned();
    let by_order: HashMap<u32, (usize, f64)> = ds
        .records()
        .iter()
        .filter(|r| r.subject == subject)
        .filter_map(|r| r.order.map(|o| (o, (r.pvs, r.score))))
        .collect();
    if by_order.is_empty() {
        return Err(EstimatorError::OrderMissing(label()));
    }

    let mut sum = 0.0;
    for o in window.start..=window.end {
        let &(pvs, score) = by_order
            .get(&o)
            .ok_or_else(|| EstimatorError::WindowNotCovered {
                subject: label(),
                order: o,
            })?;
        let psi = psi_hat
            .get(pvs)
            .copied()
            .filter(|p| p.is_finite())
            .ok_or_else(|| EstimatorError::PsiMissing(ds.pvss().label(pvs).to_owned()))?;
        sum += score - psi;
    }
    let terms = window.len() as usize;
    Ok(WindowedBias {
        subject,
        window,
        value: sum / terms as f64,
        terms,
    })
}

// Acklam's rational approximation of the standard normal quantile.
// Relative error below 1.15e-9 on (0, 1).
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e1,
    2.209460984245205e2,
    -2.759285104469687e2,
    1.383577518672690e2,
    -3.066479806614716e1,
    2.506628277459239e0,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e1,
    1.615858368580409e2,
    -1.556989798598866e2,
    6.680131188771972e1,
    -1.328068155288572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-3,
    -3.223964580411365e-1,
    -2.400758277161838e0,
    -2.549732539343734e0,
    4.374664141464968e0,
    2.938163982698783e0,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-3,
    3.224671290700398e-1,
    2.445134137142996e0,
    3.754408661907416e0,
];
const ACKLAM_P_LOW: f64 = 0.02425;

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`; NaN outside.
pub fn normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return f64::NAN;
    }
    let tail = |q: f64| {
        let [c1, c2, c3, c4, c5, c6] = ACKLAM_C;
        let [d1, d2, d3, d4] = ACKLAM_D;
        (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6)
            / ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    };
    if p < ACKLAM_P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - ACKLAM_P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let [a1, a2, a3, a4, a5, a6] = ACKLAM_A;
        let [b1, b2, b3, b4, b5] = ACKLAM_B;
        let q = p - 0.5;
        let r = q * q;
        (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q
            / (((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0)
    }
}
