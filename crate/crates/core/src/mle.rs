//! Maximum-likelihood fitting of the two Gaussian subject models.
//!
//! Both models write a raw score as true quality plus subject bias plus two
//! independent zero-mean Gaussian noise terms:
//!
//! ```text
//! JP: U_ij = ψ_j + Δ_i + υ_i X + φ_j Y         (per-PVS noise φ_j)
//! LB: U_ij = ψ_j + Δ_i + υ_i X + ρ_{k(j)} Y    (per-SRC noise ρ_k)
//! ```
//!
//! so `u_ij ~ N(ψ_j + Δ_i, υ_i² + d²)` with `d` the PVS or SRC dispersion.
//! Repetitions contribute independent likelihood terms. The bias is
//! identified by the constraint `Σ_i Δ_i = 0`.
//!
//! The likelihood only sees the sums `υ_i² + d²`, so adding a constant to
//! every `υ_i²` and subtracting it from every `d²` changes nothing. Fits
//! resolve this by making the mean of the `υ_i²` equal to the mean of the
//! `d²`, or by putting the smallest of them on the variance floor when the
//! balanced split is out of reach.
//!
//! The solver is block coordinate ascent. Mean parameters have closed-form
//! weighted-mean updates; every variance is updated by a safeguarded 1-D
//! Newton iteration with backtracking, so the likelihood never decreases.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Allowed likelihood decrease between sweeps before the fit is aborted.
pub const NO_PROGRESS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MleError {
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("nonpositive variance {variance} for record {record}")]
    NonpositiveVariance { record: usize, variance: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("log-likelihood decreased by {decrease:e} at iteration {iteration}")]
    NoProgress { iteration: usize, decrease: f64 },

    #[error("observed information is not positive definite on the constraint surface")]
    SingularInformation,

    #[error("invalid model spec: {0}")]
    InvalidSpec(&'static str),
}

/// Which dispersion term accompanies the subject noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Per-PVS dispersion `φ_j`.
    Jp,
    /// Per-SRC dispersion `ρ_k`.
    Lb,
}

impl ModelKind {
    /// Dispersion group of PVS `pvs` in `ds`.
    fn group(self, ds: &Dataset, pvs: usize) -> usize {
        match self {
            Self::Jp => pvs,
            Self::Lb => ds.src_of(pvs),
        }
    }

    fn n_groups(self, ds: &Dataset) -> usize {
        match self {
            Self::Jp => ds.n_pvss(),
            Self::Lb => ds.n_srcs(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jp => "jp",
            Self::Lb => "lb",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jp" => Ok(Self::Jp),
            "lb" => Ok(Self::Lb),
            other => Err(format!("unknown model '{other}' (expected jp or lb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Lower bound on every variance component, in squared score units.
    pub variance_floor: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest absolute parameter change.
    pub tol: f64,
}

impl ModelSpec {
    pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITERS: usize = 500;

    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            variance_floor: Self::DEFAULT_VARIANCE_FLOOR,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
        }
    }

    pub fn validate(&self) -> Result<(), MleError> {
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(MleError::InvalidSpec("variance_floor must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(MleError::InvalidSpec("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(MleError::InvalidSpec("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Model parameters on the standard-deviation scale. `dispersion` holds
/// `φ` (one entry per PVS) for JP and `ρ` (one entry per SRC) for LB.
///
/// The same shape carries gradients and standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub psi: Vec<f64>,
    pub delta: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub dispersion: Vec<f64>,
}

impl Params {
    pub fn zeros_like(ds: &Dataset, kind: ModelKind) -> Self {
        Self {
            psi: vec![0.0; ds.n_pvss()],
            delta: vec![0.0; ds.n_subjects()],
            upsilon: vec![0.0; ds.n_subjects()],
            dispersion: vec![0.0; kind.n_groups(ds)],
        }
    }

    fn check_shape(&self, ds: &Dataset, kind: ModelKind) -> Result<(), MleError> {
        let expect = [
            ("psi", ds.n_pvss(), self.psi.len()),
            ("delta", ds.n_subjects(), self.delta.len()),
            ("upsilon", ds.n_subjects(), self.upsilon.len()),
            ("dispersion", kind.n_groups(ds), self.dispersion.len()),
        ];
        for (what, expected, got) in expect {
            if expected != got {
                return Err(MleError::DimensionMismatch { what, expected, got });
            }
        }
        Ok(())
    }

    /// All values in a fixed order: psi, delta, upsilon, dispersion.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.psi, &self.delta, &self.upsilon, &self.dispersion]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    fn max_abs_diff(&self, other: &Params) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn recenter_delta(&mut self) {
        if self.delta.is_empty() {
            return;
        }
        let shift = self.delta.iter().sum::<f64>() / self.delta.len() as f64;
        self.delta.iter_mut().for_each(|d| *d -= shift);
        self.psi.iter_mut().for_each(|p| *p += shift);
    }

    /// Moves along `υ_i² + c`, `d² − c`, which leaves every record variance
    /// unchanged, to where the mean squares of `υ` and of the dispersions
    /// agree. The shift is clamped so neither side drops below `floor`.
    fn balance_variances(&mut self, floor: f64) {
        if self.upsilon.is_empty() || self.dispersion.is_empty() {
            return;
        }
        let mean_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let min_sq = |v: &[f64]| v.iter().map(|x| x * x).fold(f64::INFINITY, f64::min);
        let lo = floor - min_sq(&self.upsilon);
        let hi = min_sq(&self.dispersion) - floor;
        if lo >= hi {
            return;
        }
        let c = (0.5 * (mean_sq(&self.dispersion) - mean_sq(&self.upsilon))).clamp(lo, hi);
        self.upsilon.iter_mut().for_each(|x| *x = (*x * *x + c).max(floor).sqrt());
        self.dispersion.iter_mut().for_each(|x| *x = (*x * *x - c).max(floor).sqrt());
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub kind: ModelKind,
    pub params: Params,
    /// Log-likelihood at the starting point and after every sweep.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl ModelFit {
    pub fn psi_hat(&self) -> &[f64] {
        &self.params.psi
    }

    pub fn delta_hat(&self) -> &[f64] {
        &self.params.delta
    }

    pub fn upsilon_hat(&self) -> &[f64] {
        &self.params.upsilon
    }

    pub fn phi_hat(&self) -> Option<&[f64]> {
        (self.kind == ModelKind::Jp).then_some(self.params.dispersion.as_slice())
    }

    pub fn rho_hat(&self) -> Option<&[f64]> {
        (self.kind == ModelKind::Lb).then_some(self.params.dispersion.as_slice())
    }

    /// Final log-likelihood.
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds the starting point")
    }
}

/// Flat record arrays plus per-subject, per-PVS and per-group record lists.
struct Design {
    subject: Vec<usize>,
    pvs: Vec<usize>,
    group: Vec<usize>,
    score: Vec<f64>,
    by_subject: Vec<Vec<usize>>,
    by_pvs: Vec<Vec<usize>>,
    by_group: Vec<Vec<usize>>,
}

impl Design {
    fn new(ds: &Dataset, kind: ModelKind) -> Self {
        let recs = ds.records();
        let mut d = Self {
            subject: recs.iter().map(|r| r.subject).collect(),
            pvs: recs.iter().map(|r| r.pvs).collect(),
            group: recs.iter().map(|r| kind.group(ds, r.pvs)).collect(),
            score: recs.iter().map(|r| r.score).collect(),
            by_subject: vec![Vec::new(); ds.n_subjects()],
            by_pvs: vec![Vec::new(); ds.n_pvss()],
            by_group: vec![Vec::new(); kind.n_groups(ds)],
        };
        for n in 0..recs.len() {
            d.by_subject[d.subject[n]].push(n);
            d.by_pvs[d.pvs[n]].push(n);
            d.by_group[d.group[n]].push(n);
        }
        d
    }

    fn residual(&self, p: &Params, n: usize) -> f64 {
        self.score[n] - p.psi[self.pvs[n]] - p.delta[self.subject[n]]
    }

    fn variance(&self, p: &Params, n: usize) -> f64 {
        let u = p.upsilon[self.subject[n]];
        let d = p.dispersion[self.group[n]];
        u * u + d * d
    }

    fn loglik(&self, p: &Params) -> Result<f64, MleError> {
        let mut ll = 0.0;
        for n in 0..self.score.len() {
            let s = self.variance(p, n);
            if !(s > 0.0) {
                return Err(MleError::NonpositiveVariance {
                    record: n,
                    variance: s,
                });
            }
            let e = self.residual(p, n);
            ll -= 0.5 * (LN_2PI + s.ln() + e * e / s);
        }
        Ok(ll)
    }
}

/// Gaussian log-likelihood of the dataset under `params`.
pub fn log_likelihood(ds: &Dataset, spec: &ModelSpec, params: &Params) -> Result<f64, MleError> {
    params.check_shape(ds, spec.kind)?;
    Design::new(ds, spec.kind).loglik(params)
}

/// Analytic gradient of [`log_likelihood`] with respect to every parameter
/// (standard-deviation scale for the dispersions).
pub fn gradient(ds: &Dataset, spec: &ModelSpec, params: &Params) -> Result<Params, MleError> {
    params.check_shape(ds, spec.kind)?;
    let design = Design::new(ds, spec.kind);
    let mut g = Params::zeros_like(ds, spec.kind);
    for n in 0..design.score.len() {
        let (i, j, k) = (design.subject[n], design.pvs[n], design.group[n]);
        let s = design.variance(params, n);
        if !(s > 0.0) {
            return Err(MleError::NonpositiveVariance {
                record: n,
                variance: s,
            });
        }
        let e = design.residual(params, n);
        let mean_term = e / s;
        // d ll / d s, times d s / d sd = 2 sd
        let var_term = -1.0 / s + e * e / (s * s);
        g.psi[j] += mean_term;
        g.delta[i] += mean_term;
        g.upsilon[i] += params.upsilon[i] * var_term;
        g.dispersion[k] += params.dispersion[k] * var_term;
    }
    Ok(g)
}

/// Deterministic starting point: MOS for ψ, re-centered mean residual for Δ,
/// and half the pooled residual variance for every variance component.
fn initial_params(ds: &Dataset, design: &Design, spec: &ModelSpec) -> Params {
    let mut p = Params::zeros_like(ds, spec.kind);
    for (j, recs) in design.by_pvs.iter().enumerate() {
        p.psi[j] = recs.iter().map(|&n| design.score[n]).sum::<f64>() / recs.len() as f64;
    }
    for (i, recs) in design.by_subject.iter().enumerate() {
        p.delta[i] = recs
            .iter()
            .map(|&n| design.score[n] - p.psi[design.pvs[n]])
            .sum::<f64>()
            / recs.len() as f64;
    }
    p.recenter_delta();
    let n = design.score.len() as f64;
    let resid_var = (0..design.score.len())
        .map(|n| design.residual(&p, n).powi(2))
        .sum::<f64>()
        / n;
    let sd = (0.5 * resid_var).max(spec.variance_floor).sqrt();
    p.upsilon.fill(sd);
    p.dispersion.fill(sd);
    p
}

/// Weighted mean of `score − other_mean` over `recs`, weights `1 / σ²`.
fn weighted_mean_update(
    design: &Design,
    p: &Params,
    recs: &[usize],
    other_mean: impl Fn(usize) -> f64,
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &n in recs {
        let w = 1.0 / design.variance(p, n);
        num += w * (design.score[n] - other_mean(n));
        den += w;
    }
    num / den
}

/// Profile of the log-likelihood in one variance component `v`, with the
/// other variance `c` and squared residual `e²` of every involved record
/// held fixed. Constant terms are dropped.
struct VarianceProfile {
    terms: Vec<(f64, f64)>,
}

impl VarianceProfile {
    fn value(&self, v: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(c, e2)| {
                let s = v + c;
                -0.5 * (s.ln() + e2 / s)
            })
            .sum()
    }

    fn derivatives(&self, v: f64) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |(g, h), &(c, e2)| {
            let s = v + c;
            (g - 0.5 / s + 0.5 * e2 / (s * s), h + 0.5 / (s * s) - e2 / (s * s * s))
        })
    }

    /// Safeguarded Newton ascent on `[floor, ∞)` starting from `v0`. Every
    /// accepted step does not decrease the profile.
    fn maximize(&self, v0: f64, floor: f64) -> f64 {
        const MAX_NEWTON: usize = 100;
        const MAX_HALVINGS: usize = 60;
        let mut v = v0.max(floor);
        let mut fv = self.value(v);
        for _ in 0..MAX_NEWTON {
            let (g, h) = self.derivatives(v);
            // Fall back to doubling or a jump to the floor where the profile
            // is locally convex.
            let mut step = if h < 0.0 {
                -g / h
            } else if g > 0.0 {
                v
            } else {
                floor - v
            };
            if !step.is_finite() || step == 0.0 {
                break;
            }
            let mut next = None;
            for _ in 0..MAX_HALVINGS {
                let cand = (v + step).max(floor);
                let fc = self.value(cand);
                if fc >= fv {
                    next = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, fc)) = next else { break };
            let moved = (cand - v).abs();
            v = cand;
            fv = fc;
            if moved <= 1e-14 * v.max(floor) {
                break;
            }
        }
        v
    }
}

fn update_variances(
    design: &Design,
    p: &mut Params,
    floor: f64,
    subject_block: bool,
) {
    let lists = if subject_block {
        &design.by_subject
    } else {
        &design.by_group
    };
    for (idx, recs) in lists.iter().enumerate() {
        let terms = recs
            .iter()
            .map(|&n| {
                let other = if subject_block {
                    p.dispersion[design.group[n]]
                } else {
                    p.upsilon[design.subject[n]]
                };
                (other * other, design.residual(p, n).powi(2))
            })
            .collect();
        let profile = VarianceProfile { terms };
        let current = if subject_block {
            p.upsilon[idx]
        } else {
            p.dispersion[idx]
        };
        let v = profile.maximize(current * current, floor).sqrt();
        if subject_block {
            p.upsilon[idx] = v;
        } else {
            p.dispersion[idx] = v;
        }
    }
}

const MAX_RELAXATION: f64 = 64.0;
/// Relative gain an overrelaxed step needs before it is taken. Along a flat
/// direction the raw comparison is decided by rounding.
const JUMP_GAIN: f64 = 1e-13;

/// `to + factor · (to − from)`, with Δ re-centered and every standard
/// deviation clamped to `sd_floor`.
fn extrapolate(from: &Params, to: &Params, factor: f64, sd_floor: f64) -> Params {
    let step = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| y + factor * (y - x)).collect()
    };
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.max(sd_floor)).collect();
    let mut p = Params {
        psi: step(&from.psi, &to.psi),
        delta: step(&from.delta, &to.delta),
        upsilon: clamp(step(&from.upsilon, &to.upsilon)),
        dispersion: clamp(step(&from.dispersion, &to.dispersion)),
    };
    p.recenter_delta();
    p.balance_variances(sd_floor * sd_floor);
    p
}

/// Fits the model by block coordinate ascent.
///
/// One sweep updates every `ψ_j` (ascending), every `Δ_i` (ascending),
/// re-centers `Δ` to sum zero by shifting `ψ`, then updates every `υ_i` and
/// every dispersion and rebalances the two variance blocks. Each sweep is followed by an overrelaxed step
/// `p + η (p − p_prev)` that is kept only when it raises the likelihood; `η`
/// doubles after every accepted step (up to 64) and resets to 1 otherwise.
/// The fit stops once no parameter moves by `tol` or more, or after
/// `max_iters` sweeps.
pub fn fit(ds: &Dataset, spec: &ModelSpec) -> Result<ModelFit, MleError> {
    spec.validate()?;
    let mut design = Design::new(ds, spec.kind);
    if design.score.is_empty() {
        return Err(MleError::InsufficientData("dataset has no records".into()));
    }
    // Iterate on centered scores so a shifted dataset follows the same path.
    let offset = design.score.iter().sum::<f64>() / design.score.len() as f64;
    design.score.iter_mut().for_each(|u| *u -= offset);
    for (name, lists) in [
        ("subject", &design.by_subject),
        ("pvs", &design.by_pvs),
        ("dispersion group", &design.by_group),
    ] {
        if let Some(idx) = lists.iter().position(Vec::is_empty) {
            return Err(MleError::InsufficientData(format!(
                "{name} {idx} has no ratings"
            )));
        }
    }

    let mut p = initial_params(ds, &design, spec);
    let mut trace = vec![design.loglik(&p)?];
    let mut converged = false;
    let mut iterations = 0;
    let mut relax = 1.0;

    while iterations < spec.max_iters {
        iterations += 1;
        let before = p.clone();

        for j in 0..p.psi.len() {
            p.psi[j] = weighted_mean_update(&design, &p, &design.by_pvs[j], |n| {
                p.delta[design.subject[n]]
            });
        }
        for i in 0..p.delta.len() {
            p.delta[i] = weighted_mean_update(&design, &p, &design.by_subject[i], |n| {
                p.psi[design.pvs[n]]
            });
        }
        p.recenter_delta();
        update_variances(&design, &mut p, spec.variance_floor, true);
        update_variances(&design, &mut p, spec.variance_floor, false);
        p.balance_variances(spec.variance_floor);

        let mut ll = design.loglik(&p)?;

        // Overrelaxed step along the sweep direction, kept only if it
        // improves the likelihood.
        let jump = extrapolate(&before, &p, relax, spec.variance_floor.sqrt());
        let jump_ll = design.loglik(&jump)?;
        if jump_ll > ll + JUMP_GAIN * ll.abs().max(1.0) {
            p = jump;
            ll = jump_ll;
            relax = (2.0 * relax).min(MAX_RELAXATION);
        } else {
            relax = 1.0;
        }

        let prev = *trace.last().expect("nonempty");
        if ll < prev - NO_PROGRESS_TOLERANCE {
            return Err(MleError::NoProgress {
                iteration: iterations,
                decrease: prev - ll,
            });
        }
        trace.push(ll);

        if p.max_abs_diff(&before) < spec.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "{} fit stopped after {iterations} sweeps without converging",
            spec.kind
        );
    }

    p.psi.iter_mut().for_each(|x| *x += offset);
    Ok(ModelFit {
        kind: spec.kind,
        params: p,
        loglik_trace: trace,
        converged,
        iterations,
    })
}

/// Returned by [`adjusted_mos`] for a fit that hit its iteration limit. The
/// estimates are still carried along.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("fit did not converge after {iterations} iterations")]
pub struct NotConverged {
    pub psi: Vec<f64>,
    pub iterations: usize,
}

/// The adjusted MOS `ψ̂_j`. The classic MOS is the other common estimate of
/// true quality; see [`crate::estimators::mos`].
pub fn adjusted_mos(fit: &ModelFit) -> Result<Vec<f64>, NotConverged> {
    if fit.converged {
        Ok(fit.params.psi.clone())
    } else {
        Err(NotConverged {
            psi: fit.params.psi.clone(),
            iterations: fit.iterations,
        })
    }
}

/// Approximate standard errors from the inverse observed information.
///
/// The bias block is reparameterized onto the sum-zero subspace before
/// inversion, so `Δ̂` errors respect the identifiability constraint.
/// Dispersions fitted at the variance floor get a standard error of 0;
/// otherwise the variance block is held to the balanced split the fit uses.
pub fn standard_errors(ds: &Dataset, spec: &ModelSpec, fit: &ModelFit) -> Result<Params, MleError> {
    let p = &fit.params;
    p.check_shape(ds, spec.kind)?;
    let design = Design::new(ds, spec.kind);
    let (nj, ni, ng) = (p.psi.len(), p.delta.len(), p.dispersion.len());
    let (off_delta, off_ups, off_disp) = (nj, nj + ni, nj + 2 * ni);
    let dim = nj + 2 * ni + ng;

    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for n in 0..design.score.len() {
        let (i, j, k) = (design.subject[n], design.pvs[n], design.group[n]);
        let (a, b, c, g) = (j, off_delta + i, off_ups + i, off_disp + k);
        let s = design.variance(p, n);
        if !(s > 0.0) {
            return Err(MleError::NonpositiveVariance {
                record: n,
                variance: s,
            });
        }
        let e = design.residual(p, n);
        let (ups, disp) = (p.upsilon[i], p.dispersion[k]);
        let l_s = -0.5 / s + 0.5 * e * e / (s * s);
        let l_ss = 0.5 / (s * s) - e * e / (s * s * s);

        let mut add = |r: usize, q: usize, v: f64| {
            hess[(r, q)] += v;
            if r != q {
                hess[(q, r)] += v;
            }
        };
        add(a, a, -1.0 / s);
        add(b, b, -1.0 / s);
        add(a, b, -1.0 / s);
        for mean_idx in [a, b] {
            add(mean_idx, c, -2.0 * ups * e / (s * s));
            add(mean_idx, g, -2.0 * disp * e / (s * s));
        }
        add(c, c, 2.0 * l_s + 4.0 * ups * ups * l_ss);
        add(g, g, 2.0 * l_s + 4.0 * disp * disp * l_ss);
        add(c, g, 4.0 * ups * disp * l_ss);
    }

    // Standard deviations sitting on the floor are held fixed: the maximum is
    // on the boundary there and the local curvature says nothing useful.
    let sd_floor = spec.variance_floor.sqrt();
    let pinned = |row: usize| {
        let v = match row {
            r if r >= off_disp => p.dispersion[r - off_disp],
            r if r >= off_ups => p.upsilon[r - off_ups],
            _ => return false,
        };
        v <= sd_floor * (1.0 + 1e-9)
    };

    // Without a pinned sd the variance split is flat along υ² + c, d² − c;
    // the fit's balancing constraint then fixes the last dispersion.
    let ridge = ni > 0 && ng > 0 && !(off_ups..dim).any(pinned);
    let slope = |row: usize| {
        if row >= off_disp {
            -2.0 * p.dispersion[row - off_disp] / ng as f64
        } else {
            2.0 * p.upsilon[row - off_ups] / ni as f64
        }
    };

    // Δ = Z δ with Z mapping I−1 free coordinates onto Σ Δ = 0, and likewise
    // for the variance block when it is constrained.
    let free: Vec<usize> = (0..dim)
        .filter(|&r| !pinned(r) && (ni == 0 || r != off_ups - 1) && !(ridge && r == dim - 1))
        .collect();
    let mut basis = DMatrix::<f64>::zeros(dim, free.len());
    for (col, &row) in free.iter().enumerate() {
        basis[(row, col)] = 1.0;
        if (off_delta..off_ups - 1).contains(&row) {
            basis[(off_ups - 1, col)] = -1.0;
        }
        if ridge && row >= off_ups {
            basis[(dim - 1, col)] = -slope(row) / slope(dim - 1);
        }
    }

    let info = -(basis.transpose() * &hess * &basis);
    let chol = Cholesky::new(info).ok_or(MleError::SingularInformation)?;
    let cov = &basis * chol.inverse() * basis.transpose();
    let se: Vec<f64> = (0..dim).map(|d| cov[(d, d)].max(0.0).sqrt()).collect();
    if se.iter().any(|v| !v.is_finite()) {
        return Err(MleError::SingularInformation);
    }
    Ok(Params {
        psi: se[..off_delta].to_vec(),
        delta: se[off_delta..off_ups].to_vec(),
        upsilon: se[off_ups..off_disp].to_vec(),
        dispersion: se[off_disp..].to_vec(),
    })
}
