//! Executable checks of the inequalities behind the convergence statements.
//!
//! Deterministic checks evaluate both sides pointwise, along recorded
//! trajectories or over parameter grids. Monte-Carlo checks compare the
//! log of an ensemble MGF estimate against the log of the bound, one-sided
//! at three standard errors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{run, RunRecord, RunSpec, Schedule};
use crate::error::{invalid, Error, Result};
use crate::exec::Executor;
use crate::linalg::{dist_sq, dot, norm_sq};
use crate::noise::{self, NoiseKind, NoiseModel};
use crate::objectives::Objective;
use crate::rng;
use crate::topology::{build_graph, check_mixing_properties, metropolis_weights, GraphKind, MixingMatrix};

/// Value-level identities.
pub const VALUE_TOL: f64 = 1e-9;
/// Inequalities that accumulate length-`T` sums.
pub const SUM_TOL: f64 = 1e-8;
/// Monte-Carlo cases whose relative standard error exceeds this are skipped.
pub const MAX_RELATIVE_SE: f64 = 0.1;
/// One-sided acceptance width.
pub const MC_SE_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub cases_checked: u64,
    pub violations: u64,
    /// Smallest `bound - value` seen; `+∞` when nothing was checked.
    pub worst_margin: f64,
    pub tolerance: f64,
    pub first_violation: Option<String>,
    /// Cases outside the regime of the statement (not counted as checked).
    pub skipped: u64,
    /// Per-case summaries for Monte-Carlo checks.
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases_checked: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            tolerance,
            first_violation: None,
            skipped: 0,
            notes: Vec::new(),
        }
    }

    /// Records one case with margin `bound - value`.
    pub fn record(&mut self, margin: f64, describe: impl FnOnce() -> String) {
        self.cases_checked += 1;
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        self.worst_margin = self.worst_margin.min(margin);
        if margin < -self.tolerance {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(describe());
            }
        }
    }

    pub fn skip(&mut self) {
        self.skipped += 1;
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Folds another report of the same check into this one.
    pub fn absorb(&mut self, other: CheckReport) {
        self.cases_checked += other.cases_checked;
        self.violations += other.violations;
        self.skipped += other.skipped;
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        if self.first_violation.is_none() {
            self.first_violation = other.first_violation;
        }
        self.notes.extend(other.notes);
    }
}

fn require_trace(record: &RunRecord) -> Result<&crate::engine::Trace> {
    record
        .trace
        .as_ref()
        .ok_or_else(|| Error::Precondition("check needs a run recorded with its noise trace".into()))
}

/// Descent inequality along a recorded trajectory: for every `t`,
/// `f(x̄^{t+1}) <= f(x̄^t) - α/2 ||∇f(x̄^t)||^2 - α <∇f(x̄^t), z̄^t>
///   + α^2 L ||z̄^t||^2 + (α L^2 / 2n) Σ ||x_i^t - x̄^t||^2`.
pub fn check_lemma1(record: &RunRecord, obj: &Objective, tol: f64) -> Result<CheckReport> {
    let trace = require_trace(record)?;
    let l = obj.constants().smoothness;
    if let Some(a) = trace.step_sizes.iter().find(|&&a| a > 1.0 / (2.0 * l)) {
        return Err(Error::Precondition(format!("step size {a} exceeds 1/(2L) = {}", 1.0 / (2.0 * l))));
    }
    let mut report = CheckReport::new("lemma1_descent", tol);
    let mut g = vec![0.0; record.d];
    for (k, &alpha) in trace.step_sizes.iter().enumerate() {
        let xbar = &trace.means[k];
        obj.grad_global_into(xbar, &mut g);
        let zbar = &trace.noise_means[k];
        let rhs = record.global_value[k] - 0.5 * alpha * norm_sq(&g) - alpha * dot(&g, zbar)
            + alpha * alpha * l * norm_sq(zbar)
            + 0.5 * alpha * l * l * record.consensus_gap[k];
        let lhs = record.global_value[k + 1];
        report.record(rhs - lhs, || format!("t = {}: f(x̄^(t+1)) = {lhs:e} > {rhs:e}", k + 1));
    }
    Ok(report)
}

/// Deterministic consensus bound along a recorded trajectory.
pub fn check_lemma3(record: &RunRecord, obj: &Objective, w: &MixingMatrix, tol: f64) -> Result<CheckReport> {
    let trace = require_trace(record)?;
    let het = obj.constants().require_heterogeneity()?;
    let lam = w.lambda();
    if !(lam < 1.0) {
        return Err(invalid("lambda", "must be below 1"));
    }
    let n = record.n as f64;
    let gap = 1.0 - lam;
    let c = 4.0 * lam * lam / gap;
    let (mut s_noise, mut s_unit, mut s_grad) = (0.0, 0.0, 0.0);
    let mut report = CheckReport::new("lemma3_consensus", tol);
    for (k, &alpha) in trace.step_sizes.iter().enumerate() {
        let a2 = alpha * alpha;
        s_noise = lam * s_noise + a2 * trace.noise_norm_sq[k];
        s_unit = lam * s_unit + a2;
        s_grad = lam * s_grad + a2 * record.grad_metric_increment[k];
        let t = (k + 1) as i32;
        let rhs = 2.0 * libm::pow(lam, 2.0 * t as f64) * record.delta_x
            + c / n * s_noise
            + c * het.a * het.a * s_unit
            + c * het.b * het.b / n * s_grad;
        let lhs = record.consensus_gap[k + 1];
        report.record(rhs - lhs, || format!("t = {t}: consensus gap {lhs:e} > {rhs:e}"));
    }
    Ok(report)
}

/// `Σ_{k<=t} α_k λ^{t-k} <= 3 α_t / (1-λ)` for `α_t = a / (t+t0)^c`.
pub fn check_lemma6(lambda: f64, a: f64, t0: f64, c: f64, t_max: u64) -> Result<CheckReport> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("must lie in [0, 1), got {lambda}")));
    }
    if !(c >= 0.5) || !(a > 0.0) || !(t0 > 0.0) {
        return Err(invalid("c", "need c >= 1/2 and a, t0 > 0"));
    }
    let floor = (2.0 * c - 1.0 + lambda) / (1.0 - lambda);
    if t0 < floor {
        return Err(Error::Precondition(format!("t0 = {t0} is below (2c-1+λ)/(1-λ) = {floor}")));
    }
    let mut report = CheckReport::new("lemma6_weighted_sum", 1e-12);
    let mut sum = 0.0;
    for t in 1..=t_max {
        let alpha = a / libm::pow(t as f64 + t0, c);
        sum = lambda * sum + alpha;
        let rhs = 3.0 * alpha / (1.0 - lambda);
        // relative margin keeps the tolerance meaningful as α_t shrinks
        report.record((rhs - sum) / rhs, || format!("λ = {lambda}, a = {a}, t0 = {t0}, c = {c}, t = {t}: {sum:e} > {rhs:e}"));
    }
    Ok(report)
}

/// Smallest admissible `t0` for the weighted-sum bound.
pub fn lemma6_min_t0(lambda: f64, c: f64) -> f64 {
    (2.0 * c - 1.0 + lambda) / (1.0 - lambda)
}

/// The documented grid: `λ ∈ {0.1..0.9}`, `c ∈ {1/2, 1}`, `a ∈ {1/2, 6}`,
/// minimal valid `t0`.
pub fn lemma6_grid(t_max: u64) -> Result<CheckReport> {
    let mut total = CheckReport::new("lemma6_weighted_sum", 1e-12);
    for li in 1..=9 {
        let lambda = li as f64 / 10.0;
        for c in [0.5, 1.0] {
            for a in [0.5, 6.0] {
                total.absorb(check_lemma6(lambda, a, lemma6_min_t0(lambda, c), c, t_max)?);
            }
        }
    }
    Ok(total)
}

/// `Π_{k=a}^{b} (1 - c/(k+t0)) <= ((a+t0)/(b+1+t0))^c` for every
/// `b ∈ [a_lo, b_hi]`, compared in log space. Spans that contain a
/// non-positive factor are skipped.
pub fn check_prop_ran(c: f64, t0: f64, a_lo: u64, b_hi: u64) -> Result<CheckReport> {
    if !(c > 0.0) || !(t0 > 0.0) || a_lo > b_hi {
        return Err(invalid("c", "need c, t0 > 0 and a <= b"));
    }
    let mut report = CheckReport::new("prop_product_bound", 1e-12);
    let mut log_prod = 0.0;
    let log_start = libm::log(a_lo as f64 + t0);
    for b in a_lo..=b_hi {
        let factor = 1.0 - c / (b as f64 + t0);
        if !(factor > 0.0) {
            report.skipped += b_hi - b + 1;
            break;
        }
        log_prod += libm::log1p(-c / (b as f64 + t0));
        let log_bound = c * (log_start - libm::log(b as f64 + 1.0 + t0));
        report.record(log_bound - log_prod, || format!("c = {c}, t0 = {t0}, a = {a_lo}, b = {b}: log product {log_prod:e} > {log_bound:e}"));
    }
    Ok(report)
}

/// The documented grid: `c ∈ {1/2, 1, 2, 6}`, `t0 ∈ {6, 100}`, several
/// starting indices, spans up to `b_hi`.
pub fn prop_ran_grid(b_hi: u64) -> Result<CheckReport> {
    let mut total = CheckReport::new("prop_product_bound", 1e-12);
    for c in [0.5, 1.0, 2.0, 6.0] {
        for t0 in [6.0, 100.0] {
            for a_lo in [0u64, 1, 2, 5, 10, 100, 1000].into_iter().filter(|&a| a <= b_hi) {
                total.absorb(check_prop_ran(c, t0, a_lo, b_hi)?);
            }
        }
    }
    Ok(total)
}

/// Log of the bound on `E exp(X^{t+1})` for the almost-decreasing process.
pub fn lemma5_log_bound(a: f64, t0: f64, coeffs: &[f64], x1: f64, t: u64) -> f64 {
    let s = t as f64 + 1.0 + t0;
    let two_a = libm::pow(2.0, a);
    let s_a = libm::pow(s, a);
    let mut out = libm::pow(t0 + 1.0, a) * x1 / s_a;
    for (idx, &cj) in coeffs.iter().enumerate() {
        let j = idx + 1;
        out += match j {
            1 => two_a * cj / a,
            2 => two_a * cj / ((a - 1.0) * s),
            3 => two_a * cj * libm::log(s) / s_a,
            _ => two_a * libm::pow(t0, 3.0 - j as f64) * cj / ((j as f64 - 3.0) * s_a),
        };
    }
    out
}

/// Runs `X^{t+1} = (1 - a/(t+t0)) X^t + Σ_i C_i/(t+t0)^i`, which meets the
/// premise with equality, and compares `X^{t+1}` with the log of the bound.
pub fn check_lemma5_synthetic(a: f64, t0: f64, coeffs: &[f64], x1: f64, t_max: u64) -> Result<CheckReport> {
    if !(a > 1.0 && a <= 2.0) {
        return Err(invalid("a", format!("must lie in (1, 2], got {a}")));
    }
    if !(t0 >= a) || !(x1 > 0.0) || coeffs.iter().any(|c| !(*c >= 0.0)) {
        return Err(invalid("t0", "need t0 >= a, X1 > 0 and nonnegative coefficients"));
    }
    let mut report = CheckReport::new("lemma5_almost_decreasing", 1e-12);
    let mut x = x1;
    for t in 1..=t_max {
        let s = t as f64 + t0;
        let forcing: f64 = coeffs.iter().enumerate().map(|(i, c)| c / libm::pow(s, (i + 1) as f64)).sum();
        x = (1.0 - a / s) * x + forcing;
        let bound = lemma5_log_bound(a, t0, coeffs, x1, t);
        report.record((bound - x) / bound.abs().max(1.0), || format!("a = {a}, t0 = {t0}, t = {t}: X = {x:e} > {bound:e}"));
    }
    Ok(report)
}

/// Coefficients shaped like the strongly convex analysis: `C_1..C_3` and
/// `C_8` positive, the rest zero.
pub const THEOREM2_PATTERN: [f64; 8] = [0.5, 2.0, 5.0, 0.0, 0.0, 0.0, 0.0, 40.0];

/// Strong-convexity consequences at random points:
/// `||∇f(x)||^2 >= 2μ (f(x) - f*)` and `f(x) - f* >= μ/2 ||x - x*||^2`.
pub fn check_strcvx_props(obj: &Objective, trials: usize, seed: u64) -> Result<CheckReport> {
    let mu = obj.constants().require_mu()?;
    let xs = obj.constants().require_minimizer()?.to_vec();
    let mut report = CheckReport::new("strong_convexity_props", VALUE_TOL);
    let mut r = rng::seeded(seed);
    let d = obj.dim();
    let mut g = vec![0.0; d];
    for k in 0..trials {
        let scale = if k == 0 { 0.0 } else { libm::pow(10.0, (k % 5) as f64 - 2.0) };
        let x: Vec<f64> = xs.iter().map(|&v| v + scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect();
        let gap = obj.gap(&x)?;
        obj.grad_global_into(&x, &mut g);
        let gn = norm_sq(&g);
        let slack = 1.0 + gn.abs() + gap.abs();
        report.record((gn - 2.0 * mu * gap) / slack, || format!("gradient domination fails at trial {k}"));
        report.record((gap - 0.5 * mu * dist_sq(&x, &xs)) / slack, || format!("quadratic growth fails at trial {k}"));
    }
    Ok(report)
}

/// Smoothness consequences at random points: the quadratic upper bound for
/// every `f_i` and, when `f*` is known, `||∇f(x)||^2 <= 2L (f(x) - f*)`.
pub fn check_smooth_props(obj: &Objective, trials: usize, seed: u64) -> Result<CheckReport> {
    let l = obj.constants().smoothness;
    let d = obj.dim();
    let mut report = CheckReport::new("smoothness_props", VALUE_TOL);
    let mut r = rng::seeded(seed);
    let mut g = vec![0.0; d];
    for k in 0..trials {
        let x: Vec<f64> = (0..d).map(|_| 2.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect();
        let y: Vec<f64> = (0..d).map(|_| 2.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect();
        for i in 0..obj.n() {
            let fx = obj.value_local(i, &x)?;
            let fy = obj.value_local(i, &y)?;
            obj.grad_local_into(i, &y, &mut g);
            let lin: f64 = g.iter().zip(x.iter().zip(&y)).map(|(g, (a, b))| g * (a - b)).sum();
            let bound = fy + lin + 0.5 * l * dist_sq(&x, &y);
            report.record((bound - fx) / (1.0 + bound.abs()), || format!("upper quadratic bound fails for user {i} at trial {k}"));
        }
        if let Some(fs) = obj.constants().optimum {
            obj.grad_global_into(&x, &mut g);
            let gap = obj.gap(&x).unwrap_or(obj.value_global(&x)? - fs);
            let gn = norm_sq(&g);
            report.record((2.0 * l * gap - gn) / (1.0 + gn), || format!("gradient bound fails at trial {k}"));
        }
    }
    Ok(report)
}

/// Mixing-matrix identities and `||W - J|| = λ` for each graph and size.
pub fn check_mixing_suite(kinds: &[GraphKind], sizes: &[usize], tol: f64) -> Result<CheckReport> {
    let mut report = CheckReport::new("mixing_properties", tol);
    for kind in kinds {
        for &n in sizes {
            let w = metropolis_weights(&build_graph(kind, n)?);
            let m = check_mixing_properties(w.weights(), w.lambda());
            let worst = m.max_residual();
            report.record(-worst, || format!("{kind:?} n = {n}: residual {worst:e}"));
            if !(w.lambda() < 1.0) {
                report.record(f64::NEG_INFINITY, || format!("{kind:?} n = {n}: λ = {}", w.lambda()));
            }
        }
    }
    Ok(report)
}

fn mc_case(report: &mut CheckReport, label: String, log_est: f64, rel_se: f64, log_bound: f64) {
    if !(rel_se <= MAX_RELATIVE_SE) {
        report.skip();
        report.notes.push(format!("{label}: skipped, relative SE {rel_se:.3}"));
        return;
    }
    // est <= bound + 3 SE, in logs
    let slack = if rel_se > 0.0 { log_est + libm::log(MC_SE_WIDTH * rel_se) } else { f64::NEG_INFINITY };
    let rhs = log_add_exp(log_bound, slack);
    report.notes.push(format!("{label}: log estimate {log_est:.6e}, log bound {log_bound:.6e}, relative SE {rel_se:.3e}"));
    report.record(rhs - log_est, || format!("{label}: log estimate {log_est:e} exceeds {rhs:e}"));
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

/// `log E[exp(e)]` from samples of `e`, with the relative standard error of
/// the underlying mean.
pub fn log_mean_exp(exponents: &[f64]) -> (f64, f64) {
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (m, 0.0);
    }
    let r = exponents.len() as f64;
    let scaled: Vec<f64> = exponents.iter().map(|e| libm::exp(e - m)).collect();
    let mean = scaled.iter().sum::<f64>() / r;
    let var = if exponents.len() > 1 { scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0) } else { 0.0 };
    (m + libm::log(mean), libm::sqrt(var / r) / mean)
}

/// Norm-MGF calibration for every user: the estimate of
/// `E exp(||z_i||^2/σ_i^2)` lies within 3 SE of `e` (of 1 for zero noise).
pub fn check_noise_calibration<R: Rng>(model: &NoiseModel, samples: usize, rng: &mut R) -> Result<CheckReport> {
    let mut report = CheckReport::new("noise_norm_calibration", 1e-12);
    let tag = format!("{:?} n = {} d = {}", model.kind(), model.n(), model.dim());
    let target = if model.kind() == NoiseKind::Zero { 1.0 } else { core::f64::consts::E };
    for i in 0..model.n() {
        let est = noise::estimate_mgf_norm(model, i, samples, rng)?;
        let width = MC_SE_WIDTH * est.standard_error;
        report.record(width - (est.point_estimate - target).abs(), || format!("{tag}: user {i} norm MGF {:e} vs {target:e}", est.point_estimate));
        if i == 0 {
            report.notes.push(format!("{tag}: user 0 norm MGF {:.6} (SE {:.2e})", est.point_estimate, est.standard_error));
        }
    }
    Ok(report)
}

/// One-sided checks of the inner-product MGFs (per user and for the
/// average noise) and of the average-norm MGF.
pub fn check_lemma2<R: Rng>(model: &NoiseModel, v: &[f64], samples: usize, rng: &mut R) -> Result<CheckReport> {
    let mut report = CheckReport::new("lemma2_noise_mgf", 0.0);
    let tag = format!("{:?} n = {} d = {}", model.kind(), model.n(), model.dim());
    let vn = norm_sq(v);
    let inner = noise::estimate_mgf_inner(model, v, samples, rng)?;
    for (i, est) in inner.per_user.iter().enumerate() {
        let bound = noise::inner_bound_user(model, i, vn);
        report.record(bound + MC_SE_WIDTH * est.standard_error - est.point_estimate, || format!("{tag}: user {i} inner MGF {:e} > {bound:e}", est.point_estimate));
    }
    let bound = noise::inner_bound_average(model, vn);
    let avg = inner.average;
    report.record(bound + MC_SE_WIDTH * avg.standard_error - avg.point_estimate, || format!("{tag}: average inner MGF {:e} > {bound:e}", avg.point_estimate));
    let an = noise::estimate_mgf_avg_norm(model, samples, rng)?;
    let e = core::f64::consts::E;
    report.record(e + MC_SE_WIDTH * an.standard_error - an.point_estimate, || format!("{tag}: average norm MGF {:e} > e", an.point_estimate));
    report.notes.push(format!("{tag}: average inner {:.6} (bound {bound:.6}), average norm {:.6}", avg.point_estimate, an.point_estimate));
    Ok(report)
}

/// Parameters shared by the Monte-Carlo MGF checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MgfCheckSpec {
    pub nu: f64,
    pub k: f64,
    /// Iterations `t` at which `x^{t+1}` is examined.
    pub times: Vec<u64>,
    pub samples: u64,
}

impl MgfCheckSpec {
    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(invalid("nu", format!("must lie in (0, 1], got {}", self.nu)));
        }
        if !(self.k > 0.0) {
            return Err(invalid("K", "must be positive"));
        }
        if self.times.is_empty() || self.times.contains(&0) || self.samples < 2 {
            return Err(invalid("times", "need times >= 1 and at least two samples"));
        }
        Ok(())
    }

    fn horizon(&self) -> u64 {
        self.times.iter().max().copied().unwrap_or(1) + 1
    }
}

/// `max{6, 288σ̄²K/μ², 3456σ̄²λ²K/(μ²(1-λ)), 12λL sqrt(10)/(μ(1-λ))}`.
pub fn lemma4_t0_floor(mu: f64, l: f64, sigma_max: f64, lambda: f64, k: f64) -> f64 {
    let s2 = sigma_max * sigma_max;
    let gap = 1.0 - lambda;
    [
        6.0,
        288.0 * s2 * k / (mu * mu),
        3456.0 * s2 * lambda * lambda * k / (mu * mu * gap),
        12.0 * lambda * l * libm::sqrt(10.0) / (mu * gap),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// `min{1, μ²/(144σ²K)}`.
pub fn lemma4_nu_cap(mu: f64, sigma2: f64, k: f64) -> f64 {
    if sigma2 == 0.0 {
        1.0
    } else {
        1.0f64.min(mu * mu / (144.0 * sigma2 * k))
    }
}

/// `min{1, μ/(24aσ̄²K)}`.
pub fn lemma7_nu_cap(mu: f64, a: f64, sigma_max: f64, k: f64) -> f64 {
    if sigma_max == 0.0 {
        1.0
    } else {
        1.0f64.min(mu / (24.0 * a * sigma_max * sigma_max * k))
    }
}

fn harmonic(spec: &RunSpec) -> Result<(f64, f64)> {
    match spec.schedule {
        Schedule::Harmonic { a, t0 } => Ok((a, t0)),
        _ => Err(Error::Precondition("MGF checks need a harmonic schedule".into())),
    }
}

fn ensemble<E: Executor>(spec: &RunSpec, horizon: u64, samples: u64, master_seed: u64, exec: &E) -> Result<Vec<RunRecord>> {
    let spec = RunSpec { horizon, record_trace: false, ..*spec };
    exec.map_indexed(samples, |r| run(&spec, master_seed, r)).into_iter().collect()
}

fn common_init(spec: &RunSpec) -> Result<()> {
    if !spec.init.is_common(spec.objective.dim()) {
        return Err(Error::Precondition("MGF checks need equal initial models".into()));
    }
    Ok(())
}

/// Monte-Carlo check of the consensus-gap MGF bound under the harmonic
/// schedule with `a = 6/μ`.
pub fn mc_check_lemma4<E: Executor>(spec: &RunSpec, mgf: &MgfCheckSpec, master_seed: u64, exec: &E) -> Result<CheckReport> {
    mgf.validate()?;
    let (a, t0) = harmonic(spec)?;
    let c = spec.objective.constants();
    let mu = c.require_mu()?;
    let l = c.smoothness;
    let grad_star = c.require_grad_at_optimum_sq()?;
    let xs = c.require_minimizer()?;
    let lam = spec.mixing.lambda();
    let n = spec.objective.n() as f64;
    let sigma2 = spec.noise.sigma2_avg();
    let sigma_max = spec.noise.sigma_max();
    common_init(spec)?;
    if (a * mu - 6.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("need a = 6/μ, got a μ = {}", a * mu)));
    }
    let floor = lemma4_t0_floor(mu, l, sigma_max, lam, mgf.k);
    if t0 < floor {
        return Err(Error::Precondition(format!("t0 = {t0} is below the floor {floor}")));
    }
    let cap = lemma4_nu_cap(mu, sigma2, mgf.k);
    if mgf.nu > cap {
        return Err(Error::Precondition(format!("ν = {} exceeds {cap}", mgf.nu)));
    }
    let init = spec.init.state(spec.objective.n(), spec.objective.dim())?;
    let x1_dist: f64 = init.models().chunks_exact(xs.len()).map(|x| dist_sq(x, xs)).sum();

    let records = ensemble(spec, mgf.horizon(), mgf.samples, master_seed, exec)?;
    let mut report = CheckReport::new("lemma4_consensus_mgf", 0.0);
    let gap = 1.0 - lam;
    for &t in &mgf.times {
        let k_next = (t as f64 + t0 + 2.0) * mgf.k;
        let scale = mgf.nu * k_next;
        let exps: Vec<f64> = records.iter().map(|r| scale * n * r.consensus_gap[t as usize]).collect();
        let (log_est, rel_se) = log_mean_exp(&exps);
        let mut sum = 0.0;
        for k in 1..=t {
            let alpha = spec.schedule.alpha(k);
            let s_k = alpha * alpha * lam * lam * (n * sigma2 + 5.0 * grad_star / gap);
            let d_k = 5.0 * alpha * alpha * lam * lam * l * l / gap
                * (4.0 * a * n * sigma2 * alpha / 5.0 + 9.0 * grad_star / (mu * mu) + libm::pow(1.0 + t0, 6.0) * x1_dist / libm::pow(k as f64 + t0, 6.0));
            sum += libm::pow(lam, (t - k) as f64) * (s_k + d_k);
        }
        mc_case(&mut report, format!("t = {t}"), log_est, rel_se, scale * sum);
    }
    Ok(report)
}

/// Monte-Carlo check of the iterate-distance MGF bound.
pub fn mc_check_lemma7<E: Executor>(spec: &RunSpec, mgf: &MgfCheckSpec, master_seed: u64, exec: &E) -> Result<CheckReport> {
    mgf.validate()?;
    let (a, t0) = harmonic(spec)?;
    let c = spec.objective.constants();
    let mu = c.require_mu()?;
    let grad_star = c.require_grad_at_optimum_sq()?;
    let xs = c.require_minimizer()?;
    let n = spec.objective.n() as f64;
    let sigma2 = spec.noise.sigma2_avg();
    let sigma_max = spec.noise.sigma_max();
    if !(a * mu > 1.0) {
        return Err(Error::Precondition(format!("need a μ > 1, got {}", a * mu)));
    }
    // a/(t+t0) against 1/(σ̄ sqrt(2(t+t0+2)K)): the ratio is monotone in t,
    // so t = 1 is the binding case
    let alpha1 = spec.schedule.alpha(1);
    let cap1 = if sigma_max == 0.0 { f64::INFINITY } else { 1.0 / (sigma_max * libm::sqrt(2.0 * (1.0 + t0 + 2.0) * mgf.k)) };
    if alpha1 > cap1.min(1.0 / mu) {
        return Err(Error::Precondition(format!("α_1 = {alpha1} exceeds min{{{cap1}, 1/μ}}")));
    }
    let cap = lemma7_nu_cap(mu, a, sigma_max, mgf.k);
    if mgf.nu > cap {
        return Err(Error::Precondition(format!("ν = {} exceeds {cap}", mgf.nu)));
    }
    let init = spec.init.state(spec.objective.n(), spec.objective.dim())?;
    let x1_dist: f64 = init.models().chunks_exact(xs.len()).map(|x| dist_sq(x, xs)).sum();

    let records = ensemble(spec, mgf.horizon(), mgf.samples, master_seed, exec)?;
    let mut report = CheckReport::new("lemma7_iterate_mgf", 0.0);
    let am = a * mu;
    for &t in &mgf.times {
        let scale = mgf.nu * (t as f64 + t0 + 2.0) * mgf.k;
        let exps: Vec<f64> = records
            .iter()
            .map(|r| scale * r.distance_to_minimizer.as_ref().map(|d| d[t as usize]).unwrap_or(f64::NAN))
            .collect();
        let (log_est, rel_se) = log_mean_exp(&exps);
        let s = t as f64 + 1.0 + t0;
        let inner = 4.0 * a * n * sigma2 * spec.schedule.alpha(t + 1) / (am - 1.0)
            + 9.0 * grad_star / (mu * mu)
            + libm::pow(1.0 + t0, am) * x1_dist / libm::pow(s, am);
        mc_case(&mut report, format!("t = {t}"), log_est, rel_se, scale * inner);
    }
    Ok(report)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{theorem1_constant_stepsize, theorem2_schedule, Init, T0Mode};
    use crate::exec::Sequential;
    use crate::objectives::{make_nonconvex, make_quadratic};
    use crate::topology::GraphKind;

    fn w(kind: GraphKind, n: usize) -> MixingMatrix {
        metropolis_weights(&build_graph(&kind, n).unwrap())
    }

    fn traced<'a>(w: &'a MixingMatrix, obj: &'a Objective, noise: &'a NoiseModel, init: &'a Init, schedule: Schedule, horizon: u64) -> RunSpec<'a> {
        RunSpec { mixing: w, objective: obj, noise, schedule, horizon, init, record_trace: true }
    }

    #[test]
    fn report_bookkeeping() {
        let mut r = CheckReport::new("x", 0.1);
        assert!(r.passed() && r.worst_margin.is_infinite());
        r.record(0.5, String::new);
        r.record(-0.05, String::new);
        assert!(r.passed());
        r.record(-0.2, || "bad".into());
        r.record(f64::NAN, || "nan".into());
        assert_eq!((r.violations, r.cases_checked), (2, 4));
        assert_eq!(r.first_violation.as_deref(), Some("bad"));
        assert!(r.worst_margin < -r.tolerance);
    }

    #[test]
    fn lemma1_noiseless_and_noisy() {
        let wm = w(GraphKind::Ring, 6);
        let obj = make_nonconvex(6, 4, 0.5, 1).unwrap();
        let zero = NoiseModel::zero(6, 4).unwrap();
        let init = Init::Common(vec![1.0; 4]);
        let r = run(&traced(&wm, &obj, &zero, &init, Schedule::Constant { alpha: 0.25 }, 100), 1, 0).unwrap();
        let rep = check_lemma1(&r, &obj, VALUE_TOL).unwrap();
        assert!(rep.passed() && rep.cases_checked == 99 && rep.worst_margin >= 0.0, "{rep:?}");

        let noisy = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 6, 4, 1.0).unwrap();
        for seed in 0..20 {
            let alpha = theorem1_constant_stepsize(&obj, &wm, &noisy, 200).unwrap().alpha;
            let r = run(&traced(&wm, &obj, &noisy, &Init::PerUser((0..24).map(|k| (k as f64 * 0.37).sin()).collect()), Schedule::Constant { alpha }, 200), 5, seed).unwrap();
            assert!(check_lemma1(&r, &obj, VALUE_TOL).unwrap().passed());
        }
        // boundary step size 1/(2L)
        let r = run(&traced(&wm, &obj, &noisy, &init, Schedule::Constant { alpha: 0.25 }, 200), 6, 0).unwrap();
        assert!(check_lemma1(&r, &obj, VALUE_TOL).unwrap().passed());
        let too_big = run(&traced(&wm, &obj, &noisy, &init, Schedule::Constant { alpha: 0.3 }, 5), 6, 0).unwrap();
        assert!(matches!(check_lemma1(&too_big, &obj, VALUE_TOL), Err(Error::Precondition(_))));
        let untraced = run(&RunSpec { record_trace: false, ..traced(&wm, &obj, &noisy, &init, Schedule::Constant { alpha: 0.1 }, 5) }, 6, 0).unwrap();
        assert!(check_lemma1(&untraced, &obj, VALUE_TOL).is_err());
    }

    #[test]
    fn lemma1_quadratic_theory_schedule() {
        let wm = w(GraphKind::Ring, 4);
        let obj = make_quadratic(4, 3, 1.0, 4.0, 1.0, 2).unwrap();
        let noisy = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 4, 3, 0.5).unwrap();
        let sched = theorem2_schedule(&obj, &wm, &noisy, T0Mode::Theory).unwrap().schedule();
        let init = Init::Common(vec![2.0; 3]);
        for seed in 0..10 {
            let r = run(&traced(&wm, &obj, &noisy, &init, sched, 200), 3, seed).unwrap();
            assert!(check_lemma1(&r, &obj, VALUE_TOL).unwrap().passed());
        }
    }

    #[test]
    fn lemma3_cases() {
        // complete graph: both sides vanish after the first gossip round
        let wc = w(GraphKind::Complete, 5);
        let obj = make_nonconvex(5, 3, 0.8, 2).unwrap();
        let noisy = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 5, 3, 1.0).unwrap();
        let init = Init::PerUser((0..15).map(|k| k as f64 / 7.0).collect());
        let r = run(&traced(&wc, &obj, &noisy, &init, Schedule::Constant { alpha: 0.1 }, 50), 1, 0).unwrap();
        let rep = check_lemma3(&r, &obj, &wc, SUM_TOL).unwrap();
        assert!(rep.passed());
        assert!(r.consensus_gap[1..].iter().all(|&c| c < 1e-28));

        let wr = w(GraphKind::Ring, 8);
        let obj = make_nonconvex(8, 4, 0.5, 3).unwrap();
        let noisy = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 8, 4, 1.0).unwrap();
        let alpha = theorem1_constant_stepsize(&obj, &wr, &noisy, 500).unwrap().alpha;
        for seed in 0..10 {
            let r = run(&traced(&wr, &obj, &noisy, &Init::Common(vec![0.5; 4]), Schedule::Constant { alpha }, 500), 2, seed).unwrap();
            let rep = check_lemma3(&r, &obj, &wr, SUM_TOL).unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
        let q = make_quadratic(8, 4, 1.0, 3.0, 1.0, 1).unwrap();
        assert!(matches!(check_lemma3(&run(&traced(&wr, &q, &noisy, &Init::Common(vec![0.0; 4]), Schedule::Constant { alpha: 0.1 }, 5), 1, 0).unwrap(), &q, &wr, SUM_TOL), Err(Error::MissingConstant(_))));
    }

    #[test]
    fn lemma3_homogeneous_noiseless_is_zero() {
        let wr = w(GraphKind::Ring, 6);
        let obj = make_nonconvex(6, 3, 0.0, 1).unwrap();
        let zero = NoiseModel::zero(6, 3).unwrap();
        let init = Init::Common(vec![0.3; 3]);
        let r = run(&traced(&wr, &obj, &zero, &init, Schedule::Constant { alpha: 0.2 }, 40), 1, 0).unwrap();
        assert!(r.consensus_gap.iter().all(|&c| c < 1e-28));
        let rep = check_lemma3(&r, &obj, &wr, SUM_TOL).unwrap();
        assert!(rep.passed() && rep.worst_margin > -1e-27);
    }

    #[test]
    fn lemma6_cases() {
        let r = check_lemma6(0.0, 1.0, 1.0, 1.0, 50).unwrap();
        assert!(r.passed() && (r.worst_margin - 2.0 / 3.0).abs() < 1e-12);
        assert!(check_lemma6(0.5, 1.0, 0.1, 1.0, 10).is_err());
        assert!(check_lemma6(0.5, 1.0, 5.0, 0.4, 10).is_err());
        let g = lemma6_grid(2000).unwrap();
        assert!(g.passed() && g.cases_checked == 36 * 2000);
    }

    #[test]
    fn prop_ran_cases() {
        // single factor
        for (c, t0, a) in [(0.5, 6.0, 3u64), (2.0, 100.0, 0), (6.0, 6.0, 10)] {
            let r = check_prop_ran(c, t0, a, a).unwrap();
            let lhs = 1.0 - c / (a as f64 + t0);
            let rhs = libm::pow((a as f64 + t0) / (a as f64 + 1.0 + t0), c);
            assert!(r.passed() && (r.worst_margin - (libm::log(rhs) - libm::log(lhs))).abs() < 1e-12);
        }
        let tiny = check_prop_ran(1e-12, 6.0, 0, 1000).unwrap();
        assert!(tiny.passed() && tiny.worst_margin.abs() < 1e-9);
        let skipped = check_prop_ran(6.0, 1.0, 0, 10).unwrap();
        assert!(skipped.skipped > 0);
        assert!(prop_ran_grid(2000).unwrap().passed());
    }

    #[test]
    fn lemma5_cases() {
        // all C_i = 0 reduces to the product bound
        let r = check_lemma5_synthetic(1.5, 6.0, &[0.0; 3], 2.0, 500).unwrap();
        assert!(r.passed());
        let single = check_lemma5_synthetic(2.0, 6.0, &[1.0], 0.5, 2000).unwrap();
        assert!(single.passed());
        assert!(check_lemma5_synthetic(2.0, 6.0, &THEOREM2_PATTERN, 1.0, 10_000).unwrap().passed());
        assert!(check_lemma5_synthetic(1.0, 6.0, &[1.0], 1.0, 10).is_err());
        assert!(check_lemma5_synthetic(2.0, 1.0, &[1.0], 1.0, 10).is_err());
        // closed form with zero forcing: X^{t+1} = X1 Π (1 - a/(k+t0))
        let (a, t0, x1) = (2.0, 6.0, 3.0);
        let mut x = x1;
        for t in 1..=20u64 {
            x *= 1.0 - a / (t as f64 + t0);
            assert!(x <= lemma5_log_bound(a, t0, &[], x1, t) + 1e-15);
        }
    }

    #[test]
    fn curvature_props() {
        let q = make_quadratic(4, 3, 1.0, 10.0, 1.0, 3).unwrap();
        let r = check_strcvx_props(&q, 1000, 1).unwrap();
        assert!(r.passed() && r.cases_checked == 2000);
        assert!(check_smooth_props(&q, 300, 2).unwrap().passed());
        assert!(check_smooth_props(&make_nonconvex(3, 4, 0.5, 1).unwrap(), 300, 2).unwrap().passed());
        assert!(check_strcvx_props(&make_nonconvex(3, 4, 0.5, 1).unwrap(), 10, 1).is_err());
    }

    #[test]
    fn one_dimensional_equality_case() {
        use crate::objectives::{quadratic_from_parts, QuadraticSpec};
        let mu = 3.0;
        let obj = quadratic_from_parts(QuadraticSpec { hessians: vec![vec![mu]], centers: vec![vec![0.0]] }, mu, mu).unwrap();
        let g = obj.grad_global(&[1.0]).unwrap()[0];
        assert_eq!(g * g, 2.0 * mu * obj.gap(&[1.0]).unwrap());
    }

    #[test]
    fn mixing_suite() {
        let kinds = [GraphKind::Ring, GraphKind::Complete, GraphKind::Torus2d, GraphKind::Star, GraphKind::ErdosRenyi { p: 0.5, seed: 3 }];
        let r = check_mixing_suite(&kinds, &[4, 9, 16], 1e-10).unwrap();
        assert!(r.passed() && r.cases_checked == 15, "{r:?}");
    }

    #[test]
    fn lemma2_suite_small() {
        let mut r = rng::seeded(4);
        for kind in [NoiseKind::GaussianCalibrated, NoiseKind::SphereBounded, NoiseKind::Zero] {
            let m = NoiseModel::uniform(kind, 4, 3, 1.0).unwrap();
            let rep = check_lemma2(&m, &[0.3, 0.2, -0.4], 5000, &mut r).unwrap();
            assert!(rep.passed(), "{rep:?}");
            let m8 = NoiseModel::uniform(kind, 2, 8, 1.5).unwrap();
            let cal = check_noise_calibration(&m8, 20_000, &mut r).unwrap();
            assert!(cal.passed(), "{cal:?}");
        }
    }

    #[test]
    fn log_mean_exp_matches_direct_mean() {
        let e = [0.1, -0.3, 0.7, 0.0];
        let (l, rel) = log_mean_exp(&e);
        let direct = e.iter().map(|v| libm::exp(*v)).sum::<f64>() / 4.0;
        assert!((l - libm::log(direct)).abs() < 1e-14);
        assert!(rel > 0.0);
        assert_eq!(log_mean_exp(&[2.0, 2.0]), (2.0, 0.0));
    }

    fn mgf_setup() -> (MixingMatrix, Objective, NoiseModel) {
        (w(GraphKind::Ring, 4), make_quadratic(4, 2, 1.0, 2.0, 0.5, 7).unwrap(), NoiseModel::uniform(NoiseKind::GaussianCalibrated, 4, 2, 1.0).unwrap())
    }

    #[test]
    fn mgf_checks_small_ensemble() {
        let (wm, obj, noise) = mgf_setup();
        let k = 0.01;
        let t0 = lemma4_t0_floor(1.0, 2.0, 1.0, wm.lambda(), k).ceil();
        let init = Init::Common(vec![0.5, -0.5]);
        let spec = RunSpec { mixing: &wm, objective: &obj, noise: &noise, schedule: Schedule::Harmonic { a: 6.0, t0 }, horizon: 1, init: &init, record_trace: false };
        let nu4 = lemma4_nu_cap(1.0, 1.0, k);
        let m = MgfCheckSpec { nu: nu4, k, times: vec![2, 5, 10], samples: 500 };
        let r4 = mc_check_lemma4(&spec, &m, 1, &Sequential).unwrap();
        assert!(r4.passed() && r4.cases_checked + r4.skipped == 3, "{r4:?}");
        let m7 = MgfCheckSpec { nu: lemma7_nu_cap(1.0, 6.0, 1.0, k), ..m.clone() };
        let r7 = mc_check_lemma7(&spec, &m7, 1, &Sequential).unwrap();
        assert!(r7.passed(), "{r7:?}");
        // noncompliant schedule
        let bad = RunSpec { schedule: Schedule::Harmonic { a: 6.0, t0: 6.0 }, ..spec };
        assert!(matches!(mc_check_lemma4(&bad, &m, 1, &Sequential), Err(Error::Precondition(_))));
        let too_big_nu = MgfCheckSpec { nu: 1.0, ..m.clone() };
        assert!(matches!(mc_check_lemma4(&spec, &too_big_nu, 1, &Sequential), Err(Error::Precondition(_))));
    }

    #[test]
    fn mgf_trivial_cases() {
        // λ = 0 and equal init: the consensus gap is identically zero
        let wc = w(GraphKind::Complete, 4);
        let obj = make_quadratic(4, 2, 1.0, 2.0, 0.5, 7).unwrap();
        let noise = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 4, 2, 1.0).unwrap();
        let init = Init::Common(vec![0.0, 0.0]);
        let spec = RunSpec { mixing: &wc, objective: &obj, noise: &noise, schedule: Schedule::Harmonic { a: 6.0, t0: 60.0 }, horizon: 1, init: &init, record_trace: false };
        let m = MgfCheckSpec { nu: 0.1, k: 0.01, times: vec![2, 5], samples: 50 };
        let r = mc_check_lemma4(&spec, &m, 1, &Sequential).unwrap();
        assert!(r.passed() && r.cases_checked == 2);
        // zero noise, homogeneous, start at x*
        let homog = make_quadratic(4, 2, 1.0, 2.0, 0.0, 7).unwrap();
        let zero = NoiseModel::zero(4, 2).unwrap();
        let at_opt = Init::Common(homog.constants().minimizer.clone().unwrap());
        let wr = w(GraphKind::Ring, 4);
        let spec = RunSpec { mixing: &wr, objective: &homog, noise: &zero, init: &at_opt, ..spec };
        let r7 = mc_check_lemma7(&spec, &m, 1, &Sequential).unwrap();
        assert!(r7.passed());
        assert!(r7.notes.iter().all(|s| s.contains("log estimate 0.000000e0")), "{:?}", r7.notes);
        // zero noise off the optimum: every run is the same deterministic contraction
        let off = Init::Common(vec![3.0, -2.0]);
        let spec = RunSpec { objective: &obj, init: &off, ..spec };
        let r7 = mc_check_lemma7(&spec, &MgfCheckSpec { samples: 2, ..m }, 1, &Sequential).unwrap();
        assert!(r7.passed() && r7.cases_checked == 2 && r7.worst_margin > 0.0, "{r7:?}");
    }
}
