//! The adapt-then-combine DSGD iteration
//! `x_i^{t+1} = Σ_j w_ij (x_j^t - α_t (∇f_j(x_j^t) + z_j^t))`,
//! step-size schedules derived from the certified problem constants, and a
//! single-trajectory runner that records the metrics the rate statements use.
//!
//! Indexing: a run of horizon `T` visits the iterates `x^1, ..., x^T`, so it
//! performs `T - 1` updates. Per-iteration arrays have length `T` and entry
//! `t - 1` describes `x^t`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dist_sq, norm_sq, row_mean};
use crate::noise::{NoiseKind, NoiseModel};
use crate::objectives::Objective;
use crate::rng::{user_stream, StreamRng};
use crate::topology::MixingMatrix;

/// The `n x d` block of user models with its cached row mean.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    t: u64,
    n: usize,
    d: usize,
    models: Vec<f64>,
    mean: Vec<f64>,
    scratch: Vec<f64>,
    noise: Vec<f64>,
}

impl State {
    /// `models` is row-major `n x d`; the counter starts at `t = 1`.
    pub fn new(models: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("state", "need n, d > 0"));
        }
        if models.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: models.len() });
        }
        if models.iter().any(|v| !v.is_finite()) {
            return Err(invalid("state", "initial models must be finite"));
        }
        let mut mean = vec![0.0; d];
        row_mean(&models, d, &mut mean);
        Ok(Self {
            t: 1,
            n,
            d,
            models,
            mean,
            scratch: vec![0.0; n * d],
            noise: vec![0.0; n * d],
        })
    }

    /// Every user starts from `x`.
    pub fn common(n: usize, x: &[f64]) -> Result<Self> {
        let mut models = Vec::with_capacity(n * x.len());
        for _ in 0..n {
            models.extend_from_slice(x);
        }
        Self::new(models, n, x.len())
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn models(&self) -> &[f64] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &[f64] {
        &self.models[i * self.d..(i + 1) * self.d]
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Noise used by the most recent [`step`], row-major `n x d`.
    pub fn last_noise(&self) -> &[f64] {
        &self.noise
    }

    /// `(1/n) Σ ||x_i - x̄||^2`.
    pub fn consensus_gap(&self) -> f64 {
        self.models.chunks_exact(self.d).map(|x| dist_sq(x, &self.mean)).sum::<f64>() / self.n as f64
    }

    fn refresh_mean(&mut self) {
        row_mean(&self.models, self.d, &mut self.mean);
    }
}

fn check_compatible(state: &State, w: &MixingMatrix, obj: &Objective) -> Result<()> {
    if w.n() != state.n || obj.n() != state.n {
        return Err(Error::DimensionMismatch { expected: state.n, got: if w.n() != state.n { w.n() } else { obj.n() } });
    }
    if obj.dim() != state.d {
        return Err(Error::DimensionMismatch { expected: state.d, got: obj.dim() });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("step size must be finite and nonnegative, got {alpha}")));
    }
    Ok(())
}

fn check_finite(state: &State) -> Result<()> {
    if let Some(pos) = state.models.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence { t: state.t, user: pos / state.d });
    }
    Ok(())
}

/// One update with a caller-supplied noise block `z` (row-major `n x d`).
pub fn step_with_noise(state: &mut State, w: &MixingMatrix, obj: &Objective, z: &[f64], alpha: f64) -> Result<()> {
    check_compatible(state, w, obj)?;
    check_alpha(alpha)?;
    if z.len() != state.n * state.d {
        return Err(Error::DimensionMismatch { expected: state.n * state.d, got: z.len() });
    }
    advance(state, w, obj, z, alpha)
}

fn advance(state: &mut State, w: &MixingMatrix, obj: &Objective, z: &[f64], alpha: f64) -> Result<()> {
    let d = state.d;
    for i in 0..state.n {
        let x = &state.models[i * d..(i + 1) * d];
        let pre = &mut state.scratch[i * d..(i + 1) * d];
        obj.grad_local_into(i, x, pre);
        for ((p, &xv), &zv) in pre.iter_mut().zip(x).zip(&z[i * d..(i + 1) * d]) {
            *p = xv - alpha * (*p + zv);
        }
    }
    w.mix(&state.scratch, d, &mut state.models);
    state.t += 1;
    state.refresh_mean();
    check_finite(state)
}

/// One update with fresh noise; user `i` draws from `rngs[i]`.
pub fn step<R: Rng>(state: &mut State, w: &MixingMatrix, obj: &Objective, noise: &NoiseModel, alpha: f64, rngs: &mut [R]) -> Result<()> {
    check_compatible(state, w, obj)?;
    check_alpha(alpha)?;
    if noise.n() != state.n || noise.dim() != state.d || rngs.len() != state.n {
        return Err(invalid("noise", "noise model and generators must match the state shape"));
    }
    let d = state.d;
    let mut z = core::mem::take(&mut state.noise);
    for (i, rng) in rngs.iter_mut().enumerate() {
        noise.sample_into(i, rng, &mut z[i * d..(i + 1) * d]);
    }
    let out = advance(state, w, obj, &z, alpha);
    state.noise = z;
    out
}

/// The same update in stacked form `x <- (W ⊗ I_d)(x - α g)` with a dense
/// `nd x nd` operator.
pub fn step_stacked(state: &State, w: &MixingMatrix, obj: &Objective, z: &[f64], alpha: f64) -> Result<State> {
    check_compatible(state, w, obj)?;
    check_alpha(alpha)?;
    let (n, d) = (state.n, state.d);
    if z.len() != n * d {
        return Err(Error::DimensionMismatch { expected: n * d, got: z.len() });
    }
    let big_w = w.weights().kronecker(&DMatrix::<f64>::identity(d, d));
    let mut g = vec![0.0; n * d];
    for i in 0..n {
        obj.grad_local_into(i, state.model(i), &mut g[i * d..(i + 1) * d]);
    }
    let x = DVector::from_column_slice(&state.models);
    let g = DVector::from_column_slice(&g) + DVector::from_column_slice(z);
    let next = big_w * (x - g * alpha);
    let mut out = State::new(next.iter().cloned().collect(), n, d).map_err(|_| Error::Divergence { t: state.t + 1, user: 0 })?;
    out.t = state.t + 1;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant { alpha: f64 },
    /// `α_t = c' / sqrt(t + 1)`.
    InvSqrt { c_prime: f64 },
    /// `α_t = a / (t + t0)`.
    Harmonic { a: f64, t0: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            Schedule::Constant { alpha } if !ok(alpha) => Err(invalid("alpha", format!("must be positive, got {alpha}"))),
            Schedule::InvSqrt { c_prime } if !ok(c_prime) => Err(invalid("c_prime", format!("must be positive, got {c_prime}"))),
            Schedule::Harmonic { a, t0 } if !ok(a) || !(t0 >= 0.0 && t0.is_finite()) => {
                Err(invalid("a", format!("harmonic schedule needs a > 0 and t0 >= 0, got a = {a}, t0 = {t0}")))
            }
            _ => Ok(()),
        }
    }

    /// Step size used for the update leaving `x^t` (`t >= 1`).
    pub fn alpha(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            Schedule::Constant { alpha } => alpha,
            Schedule::InvSqrt { c_prime } => c_prime / libm::sqrt(t + 1.0),
            Schedule::Harmonic { a, t0 } => a / (t + t0),
        }
    }

    /// Largest step size over `t >= 1` (all schedules are non-increasing).
    pub fn max_alpha(&self) -> f64 {
        self.alpha(1)
    }
}

/// Scalar inputs of the fixed-horizon non-convex step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Inputs {
    pub n: usize,
    pub d: usize,
    pub smoothness: f64,
    pub b_het: f64,
    /// `(1/n) Σ σ_i^2`
    pub sigma2: f64,
    /// `max_i σ_i`
    pub sigma_max: f64,
    pub lambda: f64,
    pub horizon: u64,
}

/// Every candidate of the constant `C` and the resulting step size. Terms
/// whose error source vanishes (`λ = 0`, `B = 0`, `σ = 0`) are `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1StepSize {
    /// `1 / (2L)`
    pub smoothness_term: f64,
    /// `n / (9σ^2)`
    pub noise_term: f64,
    /// `(1-λ) / (λ L B sqrt(48))`
    pub heterogeneity_term: f64,
    /// `sqrt(n) / (6σ sqrt(10 d L))`
    pub dimension_term: f64,
    /// `n^{1/3} (1-λ)^{2/3} / (σ̄^{2/3} λ^2 L^{2/3} 9^{1/3})`
    pub network_term_squared: f64,
    /// The same with `λ^{2/3}` in place of `λ^2`; never larger for `λ < 1`.
    pub network_term_two_thirds: f64,
    /// Minimum over all candidates, including both network variants.
    pub c: f64,
    /// `sqrt(n) / (σ sqrt(d T))`
    pub horizon_term: f64,
    pub alpha: f64,
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub fn theorem1_terms(p: &Theorem1Inputs) -> Theorem1StepSize {
    let n = p.n as f64;
    let d = p.d as f64;
    let l = p.smoothness;
    let lam = p.lambda;
    let sigma = libm::sqrt(p.sigma2);
    let smoothness_term = 1.0 / (2.0 * l);
    let noise_term = ratio_or_inf(n, 9.0 * p.sigma2);
    let heterogeneity_term = ratio_or_inf(1.0 - lam, lam * l * p.b_het * libm::sqrt(48.0));
    let dimension_term = ratio_or_inf(libm::sqrt(n), 6.0 * sigma * libm::sqrt(10.0 * d * l));
    let network = |lam_pow: f64| {
        ratio_or_inf(
            libm::cbrt(n) * libm::pow(1.0 - lam, 2.0 / 3.0),
            libm::pow(p.sigma_max, 2.0 / 3.0) * lam_pow * libm::pow(l, 2.0 / 3.0) * libm::cbrt(9.0),
        )
    };
    let network_term_squared = network(lam * lam);
    let network_term_two_thirds = network(libm::pow(lam, 2.0 / 3.0));
    let c = [smoothness_term, noise_term, heterogeneity_term, dimension_term, network_term_squared, network_term_two_thirds]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let horizon_term = ratio_or_inf(libm::sqrt(n), sigma * libm::sqrt(d * p.horizon as f64));
    Theorem1StepSize {
        smoothness_term,
        noise_term,
        heterogeneity_term,
        dimension_term,
        network_term_squared,
        network_term_two_thirds,
        c,
        horizon_term,
        alpha: c.min(horizon_term),
    }
}

pub fn theorem1_inputs(obj: &Objective, w: &MixingMatrix, noise: &NoiseModel, horizon: u64) -> Result<Theorem1Inputs> {
    let het = obj.constants().require_heterogeneity()?;
    if horizon == 0 {
        return Err(invalid("T", "horizon must be positive"));
    }
    Ok(Theorem1Inputs {
        n: obj.n(),
        d: obj.dim(),
        smoothness: obj.constants().smoothness,
        b_het: het.b,
        sigma2: noise.sigma2_avg(),
        sigma_max: noise.sigma_max(),
        lambda: w.lambda(),
        horizon,
    })
}

/// Fixed step size for a known horizon `T`.
pub fn theorem1_constant_stepsize(obj: &Objective, w: &MixingMatrix, noise: &NoiseModel, horizon: u64) -> Result<Theorem1StepSize> {
    Ok(theorem1_terms(&theorem1_inputs(obj, w, noise, horizon)?))
}

/// Unknown-horizon variant `α_t = sqrt(2) C / sqrt(t + 1)`.
pub fn theorem1_unknown_horizon(obj: &Objective, w: &MixingMatrix, noise: &NoiseModel) -> Result<Schedule> {
    let terms = theorem1_constant_stepsize(obj, w, noise, 1)?;
    Ok(Schedule::InvSqrt { c_prime: core::f64::consts::SQRT_2 * terms.c })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum T0Mode {
    /// `t0` is the maximum of the six theoretical floors.
    Theory,
    /// User-chosen `t0 >= 6`.
    Practical(f64),
}

/// Scalar inputs of the strongly convex schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Inputs {
    pub d: usize,
    pub mu: f64,
    pub smoothness: f64,
    pub sigma2: f64,
    pub sigma_max: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Schedule {
    pub a: f64,
    pub t0: f64,
    /// `[6, 17280 d σ^2 κ/μ, 432 σ̄^2 κ^2/μ, 12 κ λ sqrt(10)/(1-λ),
    ///   5184 σ̄^2 λ^2 κ^2/(μ(1-λ)), (3+λ)/(1-λ)]`
    pub t0_floors: [f64; 6],
    pub t0_theory: f64,
    /// `min{1, μ/(432 σ^2 κ^2), μ/(72 κ)}`
    pub nu: f64,
}

impl Theorem2Schedule {
    pub fn schedule(&self) -> Schedule {
        Schedule::Harmonic { a: self.a, t0: self.t0 }
    }
}

/// Smallest `t0` the practical mode accepts.
pub const MIN_T0: f64 = 6.0;

pub fn theorem2_terms(p: &Theorem2Inputs, mode: T0Mode) -> Result<Theorem2Schedule> {
    if !(p.mu > 0.0) || p.mu > p.smoothness {
        return Err(invalid("mu", format!("need 0 < mu <= L, got mu = {}, L = {}", p.mu, p.smoothness)));
    }
    let (mu, lam) = (p.mu, p.lambda);
    let kappa = p.smoothness / mu;
    let sbar2 = p.sigma_max * p.sigma_max;
    let gap = 1.0 - lam;
    let t0_floors = [
        6.0,
        17280.0 * p.d as f64 * p.sigma2 * kappa / mu,
        432.0 * sbar2 * kappa * kappa / mu,
        12.0 * kappa * lam * libm::sqrt(10.0) / gap,
        5184.0 * sbar2 * lam * lam * kappa * kappa / (mu * gap),
        (3.0 + lam) / gap,
    ];
    let t0_theory = t0_floors.iter().cloned().fold(0.0, f64::max);
    let t0 = match mode {
        T0Mode::Theory => t0_theory,
        T0Mode::Practical(t0) => {
            if !(t0 >= MIN_T0 && t0.is_finite()) {
                return Err(invalid("t0", format!("practical t0 must be at least {MIN_T0}, got {t0}")));
            }
            t0
        }
    };
    let nu = 1.0f64
        .min(ratio_or_inf(mu, 432.0 * p.sigma2 * kappa * kappa))
        .min(mu / (72.0 * kappa));
    Ok(Theorem2Schedule { a: 6.0 / mu, t0, t0_floors, t0_theory, nu })
}

pub fn theorem2_schedule(obj: &Objective, w: &MixingMatrix, noise: &NoiseModel, mode: T0Mode) -> Result<Theorem2Schedule> {
    let mu = obj.constants().require_mu()?;
    theorem2_terms(
        &Theorem2Inputs {
            d: obj.dim(),
            mu,
            smoothness: obj.constants().smoothness,
            sigma2: noise.sigma2_avg(),
            sigma_max: noise.sigma_max(),
            lambda: w.lambda(),
        },
        mode,
    )
}

/// Initial models.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Common(Vec<f64>),
    /// Row-major `n x d`.
    PerUser(Vec<f64>),
}

impl Init {
    pub fn state(&self, n: usize, d: usize) -> Result<State> {
        match self {
            Init::Common(x) => {
                if x.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: x.len() });
                }
                State::common(n, x)
            }
            Init::PerUser(rows) => State::new(rows.clone(), n, d),
        }
    }

    pub fn is_common(&self, d: usize) -> bool {
        match self {
            Init::Common(_) => true,
            Init::PerUser(rows) => rows.chunks_exact(d).all(|r| r == &rows[..d]),
        }
    }
}

/// Everything one trajectory needs.
#[derive(Debug, Clone, Copy)]
pub struct RunSpec<'a> {
    pub mixing: &'a MixingMatrix,
    pub objective: &'a Objective,
    pub noise: &'a NoiseModel,
    pub schedule: Schedule,
    pub horizon: u64,
    pub init: &'a Init,
    pub record_trace: bool,
}

/// Realized randomness and averages retained for pointwise checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// `x̄^t` for `t = 1..T`.
    pub means: Vec<Vec<f64>>,
    /// `z_i^t` for `t = 1..T-1`, row-major `n x d`.
    pub noise: Vec<Vec<f64>>,
    /// `z̄^t` for `t = 1..T-1`.
    pub noise_means: Vec<Vec<f64>>,
    /// `Σ_i ||z_i^t||^2` for `t = 1..T-1`.
    pub noise_norm_sq: Vec<f64>,
    /// `α_t` for `t = 1..T-1`.
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub n: usize,
    pub d: usize,
    /// `(1/n) Σ ||x_i^t - x̄^t||^2`.
    pub consensus_gap: Vec<f64>,
    /// `f(x̄^t)`.
    pub global_value: Vec<f64>,
    /// `f(x̄^t) - f*` when `f*` is certified.
    pub optimality_gap: Option<Vec<f64>>,
    /// `Σ_i ||∇f(x_i^t)||^2`.
    pub grad_metric_increment: Vec<f64>,
    /// `Σ_i ||x_i^t - x*||^2` when `x*` is certified.
    pub distance_to_minimizer: Option<Vec<f64>>,
    /// `f(x̄^1) - f*`.
    pub delta_f: Option<f64>,
    /// `(1/n) Σ ||x_i^1 - x̄^1||^2`.
    pub delta_x: f64,
    /// `(1/n) Σ (f(x_i^T) - f*)`.
    pub final_user_gap: Option<f64>,
    pub trace: Option<Trace>,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.consensus_gap.len()
    }

    /// `(1/(nT)) Σ_t Σ_i ||∇f(x_i^t)||^2`.
    pub fn grad_metric(&self) -> f64 {
        self.grad_metric_increment.iter().sum::<f64>() / (self.n * self.horizon()) as f64
    }

    pub fn final_consensus_gap(&self) -> f64 {
        *self.consensus_gap.last().unwrap_or(&0.0)
    }
}

fn check_spec(spec: &RunSpec) -> Result<()> {
    let (n, d) = (spec.objective.n(), spec.objective.dim());
    if spec.mixing.n() != n || spec.noise.n() != n {
        return Err(invalid("config", format!("user counts disagree: objective {n}, mixing {}, noise {}", spec.mixing.n(), spec.noise.n())));
    }
    if spec.noise.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: spec.noise.dim() });
    }
    if spec.horizon == 0 {
        return Err(invalid("T", "horizon must be positive"));
    }
    spec.schedule.validate()
}

/// Runs one trajectory; user `i` draws noise from
/// `user_stream(master_seed, run_index, i)`.
pub fn run(spec: &RunSpec, master_seed: u64, run_index: u64) -> Result<RunRecord> {
    check_spec(spec)?;
    let n = spec.objective.n();
    let mut rngs: Vec<StreamRng> = (0..n).map(|i| user_stream(master_seed, run_index, i)).collect();
    run_with_rngs(spec, &mut rngs)
}

pub fn run_with_rngs<R: Rng>(spec: &RunSpec, rngs: &mut [R]) -> Result<RunRecord> {
    check_spec(spec)?;
    let obj = spec.objective;
    let (n, d) = (obj.n(), obj.dim());
    let horizon = spec.horizon as usize;
    let mut state = spec.init.state(n, d)?;
    let consts = obj.constants();
    let x_star = consts.minimizer.clone();
    let f_star = consts.optimum;

    let mut consensus = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon);
    let mut gaps = f_star.map(|_| Vec::with_capacity(horizon));
    let mut grads = Vec::with_capacity(horizon);
    let mut dists = x_star.as_ref().map(|_| Vec::with_capacity(horizon));
    let mut trace = spec.record_trace.then(|| Trace {
        means: Vec::with_capacity(horizon),
        noise: Vec::with_capacity(horizon),
        noise_means: Vec::with_capacity(horizon),
        noise_norm_sq: Vec::with_capacity(horizon),
        step_sizes: Vec::with_capacity(horizon),
    });
    let mut g = vec![0.0; d];
    let mut final_user_gap = None;

    for t in 1..=spec.horizon {
        consensus.push(state.consensus_gap());
        let fbar = obj.value_global_unchecked(state.mean());
        values.push(fbar);
        if let Some(gaps) = gaps.as_mut() {
            gaps.push(obj.gap_unchecked(state.mean()).unwrap_or(fbar - f_star.unwrap_or(0.0)));
        }
        let mut grad_sum = 0.0;
        for i in 0..n {
            obj.grad_global_into(state.model(i), &mut g);
            grad_sum += norm_sq(&g);
        }
        grads.push(grad_sum);
        if let (Some(dists), Some(xs)) = (dists.as_mut(), x_star.as_ref()) {
            dists.push(state.models().chunks_exact(d).map(|x| dist_sq(x, xs)).sum());
        }
        if let Some(tr) = trace.as_mut() {
            tr.means.push(state.mean().to_vec());
        }
        if t == spec.horizon {
            if f_star.is_some() {
                final_user_gap = Some((0..n).filter_map(|i| obj.gap_unchecked(state.model(i))).sum::<f64>() / n as f64);
            }
            break;
        }
        let alpha = spec.schedule.alpha(t);
        if spec.noise.kind() == NoiseKind::Zero {
            // the noise buffer is never written for the zero kind
            let zeros = core::mem::take(&mut state.noise);
            let out = advance(&mut state, spec.mixing, obj, &zeros, alpha);
            state.noise = zeros;
            out?;
        } else {
            step(&mut state, spec.mixing, obj, spec.noise, alpha, rngs)?;
        }
        if let Some(tr) = trace.as_mut() {
            let z = state.last_noise();
            let mut zbar = vec![0.0; d];
            row_mean(z, d, &mut zbar);
            tr.noise_norm_sq.push(norm_sq(z));
            tr.noise.push(z.to_vec());
            tr.noise_means.push(zbar);
            tr.step_sizes.push(alpha);
        }
    }

    let delta_f = gaps.as_ref().map(|g| g[0]);
    Ok(RunRecord {
        n,
        d,
        delta_x: consensus[0],
        consensus_gap: consensus,
        global_value: values,
        optimality_gap: gaps,
        grad_metric_increment: grads,
        distance_to_minimizer: dists,
        delta_f,
        final_user_gap,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_nonconvex, make_quadratic, quadratic_from_parts, QuadraticSpec};
    use crate::rng::seeded;
    use crate::topology::{build_graph, metropolis_weights, GraphKind};
    use rand_distr::{Distribution, StandardNormal};

    fn mixing(kind: GraphKind, n: usize) -> MixingMatrix {
        metropolis_weights(&build_graph(&kind, n).unwrap())
    }

    fn gaussian_block(n: usize, seed: u64) -> Vec<f64> {
        let mut r = seeded(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn two_user_hand_step() {
        let w = mixing(GraphKind::Ring, 2);
        let obj = quadratic_from_parts(
            QuadraticSpec { hessians: vec![vec![1.0], vec![1.0]], centers: vec![vec![3.0], vec![-1.0]] },
            1.0,
            1.0,
        )
        .unwrap();
        let mut s = State::common(2, &[0.0]).unwrap();
        step_with_noise(&mut s, &w, &obj, &[0.0, 0.0], 0.1).unwrap();
        let expected = 0.5 * (0.1 * 3.0) + 0.5 * -0.1;
        assert!((s.model(0)[0] - expected).abs() < 1e-15);
        assert!((s.model(1)[0] - expected).abs() < 1e-15);
        assert_eq!(s.t(), 2);
    }

    #[test]
    fn fixed_point_and_pure_consensus() {
        let w = mixing(GraphKind::Complete, 4);
        let obj = make_quadratic(4, 3, 1.0, 5.0, 1.0, 2).unwrap();
        let xs = obj.constants().minimizer.clone().unwrap();
        let mut s = State::common(4, &xs).unwrap();
        let before = s.models().to_vec();
        let zero = vec![0.0; 12];
        step_with_noise(&mut s, &w, &obj, &zero, 0.05).unwrap();
        for (a, b) in s.models().iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
        let ring = mixing(GraphKind::Ring, 4);
        let x0 = gaussian_block(12, 3);
        let mut s = State::new(x0.clone(), 4, 3).unwrap();
        step_with_noise(&mut s, &ring, &obj, &zero, 0.0).unwrap();
        let mut expected = vec![0.0; 12];
        ring.mix(&x0, 3, &mut expected);
        assert_eq!(s.models(), &expected[..]);
    }

    #[test]
    fn stacked_form_agrees() {
        let w = mixing(GraphKind::Ring, 4);
        let obj = make_quadratic(4, 3, 1.0, 10.0, 2.0, 5).unwrap();
        let mut s = State::new(gaussian_block(12, 6), 4, 3).unwrap();
        let mut stacked = s.clone();
        for k in 0..10 {
            let z = gaussian_block(12, 100 + k);
            stacked = step_stacked(&stacked, &w, &obj, &z, 0.04).unwrap();
            step_with_noise(&mut s, &w, &obj, &z, 0.04).unwrap();
            let dev = s.models().iter().zip(stacked.models()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev <= 1e-10, "step {k}: {dev}");
        }
        assert_eq!(s.t(), stacked.t());
    }

    #[test]
    fn mean_follows_averaged_stochastic_gradient() {
        let w = mixing(GraphKind::Torus2d, 9);
        let obj = make_nonconvex(9, 4, 0.8, 7).unwrap();
        let noise = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 9, 4, 1.0).unwrap();
        let mut rngs: Vec<_> = (0..9).map(|i| user_stream(1, 0, i)).collect();
        let mut s = State::new(gaussian_block(36, 8), 9, 4).unwrap();
        for t in 1..50u64 {
            let alpha = 0.1 / libm::sqrt(t as f64);
            let prev = s.clone();
            step(&mut s, &w, &obj, &noise, alpha, &mut rngs).unwrap();
            let mut gbar = [0.0; 4];
            for i in 0..9 {
                let g = obj.grad_local(i, prev.model(i)).unwrap();
                for (c, gb) in gbar.iter_mut().enumerate() {
                    *gb += (g[c] + s.last_noise()[i * 4 + c]) / 9.0;
                }
            }
            for (c, gb) in gbar.iter().enumerate() {
                assert!((s.mean()[c] - (prev.mean()[c] - alpha * gb)).abs() < 1e-10);
            }
            let mut m = vec![0.0; 4];
            row_mean(s.models(), 4, &mut m);
            assert!(dist_sq(&m, s.mean()) < 1e-24);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let w = mixing(GraphKind::Ring, 3);
        let obj = make_quadratic(3, 2, 1.0, 10.0, 1.0, 1).unwrap();
        let mut s = State::common(3, &[1.0, 1.0]).unwrap();
        let z = vec![0.0; 6];
        let mut outcome = Ok(());
        for _ in 0..2000 {
            outcome = step_with_noise(&mut s, &w, &obj, &z, 5.0);
            if outcome.is_err() {
                break;
            }
        }
        assert!(matches!(outcome, Err(Error::Divergence { .. })));
    }

    #[test]
    fn theorem1_scalar_oracle() {
        let p = Theorem1Inputs { n: 8, d: 4, smoothness: 2.0, b_het: libm::sqrt(2.0), sigma2: 1.0, sigma_max: 1.0, lambda: 2.0 / 3.0, horizon: 1000 };
        let r = theorem1_terms(&p);
        let l: f64 = 2.0;
        let lam: f64 = 2.0 / 3.0;
        let b: f64 = 2.0f64.sqrt();
        let t1 = 1.0 / (2.0 * l);
        let t2 = 8.0 / 9.0;
        let t3 = (1.0 - lam) / (lam * l * b * 48.0f64.sqrt());
        let t4 = 8.0f64.sqrt() / (6.0 * (10.0 * 4.0 * l).sqrt());
        let t5 = 8.0f64.cbrt() * (1.0 - lam).powf(2.0 / 3.0) / (lam * lam * l.powf(2.0 / 3.0) * 9.0f64.cbrt());
        let t5b = 8.0f64.cbrt() * (1.0 - lam).powf(2.0 / 3.0) / (lam.powf(2.0 / 3.0) * l.powf(2.0 / 3.0) * 9.0f64.cbrt());
        for (got, want) in [(r.smoothness_term, t1), (r.noise_term, t2), (r.heterogeneity_term, t3), (r.dimension_term, t4), (r.network_term_squared, t5), (r.network_term_two_thirds, t5b)] {
            assert!((got - want).abs() <= 1e-14 * want, "{got} vs {want}");
        }
        let c = t1.min(t2).min(t3).min(t4).min(t5).min(t5b);
        let h = 8.0f64.sqrt() / (4.0f64 * 1000.0).sqrt();
        assert!((r.c - c).abs() < 1e-15);
        assert!((r.alpha - c.min(h)).abs() < 1e-15);
        assert!(r.network_term_two_thirds <= r.network_term_squared);
    }

    #[test]
    fn theorem1_limits() {
        let base = Theorem1Inputs { n: 8, d: 4, smoothness: 2.0, b_het: 1.0, sigma2: 1.0, sigma_max: 1.0, lambda: 0.0, horizon: 10 };
        let r = theorem1_terms(&base);
        assert!(r.heterogeneity_term.is_infinite() && r.network_term_squared.is_infinite());
        let expect = (1.0f64 / 4.0).min(8.0 / 9.0).min(8.0f64.sqrt() / (6.0 * 80.0f64.sqrt()));
        assert!((r.c - expect).abs() < 1e-15);
        let quiet = theorem1_terms(&Theorem1Inputs { sigma2: 0.0, sigma_max: 0.0, lambda: 0.5, b_het: 0.0, ..base });
        assert_eq!(quiet.alpha, quiet.c);
        assert_eq!(quiet.c, 0.25);
    }

    #[test]
    fn theorem1_needs_heterogeneity() {
        let w = mixing(GraphKind::Ring, 4);
        let q = make_quadratic(4, 2, 1.0, 2.0, 1.0, 1).unwrap();
        let noise = NoiseModel::zero(4, 2).unwrap();
        assert_eq!(theorem1_constant_stepsize(&q, &w, &noise, 10), Err(Error::MissingConstant("B_het")));
        let q = q.with_quadratic_heterogeneity().unwrap();
        let c = theorem1_constant_stepsize(&q, &w, &noise, 10).unwrap().c;
        assert!(c.is_finite() && c <= 0.25);
        let s = theorem1_unknown_horizon(&q, &w, &noise).unwrap();
        assert_eq!(s, Schedule::InvSqrt { c_prime: core::f64::consts::SQRT_2 * c });
    }

    #[test]
    fn theorem2_noiseless_complete() {
        let p = Theorem2Inputs { d: 3, mu: 1.0, smoothness: 1.0, sigma2: 0.0, sigma_max: 0.0, lambda: 0.0 };
        let s = theorem2_terms(&p, T0Mode::Theory).unwrap();
        assert_eq!(s.t0_floors, [6.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert_eq!((s.t0, s.a), (6.0, 6.0));
        let s2 = theorem2_terms(&Theorem2Inputs { mu: 2.0, smoothness: 2.0, ..p }, T0Mode::Practical(50.0)).unwrap();
        assert_eq!((s2.a, s2.t0), (3.0, 50.0));
        assert!(theorem2_terms(&p, T0Mode::Practical(5.0)).is_err());
    }

    #[test]
    fn theorem2_scalar_oracle() {
        let p = Theorem2Inputs { d: 10, mu: 1.0, smoothness: 10.0, sigma2: 1.0, sigma_max: 1.0, lambda: 2.0 / 3.0 };
        let s = theorem2_terms(&p, T0Mode::Theory).unwrap();
        let lam: f64 = 2.0 / 3.0;
        let k: f64 = 10.0;
        let floors = [
            6.0,
            17280.0 * 10.0 * k,
            432.0 * k * k,
            12.0 * k * lam * 10.0f64.sqrt() / (1.0 - lam),
            5184.0 * lam * lam * k * k / (1.0 - lam),
            (3.0 + lam) / (1.0 - lam),
        ];
        for (a, b) in s.t0_floors.iter().zip(floors) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        assert_eq!(s.t0, 1_728_000.0);
        let nu = 1.0f64.min(1.0 / (432.0 * k * k)).min(1.0 / (72.0 * k));
        assert!((s.nu - nu).abs() < 1e-18);
    }

    #[test]
    fn schedules() {
        assert_eq!(Schedule::Harmonic { a: 6.0, t0: 4.0 }.alpha(2), 1.0);
        assert_eq!(Schedule::InvSqrt { c_prime: 3.0 }.alpha(3), 1.5);
        assert_eq!(Schedule::Constant { alpha: 0.2 }.alpha(99), 0.2);
        assert!(Schedule::Constant { alpha: 0.0 }.validate().is_err());
        assert!(Schedule::Harmonic { a: 1.0, t0: -1.0 }.validate().is_err());
    }

    fn quad_spec<'a>(w: &'a MixingMatrix, obj: &'a Objective, noise: &'a NoiseModel, init: &'a Init, horizon: u64, trace: bool) -> RunSpec<'a> {
        RunSpec { mixing: w, objective: obj, noise, schedule: Schedule::Harmonic { a: 6.0, t0: 60.0 }, horizon, init, record_trace: trace }
    }

    #[test]
    fn run_at_minimizer_stays_put() {
        let w = mixing(GraphKind::Ring, 4);
        let obj = make_quadratic(4, 2, 1.0, 10.0, 1.0, 3).unwrap();
        let noise = NoiseModel::zero(4, 2).unwrap();
        let init = Init::Common(obj.constants().minimizer.clone().unwrap());
        let r = run(&quad_spec(&w, &obj, &noise, &init, 1, false), 1, 0).unwrap();
        assert_eq!(r.horizon(), 1);
        assert!(r.final_user_gap.unwrap().abs() < 1e-15);
        assert_eq!(r.consensus_gap, vec![0.0]);
        // with W = J the local gradients at x* cancel after one gossip round
        let complete = mixing(GraphKind::Complete, 4);
        let r = run(&quad_spec(&complete, &obj, &noise, &init, 20, false), 1, 0).unwrap();
        assert!(r.final_user_gap.unwrap().abs() < 1e-20);
        assert!(r.consensus_gap.iter().all(|&c| c < 1e-24));
    }

    #[test]
    fn noiseless_gap_decreases_in_horizon() {
        let w = mixing(GraphKind::Ring, 6);
        let obj = make_quadratic(6, 3, 1.0, 10.0, 1.0, 4).unwrap();
        let noise = NoiseModel::zero(6, 3).unwrap();
        let init = Init::Common(vec![1.0; 3]);
        let gaps: Vec<f64> = [100, 200, 400].iter().map(|&t| run(&quad_spec(&w, &obj, &noise, &init, t, false), 1, 0).unwrap().final_user_gap.unwrap()).collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn runs_are_deterministic_and_traced() {
        let w = mixing(GraphKind::Ring, 5);
        let obj = make_quadratic(5, 3, 1.0, 10.0, 1.0, 4).unwrap();
        let noise = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 5, 3, 1.0).unwrap();
        let init = Init::Common(vec![1.0; 3]);
        let spec = quad_spec(&w, &obj, &noise, &init, 50, true);
        let a = run(&spec, 9, 3).unwrap();
        let b = run(&spec, 9, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, run(&spec, 9, 4).unwrap());
        let tr = a.trace.as_ref().unwrap();
        assert_eq!((tr.means.len(), tr.noise.len(), a.grad_metric_increment.len()), (50, 49, 50));
        assert_eq!(a.delta_x, 0.0);
        // records are consistent with the traced means
        assert!((a.global_value[7] - obj.value_global(&tr.means[7]).unwrap()).abs() < 1e-12);
        let plain = run(&RunSpec { record_trace: false, ..spec }, 9, 3).unwrap();
        assert_eq!(plain.final_user_gap, a.final_user_gap);
    }

    #[test]
    fn tracing_does_not_change_the_trajectory() {
        let w = mixing(GraphKind::Star, 5);
        let obj = make_nonconvex(5, 3, 0.3, 2).unwrap();
        let noise = NoiseModel::zero(5, 3).unwrap();
        let init = Init::PerUser(gaussian_block(15, 1));
        let spec = RunSpec { mixing: &w, objective: &obj, noise: &noise, schedule: Schedule::Constant { alpha: 0.1 }, horizon: 30, init: &init, record_trace: false };
        let a = run(&spec, 1, 0).unwrap();
        let b = run(&RunSpec { record_trace: true, ..spec }, 1, 0).unwrap();
        assert_eq!(a.grad_metric_increment, b.grad_metric_increment);
        assert!(a.delta_x > 0.0);
    }

    #[test]
    fn run_rejects_inconsistent_specs() {
        let w = mixing(GraphKind::Ring, 4);
        let obj = make_quadratic(4, 2, 1.0, 2.0, 1.0, 1).unwrap();
        let noise = NoiseModel::zero(3, 2).unwrap();
        let init = Init::Common(vec![0.0; 2]);
        assert!(run(&quad_spec(&w, &obj, &noise, &init, 5, false), 1, 0).is_err());
        let noise = NoiseModel::zero(4, 2).unwrap();
        assert!(run(&quad_spec(&w, &obj, &noise, &init, 0, false), 1, 0).is_err());
        let bad = Init::Common(vec![0.0; 3]);
        assert!(run(&quad_spec(&w, &obj, &noise, &bad, 5, false), 1, 0).is_err());
    }
}
