//! Stochastic-gradient noise oracles satisfying the sub-Gaussian condition
//! `E[exp(||z_i||^2 / sigma_i^2)] <= e` with equality, and Monte-Carlo
//! estimators for the moment-generating bounds that follow from it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm_sq};

/// Fewest draws accepted by the norm-MGF estimators.
pub const MIN_MGF_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    /// `N(0, s_i^2 I_d)` with `s_i^2 = sigma_i^2 (1 - e^{-2/d}) / 2`.
    GaussianCalibrated,
    /// Uniform on the sphere of radius `sigma_i`.
    SphereBounded,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    sigmas: Vec<f64>,
    d: usize,
    /// Per-coordinate standard deviation for the Gaussian kind.
    coord_sd: Vec<f64>,
}

/// Per-coordinate variance making `E[exp(||z||^2/sigma^2)] = e` for
/// `z ~ N(0, s^2 I_d)`: solves `(1 - 2 s^2 / sigma^2)^{-d/2} = e`.
pub fn calibrated_variance(sigma: f64, d: usize) -> f64 {
    -libm::expm1(-2.0 / d as f64) / 2.0 * sigma * sigma
}

impl NoiseModel {
    /// `sigmas` needs one strictly positive entry per user unless `kind` is
    /// [`NoiseKind::Zero`], where the entries are ignored.
    pub fn new(kind: NoiseKind, sigmas: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if sigmas.is_empty() {
            return Err(invalid("sigmas", "need at least one user"));
        }
        if kind != NoiseKind::Zero {
            if let Some((i, s)) = sigmas.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
                return Err(invalid("sigmas", format!("sigma_{i} = {s} must be positive and finite")));
            }
        }
        let coord_sd = match kind {
            NoiseKind::GaussianCalibrated => sigmas.iter().map(|&s| libm::sqrt(calibrated_variance(s, d))).collect(),
            _ => Vec::new(),
        };
        Ok(Self { kind, sigmas, d, coord_sd })
    }

    pub fn uniform(kind: NoiseKind, n: usize, d: usize, sigma: f64) -> Result<Self> {
        Self::new(kind, vec![sigma; n], d)
    }

    pub fn zero(n: usize, d: usize) -> Result<Self> {
        Self::new(NoiseKind::Zero, vec![0.0; n], d)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.sigmas.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Effective `sigma_i` (zero for the zero kind).
    pub fn sigma(&self, i: usize) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            _ => self.sigmas[i],
        }
    }

    /// `(1/n) Σ sigma_i^2`.
    pub fn sigma2_avg(&self) -> f64 {
        (0..self.n()).map(|i| self.sigma(i) * self.sigma(i)).sum::<f64>() / self.n() as f64
    }

    /// `max_i sigma_i`.
    pub fn sigma_max(&self) -> f64 {
        (0..self.n()).map(|i| self.sigma(i)).fold(0.0, f64::max)
    }

    /// Writes a fresh draw of `z_i` into `out` (length `d`).
    pub fn sample_into<R: Rng + ?Sized>(&self, user: usize, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            NoiseKind::Zero => out.fill(0.0),
            NoiseKind::GaussianCalibrated => {
                let sd = self.coord_sd[user];
                for o in out.iter_mut() {
                    let g: f64 = StandardNormal.sample(rng);
                    *o = sd * g;
                }
            }
            NoiseKind::SphereBounded => loop {
                for o in out.iter_mut() {
                    *o = StandardNormal.sample(rng);
                }
                let r = libm::sqrt(norm_sq(out));
                if r > 0.0 {
                    let scale = self.sigmas[user] / r;
                    out.iter_mut().for_each(|v| *v *= scale);
                    break;
                }
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check_user(user)?;
        let mut out = vec![0.0; self.d];
        self.sample_into(user, rng, &mut out);
        Ok(out)
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n() {
            return Err(invalid("user", format!("index {user} out of range for n = {}", self.n())));
        }
        Ok(())
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfEstimate {
    pub point_estimate: f64,
    pub standard_error: f64,
    pub samples: usize,
}

impl MgfEstimate {
    /// One-sided acceptance: `point_estimate <= bound + k * SE`.
    pub fn within(&self, bound: f64, k: f64) -> bool {
        self.point_estimate <= bound + k * self.standard_error
    }
}

/// Welford accumulator for a mean and its standard error.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            libm::sqrt(self.variance() / self.count as f64)
        }
    }

    pub fn estimate(&self) -> MgfEstimate {
        MgfEstimate {
            point_estimate: self.mean,
            standard_error: self.standard_error(),
            samples: self.count,
        }
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_MGF_SAMPLES {
        return Err(invalid("samples", format!("need at least {MIN_MGF_SAMPLES}, got {samples}")));
    }
    Ok(())
}

/// `exp(x)` where the exponent is `0/0` for zero noise.
fn ratio_exp(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        libm::exp(num / den)
    }
}

/// Estimates `E[exp(||z_i||^2 / sigma_i^2)]`; equals `e` for both calibrated
/// kinds and `1` for zero noise.
pub fn estimate_mgf_norm<R: Rng + ?Sized>(model: &NoiseModel, user: usize, samples: usize, rng: &mut R) -> Result<MgfEstimate> {
    check_samples(samples)?;
    model.check_user(user)?;
    let s2 = model.sigma(user) * model.sigma(user);
    let mut z = vec![0.0; model.dim()];
    let mut acc = MeanAccumulator::default();
    for _ in 0..samples {
        model.sample_into(user, rng, &mut z);
        acc.push(ratio_exp(norm_sq(&z), s2));
    }
    Ok(acc.estimate())
}

/// Estimates of `E[exp(<v, z_i>)]` per user and `E[exp(<v, z̄>)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerMgf {
    pub per_user: Vec<MgfEstimate>,
    pub average: MgfEstimate,
}

/// `exp(3 sigma_i^2 ||v||^2 / 4)`.
pub fn inner_bound_user(model: &NoiseModel, user: usize, v_norm_sq: f64) -> f64 {
    let s = model.sigma(user);
    libm::exp(0.75 * s * s * v_norm_sq)
}

/// `exp(3 sigma^2 ||v||^2 / (4n))`.
pub fn inner_bound_average(model: &NoiseModel, v_norm_sq: f64) -> f64 {
    libm::exp(0.75 * model.sigma2_avg() * v_norm_sq / model.n() as f64)
}

pub fn estimate_mgf_inner<R: Rng + ?Sized>(model: &NoiseModel, v: &[f64], samples: usize, rng: &mut R) -> Result<InnerMgf> {
    if v.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("v", "must be finite"));
    }
    if samples == 0 {
        return Err(invalid("samples", "need at least one"));
    }
    let n = model.n();
    let mut z = vec![0.0; model.dim()];
    let mut users = vec![MeanAccumulator::default(); n];
    let mut avg = MeanAccumulator::default();
    for _ in 0..samples {
        let mut inner_sum = 0.0;
        for (i, acc) in users.iter_mut().enumerate() {
            model.sample_into(i, rng, &mut z);
            let ip = dot(v, &z);
            inner_sum += ip;
            acc.push(libm::exp(ip));
        }
        avg.push(libm::exp(inner_sum / n as f64));
    }
    Ok(InnerMgf {
        per_user: users.iter().map(MeanAccumulator::estimate).collect(),
        average: avg.estimate(),
    })
}

/// Estimates `E[exp(n ||z̄||^2 / (120 d sigma^2))]`, bounded by `e`.
pub fn estimate_mgf_avg_norm<R: Rng + ?Sized>(model: &NoiseModel, samples: usize, rng: &mut R) -> Result<MgfEstimate> {
    check_samples(samples)?;
    let n = model.n();
    let d = model.dim();
    let scale = 120.0 * d as f64 * model.sigma2_avg() / n as f64;
    let mut z = vec![0.0; d];
    let mut zbar = vec![0.0; d];
    let mut acc = MeanAccumulator::default();
    for _ in 0..samples {
        zbar.fill(0.0);
        for i in 0..n {
            model.sample_into(i, rng, &mut z);
            for (b, v) in zbar.iter_mut().zip(&z) {
                *b += v / n as f64;
            }
        }
        acc.push(ratio_exp(norm_sq(&zbar), scale));
    }
    Ok(acc.estimate())
}
