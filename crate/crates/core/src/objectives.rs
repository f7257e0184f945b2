//! Local cost families whose constants are certified by construction.
//!
//! Two families are provided:
//!
//! * strongly convex quadratics `f_i(x) = 1/2 (x - b_i)^T A_i (x - b_i)` with
//!   `spec(A_i) ⊂ [mu, L]`;
//! * a smooth non-convex base `f_0(x) = Σ_j x_j^2 / (1 + x_j^2)` plus
//!   zero-sum linear tilts `<h_i, x>`, so that the global cost is `f_0` while
//!   local gradients disagree by a controlled amount.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dist_sq, dot, matvec, norm_sq};
use crate::rng;

/// Smoothness of `u -> u^2 / (1 + u^2)`: its second derivative
/// `(2 - 6u^2) / (1 + u^2)^3` peaks in magnitude at `u = 0`.
pub const NONCONVEX_SMOOTHNESS: f64 = 2.0;

/// Constants of the bounded-heterogeneity condition
/// `max_i ||∇f_i(x)||^2 <= a^2 + b^2 ||∇f(x)||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heterogeneity {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    /// Lipschitz constant of every local gradient.
    pub smoothness: f64,
    /// Strong convexity of every local cost.
    pub strong_convexity: Option<f64>,
    pub minimizer: Option<Vec<f64>>,
    /// Infimum of the global cost.
    pub optimum: Option<f64>,
    pub heterogeneity: Option<Heterogeneity>,
    /// `Σ_i ||∇f_i(x*)||^2`.
    pub grad_at_optimum_sq: Option<f64>,
}

impl Constants {
    pub fn condition_number(&self) -> Option<f64> {
        self.strong_convexity.map(|mu| self.smoothness / mu)
    }

    pub fn require_mu(&self) -> Result<f64> {
        self.strong_convexity.ok_or(Error::MissingConstant("mu"))
    }

    pub fn require_minimizer(&self) -> Result<&[f64]> {
        self.minimizer.as_deref().ok_or(Error::MissingConstant("x_star"))
    }

    pub fn require_optimum(&self) -> Result<f64> {
        self.optimum.ok_or(Error::MissingConstant("f_star"))
    }

    pub fn require_heterogeneity(&self) -> Result<Heterogeneity> {
        self.heterogeneity.ok_or(Error::MissingConstant("B_het"))
    }

    pub fn require_grad_at_optimum_sq(&self) -> Result<f64> {
        self.grad_at_optimum_sq
            .ok_or(Error::MissingConstant("grad_fstar_norm2"))
    }
}

/// Per-user quadratic data, row-major `d x d` Hessians.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub hessians: Vec<Vec<f64>>,
    pub centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Quadratic {
    spec: QuadraticSpec,
    mean_hessian: Vec<f64>,
    /// `(1/n) Σ A_i b_i`
    mean_linear: Vec<f64>,
    /// `(1/n) Σ 1/2 b_i^T A_i b_i`
    mean_offset: f64,
}

#[derive(Debug, Clone)]
struct Tilted {
    tilts: Vec<Vec<f64>>,
    mean_tilt: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Family {
    Quadratic(Quadratic),
    Tilted(Tilted),
}

/// A vector of local cost oracles plus certified constants.
#[derive(Debug, Clone)]
pub struct Objective {
    n: usize,
    d: usize,
    family: Family,
    constants: Constants,
}

impl Objective {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn quadratic_spec(&self) -> Option<&QuadraticSpec> {
        match &self.family {
            Family::Quadratic(q) => Some(&q.spec),
            Family::Tilted(_) => None,
        }
    }

    pub fn tilts(&self) -> Option<&[Vec<f64>]> {
        match &self.family {
            Family::Tilted(t) => Some(&t.tilts),
            Family::Quadratic(_) => None,
        }
    }

    /// Certifies the heterogeneity bound for a quadratic family.
    ///
    /// With `M_i = A_i Ā^{-1}` and `c_i = ∇f_i(x*)`, every local gradient is
    /// `∇f_i(x) = M_i ∇f(x) + c_i`, so the bound holds with
    /// `a^2 = 2 max ||c_i||^2` and `b^2 = 2 max ||M_i||_2^2`.
    pub fn with_quadratic_heterogeneity(mut self) -> Result<Self> {
        let Family::Quadratic(q) = &self.family else {
            return Err(Error::Precondition("heterogeneity certificate needs a quadratic family".into()));
        };
        let d = self.d;
        let inv = DMatrix::from_row_slice(d, d, &q.mean_hessian)
            .try_inverse()
            .ok_or(Error::Singular)?;
        let xs = self.constants.require_minimizer()?.to_vec();
        let mut g = vec![0.0; d];
        let (mut a2, mut b2) = (0.0f64, 0.0f64);
        for i in 0..self.n {
            let m = DMatrix::from_row_slice(d, d, &q.spec.hessians[i]) * &inv;
            let s = m.singular_values().max();
            b2 = b2.max(s * s);
            self.grad_local_into(i, &xs, &mut g);
            a2 = a2.max(norm_sq(&g));
        }
        self.constants.heterogeneity = Some(Heterogeneity {
            a: libm::sqrt(2.0 * a2),
            b: libm::sqrt(2.0 * b2),
        });
        Ok(self)
    }

    pub fn is_strongly_convex(&self) -> bool {
        self.constants.strong_convexity.is_some()
    }

    /// `out = ∇f_i(x)`. Slices must have length `d`.
    pub fn grad_local_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Quadratic(q) => {
                let b = &q.spec.centers[i];
                let a = &q.spec.hessians[i];
                let d = self.d;
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &a[r * d..(r + 1) * d];
                    *o = row.iter().zip(x).zip(b).map(|((m, xv), bv)| m * (xv - bv)).sum();
                }
            }
            Family::Tilted(t) => {
                for ((o, &xv), h) in out.iter_mut().zip(x).zip(&t.tilts[i]) {
                    *o = base_derivative(xv) + h;
                }
            }
        }
    }

    pub fn grad_local(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_user(i)?;
        self.check_dim(x)?;
        let mut out = vec![0.0; self.d];
        self.grad_local_into(i, x, &mut out);
        Ok(out)
    }

    pub fn value_local(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_user(i)?;
        self.check_dim(x)?;
        Ok(match &self.family {
            Family::Quadratic(q) => {
                let e: Vec<f64> = x.iter().zip(&q.spec.centers[i]).map(|(a, b)| a - b).collect();
                let mut ae = vec![0.0; self.d];
                matvec(&q.spec.hessians[i], &e, &mut ae);
                0.5 * dot(&e, &ae)
            }
            Family::Tilted(t) => base_value(x) + dot(&t.tilts[i], x),
        })
    }

    /// `out = ∇f(x)`, the mean of the local gradients.
    pub fn grad_global_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Quadratic(q) => {
                matvec(&q.mean_hessian, x, out);
                for (o, c) in out.iter_mut().zip(&q.mean_linear) {
                    *o -= c;
                }
            }
            Family::Tilted(t) => {
                for ((o, &xv), h) in out.iter_mut().zip(x).zip(&t.mean_tilt) {
                    *o = base_derivative(xv) + h;
                }
            }
        }
    }

    pub fn grad_global(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.d];
        self.grad_global_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn value_global_unchecked(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::Quadratic(q) => {
                let mut hx = vec![0.0; self.d];
                matvec(&q.mean_hessian, x, &mut hx);
                0.5 * dot(x, &hx) - dot(&q.mean_linear, x) + q.mean_offset
            }
            Family::Tilted(t) => base_value(x) + dot(&t.mean_tilt, x),
        }
    }

    pub fn value_global(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.value_global_unchecked(x))
    }

    /// `f(x) - f*`. Quadratics use `1/2 (x-x*)^T Ā (x-x*)`, which avoids the
    /// cancellation of subtracting two large values.
    pub(crate) fn gap_unchecked(&self, x: &[f64]) -> Option<f64> {
        match &self.family {
            Family::Quadratic(q) => {
                let xs = self.constants.minimizer.as_ref()?;
                let e: Vec<f64> = x.iter().zip(xs).map(|(a, b)| a - b).collect();
                let mut he = vec![0.0; self.d];
                matvec(&q.mean_hessian, &e, &mut he);
                Some(0.5 * dot(&e, &he))
            }
            Family::Tilted(_) => self
                .constants
                .optimum
                .map(|fs| self.value_global_unchecked(x) - fs),
        }
    }

    pub fn gap(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.gap_unchecked(x).ok_or(Error::MissingConstant("f_star"))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_user(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(invalid("user", format!("index {i} out of range for n = {}", self.n)));
        }
        Ok(())
    }
}

#[inline]
fn base_derivative(u: f64) -> f64 {
    let s = 1.0 + u * u;
    2.0 * u / (s * s)
}

fn base_value(x: &[f64]) -> f64 {
    x.iter().map(|&u| u * u / (1.0 + u * u)).sum()
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random quadratics with spectra in `[mu, l]`.
///
/// `A_i = Q_i diag(e_i) Q_i^T` with `Q_i` the orthogonal factor of a Gaussian
/// matrix; for `d >= 2` the extreme eigenvalues are pinned to `mu` and `l`
/// and the rest are uniform in between. Centers are `b_i = spread * g_i`
/// with standard Gaussian `g_i`.
pub fn make_quadratic(n: usize, d: usize, mu: f64, l: f64, center_spread: f64, seed: u64) -> Result<Objective> {
    if !(mu > 0.0) {
        return Err(invalid("mu", format!("must be positive, got {mu}")));
    }
    if mu > l {
        return Err(invalid("mu", format!("mu = {mu} exceeds L = {l}")));
    }
    if !(center_spread >= 0.0) {
        return Err(invalid("center_spread", "must be nonnegative"));
    }
    if n == 0 || d == 0 {
        return Err(invalid("n", "user count and dimension must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let mut hessians = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for _ in 0..n {
        let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let mut eig: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..=1.0) * (l - mu) + mu).collect();
        if d >= 2 {
            eig[0] = mu;
            eig[d - 1] = l;
        }
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        hessians.push(row_major(&a));
        centers.push(gaussian_vec(&mut rng, d).into_iter().map(|v| v * center_spread).collect());
    }
    build_quadratic(QuadraticSpec { hessians, centers }, mu, l)
}

/// Quadratics from explicit data; every spectrum must lie in `[mu, l]`.
pub fn quadratic_from_parts(spec: QuadraticSpec, mu: f64, l: f64) -> Result<Objective> {
    if !(mu > 0.0) || mu > l {
        return Err(invalid("mu", format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
    }
    let n = spec.hessians.len();
    if n == 0 || spec.centers.len() != n {
        return Err(invalid("spec", "need one center per Hessian and at least one user"));
    }
    let d = spec.centers[0].len();
    for (i, (a, b)) in spec.hessians.iter().zip(&spec.centers).enumerate() {
        if a.len() != d * d || b.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.len(),
            });
        }
        let m = DMatrix::from_row_slice(d, d, a);
        if (&m - m.transpose()).abs().max() > 1e-12 {
            return Err(invalid("hessians", format!("A_{i} is not symmetric")));
        }
        let eig = m.symmetric_eigenvalues();
        let slack = 1e-12 * l.max(1.0);
        if eig.min() < mu - slack || eig.max() > l + slack {
            return Err(invalid("hessians", format!("spectrum of A_{i} leaves [{mu}, {l}]")));
        }
    }
    build_quadratic(spec, mu, l)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn build_quadratic(spec: QuadraticSpec, mu: f64, l: f64) -> Result<Objective> {
    let n = spec.hessians.len();
    let d = spec.centers[0].len();
    let inv_n = 1.0 / n as f64;
    let mut sum_a = DMatrix::<f64>::zeros(d, d);
    let mut sum_ab = DVector::<f64>::zeros(d);
    let mut offset = 0.0;
    for (a, b) in spec.hessians.iter().zip(&spec.centers) {
        let am = DMatrix::from_row_slice(d, d, a);
        let bv = DVector::from_column_slice(b);
        let ab = &am * &bv;
        offset += 0.5 * bv.dot(&ab);
        sum_a += am;
        sum_ab += ab;
    }
    let x_star = sum_a
        .clone()
        .cholesky()
        .ok_or(Error::Singular)?
        .solve(&sum_ab);
    let q = Quadratic {
        mean_hessian: row_major(&(sum_a * inv_n)),
        mean_linear: (sum_ab * inv_n).iter().cloned().collect(),
        mean_offset: offset * inv_n,
        spec,
    };
    let x_star: Vec<f64> = x_star.iter().cloned().collect();
    let mut obj = Objective {
        n,
        d,
        family: Family::Quadratic(q),
        constants: Constants {
            smoothness: l,
            strong_convexity: Some(mu),
            minimizer: None,
            optimum: None,
            heterogeneity: None,
            grad_at_optimum_sq: None,
        },
    };
    let mut g = vec![0.0; d];
    let mut heterogeneity = 0.0;
    let mut f_star = 0.0;
    for i in 0..n {
        obj.grad_local_into(i, &x_star, &mut g);
        heterogeneity += norm_sq(&g);
        f_star += obj.value_local(i, &x_star)?;
    }
    obj.constants.minimizer = Some(x_star);
    obj.constants.optimum = Some(f_star * inv_n);
    obj.constants.grad_at_optimum_sq = Some(heterogeneity);
    Ok(obj)
}

/// The tilted non-convex family.
///
/// Tilts are centred Gaussian draws rescaled so that the largest has norm
/// `hetero_scale`; they sum to zero, hence `f = f_0`, `f* = 0` (attained at
/// the origin) and the heterogeneity bound holds with `B^2 = 2` and
/// `A^2 = 2 max_i ||h_i||^2`.
pub fn make_nonconvex(n: usize, d: usize, hetero_scale: f64, seed: u64) -> Result<Objective> {
    if !(hetero_scale >= 0.0) {
        return Err(invalid("hetero_scale", "must be nonnegative"));
    }
    if n == 0 || d == 0 {
        return Err(invalid("n", "user count and dimension must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let mut tilts: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d)).collect();
    let mut mean = vec![0.0; d];
    for h in &tilts {
        for (m, v) in mean.iter_mut().zip(h) {
            *m += v / n as f64;
        }
    }
    for h in &mut tilts {
        for (v, m) in h.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let largest = tilts.iter().map(|h| libm::sqrt(norm_sq(h))).fold(0.0, f64::max);
    let scale = if largest > 0.0 { hetero_scale / largest } else { 0.0 };
    for h in &mut tilts {
        h.iter_mut().for_each(|v| *v *= scale);
    }
    tilted_from_parts(tilts)
}

/// Non-convex family from explicit tilts (need not sum to zero; the
/// certified constants use the actual mean tilt).
pub fn tilted_from_parts(tilts: Vec<Vec<f64>>) -> Result<Objective> {
    let n = tilts.len();
    if n == 0 {
        return Err(invalid("tilts", "need at least one user"));
    }
    let d = tilts[0].len();
    if tilts.iter().any(|h| h.len() != d) {
        return Err(invalid("tilts", "all tilts must share a dimension"));
    }
    let mut mean_tilt = vec![0.0; d];
    for h in &tilts {
        for (m, v) in mean_tilt.iter_mut().zip(h) {
            *m += v;
        }
    }
    mean_tilt.iter_mut().for_each(|m| *m /= n as f64);
    // ||∇f_0 + h_i||^2 <= 2||∇f_0 + h̄||^2 + 2||h_i - h̄||^2
    let spread = tilts.iter().map(|h| dist_sq(h, &mean_tilt)).fold(0.0, f64::max);
    let centred = norm_sq(&mean_tilt) == 0.0;
    Ok(Objective {
        n,
        d,
        family: Family::Tilted(Tilted { tilts, mean_tilt }),
        constants: Constants {
            smoothness: NONCONVEX_SMOOTHNESS,
            strong_convexity: None,
            minimizer: None,
            optimum: centred.then_some(0.0),
            heterogeneity: Some(Heterogeneity {
                a: libm::sqrt(2.0 * spread),
                b: libm::sqrt(2.0),
            }),
            grad_at_optimum_sq: None,
        },
    })
}

/// Largest observed `||∇f_i(x) - ∇f_i(y)|| / ||x - y||` over random pairs.
///
/// Half of the pairs are independent Gaussian points with scale 2, the rest
/// are close pairs (`y = x + 0.01 g`) that probe local curvature.
pub fn check_smoothness(obj: &Objective, trials: usize, seed: u64) -> f64 {
    let d = obj.dim();
    let mut rng = rng::seeded(seed);
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for k in 0..trials.max(1) {
        let x: Vec<f64> = gaussian_vec(&mut rng, d).into_iter().map(|v| 2.0 * v).collect();
        let step = if k % 2 == 0 { 2.0 } else { 0.01 };
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let g: f64 = StandardNormal.sample(&mut rng);
                v + step * g
            })
            .collect();
        let dx = libm::sqrt(dist_sq(&x, &y));
        if dx == 0.0 {
            continue;
        }
        for i in 0..obj.n() {
            obj.grad_local_into(i, &x, &mut gx);
            obj.grad_local_into(i, &y, &mut gy);
            worst = worst.max(libm::sqrt(dist_sq(&gx, &gy)) / dx);
        }
    }
    worst
}
