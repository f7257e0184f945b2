//! Ensemble statistics: order-statistic quantiles, empirical tail curves and
//! least-squares fits of quantiles against `log(1/δ)` or against a scale.
//!
//! Every fit sorts its points before summing, so results are bitwise
//! independent of input order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Rank `ceil((1-δ) R)` of the `(1-δ)`-quantile, clamped to `[1, R]`.
///
/// The `1e-9` guard keeps exact products such as `0.95 * 100` from rounding
/// up to the next rank.
pub fn quantile_rank(count: usize, delta: f64) -> usize {
    let r = libm::ceil((1.0 - delta) * count as f64 - 1e-9);
    (r.max(1.0) as usize).min(count)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(invalid("samples", "NaN sample"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn empirical_quantile(samples: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let v = sorted_copy(samples)?;
    Ok(v[quantile_rank(v.len(), delta) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileEstimate {
    pub delta: f64,
    pub value: f64,
    /// Half the spread between the order statistics one binomial standard
    /// deviation below and above the quantile rank.
    pub se: f64,
}

fn quantile_from_sorted(v: &[f64], delta: f64) -> QuantileEstimate {
    let r = v.len();
    let k = quantile_rank(r, delta);
    let spread = libm::sqrt(r as f64 * delta * (1.0 - delta));
    let lo = (libm::floor(k as f64 - spread) as isize).clamp(1, r as isize) as usize;
    let hi = (libm::ceil(k as f64 + spread) as usize).clamp(1, r);
    QuantileEstimate {
        delta,
        value: v[k - 1],
        se: 0.5 * (v[hi - 1] - v[lo - 1]),
    }
}

/// Quantiles for several `δ` from one sort.
pub fn quantiles(samples: &[f64], deltas: &[f64]) -> Result<Vec<QuantileEstimate>> {
    for &d in deltas {
        check_delta(d)?;
    }
    let v = sorted_copy(samples)?;
    Ok(deltas.iter().map(|&d| quantile_from_sorted(&v, d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailPoint {
    pub epsilon: f64,
    /// Fraction of samples strictly above `epsilon`.
    pub prob: f64,
    /// Binomial standard error `sqrt(p (1-p) / R)`.
    pub se: f64,
}

pub fn tail_curve(samples: &[f64], epsilons: &[f64]) -> Result<Vec<TailPoint>> {
    if epsilons.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("epsilons", "must be sorted ascending"));
    }
    let v = sorted_copy(samples)?;
    let r = v.len() as f64;
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let above = v.len() - v.partition_point(|&x| x <= eps);
            let p = above as f64 / r;
            TailPoint { epsilon: eps, prob: p, se: libm::sqrt(p * (1.0 - p) / r) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination in `[0, 1]`; zero for constant responses.
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`. Needs two distinct abscissae.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(invalid("fit", "points must be finite"));
    }
    let mut pts: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("fit", "need at least two distinct abscissae"));
    }
    if syy == 0.0 {
        return Ok(LinearFit { slope: 0.0, intercept: my, r2: 0.0 });
    }
    let slope = sxy / sxx;
    let r2 = (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0);
    Ok(LinearFit { slope, intercept: my - slope * mx, r2 })
}

fn distinct(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Least-squares fit of `q(δ)` on `log(1/δ)`.
pub fn fit_log_inverse_delta(points: &[QuantileEstimate]) -> Result<LinearFit> {
    let deltas: Vec<f64> = points.iter().map(|p| p.delta).collect();
    if distinct(&deltas) < 4 {
        return Err(invalid("deltas", "need at least 4 distinct values"));
    }
    let xs: Vec<f64> = deltas.iter().map(|&d| -libm::log(d)).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.value).collect();
    least_squares(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub loglog_slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Slope of `log q` against `log x`.
pub fn fit_rate(xs: &[f64], qs: &[f64]) -> Result<RateFit> {
    if xs.len() != qs.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: qs.len() });
    }
    if distinct(xs) < 3 {
        return Err(invalid("scales", "need at least 3 distinct scales"));
    }
    if let Some(bad) = xs.iter().chain(qs).find(|v| !(**v > 0.0)) {
        return Err(invalid("fit_rate", format!("values must be positive to take logs, got {bad}")));
    }
    let lx: Vec<f64> = xs.iter().map(|&v| libm::log(v)).collect();
    let lq: Vec<f64> = qs.iter().map(|&v| libm::log(v)).collect();
    let f = least_squares(&lx, &lq)?;
    Ok(RateFit { loglog_slope: f.slope, intercept: f.intercept, r2: f.r2 })
}

/// Samples of one metric over an ensemble of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub metric: String,
    pub samples: Vec<f64>,
    /// Runs that diverged; excluded from `samples`.
    pub failed: usize,
    pub config_hash: String,
}

impl Ensemble {
    pub fn run_count(&self) -> usize {
        self.samples.len() + self.failed
    }

    pub fn quantiles(&self, deltas: &[f64]) -> Result<Vec<QuantileEstimate>> {
        quantiles(&self.samples, deltas)
    }

    pub fn tail_estimate(&self, deltas: &[f64], epsilons: &[f64]) -> Result<TailEstimate> {
        tail_estimate(&self.samples, deltas, epsilons)
    }
}

/// Quantiles, tail curve and `log(1/δ)` fit of one sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    pub quantiles: Vec<QuantileEstimate>,
    pub tail: Vec<TailPoint>,
    /// Present when at least four distinct `δ` were requested.
    pub fit: Option<LinearFit>,
}

pub fn tail_estimate(samples: &[f64], deltas: &[f64], epsilons: &[f64]) -> Result<TailEstimate> {
    let qs = quantiles(samples, deltas)?;
    let fit = if distinct(deltas) >= 4 { Some(fit_log_inverse_delta(&qs)?) } else { None };
    Ok(TailEstimate { tail: tail_curve(samples, epsilons)?, quantiles: qs, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    #[test]
    fn order_statistic_examples() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.05).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&s, 0.5).unwrap(), 50.0);
        assert_eq!(empirical_quantile(&[7.0; 9], 0.3).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[3.0], 0.99).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&[], 0.1), Err(Error::EmptySamples));
        assert!(empirical_quantile(&s, 0.0).is_err());
        assert!(empirical_quantile(&s, 1.0).is_err());
    }

    #[test]
    fn normal_quantile() {
        let mut r = seeded(1);
        let s: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut r)).collect();
        let q = quantiles(&s, &[0.05]).unwrap()[0];
        assert!((q.value - 1.644_853_626_951_472_2).abs() < 0.05);
        assert!(q.se > 0.0 && q.se < 0.05);
    }

    #[test]
    fn tail_curve_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let t = tail_curve(&s, &[0.0, 2.0, 5.0]).unwrap();
        assert_eq!(t[0].prob, 1.0);
        assert_eq!(t[1].prob, 0.5);
        assert_eq!(t[2].prob, 0.0);
        assert_eq!(t[0].se, 0.0);
        assert!(tail_curve(&s, &[2.0, 1.0]).is_err());

        let mut r = seeded(2);
        let e: Vec<f64> = (0..20_000).map(|_| Exp1.sample(&mut r)).collect();
        let p = tail_curve(&e, &[1.0]).unwrap()[0];
        assert!((p.prob - libm::exp(-1.0)).abs() <= 3.0 * p.se);
    }

    #[test]
    fn log_inverse_delta_fits() {
        let deltas = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];
        let pts: Vec<QuantileEstimate> = deltas.iter().map(|&d| QuantileEstimate { delta: d, value: 2.0 - 3.0 * libm::log(d), se: 0.0 }).collect();
        let f = fit_log_inverse_delta(&pts).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let flat: Vec<QuantileEstimate> = deltas.iter().map(|&d| QuantileEstimate { delta: d, value: 4.0, se: 0.0 }).collect();
        let f = fit_log_inverse_delta(&flat).unwrap();
        assert_eq!((f.slope, f.r2), (0.0, 0.0));
        assert!(fit_log_inverse_delta(&pts[..3]).is_err());

        let mut r = seeded(3);
        let e: Vec<f64> = (0..100_000).map(|_| Exp1.sample(&mut r)).collect();
        let f = fit_log_inverse_delta(&quantiles(&e, &deltas).unwrap()).unwrap();
        assert!((f.slope - 1.0).abs() < 0.05, "{f:?}");
    }

    #[test]
    fn rate_fits() {
        let xs = [250.0, 500.0, 1000.0, 2000.0];
        let inv: Vec<f64> = xs.iter().map(|x| 7.0 / x).collect();
        let f = fit_rate(&xs, &inv).unwrap();
        assert!((f.loglog_slope + 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let half: Vec<f64> = xs.iter().map(|x| 7.0 / libm::sqrt(*x)).collect();
        assert!((fit_rate(&xs, &half).unwrap().loglog_slope + 0.5).abs() < 1e-12);
        assert!(fit_rate(&xs, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_rate(&xs[..2], &inv[..2]).is_err());
    }

    #[test]
    fn ensemble_accounting() {
        let e = Ensemble { metric: "gap".into(), samples: vec![1.0, 2.0, 3.0], failed: 2, config_hash: "abc".into() };
        assert_eq!(e.run_count(), 5);
        assert_eq!(e.quantiles(&[0.5]).unwrap()[0].value, 2.0);
        let t = e.tail_estimate(&[0.5, 0.4, 0.3, 0.2], &[1.5]).unwrap();
        assert!(t.fit.is_some());
        assert_eq!(t.tail[0].prob, 2.0 / 3.0);
    }

    fn sample_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..200)
    }

    proptest! {
        #[test]
        fn quantiles_monotone_in_delta(s in sample_vec(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(empirical_quantile(&s, lo).unwrap() >= empirical_quantile(&s, hi).unwrap());
        }

        #[test]
        fn adding_a_larger_sample_never_lowers_quantiles(s in sample_vec(), delta in 0.001f64..0.999) {
            let before = empirical_quantile(&s, delta).unwrap();
            let mut t = s.clone();
            t.push(s.iter().cloned().fold(f64::MIN, f64::max) + 1.0);
            prop_assert!(empirical_quantile(&t, delta).unwrap() >= before);
        }

        #[test]
        fn tail_and_quantile_agree(s in sample_vec(), delta in 0.001f64..0.999) {
            let q = empirical_quantile(&s, delta).unwrap();
            let r = s.len() as f64;
            let above = s.iter().filter(|&&x| x > q).count() as f64 / r;
            let at_or_above = s.iter().filter(|&&x| x >= q).count() as f64 / r;
            prop_assert!(above <= delta + 1e-12);
            prop_assert!(delta <= at_or_above + 1.0 / r + 1e-12);
            prop_assert_eq!(tail_curve(&s, &[q]).unwrap()[0].prob, above);
        }

        #[test]
        fn tail_curve_non_increasing(s in sample_vec(), mut eps in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            eps.sort_by(f64::total_cmp);
            let t = tail_curve(&s, &eps).unwrap();
            prop_assert!(t.windows(2).all(|w| w[0].prob >= w[1].prob));
        }

        #[test]
        fn fits_ignore_order(seed in any::<u64>(), len in 4usize..30) {
            let mut r = seeded(seed);
            let xs: Vec<f64> = (0..len).map(|k| 1.0 + k as f64 + r.random::<f64>()).collect();
            let ys: Vec<f64> = xs.iter().map(|x| 0.1 + r.random::<f64>() / x).collect();
            let mut idx: Vec<usize> = (0..len).collect();
            for k in (1..len).rev() {
                idx.swap(k, r.random_range(0..=k));
            }
            let px: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            let py: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
            prop_assert_eq!(fit_rate(&xs, &ys).unwrap(), fit_rate(&px, &py).unwrap());
            prop_assert_eq!(least_squares(&xs, &ys).unwrap(), least_squares(&px, &py).unwrap());
            let mut shuffled = ys.clone();
            shuffled.reverse();
            prop_assert_eq!(quantiles(&ys, &[0.1, 0.3]).unwrap(), quantiles(&shuffled, &[0.1, 0.3]).unwrap());
        }
    }
}
