//! Fixed suites behind the `validate` and `noise-check` commands.

use serde::Serialize;

use dsgd_core::engine::{run, theorem1_constant_stepsize, theorem2_schedule, Init, RunSpec, Schedule, T0Mode};
use dsgd_core::exec::Executor;
use dsgd_core::noise::{NoiseKind, NoiseModel};
use dsgd_core::objectives::{make_nonconvex, make_quadratic, Objective};
use dsgd_core::rng::{aux_stream, seeded};
use dsgd_core::topology::{build_graph, metropolis_weights, GraphKind, MixingMatrix};
use dsgd_core::validation::{
    check_lemma1, check_lemma2, check_lemma3, check_lemma5_synthetic, check_mixing_suite, check_noise_calibration, check_smooth_props,
    check_strcvx_props, lemma4_nu_cap, lemma4_t0_floor, lemma6_grid, lemma7_nu_cap, mc_check_lemma4, mc_check_lemma7, prop_ran_grid,
    CheckReport, MgfCheckSpec, SUM_TOL, THEOREM2_PATTERN, VALUE_TOL,
};
use dsgd_core::Error as CoreError;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::instance::Instance;
use crate::output::fmt_f;

pub const MIXING_KINDS: [GraphKind; 5] =
    [GraphKind::Ring, GraphKind::Complete, GraphKind::Torus2d, GraphKind::Star, GraphKind::ErdosRenyi { p: 0.5, seed: 11 }];
pub const MIXING_SIZES: [usize; 3] = [4, 9, 16];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    /// Trajectories per objective family for the pointwise lemmas.
    pub trajectories: u64,
    pub trajectory_horizon: u64,
    /// Last index of the scalar grids.
    pub grid_t_max: u64,
    pub mc_samples: u64,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { trajectories: 50, trajectory_horizon: 200, grid_t_max: 10_000, mc_samples: 10_000, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportJson {
    pub name: String,
    pub passed: bool,
    pub cases_checked: u64,
    pub violations: u64,
    pub skipped: u64,
    pub worst_margin: String,
    pub tolerance: String,
    pub first_violation: Option<String>,
    pub notes: Vec<String>,
}

impl From<&CheckReport> for ReportJson {
    fn from(r: &CheckReport) -> Self {
        Self {
            name: r.name.clone(),
            passed: r.passed(),
            cases_checked: r.cases_checked,
            violations: r.violations,
            skipped: r.skipped,
            worst_margin: fmt_f(r.worst_margin),
            tolerance: fmt_f(r.tolerance),
            first_violation: r.first_violation.clone(),
            notes: r.notes.clone(),
        }
    }
}

pub fn summary_table(reports: &[CheckReport]) -> String {
    let mut s = format!("{:<28} {:>6} {:>10} {:>10} {:>8} {:>24}\n", "check", "status", "cases", "violations", "skipped", "worst_margin");
    for r in reports {
        s += &format!(
            "{:<28} {:>6} {:>10} {:>10} {:>8} {:>24}\n",
            r.name,
            if r.passed() { "pass" } else { "FAIL" },
            r.cases_checked,
            r.violations,
            r.skipped,
            fmt_f(r.worst_margin)
        );
        if let Some(v) = &r.first_violation {
            s += &format!("    first violation: {v}\n");
        }
    }
    s
}

fn topology_for(k: u64) -> (GraphKind, usize) {
    match k % 5 {
        0 => (GraphKind::Ring, 6 + (k as usize / 5) % 4),
        1 => (GraphKind::Torus2d, 9),
        2 => (GraphKind::ErdosRenyi { p: 0.5, seed: k }, 7),
        3 => (GraphKind::Star, 5),
        _ => (GraphKind::Complete, 4),
    }
}

fn random_init<R: Rng>(n: usize, d: usize, rng: &mut R) -> Init {
    Init::PerUser((0..n * d).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect())
}

fn trajectory_checks(spec: &RunSpec, seed: u64, run_index: u64) -> Result<(CheckReport, CheckReport)> {
    let rec = run(spec, seed, run_index)?;
    Ok((check_lemma1(&rec, spec.objective, VALUE_TOL)?, check_lemma3(&rec, spec.objective, spec.mixing, SUM_TOL)?))
}

/// Pointwise descent and consensus bounds along seeded trajectories of both
/// objective families under their theory step sizes.
pub fn trajectory_suite(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut l1 = CheckReport::new("lemma1_descent", VALUE_TOL);
    let mut l3 = CheckReport::new("lemma3_consensus", SUM_TOL);
    let d = 5;
    for k in 0..opts.trajectories {
        let mut rng = aux_stream(opts.seed, k, 0);
        let (kind, n) = topology_for(k);
        let w = metropolis_weights(&build_graph(&kind, n)?);

        let q = make_quadratic(n, d, 1.0, 4.0, 1.0, opts.seed ^ (k << 8))?.with_quadratic_heterogeneity()?;
        let qn = NoiseModel::uniform(NoiseKind::GaussianCalibrated, n, d, 0.05)?;
        let sched = theorem2_schedule(&q, &w, &qn, T0Mode::Theory)?.schedule();
        let init = random_init(n, d, &mut rng);
        let spec = RunSpec { mixing: &w, objective: &q, noise: &qn, schedule: sched, horizon: opts.trajectory_horizon, init: &init, record_trace: true };
        let (a, b) = trajectory_checks(&spec, opts.seed, 2 * k)?;
        l1.absorb(a);
        l3.absorb(b);

        let nc = make_nonconvex(n, d, 0.5, opts.seed ^ (k << 8))?;
        let nn = NoiseModel::uniform(NoiseKind::GaussianCalibrated, n, d, 1.0)?;
        let alpha = theorem1_constant_stepsize(&nc, &w, &nn, opts.trajectory_horizon)?.alpha;
        let init = random_init(n, d, &mut rng);
        let spec = RunSpec { mixing: &w, objective: &nc, noise: &nn, schedule: Schedule::Constant { alpha }, horizon: opts.trajectory_horizon, init: &init, record_trace: true };
        let (a, b) = trajectory_checks(&spec, opts.seed, 2 * k + 1)?;
        l1.absorb(a);
        l3.absorb(b);
    }
    Ok(vec![l1, l3])
}

/// Every deterministic check over its grid.
pub fn deterministic_suite(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut out = vec![check_mixing_suite(&MIXING_KINDS, &MIXING_SIZES, 1e-10)?];
    out.extend(trajectory_suite(opts)?);
    out.push(lemma6_grid(opts.grid_t_max)?);
    out.push(prop_ran_grid(opts.grid_t_max)?);
    out.push(check_lemma5_synthetic(2.0, 6.0, &THEOREM2_PATTERN, 1.0, opts.grid_t_max)?);
    let mut sc = CheckReport::new("strong_convexity_props", VALUE_TOL);
    let mut sm = CheckReport::new("smoothness_props", VALUE_TOL);
    for k in 0..10u64 {
        let q = make_quadratic(4, 6, 0.5, 20.0, 2.0, opts.seed + k)?;
        sc.absorb(check_strcvx_props(&q, 1000, opts.seed + k)?);
        sm.absorb(check_smooth_props(&q, 100, opts.seed + k)?);
        sm.absorb(check_smooth_props(&make_nonconvex(4, 6, 1.0, opts.seed + k)?, 100, opts.seed + k)?);
    }
    out.push(sc);
    out.push(sm);
    Ok(out)
}

/// Instance of the Monte-Carlo MGF checks: ring of 4 users, `d = 2`
/// quadratic, calibrated noise, `K = 0.01`, smallest admissible `t0`.
pub struct MgfInstance {
    pub mixing: MixingMatrix,
    pub objective: Objective,
    pub noise: NoiseModel,
    pub init: Init,
    pub k: f64,
    pub t0: f64,
}

impl MgfInstance {
    pub fn standard() -> Result<Self> {
        let mixing = metropolis_weights(&build_graph(&GraphKind::Ring, 4)?);
        let (mu, l, k) = (1.0, 2.0, 0.01);
        let objective = make_quadratic(4, 2, mu, l, 0.5, 7)?;
        let noise = NoiseModel::uniform(NoiseKind::GaussianCalibrated, 4, 2, 1.0)?;
        let t0 = lemma4_t0_floor(mu, l, noise.sigma_max(), mixing.lambda(), k).ceil();
        Ok(Self { mixing, objective, noise, init: Init::Common(vec![1.0, -1.0]), k, t0 })
    }

    pub fn spec(&self) -> RunSpec<'_> {
        RunSpec {
            mixing: &self.mixing,
            objective: &self.objective,
            noise: &self.noise,
            schedule: Schedule::Harmonic { a: 6.0 / self.mu(), t0: self.t0 },
            horizon: 1,
            init: &self.init,
            record_trace: false,
        }
    }

    fn mu(&self) -> f64 {
        self.objective.constants().strong_convexity.unwrap_or(f64::NAN)
    }
}

pub fn mgf_suite<E: Executor>(opts: &SuiteOptions, exec: &E) -> Result<Vec<CheckReport>> {
    let inst = MgfInstance::standard()?;
    let spec = inst.spec();
    let mu = inst.mu();
    let sigma = &inst.noise;
    let times = vec![2, 5, 10];
    let m4 = MgfCheckSpec { nu: lemma4_nu_cap(mu, sigma.sigma2_avg(), inst.k), k: inst.k, times: times.clone(), samples: opts.mc_samples };
    let m7 = MgfCheckSpec { nu: lemma7_nu_cap(mu, 6.0 / mu, sigma.sigma_max(), inst.k), k: inst.k, times, samples: opts.mc_samples };
    Ok(vec![mc_check_lemma4(&spec, &m4, opts.seed, exec)?, mc_check_lemma7(&spec, &m7, opts.seed.wrapping_add(1), exec)?])
}

/// Lemma-level checks along trajectories of a user configuration. Checks
/// whose preconditions the configuration does not meet are reported as
/// skipped with the reason.
pub fn config_trajectory_suite(inst: &Instance, runs: u64, master_seed: u64) -> Result<Vec<CheckReport>> {
    let spec = inst.spec(true);
    let mut l1 = CheckReport::new("config_lemma1_descent", VALUE_TOL);
    let mut l3 = CheckReport::new("config_lemma3_consensus", SUM_TOL);
    for r in 0..runs {
        let rec = run(&spec, master_seed, r)?;
        for (report, out) in [(&mut l1, check_lemma1(&rec, &inst.objective, VALUE_TOL)), (&mut l3, check_lemma3(&rec, &inst.objective, &inst.mixing, SUM_TOL))] {
            match out {
                Ok(rep) => report.absorb(rep),
                Err(e @ (CoreError::Precondition(_) | CoreError::MissingConstant(_))) => {
                    report.skip();
                    if report.notes.is_empty() {
                        report.notes.push(format!("not applicable: {e}"));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(vec![l1, l3])
}

/// Norm-MGF calibration and the one-sided noise MGF bounds over
/// `n ∈ {1, 8, 16}`, `d ∈ {2, 8}`.
pub fn noise_suite(samples: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = seeded(seed);
    let mut cal = CheckReport::new("noise_norm_calibration", 1e-12);
    // the calibrated integrand has finite variance only for d >= 3
    for (kind, d) in [(NoiseKind::GaussianCalibrated, 8), (NoiseKind::SphereBounded, 2), (NoiseKind::SphereBounded, 8), (NoiseKind::Zero, 2)] {
        cal.absorb(check_noise_calibration(&NoiseModel::uniform(kind, 1, d, 1.0)?, samples, &mut rng)?);
    }
    let mut l2 = CheckReport::new("lemma2_noise_mgf", 0.0);
    for kind in [NoiseKind::GaussianCalibrated, NoiseKind::SphereBounded] {
        for n in [1, 8, 16] {
            for d in [2, 8] {
                let model = NoiseModel::uniform(kind, n, d, 1.0)?;
                let mut v = vec![0.0; d];
                v[0] = 1.0;
                l2.absorb(check_lemma2(&model, &v, samples, &mut rng)?);
            }
        }
    }
    Ok(vec![cal, l2])
}
