//! Builds the concrete network, objective, noise and schedule of a config.

use dsgd_core::engine::{
    theorem1_constant_stepsize, theorem1_unknown_horizon, theorem2_schedule, Init, RunSpec, Schedule, T0Mode, Theorem1StepSize,
    Theorem2Schedule,
};
use dsgd_core::noise::{NoiseKind, NoiseModel};
use dsgd_core::objectives::{make_nonconvex, make_quadratic, Objective};
use dsgd_core::topology::{build_graph, metropolis_weights, GraphKind, MixingMatrix};

use crate::config::{ExperimentConfig, GraphName, InitConfig, Metric, NoiseName, ObjectiveConfig, ScheduleConfig, T0ModeName};
use crate::error::{config_err, LabError, Result};

/// How the step sizes were obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivedSchedule {
    Explicit,
    Theorem1(Theorem1StepSize),
    Theorem1UnknownHorizon,
    Theorem2(Theorem2Schedule),
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub mixing: MixingMatrix,
    pub objective: Objective,
    pub noise: NoiseModel,
    pub schedule: Schedule,
    pub derived: DerivedSchedule,
    pub init: Init,
    pub horizon: u64,
}

fn at(path: &'static str) -> impl FnOnce(dsgd_core::Error) -> LabError {
    move |source| LabError::Unresolvable { path: path.into(), source }
}

pub fn graph_kind(cfg: &ExperimentConfig) -> GraphKind {
    let t = &cfg.topology;
    match t.kind {
        GraphName::Ring => GraphKind::Ring,
        GraphName::Complete => GraphKind::Complete,
        GraphName::Torus2d => GraphKind::Torus2d,
        GraphName::Star => GraphKind::Star,
        GraphName::ErdosRenyi => GraphKind::ErdosRenyi { p: t.p.unwrap_or(0.0), seed: t.seed.unwrap_or(0) },
    }
}

pub fn build_objective(cfg: &ExperimentConfig) -> Result<Objective> {
    let n = cfg.topology.n;
    match cfg.objective {
        ObjectiveConfig::Quadratic { dim, mu, smoothness, center_spread, seed, certify_heterogeneity } => {
            let q = make_quadratic(n, dim, mu, smoothness, center_spread, seed).map_err(at("objective"))?;
            if certify_heterogeneity {
                q.with_quadratic_heterogeneity().map_err(at("objective.certify_heterogeneity"))
            } else {
                Ok(q)
            }
        }
        ObjectiveConfig::Nonconvex { dim, hetero_scale, seed } => make_nonconvex(n, dim, hetero_scale, seed).map_err(at("objective")),
    }
}

fn build_noise(cfg: &ExperimentConfig) -> Result<NoiseModel> {
    let (n, d) = (cfg.topology.n, cfg.objective.dim());
    let kind = match cfg.noise.kind {
        NoiseName::GaussianCalibrated => NoiseKind::GaussianCalibrated,
        NoiseName::SphereBounded => NoiseKind::SphereBounded,
        NoiseName::Zero => return NoiseModel::zero(n, d).map_err(at("noise")),
    };
    match (&cfg.noise.sigma, &cfg.noise.sigmas) {
        (Some(s), _) => NoiseModel::uniform(kind, n, d, *s).map_err(at("noise.sigma")),
        (None, Some(v)) => {
            if v.len() != n {
                return Err(config_err("noise.sigmas", format!("has {} entries for {n} users", v.len())));
            }
            NoiseModel::new(kind, v.clone(), d).map_err(at("noise.sigmas"))
        }
        (None, None) => Err(config_err("noise.sigma", "missing")),
    }
}

fn build_init(cfg: &ExperimentConfig, obj: &Objective) -> Result<Init> {
    let (n, d) = (obj.n(), obj.dim());
    Ok(match &cfg.init {
        InitConfig::Fill { value } => Init::Common(vec![*value; d]),
        InitConfig::Point { x } => {
            if x.len() != d {
                return Err(config_err("init.x", format!("has {} coordinates, dimension is {d}", x.len())));
            }
            Init::Common(x.clone())
        }
        InitConfig::PerUser { models } => {
            if models.len() != n || models.iter().any(|r| r.len() != d) {
                return Err(config_err("init.models", format!("must be {n} rows of {d} coordinates")));
            }
            Init::PerUser(models.concat())
        }
        InitConfig::Minimizer => Init::Common(obj.constants().require_minimizer().map_err(at("init"))?.to_vec()),
    })
}

fn build_schedule(cfg: &ExperimentConfig, w: &MixingMatrix, obj: &Objective, noise: &NoiseModel) -> Result<(Schedule, DerivedSchedule)> {
    let out = match &cfg.schedule {
        ScheduleConfig::Constant { alpha } => (Schedule::Constant { alpha: *alpha }, DerivedSchedule::Explicit),
        ScheduleConfig::InvSqrt { c_prime } => (Schedule::InvSqrt { c_prime: *c_prime }, DerivedSchedule::Explicit),
        ScheduleConfig::Harmonic { a, t0 } => (Schedule::Harmonic { a: *a, t0: *t0 }, DerivedSchedule::Explicit),
        ScheduleConfig::Theorem1 => {
            let s = theorem1_constant_stepsize(obj, w, noise, cfg.horizon).map_err(at("schedule"))?;
            (Schedule::Constant { alpha: s.alpha }, DerivedSchedule::Theorem1(s))
        }
        ScheduleConfig::Theorem1UnknownHorizon => (theorem1_unknown_horizon(obj, w, noise).map_err(at("schedule"))?, DerivedSchedule::Theorem1UnknownHorizon),
        ScheduleConfig::Theorem2 { mode, t0 } => {
            let mode = match mode {
                T0ModeName::Theory => T0Mode::Theory,
                T0ModeName::Practical => T0Mode::Practical(t0.unwrap_or(f64::NAN)),
            };
            let s = theorem2_schedule(obj, w, noise, mode).map_err(at("schedule"))?;
            (s.schedule(), DerivedSchedule::Theorem2(s))
        }
    };
    out.0.validate().map_err(at("schedule"))?;
    Ok(out)
}

fn check_metrics(cfg: &ExperimentConfig, obj: &Objective) -> Result<()> {
    let c = obj.constants();
    for m in &cfg.metrics {
        let missing = match m {
            Metric::FinalGap | Metric::MeanGap => c.optimum.is_none(),
            Metric::Distance => c.minimizer.is_none(),
            Metric::GradMetric | Metric::ConsensusGap => false,
        };
        if missing {
            return Err(config_err("metrics", format!("{} needs a certified optimum for this objective", m.name())));
        }
    }
    Ok(())
}

impl Instance {
    /// Resolves every referenced constant; nothing runs before this succeeds.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = build_graph(&graph_kind(cfg), cfg.topology.n).map_err(at("topology"))?;
        let mixing = metropolis_weights(&graph);
        let objective = build_objective(cfg)?;
        let noise = build_noise(cfg)?;
        let (schedule, derived) = build_schedule(cfg, &mixing, &objective, &noise)?;
        let init = build_init(cfg, &objective)?;
        check_metrics(cfg, &objective)?;
        Ok(Self { mixing, objective, noise, schedule, derived, init, horizon: cfg.horizon })
    }

    pub fn spec(&self, record_trace: bool) -> RunSpec<'_> {
        RunSpec {
            mixing: &self.mixing,
            objective: &self.objective,
            noise: &self.noise,
            schedule: self.schedule,
            horizon: self.horizon,
            init: &self.init,
            record_trace,
        }
    }
}
