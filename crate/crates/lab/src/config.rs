//! Experiment configuration, read from TOML.
//!
//! Every table rejects unknown keys. Errors carry the dotted key path of the
//! offending entry.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Ensemble size `R`.
    pub runs: u64,
    /// Horizon `T`: iterates `x^1..x^T`.
    pub horizon: u64,
    /// Quantile levels reported in `tails.csv`.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Thresholds for the empirical tail curve.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// The first `trace_runs` runs also emit per-iteration rows.
    #[serde(default)]
    pub trace_runs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub topology: TopologyConfig,
    pub objective: ObjectiveConfig,
    pub noise: NoiseConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_deltas() -> Vec<f64> {
    vec![0.5, 0.2, 0.1, 0.05, 0.02, 0.01]
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::FinalGap]
}

/// Scalar summaries of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `(1/n) Σ_i (f(x_i^T) - f*)`.
    FinalGap,
    /// `f(x̄^T) - f*`.
    MeanGap,
    /// `(1/(nT)) Σ_t Σ_i ||∇f(x_i^t)||^2`.
    GradMetric,
    /// `(1/n) Σ_i ||x_i^T - x̄^T||^2`.
    ConsensusGap,
    /// `Σ_i ||x_i^T - x*||^2`.
    Distance,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::FinalGap => "final_gap",
            Metric::MeanGap => "mean_gap",
            Metric::GradMetric => "grad_metric",
            Metric::ConsensusGap => "consensus_gap",
            Metric::Distance => "distance",
        }
    }

    pub fn extract(self, r: &dsgd_core::engine::RunRecord) -> f64 {
        let last = |v: &Option<Vec<f64>>| v.as_ref().and_then(|v| v.last().copied()).unwrap_or(f64::NAN);
        match self {
            Metric::FinalGap => r.final_user_gap.unwrap_or(f64::NAN),
            Metric::MeanGap => last(&r.optimality_gap),
            Metric::GradMetric => r.grad_metric(),
            Metric::ConsensusGap => r.final_consensus_gap(),
            Metric::Distance => last(&r.distance_to_minimizer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphName {
    Ring,
    Complete,
    Torus2d,
    Star,
    ErdosRenyi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: GraphName,
    pub n: usize,
    /// Edge probability, Erdős–Rényi only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Graph seed, Erdős–Rényi only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Quadratic {
        dim: usize,
        mu: f64,
        smoothness: f64,
        #[serde(default = "one")]
        center_spread: f64,
        seed: u64,
        /// Also certify the heterogeneity constants `(A, B)`.
        #[serde(default)]
        certify_heterogeneity: bool,
    },
    Nonconvex {
        dim: usize,
        hetero_scale: f64,
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

impl ObjectiveConfig {
    pub fn dim(&self) -> usize {
        match self {
            ObjectiveConfig::Quadratic { dim, .. } | ObjectiveConfig::Nonconvex { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseName {
    GaussianCalibrated,
    SphereBounded,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseName,
    /// Common `σ_i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Per-user `σ_i`; length must equal `topology.n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T0ModeName {
    Theory,
    Practical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant { alpha: f64 },
    InvSqrt { c_prime: f64 },
    Harmonic { a: f64, t0: f64 },
    /// Constant step from the nonconvex theory, for the configured horizon.
    Theorem1,
    /// `c'/sqrt(t)` from the nonconvex theory.
    Theorem1UnknownHorizon,
    /// `a/(t+t0)` with `a = 6/μ`.
    Theorem2 {
        mode: T0ModeName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t0: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// Every coordinate of every user set to `value`.
    Fill { value: f64 },
    /// Every user starts at `x`.
    Point { x: Vec<f64> },
    /// One row per user.
    PerUser { models: Vec<Vec<f64>> },
    /// Every user starts at the certified minimizer.
    Minimizer,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Fill { value: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    /// Quantile levels for the `log(1/δ)` fit; replaces `deltas` in cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// Metric whose quantiles are fitted; defaults to the first metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_metric: Option<Metric>,
    #[serde(default = "default_fit_delta")]
    pub fit_delta: f64,
}

fn default_fit_delta() -> f64 {
    0.05
}

/// Parses and validates a TOML document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message().trim().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

fn check_deltas(path: &str, deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(config_err(path, "must list at least one level"));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return Err(config_err(path, format!("levels must lie in (0, 1), got {d}")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Structural checks that do not need the instance.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(config_err("runs", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        check_deltas("deltas", &self.deltas)?;
        if self.metrics.is_empty() {
            return Err(config_err("metrics", "must list at least one metric"));
        }
        if self.metrics.iter().collect::<BTreeSet<_>>().len() != self.metrics.len() {
            return Err(config_err("metrics", "entries must be distinct"));
        }
        if self.trace_runs > self.runs {
            return Err(config_err("trace_runs", "cannot exceed runs"));
        }
        let t = &self.topology;
        match t.kind {
            GraphName::ErdosRenyi => {
                if t.p.is_none() {
                    return Err(config_err("topology.p", "required for erdos_renyi"));
                }
                if t.seed.is_none() {
                    return Err(config_err("topology.seed", "required for erdos_renyi"));
                }
            }
            _ => {
                if t.p.is_some() {
                    return Err(config_err("topology.p", "only valid for erdos_renyi"));
                }
                if t.seed.is_some() {
                    return Err(config_err("topology.seed", "only valid for erdos_renyi"));
                }
            }
        }
        match (self.noise.kind, &self.noise.sigma, &self.noise.sigmas) {
            (NoiseName::Zero, None, None) => {}
            (NoiseName::Zero, _, _) => return Err(config_err("noise.sigma", "zero noise takes no sigma")),
            (_, Some(_), Some(_)) => return Err(config_err("noise.sigmas", "give either sigma or sigmas, not both")),
            (_, None, None) => return Err(config_err("noise.sigma", "missing; give sigma or sigmas")),
            _ => {}
        }
        if let ScheduleConfig::Theorem2 { mode, t0 } = &self.schedule {
            match (mode, t0) {
                (T0ModeName::Practical, None) => return Err(config_err("schedule.t0", "required in practical mode")),
                (T0ModeName::Theory, Some(_)) => return Err(config_err("schedule.t0", "theory mode derives t0")),
                _ => {}
            }
        }
        if let Some(s) = &self.sweep {
            if s.horizon.is_none() && s.n.is_none() && s.deltas.is_none() {
                return Err(config_err("sweep", "needs at least one axis"));
            }
            if s.horizon.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
                return Err(config_err("sweep.horizon", "must be a non-empty list of positive horizons"));
            }
            if s.n.as_ref().is_some_and(|n| n.is_empty() || n.contains(&0)) {
                return Err(config_err("sweep.n", "must be a non-empty list of positive sizes"));
            }
            if s.n.is_some() && self.noise.sigmas.is_some() {
                return Err(config_err("noise.sigmas", "per-user sigmas cannot follow an n sweep; use sigma"));
            }
            if s.n.is_some() && matches!(self.init, InitConfig::PerUser { .. }) {
                return Err(config_err("init", "per-user init cannot follow an n sweep"));
            }
            if let Some(d) = &s.deltas {
                check_deltas("sweep.deltas", d)?;
            }
            if !(s.fit_delta > 0.0 && s.fit_delta < 1.0) {
                return Err(config_err("sweep.fit_delta", "must lie in (0, 1)"));
            }
            if let Some(m) = s.fit_metric {
                if !self.metrics.contains(&m) {
                    return Err(config_err("sweep.fit_metric", format!("{} is not among metrics", m.name())));
                }
            }
        }
        Ok(())
    }

    /// Applies a command-line seed override.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.master_seed = s;
        }
        self
    }

    /// SHA-256 of the canonical JSON form (sorted keys, output path
    /// excluded), hex encoded. Includes the effective master seed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seed for sweep cell `cell`, decorrelated from neighbouring cells.
pub fn cell_seed(master_seed: u64, cell: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((cell as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
master_seed = 1
runs = 100
horizon = 1000

[topology]
kind = "ring"
n = 8

[objective]
kind = "quadratic"
dim = 10
mu = 1.0
smoothness = 10.0
seed = 3

[noise]
kind = "gaussian_calibrated"
sigma = 1.0

[schedule]
kind = "theorem2"
mode = "practical"
t0 = 50
"#;

    const REORDERED: &str = r#"
horizon = 1000
runs = 100
master_seed = 1

[schedule]
t0 = 50.0
mode = "practical"
kind = "theorem2"

[noise]
sigma = 1
kind = "gaussian_calibrated"

[objective]
seed = 3
smoothness = 10
mu = 1
dim = 10
kind = "quadratic"

[topology]
n = 8
kind = "ring"
"#;

    #[test]
    fn minimal_parses_and_hash_is_order_free() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(REORDERED).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), a.clone().with_seed(Some(2)).hash());
        let mut out = a.clone();
        out.output = Some("elsewhere".into());
        assert_eq!(out.hash(), a.hash());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let text = MINIMAL.replace("smoothness = 10.0", "smoothnes = 10.0");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("objective") && err.contains("smoothnes"), "{err}");
        let text = MINIMAL.replace("n = 8", "n = 8\nweights = 1");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("topology") && err.contains("weights"), "{err}");
    }

    #[test]
    fn missing_and_mistyped_keys() {
        let err = parse_config(&MINIMAL.replace("horizon = 1000\n", "")).unwrap_err().to_string();
        assert!(err.contains("horizon"), "{err}");
        let err = parse_config(&MINIMAL.replace("n = 8", "n = \"eight\"")).unwrap_err().to_string();
        assert!(err.contains("topology.n"), "{err}");
        let err = parse_config(&MINIMAL.replace("mode = \"practical\"\nt0 = 50", "mode = \"practical\"")).unwrap_err().to_string();
        assert!(err.contains("schedule.t0"), "{err}");
        let err = parse_config(&MINIMAL.replace("runs = 100", "runs = 0")).unwrap_err().to_string();
        assert!(err.contains("runs"), "{err}");
    }

    #[test]
    fn cell_seeds_differ() {
        let s: BTreeSet<u64> = (0..64).map(|c| cell_seed(7, c)).collect();
        assert_eq!(s.len(), 64);
        assert_eq!(cell_seed(7, 3), cell_seed(7, 3));
    }
}
