//! Runs `R` independent trajectories of one configuration.

use dsgd_core::analysis::{tail_estimate, Ensemble, TailEstimate};
use dsgd_core::engine::{run, RunRecord};
use dsgd_core::exec::Executor;
use dsgd_core::Error as CoreError;

use crate::config::{ExperimentConfig, Metric};
use crate::error::{LabError, Result};
use crate::instance::Instance;

/// One per-iteration row of a traced run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub consensus_gap: f64,
    pub global_value: f64,
    pub optimality_gap: Option<f64>,
    pub grad_norm_sq_sum: f64,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub index: u64,
    /// Metric values in config order; `None` if the run diverged.
    pub values: Option<Vec<f64>>,
    /// Iteration at which a divergent run first left the finite range.
    pub diverged_at: Option<u64>,
    pub trace: Option<Vec<TraceRow>>,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub instance: Instance,
    pub outcomes: Vec<RunOutcome>,
    /// One per metric, in config order.
    pub ensembles: Vec<Ensemble>,
    pub tails: Vec<TailEstimate>,
}

impl EnsembleResult {
    pub fn metrics(&self) -> &[Metric] {
        &self.config.metrics
    }

    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.values.is_none()).count()
    }

    pub fn ensemble(&self, m: Metric) -> Option<(&Ensemble, &TailEstimate)> {
        let i = self.config.metrics.iter().position(|&x| x == m)?;
        Some((&self.ensembles[i], &self.tails[i]))
    }
}

fn trace_rows(r: &RunRecord) -> Vec<TraceRow> {
    (0..r.horizon())
        .map(|k| TraceRow {
            t: k as u64 + 1,
            consensus_gap: r.consensus_gap[k],
            global_value: r.global_value[k],
            optimality_gap: r.optimality_gap.as_ref().map(|v| v[k]),
            grad_norm_sq_sum: r.grad_metric_increment[k],
            distance: r.distance_to_minimizer.as_ref().map(|v| v[k]),
        })
        .collect()
}

/// Executes the ensemble; identical `(config, master_seed)` give identical
/// outcomes for any executor.
pub fn run_ensemble<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<EnsembleResult> {
    let instance = Instance::build(cfg)?;
    let spec = instance.spec(false);
    let metrics = &cfg.metrics;
    let results = exec.map_indexed(cfg.runs, |r| -> std::result::Result<RunOutcome, CoreError> {
        match run(&spec, cfg.master_seed, r) {
            Ok(rec) => Ok(RunOutcome {
                index: r,
                values: Some(metrics.iter().map(|m| m.extract(&rec)).collect()),
                diverged_at: None,
                trace: (r < cfg.trace_runs).then(|| trace_rows(&rec)),
            }),
            Err(CoreError::Divergence { t, .. }) => Ok(RunOutcome { index: r, values: None, diverged_at: Some(t), trace: None }),
            Err(e) => Err(e),
        }
    });
    let outcomes = results.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    let hash = cfg.hash();
    let failed = outcomes.iter().filter(|o| o.values.is_none()).count();
    if failed == outcomes.len() {
        return Err(LabError::Rejected(format!("all {failed} runs diverged")));
    }
    let mut ensembles = Vec::with_capacity(metrics.len());
    let mut tails = Vec::with_capacity(metrics.len());
    for (j, m) in metrics.iter().enumerate() {
        let samples: Vec<f64> = outcomes.iter().filter_map(|o| o.values.as_ref().map(|v| v[j])).collect();
        tails.push(tail_estimate(&samples, &cfg.deltas, &cfg.epsilons)?);
        ensembles.push(Ensemble { metric: m.name().into(), samples, failed, config_hash: hash.clone() });
    }
    Ok(EnsembleResult { config: cfg.clone(), config_hash: hash, instance, outcomes, ensembles, tails })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::pool::PoolExecutor;
    use dsgd_core::exec::Sequential;

    pub(crate) const SMALL: &str = r#"
master_seed = 9
runs = 4
horizon = 60
metrics = ["final_gap", "consensus_gap", "grad_metric"]
trace_runs = 1

[topology]
kind = "ring"
n = 4

[objective]
kind = "quadratic"
dim = 3
mu = 1.0
smoothness = 4.0
seed = 2

[noise]
kind = "gaussian_calibrated"
sigma = 1.0

[schedule]
kind = "theorem2"
mode = "practical"
t0 = 20

[init]
kind = "fill"
value = 1.0
"#;

    #[test]
    fn worker_count_does_not_change_outcomes() {
        let cfg = parse_config(SMALL).unwrap();
        let a = run_ensemble(&cfg, &Sequential).unwrap();
        let b = run_ensemble(&cfg, &PoolExecutor::new(4).unwrap()).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.ensembles, b.ensembles);
        assert_eq!(a.outcomes[0].trace.as_ref().unwrap().len(), 60);
        assert!(a.outcomes[1].trace.is_none());
        assert_eq!(a.ensembles[0].config_hash, cfg.hash());
    }

    #[test]
    fn divergent_runs_are_counted() {
        let text = SMALL.replace("kind = \"theorem2\"\nmode = \"practical\"\nt0 = 20", "kind = \"constant\"\nalpha = 3.0").replace("horizon = 60", "horizon = 2000");
        let err = run_ensemble(&parse_config(&text).unwrap(), &Sequential).unwrap_err();
        assert!(err.to_string().contains("diverged"), "{err}");
    }
}
