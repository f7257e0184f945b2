//! Grids of ensembles over the horizon and the number of users, with rate
//! and tail-shape fits.

use std::path::Path;

use serde::Serialize;

use dsgd_core::analysis::{fit_rate, LinearFit, RateFit, TailEstimate};
use dsgd_core::exec::Executor;

use crate::config::{cell_seed, ExperimentConfig, Metric};
use crate::ensemble::{run_ensemble, EnsembleResult};
use crate::error::{config_err, LabError, Result};
use crate::output::{fmt_f, tail_json, write_json, FitJson, TailJson};

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: usize,
    pub horizon: u64,
    pub n: usize,
    pub master_seed: u64,
    pub config_hash: String,
    pub runs: usize,
    pub failed: usize,
    pub tail: TailEstimate,
}

impl SweepCell {
    pub fn quantile(&self, delta: f64) -> Option<f64> {
        self.tail.quantiles.iter().find(|q| q.delta == delta).map(|q| q.value)
    }
}

/// Log-log fit of the `fit_delta` quantile along one axis, the other held
/// fixed.
#[derive(Debug, Clone)]
pub struct AxisFit {
    pub axis: &'static str,
    pub fixed: u64,
    pub xs: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub fit: RateFit,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub base_hash: String,
    pub metric: Metric,
    pub fit_delta: f64,
    pub deltas: Vec<f64>,
    pub cells: Vec<SweepCell>,
    pub rate_fits: Vec<AxisFit>,
    /// `log(1/δ)` fits per cell, when at least four levels were requested.
    pub delta_fits: Vec<(usize, LinearFit)>,
}

impl SweepResult {
    pub fn rate_fit(&self, axis: &str) -> Option<&AxisFit> {
        self.rate_fits.iter().find(|f| f.axis == axis)
    }
}

/// Cell configurations in row-major order over (horizon, n).
pub fn cell_configs(cfg: &ExperimentConfig) -> Result<(Metric, f64, Vec<ExperimentConfig>)> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| config_err("sweep", "missing"))?;
    let metric = sweep.fit_metric.unwrap_or(cfg.metrics[0]);
    let mut deltas = sweep.deltas.clone().unwrap_or_else(|| cfg.deltas.clone());
    if !deltas.contains(&sweep.fit_delta) {
        deltas.push(sweep.fit_delta);
    }
    let horizons = sweep.horizon.clone().unwrap_or_else(|| vec![cfg.horizon]);
    let ns = sweep.n.clone().unwrap_or_else(|| vec![cfg.topology.n]);
    let mut out = Vec::with_capacity(horizons.len() * ns.len());
    for &t in &horizons {
        for &n in &ns {
            let mut c = cfg.clone();
            c.horizon = t;
            c.topology.n = n;
            c.deltas = deltas.clone();
            c.master_seed = cell_seed(cfg.master_seed, out.len());
            c.sweep = None;
            c.output = None;
            c.validate()?;
            out.push(c);
        }
    }
    Ok((metric, sweep.fit_delta, out))
}

fn axis_fits(cells: &[SweepCell], delta: f64, axis: &'static str) -> Result<Vec<AxisFit>> {
    let key = |c: &SweepCell| if axis == "horizon" { (c.n as u64, c.horizon as f64) } else { (c.horizon, c.n as f64) };
    let mut fixed: Vec<u64> = cells.iter().map(|c| key(c).0).collect();
    fixed.sort_unstable();
    fixed.dedup();
    let mut out = Vec::new();
    for f in fixed {
        let (mut xs, mut qs) = (Vec::new(), Vec::new());
        for c in cells.iter().filter(|c| key(c).0 == f) {
            xs.push(key(c).1);
            qs.push(c.quantile(delta).unwrap_or(f64::NAN));
        }
        let mut distinct = xs.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() >= 3 {
            out.push(AxisFit { axis, fixed: f, fit: fit_rate(&xs, &qs)?, xs, quantiles: qs });
        }
    }
    Ok(out)
}

/// Runs every cell in order; `on_cell` sees each full ensemble before it is
/// reduced to its summary.
pub fn run_sweep<E: Executor>(cfg: &ExperimentConfig, exec: &E, mut on_cell: impl FnMut(usize, &EnsembleResult) -> Result<()>) -> Result<SweepResult> {
    let (metric, fit_delta, configs) = cell_configs(cfg)?;
    let mut cells = Vec::with_capacity(configs.len());
    for (k, c) in configs.iter().enumerate() {
        let res = run_ensemble(c, exec)?;
        let (ens, tail) = res.ensemble(metric).ok_or_else(|| config_err("sweep.fit_metric", "not recorded"))?;
        if ens.config_hash != c.hash() {
            return Err(LabError::Rejected(format!("cell {k}: ensemble hash does not match its config")));
        }
        on_cell(k, &res)?;
        cells.push(SweepCell {
            index: k,
            horizon: c.horizon,
            n: c.topology.n,
            master_seed: c.master_seed,
            config_hash: ens.config_hash.clone(),
            runs: ens.run_count(),
            failed: ens.failed,
            tail: tail.clone(),
        });
    }
    let mut rate_fits = axis_fits(&cells, fit_delta, "horizon")?;
    rate_fits.extend(axis_fits(&cells, fit_delta, "users")?);
    let delta_fits = cells.iter().filter_map(|c| c.tail.fit.map(|f| (c.index, f))).collect();
    Ok(SweepResult { base_hash: cfg.hash(), metric, fit_delta, deltas: configs[0].deltas.clone(), cells, rate_fits, delta_fits })
}

#[derive(Serialize)]
struct RateFitJson {
    axis: &'static str,
    fixed: u64,
    xs: Vec<String>,
    quantiles: Vec<String>,
    loglog_slope: String,
    intercept: String,
    r2: String,
}

#[derive(Serialize)]
struct CellJson {
    cell: usize,
    horizon: u64,
    n: usize,
    master_seed: u64,
    config_hash: String,
    summary: TailJson,
}

#[derive(Serialize)]
struct SweepJson {
    config_hash: String,
    metric: &'static str,
    fit_delta: String,
    rate_fits: Vec<RateFitJson>,
    log_inverse_delta_fits: Vec<(usize, FitJson)>,
    cells: Vec<CellJson>,
}

pub fn report_text(s: &SweepResult) -> String {
    let mut out = format!("config_hash {}\nmetric {}\nfit_delta {}\n\n", s.base_hash, s.metric.name(), s.fit_delta);
    out += &format!("{:>5} {:>8} {:>5} {:>24} {:>24}\n", "cell", "horizon", "n", "quantile", "se");
    for c in &s.cells {
        let q = c.tail.quantiles.iter().find(|q| q.delta == s.fit_delta);
        out += &format!(
            "{:>5} {:>8} {:>5} {:>24} {:>24}\n",
            c.index,
            c.horizon,
            c.n,
            q.map(|q| fmt_f(q.value)).unwrap_or_default(),
            q.map(|q| fmt_f(q.se)).unwrap_or_default()
        );
    }
    for f in &s.rate_fits {
        let other = if f.axis == "horizon" { "n" } else { "horizon" };
        out += &format!("\nslope vs {} ({other} = {}): {} r2 {}\n", f.axis, f.fixed, fmt_f(f.fit.loglog_slope), fmt_f(f.fit.r2));
    }
    for (k, f) in &s.delta_fits {
        out += &format!("cell {k}: quantile vs log(1/delta) slope {} r2 {}\n", fmt_f(f.slope), fmt_f(f.r2));
    }
    out
}

/// Writes `sweep.csv`, `fits.json` and `report.txt`.
pub fn write_sweep(dir: &Path, s: &SweepResult) -> Result<()> {
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cell", "horizon", "n", "master_seed", "metric", "delta", "quantile", "se", "config_hash"])?;
    for c in &s.cells {
        for q in &c.tail.quantiles {
            w.write_record([
                c.index.to_string(),
                c.horizon.to_string(),
                c.n.to_string(),
                c.master_seed.to_string(),
                s.metric.name().to_string(),
                fmt_f(q.delta),
                fmt_f(q.value),
                fmt_f(q.se),
                c.config_hash.clone(),
            ])?;
        }
    }
    w.flush().map_err(crate::error::io_err(&path))?;
    let json = SweepJson {
        config_hash: s.base_hash.clone(),
        metric: s.metric.name(),
        fit_delta: fmt_f(s.fit_delta),
        rate_fits: s
            .rate_fits
            .iter()
            .map(|f| RateFitJson {
                axis: f.axis,
                fixed: f.fixed,
                xs: f.xs.iter().map(|x| fmt_f(*x)).collect(),
                quantiles: f.quantiles.iter().map(|x| fmt_f(*x)).collect(),
                loglog_slope: fmt_f(f.fit.loglog_slope),
                intercept: fmt_f(f.fit.intercept),
                r2: fmt_f(f.fit.r2),
            })
            .collect(),
        log_inverse_delta_fits: s.delta_fits.iter().map(|(k, f)| (*k, f.into())).collect(),
        cells: s
            .cells
            .iter()
            .map(|c| CellJson {
                cell: c.index,
                horizon: c.horizon,
                n: c.n,
                master_seed: c.master_seed,
                config_hash: c.config_hash.clone(),
                summary: tail_json(s.metric.name(), c.runs, c.failed, &c.tail),
            })
            .collect(),
    };
    write_json(&dir.join("fits.json"), &json)?;
    let p = dir.join("report.txt");
    std::fs::write(&p, report_text(s)).map_err(crate::error::io_err(&p))
}
