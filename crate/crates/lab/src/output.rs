//! Artifact writers. Floats carry 17 significant digits; every file records
//! the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use dsgd_core::analysis::{LinearFit, QuantileEstimate, TailEstimate};

use crate::ensemble::EnsembleResult;
use crate::error::{io_err, Result};
use crate::instance::{DerivedSchedule, Instance};

pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

/// A scratch directory next to the destination. Files land in the
/// destination only on [`Staging::commit`]; dropping it uncommitted deletes
/// everything written so far.
pub struct Staging {
    dir: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path, tag: &str) -> Result<Self> {
        let name = dest.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let dir = parent.join(format!(".{name}.staging-{tag}"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir, dest: dest.to_path_buf(), committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Moves every staged entry into the destination, replacing same-named
    /// files.
    pub fn commit(mut self) -> Result<PathBuf> {
        fs::create_dir_all(&self.dest).map_err(io_err(&self.dest))?;
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let entry = entry.map_err(io_err(&self.dir))?;
            let target = self.dest.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(io_err(&target))?;
            }
            fs::rename(entry.path(), &target).map_err(io_err(&target))?;
        }
        fs::remove_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        self.committed = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

pub fn write_runs_csv(path: &Path, res: &EnsembleResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run".to_string(), "status".into()];
    header.extend(res.metrics().iter().map(|m| m.name().to_string()));
    header.push("config_hash".into());
    w.write_record(&header)?;
    for o in &res.outcomes {
        let mut row = vec![o.index.to_string()];
        match &o.values {
            Some(v) => {
                row.push("ok".into());
                row.extend(v.iter().map(|x| fmt_f(*x)));
            }
            None => {
                row.push(format!("diverged@{}", o.diverged_at.unwrap_or(0)));
                row.extend(res.metrics().iter().map(|_| String::new()));
            }
        }
        row.push(res.config_hash.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, res: &EnsembleResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "t", "consensus_gap", "global_value", "optimality_gap", "grad_norm_sq_sum", "distance", "config_hash"])?;
    for o in &res.outcomes {
        for r in o.trace.iter().flatten() {
            w.write_record([
                o.index.to_string(),
                r.t.to_string(),
                fmt_f(r.consensus_gap),
                fmt_f(r.global_value),
                fmt_opt(r.optimality_gap),
                fmt_f(r.grad_norm_sq_sum),
                fmt_opt(r.distance),
                res.config_hash.clone(),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_tails_csv(path: &Path, res: &EnsembleResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "delta", "quantile", "se", "config_hash"])?;
    for (e, t) in res.ensembles.iter().zip(&res.tails) {
        for q in &t.quantiles {
            w.write_record([e.metric.clone(), fmt_f(q.delta), fmt_f(q.value), fmt_f(q.se), res.config_hash.clone()])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FitJson {
    pub slope: String,
    pub intercept: String,
    pub r2: String,
}

impl From<&LinearFit> for FitJson {
    fn from(f: &LinearFit) -> Self {
        Self { slope: fmt_f(f.slope), intercept: fmt_f(f.intercept), r2: fmt_f(f.r2) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileJson {
    pub delta: String,
    pub quantile: String,
    pub se: String,
}

impl From<&QuantileEstimate> for QuantileJson {
    fn from(q: &QuantileEstimate) -> Self {
        Self { delta: fmt_f(q.delta), quantile: fmt_f(q.value), se: fmt_f(q.se) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailJson {
    pub metric: String,
    pub runs: usize,
    pub failed: usize,
    pub quantiles: Vec<QuantileJson>,
    /// Quantile against `log(1/δ)`.
    pub log_inverse_delta_fit: Option<FitJson>,
    pub tail: Vec<(String, String, String)>,
}

pub fn tail_json(metric: &str, runs: usize, failed: usize, t: &TailEstimate) -> TailJson {
    TailJson {
        metric: metric.into(),
        runs,
        failed,
        quantiles: t.quantiles.iter().map(Into::into).collect(),
        log_inverse_delta_fit: t.fit.as_ref().map(Into::into),
        tail: t.tail.iter().map(|p| (fmt_f(p.epsilon), fmt_f(p.prob), fmt_f(p.se))).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct EnsembleFits {
    config_hash: String,
    master_seed: u64,
    step_sizes: ScheduleJson,
    metrics: Vec<TailJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleJson {
    pub schedule: String,
    pub lambda: String,
    pub details: Vec<(String, String)>,
}

pub fn schedule_json(res: &EnsembleResult) -> ScheduleJson {
    schedule_json_for(&res.instance)
}

pub fn schedule_json_for(inst: &Instance) -> ScheduleJson {
    let mut details = Vec::new();
    match &inst.derived {
        DerivedSchedule::Explicit | DerivedSchedule::Theorem1UnknownHorizon => {}
        DerivedSchedule::Theorem1(s) => {
            for (k, v) in [
                ("smoothness_term", s.smoothness_term),
                ("noise_term", s.noise_term),
                ("heterogeneity_term", s.heterogeneity_term),
                ("dimension_term", s.dimension_term),
                ("network_term_squared", s.network_term_squared),
                ("network_term_two_thirds", s.network_term_two_thirds),
                ("c", s.c),
                ("horizon_term", s.horizon_term),
                ("alpha", s.alpha),
            ] {
                details.push((k.to_string(), fmt_f(v)));
            }
        }
        DerivedSchedule::Theorem2(s) => {
            details.push(("a".into(), fmt_f(s.a)));
            details.push(("t0".into(), fmt_f(s.t0)));
            details.push(("t0_theory".into(), fmt_f(s.t0_theory)));
            details.push(("nu".into(), fmt_f(s.nu)));
            for (i, f) in s.t0_floors.iter().enumerate() {
                details.push((format!("t0_floor_{i}"), fmt_f(*f)));
            }
        }
    }
    ScheduleJson { schedule: format!("{:?}", inst.schedule), lambda: fmt_f(inst.mixing.lambda()), details }
}

pub fn report_text(res: &EnsembleResult) -> String {
    let mut s = String::new();
    let c = &res.config;
    s += &format!("config_hash {}\nmaster_seed {}\n", res.config_hash, c.master_seed);
    s += &format!(
        "users {}  dim {}  horizon {}  runs {}  failed {}\n",
        res.instance.objective.n(),
        res.instance.objective.dim(),
        c.horizon,
        c.runs,
        res.failed()
    );
    s += &format!("lambda {}\nschedule {:?}\n", fmt_f(res.instance.mixing.lambda()), res.instance.schedule);
    for (e, t) in res.ensembles.iter().zip(&res.tails) {
        s += &format!("\n{}\n  {:>8}  {:>24}  {:>24}\n", e.metric, "delta", "quantile", "se");
        for q in &t.quantiles {
            s += &format!("  {:>8}  {:>24}  {:>24}\n", q.delta, fmt_f(q.value), fmt_f(q.se));
        }
        if let Some(f) = &t.fit {
            s += &format!("  log(1/delta) fit: slope {} r2 {}\n", fmt_f(f.slope), fmt_f(f.r2));
        }
    }
    s
}

/// Writes `runs.csv`, `tails.csv`, `fits.json`, `report.txt` and, when any
/// run was traced, `trace.csv` into `dir`.
pub fn write_ensemble(dir: &Path, res: &EnsembleResult) -> Result<()> {
    write_runs_csv(&dir.join("runs.csv"), res)?;
    if res.outcomes.iter().any(|o| o.trace.is_some()) {
        write_trace_csv(&dir.join("trace.csv"), res)?;
    }
    write_tails_csv(&dir.join("tails.csv"), res)?;
    let fits = EnsembleFits {
        config_hash: res.config_hash.clone(),
        master_seed: res.config.master_seed,
        step_sizes: schedule_json(res),
        metrics: res
            .ensembles
            .iter()
            .zip(&res.tails)
            .map(|(e, t)| tail_json(&e.metric, e.run_count(), e.failed, t))
            .collect(),
    };
    write_json(&dir.join("fits.json"), &fits)?;
    let p = dir.join("report.txt");
    fs::write(&p, report_text(res)).map_err(io_err(&p))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fmt_f(-2.5), "-2.5000000000000000e0");
    }

    #[test]
    fn uncommitted_staging_is_removed() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("out");
        let staged;
        {
            let s = Staging::new(&dest, "x").unwrap();
            fs::write(s.path().join("a.txt"), "1").unwrap();
            staged = s.path().to_path_buf();
        }
        assert!(!staged.exists() && !dest.exists());
        let s = Staging::new(&dest, "x").unwrap();
        fs::write(s.path().join("a.txt"), "2").unwrap();
        let out = s.commit().unwrap();
        assert_eq!(fs::read_to_string(out.join("a.txt")).unwrap(), "2");
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }
}
