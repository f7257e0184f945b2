//! CSV and JSON dumps of a configured instance.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{io_err, Result};
use crate::instance::Instance;
use crate::output::{fmt_f, schedule_json_for, write_json, ScheduleJson};

#[derive(Serialize)]
struct ConstantsJson {
    config_hash: String,
    n: usize,
    dim: usize,
    lambda: String,
    smoothness: String,
    strong_convexity: Option<String>,
    condition_number: Option<String>,
    optimum: Option<String>,
    minimizer: Option<Vec<String>>,
    heterogeneity_a: Option<String>,
    heterogeneity_b: Option<String>,
    grad_at_optimum_sq: Option<String>,
    sigma2_avg: String,
    sigma_max: String,
    step_sizes: ScheduleJson,
}

/// Writes `mixing.csv` (the `n x n` weights), `objective.csv` (one row per
/// user: the Hessian row-major then the center for quadratics, the tilt for
/// the nonconvex family) and `constants.json`.
pub fn dump_instance(dir: &Path, cfg: &ExperimentConfig, inst: &Instance) -> Result<()> {
    let hash = cfg.hash();
    let w = inst.mixing.weights();
    let n = inst.mixing.n();
    let path = dir.join("mixing.csv");
    let mut out = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
    for i in 0..n {
        out.write_record((0..n).map(|j| fmt_f(w[(i, j)])))?;
    }
    out.flush().map_err(io_err(&path))?;

    let obj = &inst.objective;
    let d = obj.dim();
    let path = dir.join("objective.csv");
    let mut out = csv::Writer::from_path(&path)?;
    if let Some(q) = obj.quadratic_spec() {
        let mut header = vec!["user".to_string()];
        header.extend((0..d * d).map(|k| format!("h_{}_{}", k / d, k % d)));
        header.extend((0..d).map(|k| format!("center_{k}")));
        header.push("config_hash".into());
        out.write_record(&header)?;
        for i in 0..obj.n() {
            let mut row = vec![i.to_string()];
            row.extend(q.hessians[i].iter().chain(&q.centers[i]).map(|x| fmt_f(*x)));
            row.push(hash.clone());
            out.write_record(&row)?;
        }
    } else if let Some(tilts) = obj.tilts() {
        let mut header = vec!["user".to_string()];
        header.extend((0..d).map(|k| format!("tilt_{k}")));
        header.push("config_hash".into());
        out.write_record(&header)?;
        for (i, h) in tilts.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(h.iter().map(|x| fmt_f(*x)));
            row.push(hash.clone());
            out.write_record(&row)?;
        }
    }
    out.flush().map_err(io_err(&path))?;

    let c = obj.constants();
    let consts = ConstantsJson {
        config_hash: hash,
        n: obj.n(),
        dim: d,
        lambda: fmt_f(inst.mixing.lambda()),
        smoothness: fmt_f(c.smoothness),
        strong_convexity: c.strong_convexity.map(fmt_f),
        condition_number: c.condition_number().map(fmt_f),
        optimum: c.optimum.map(fmt_f),
        minimizer: c.minimizer.as_ref().map(|x| x.iter().map(|v| fmt_f(*v)).collect()),
        heterogeneity_a: c.heterogeneity.map(|h| fmt_f(h.a)),
        heterogeneity_b: c.heterogeneity.map(|h| fmt_f(h.b)),
        grad_at_optimum_sq: c.grad_at_optimum_sq.map(fmt_f),
        sigma2_avg: fmt_f(inst.noise.sigma2_avg()),
        sigma_max: fmt_f(inst.noise.sigma_max()),
        step_sizes: schedule_json_for(inst),
    };
    write_json(&dir.join("constants.json"), &consts)
}
