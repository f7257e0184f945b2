use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsgd_lab::config::{load_config, ExperimentConfig};
use dsgd_lab::dump::dump_instance;
use dsgd_lab::ensemble::run_ensemble;
use dsgd_lab::instance::Instance;
use dsgd_lab::output::{report_text, write_ensemble, write_json, Staging};
use dsgd_lab::pool::PoolExecutor;
use dsgd_lab::suites::{config_trajectory_suite, deterministic_suite, mgf_suite, noise_suite, summary_table, ReportJson, SuiteOptions};
use dsgd_lab::sweep::{self, run_sweep, write_sweep};
use dsgd_lab::{LabError, Result};

#[derive(Parser)]
#[command(name = "dsgd", version, about = "Decentralized SGD experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the ensemble grid described by the `[sweep]` table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the lemma suites; exits nonzero on any violation.
    Validate {
        /// Also check the pointwise lemmas along this configuration's runs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Runs per Monte-Carlo MGF check.
        #[arg(long, default_value_t = 10_000)]
        mc_samples: u64,
        /// Seeded trajectories per objective family.
        #[arg(long, default_value_t = 50)]
        trajectories: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the noise calibration and MGF suite; exits nonzero on failure.
    NoiseCheck {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write the mixing matrix, objective data and constants of a config.
    DumpInstance {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path, common: &Common) -> Result<ExperimentConfig> {
    Ok(load_config(path)?.with_seed(common.seed))
}

fn out_dir(cfg: Option<&ExperimentConfig>, common: &Common) -> PathBuf {
    common.out.clone().or_else(|| cfg.and_then(|c| c.output.clone())).unwrap_or_else(|| PathBuf::from("out"))
}

fn simulate(config: &Path, common: &Common) -> Result<ExitCode> {
    let cfg = load(config, common)?;
    let exec = PoolExecutor::new(common.workers)?;
    let res = run_ensemble(&cfg, &exec)?;
    let dest = out_dir(Some(&cfg), common);
    let staging = Staging::new(&dest, &res.config_hash[..12])?;
    write_ensemble(staging.path(), &res)?;
    let dest = staging.commit()?;
    print!("{}", report_text(&res));
    eprintln!("wrote {}", dest.display());
    Ok(ExitCode::SUCCESS)
}

fn run_sweep_cmd(config: &Path, common: &Common) -> Result<ExitCode> {
    let cfg = load(config, common)?;
    let exec = PoolExecutor::new(common.workers)?;
    let dest = out_dir(Some(&cfg), common);
    let hash = cfg.hash();
    let staging = Staging::new(&dest, &hash[..12])?;
    let cells_dir = staging.path().join("cells");
    std::fs::create_dir_all(&cells_dir).map_err(|source| LabError::Io { path: cells_dir.clone(), source })?;
    let result = run_sweep(&cfg, &exec, |k, res| {
        let dir = cells_dir.join(format!("cell_{k:03}_T{}_n{}", res.config.horizon, res.config.topology.n));
        std::fs::create_dir_all(&dir).map_err(|source| LabError::Io { path: dir.clone(), source })?;
        eprintln!("cell {k}: T = {} n = {} done", res.config.horizon, res.config.topology.n);
        write_ensemble(&dir, res)
    })?;
    write_sweep(staging.path(), &result)?;
    let dest = staging.commit()?;
    print!("{}", sweep::report_text(&result));
    eprintln!("wrote {}", dest.display());
    Ok(ExitCode::SUCCESS)
}

fn finish_suite(name: &str, reports: &[dsgd_core::validation::CheckReport], common: &Common) -> Result<ExitCode> {
    let table = summary_table(reports);
    print!("{table}");
    if let Some(dest) = &common.out {
        let staging = Staging::new(dest, name)?;
        let json: Vec<ReportJson> = reports.iter().map(Into::into).collect();
        write_json(&staging.path().join(format!("{name}.json")), &json)?;
        let p = staging.path().join("report.txt");
        std::fs::write(&p, &table).map_err(|source| LabError::Io { path: p.clone(), source })?;
        staging.commit()?;
    }
    Ok(if reports.iter().all(|r| r.passed()) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn validate(config: Option<&Path>, mc_samples: u64, trajectories: u64, common: &Common) -> Result<ExitCode> {
    let opts = SuiteOptions { trajectories, mc_samples, seed: common.seed.unwrap_or(1), ..SuiteOptions::default() };
    let exec = PoolExecutor::new(common.workers)?;
    let mut reports = deterministic_suite(&opts)?;
    reports.extend(mgf_suite(&opts, &exec)?);
    if let Some(path) = config {
        let cfg = load(path, common)?;
        let inst = Instance::build(&cfg)?;
        reports.extend(config_trajectory_suite(&inst, cfg.runs.min(100), cfg.master_seed)?);
    }
    finish_suite("validate", &reports, common)
}

fn noise_check(samples: usize, common: &Common) -> Result<ExitCode> {
    let reports = noise_suite(samples, common.seed.unwrap_or(1))?;
    finish_suite("noise_check", &reports, common)
}

fn dump(config: &Path, common: &Common) -> Result<ExitCode> {
    let cfg = load(config, common)?;
    let inst = Instance::build(&cfg)?;
    let dest = out_dir(Some(&cfg), common);
    let staging = Staging::new(&dest, &cfg.hash()[..12])?;
    dump_instance(staging.path(), &cfg, &inst)?;
    let dest = staging.commit()?;
    eprintln!("wrote {}", dest.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match &cli.command {
        Command::Simulate { config, common } => simulate(config, common),
        Command::Sweep { config, common } => run_sweep_cmd(config, common),
        Command::Validate { config, mc_samples, trajectories, common } => validate(config.as_deref(), *mc_samples, *trajectories, common),
        Command::NoiseCheck { samples, common } => noise_check(*samples, common),
        Command::DumpInstance { config, common } => dump(config, common),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
