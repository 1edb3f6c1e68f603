//! `ductnav`: generate ducts, train policies, evaluate checkpoints and
//! export trajectories.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical fault.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ductnav_core::algo::Algorithm;
use ductnav_core::checkpoint::{Checkpoint, CheckpointError};
use ductnav_core::config::{ConfigError, RunConfig};
use ductnav_core::env::EnvError;
use ductnav_core::eval::{episodes_csv, evaluate, run_episode, EvalError, EvalReport, EvalRow, LoadedPolicy};
use ductnav_core::geom::{generate_duct, DuctParams, GeomError};
use ductnav_core::run::{train_run, RunError};

#[derive(Debug, Parser)]
#[command(name = "ductnav", version, about = "Quadrotor duct-navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a duct course as JSON, optionally with an OBJ tube mesh.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Duct seed; defaults to `duct.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write `duct_<seed>.obj`.
        #[arg(long)]
        obj: bool,
    },
    /// Train a policy into a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; overrides `run.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score checkpoints with the deterministic policy.
    Eval {
        /// One report row per checkpoint.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Reject checkpoints not trained under this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// First evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.txt, report.csv and per-episode CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one trajectory CSV per episode (needs --out).
        #[arg(long, requires = "out")]
        trajectories: bool,
    },
    /// Fly one episode and write its trajectory CSV.
    ExportTraj {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode seed; defaults to `eval.seed_start` of the checkpoint's config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV file, or a directory to hold `traj_<seed>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn generate(config: Option<&Path>, seed: Option<u64>, out: &Path, obj: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let params = DuctParams { seed: seed.unwrap_or(cfg.duct.seed), ..cfg.duct };
    let duct = generate_duct(&params)?;
    create_dir(out)?;
    let json = out.join(format!("duct_{}.json", params.seed));
    write(&json, &duct.to_json())?;
    println!("{}", json.display());
    if obj {
        let mesh = out.join(format!("duct_{}.obj", params.seed));
        write(&mesh, &duct.to_obj(32))?;
        println!("{}", mesh.display());
    }
    Ok(())
}

fn train(
    config: Option<&Path>,
    algo: Option<Algorithm>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(a) = algo {
        cfg.run.algo = a;
    }
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(o) = out {
        cfg.run.out_dir = o;
    }
    cfg.validate()?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let summary = train_run(&cfg, resume, |s| {
        log::info!(
            "iter {} steps {} reward {} ep_len {} lr {:.3e}",
            s.iteration,
            s.env_steps,
            s.mean_reward,
            s.mean_ep_len,
            s.lr
        );
    })?;
    println!(
        "{}: {} iterations, {} env steps, last checkpoint {}",
        summary.out_dir.display(),
        summary.iterations,
        summary.env_steps,
        summary.last_checkpoint.display()
    );
    Ok(())
}

fn load_policy(path: &Path, expected: Option<&RunConfig>) -> Result<LoadedPolicy> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    LoadedPolicy::from_checkpoint(&ckpt, expected).with_context(|| format!("loading {}", path.display()))
}

fn label_for(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn eval(
    checkpoints: &[PathBuf],
    config: Option<&Path>,
    episodes: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
    trajectories: bool,
) -> Result<()> {
    let expected = config.map(|p| load_config(Some(p))).transpose()?;
    let policies = checkpoints.iter().map(|p| load_policy(p, expected.as_ref())).collect::<Result<Vec<_>>>()?;
    let mut settings = policies[0].config.eval.clone();
    if let Some(n) = episodes {
        settings.episodes = n;
    }
    if let Some(s) = seed {
        settings.seed_start = s;
    }
    if settings.episodes == 0 {
        return Err(ConfigError::Invalid("eval.episodes must be positive".into()).into());
    }
    let seeds = settings.seeds();
    if let Some(dir) = out {
        create_dir(dir)?;
    }

    let mut report = EvalReport::default();
    for (path, loaded) in checkpoints.iter().zip(&policies) {
        let label = label_for(path);
        let env = Arc::new(loaded.config.env_config());
        let records = evaluate(&env, &loaded.policy, &seeds, trajectories)?;
        if let Some(dir) = out {
            write(&dir.join(format!("episodes_{label}.csv")), &episodes_csv(&records))?;
            for r in records.iter().filter(|r| r.trajectory.is_some()) {
                let csv = r.trajectory.as_ref().map(|t| t.to_csv_string()).unwrap_or_default();
                write(&dir.join(format!("traj_{label}_{}.csv", r.seed)), &csv)?;
            }
        }
        report.rows.push(EvalRow::from_records(&label, &records));
    }

    let table = report.to_table();
    print!("{table}");
    if let Some(dir) = out {
        write(&dir.join("report.txt"), &table)?;
        write(&dir.join("report.csv"), &report.to_csv())?;
    }
    Ok(())
}

fn export_traj(checkpoint: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let loaded = load_policy(checkpoint, None)?;
    let seed = seed.unwrap_or(loaded.config.eval.seed_start);
    let env = Arc::new(loaded.config.env_config());
    let record = run_episode(&env, &loaded.policy, seed, true)?;
    let path = if out.is_dir() { out.join(format!("traj_{seed}.csv")) } else { out.to_path_buf() };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let Some(traj) = record.trajectory else { bail!("episode recorded no trajectory") };
    write(&path, &traj.to_csv_string())?;
    println!("{}: {} steps, {} / {} waypoints", path.display(), record.steps, record.waypoints, record.n_waypoints);
    Ok(())
}

const CONFIG: u8 = 2;
const IO: u8 = 3;
const NUMERIC: u8 = 4;

fn checkpoint_code(e: &CheckpointError) -> u8 {
    match e {
        CheckpointError::Mismatch(_) => CONFIG,
        _ => IO,
    }
}

fn config_code(e: &ConfigError) -> u8 {
    match e {
        ConfigError::Io { .. } => IO,
        ConfigError::Parse(_) | ConfigError::Invalid(_) => CONFIG,
    }
}

fn env_code(e: &EnvError) -> u8 {
    match e {
        EnvError::Geom(_) | EnvError::Config(_) => CONFIG,
        EnvError::EpisodeOver | EnvError::Shape { .. } => 1,
    }
}

/// Maps an error to the documented exit code by its first recognized cause.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return match e {
                RunError::Config(c) => config_code(c),
                RunError::Io { .. } | RunError::Locked(_) | RunError::Exists(_) => IO,
                RunError::Checkpoint(c) => checkpoint_code(c),
                RunError::Train(t) => match t {
                    ductnav_core::algo::TrainError::Env(e) => env_code(e),
                    ductnav_core::algo::TrainError::Checkpoint(c) => checkpoint_code(c),
                },
                RunError::NumericalFault { .. } => NUMERIC,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Env(e) => env_code(e),
                EvalError::Checkpoint(c) => checkpoint_code(c),
                EvalError::Config(c) => config_code(c),
            };
        }
        if let Some(c) = cause.downcast_ref::<CheckpointError>() {
            return checkpoint_code(c);
        }
        if let Some(e) = cause.downcast_ref::<EnvError>() {
            return env_code(e);
        }
        if let Some(c) = cause.downcast_ref::<ConfigError>() {
            return config_code(c);
        }
        if cause.is::<GeomError>() {
            return CONFIG;
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, seed, out, obj } => generate(config.as_deref(), seed, &out, obj),
        Command::Train { config, algo, seed, out, checkpoint } => {
            train(config.as_deref(), algo, seed, out, checkpoint.as_deref())
        }
        Command::Eval { checkpoint, config, episodes, seed, out, trajectories } => {
            eval(&checkpoint, config.as_deref(), episodes, seed, out.as_deref(), trajectories)
        }
        Command::ExportTraj { checkpoint, seed, out } => export_traj(&checkpoint, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
