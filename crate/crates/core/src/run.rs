//! Run directories: resolved config, stats log, periodic checkpoints and a
//! lockfile so only one process writes at a time.
//!
//! Layout of `run.out_dir`:
//!
//! ```text
//! config.toml                 resolved config
//! stats.csv                   one row per iteration
//! checkpoints/ckpt_NNNNNN.bin full training state after iteration NNNNNN
//! .lock                       held while a process writes here
//! ```

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::algo::{IterationStats, TrainError, Trainer, STATS_HEADER};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};

/// Consecutive non-finite updates tolerated before a run is abandoned.
pub const MAX_CONSECUTIVE_FAULTS: u32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} is locked by another process")]
    Locked(PathBuf),
    #[error("{0} already holds a run; resume from one of its checkpoints or pick another output directory")]
    Exists(PathBuf),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("training diverged: {count} consecutive non-finite updates ending at iteration {iteration}")]
    NumericalFault { iteration: u64, count: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub iterations: u64,
    pub env_steps: u64,
    pub last_checkpoint: PathBuf,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("ckpt_{iteration:06}.bin"))
}

pub fn stats_path(out_dir: &Path) -> PathBuf {
    out_dir.join("stats.csv")
}

/// Exclusive advisory lock on `<dir>/.lock`, released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(".lock");
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(RunError::Locked(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(RunError::Io { path, source: e }),
        }
    }
}

/// Iterations needed to collect at least `total_steps` transitions.
pub fn planned_iterations(total_steps: u64, steps_per_iteration: u64) -> u64 {
    total_steps.div_ceil(steps_per_iteration).max(1)
}

/// Keeps the header and every row up to and including `iteration`.
fn truncate_stats(text: &str, iteration: u64) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for line in text.lines().skip(1) {
        let it = line.split(',').next().and_then(|f| f.parse::<u64>().ok());
        if it.is_some_and(|it| it <= iteration) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Trains `config` into `config.run.out_dir`, optionally continuing from a
/// checkpoint. `on_iteration` sees every stats row as it is written.
pub fn train_run(
    config: &RunConfig,
    resume: Option<&Path>,
    mut on_iteration: impl FnMut(&IterationStats),
) -> Result<RunSummary, RunError> {
    config.validate()?;
    let dir = config.run.out_dir.clone();
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let _lock = RunLock::acquire(&dir)?;

    let hash = config.training_hash();
    let resolved = config.resolved().to_toml();
    let setup = config.trainer_setup();
    let stats_file = stats_path(&dir);

    let (mut trainer, stats_text) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config_hash != hash {
                return Err(CheckpointError::Mismatch(format!(
                    "{} was trained with a different config (hash {}, config hashes to {hash})",
                    path.display(),
                    ckpt.config_hash
                ))
                .into());
            }
            let trainer = Trainer::from_checkpoint(setup, &ckpt)?;
            let old = fs::read_to_string(&stats_file).unwrap_or_default();
            log::info!("resuming {} at iteration {}", dir.display(), ckpt.iteration);
            (trainer, truncate_stats(&old, ckpt.iteration))
        }
        None => {
            if stats_file.exists() {
                return Err(RunError::Exists(dir));
            }
            (Trainer::new(setup)?, format!("{STATS_HEADER}\n"))
        }
    };

    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, &resolved).map_err(io_err(&cfg_path))?;
    fs::write(&stats_file, stats_text).map_err(io_err(&stats_file))?;
    let mut stats = OpenOptions::new().append(true).open(&stats_file).map_err(io_err(&stats_file))?;

    let total = planned_iterations(config.run.total_steps, trainer.steps_per_iteration());
    let mut last_checkpoint = checkpoint_path(&dir, trainer.iteration());
    let mut faults = 0;
    while trainer.iteration() < total {
        let s = trainer.iterate()?;
        writeln!(stats, "{}", s.csv_line()).map_err(io_err(&stats_file))?;
        on_iteration(&s);
        if s.fault {
            faults += 1;
            log::warn!("iteration {}: non-finite update discarded", s.iteration);
            if faults >= MAX_CONSECUTIVE_FAULTS {
                return Err(RunError::NumericalFault { iteration: s.iteration, count: faults });
            }
        } else {
            faults = 0;
        }
        if s.iteration % config.run.checkpoint_every == 0 || s.iteration == total {
            last_checkpoint = checkpoint_path(&dir, s.iteration);
            trainer.to_checkpoint(&hash, &resolved).save(&last_checkpoint)?;
            log::info!("saved {}", last_checkpoint.display());
        }
    }
    stats.flush().map_err(io_err(&stats_file))?;
    Ok(RunSummary { out_dir: dir, iterations: trainer.iteration(), env_steps: trainer.env_steps(), last_checkpoint })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planned_iterations_round_up() {
        assert_eq!(planned_iterations(0, 100), 1);
        assert_eq!(planned_iterations(100, 100), 1);
        assert_eq!(planned_iterations(101, 100), 2);
    }

    #[test]
    fn truncation_keeps_header_and_prefix() {
        let text = format!("{STATS_HEADER}\n1,a\n2,b\n3,c\n");
        assert_eq!(truncate_stats(&text, 2), format!("{STATS_HEADER}\n1,a\n2,b\n"));
        assert_eq!(truncate_stats("", 5), format!("{STATS_HEADER}\n"));
    }

    #[test]
    fn second_lock_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(RunError::Locked(_))));
        drop(first);
        RunLock::acquire(dir.path()).unwrap();
    }
}
