use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::train::{metrics_csv, TrainOutcome};
use crate::model::save_checkpoint;

/// `<out>/<config hash>`.
pub fn run_dir(out: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    Ok(out.join(cfg.hash()?))
}

/// Writes `config.toml`, `metrics.csv` and `model.sgt` (+ manifest) into the
/// run directory and returns its path.
pub fn write_run(out: &Path, cfg: &ExperimentConfig, outcome: &TrainOutcome) -> Result<PathBuf> {
    let dir = run_dir(out, cfg)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let p = dir.join("config.toml");
    fs::write(&p, cfg.to_toml()?).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("metrics.csv");
    fs::write(&p, metrics_csv(&outcome.history)).map_err(|e| Error::io(&p, e))?;
    save_checkpoint(&outcome.model, dir.join("model.sgt"))?;
    Ok(dir)
}
