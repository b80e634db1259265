//! Run records: the JSON-lines trajectory, a summary, and the config
//! snapshot written next to each other in the run directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::StepRecord;

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub pipeline: String,
    pub master_seed: u64,
    pub best_loss: f64,
    pub final_loss: f64,
    pub final_beta: Vec<f64>,
    pub generator_calls: u64,
    pub sgd_steps: u64,
    pub wall_ms_total: u64,
    pub version: String,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub trajectory: Vec<StepRecord>,
    pub config_snapshot: String,
}

impl RunRecord {
    pub fn new(
        method: &str,
        pipeline: &str,
        master_seed: u64,
        final_beta: Vec<f64>,
        trajectory: Vec<StepRecord>,
        config_snapshot: String,
    ) -> Self {
        let best_loss = trajectory.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        let last = trajectory.last();
        let summary = RunSummary {
            method: method.to_string(),
            pipeline: pipeline.to_string(),
            master_seed,
            best_loss,
            final_loss: last.map(|r| r.loss).unwrap_or(f64::INFINITY),
            final_beta,
            generator_calls: last.map(|r| r.generator_calls).unwrap_or(0),
            sgd_steps: last.map(|r| r.sgd_steps).unwrap_or(0),
            wall_ms_total: trajectory.iter().map(|r| r.wall_ms).sum(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        RunRecord {
            summary,
            trajectory,
            config_snapshot,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut traj = fs::File::create(dir.join(TRAJECTORY_FILE))?;
        for record in &self.trajectory {
            serde_json::to_writer(&mut traj, record)?;
            traj.write_all(b"\n")?;
        }
        traj.flush()?;
        let summary = fs::File::create(dir.join(SUMMARY_FILE))?;
        serde_json::to_writer_pretty(summary, &self.summary)?;
        fs::write(dir.join(CONFIG_FILE), &self.config_snapshot)?;
        Ok(())
    }

    /// Load a record and audit that the summary is derivable from the
    /// trajectory.
    pub fn load(dir: &Path) -> Result<Self> {
        let traj_path = dir.join(TRAJECTORY_FILE);
        let reader = BufReader::new(fs::File::open(&traj_path).map_err(|e| {
            Error::Record(format!("cannot open {}: {e}", traj_path.display()))
        })?);
        let mut trajectory = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Record(format!("{}:{}: {e}", traj_path.display(), lineno + 1))
            })?;
            trajectory.push(record);
        }
        let summary: RunSummary =
            serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?;
        let config_snapshot = fs::read_to_string(dir.join(CONFIG_FILE)).unwrap_or_default();

        let best = trajectory.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        if (best - summary.best_loss).abs() > 1e-12 {
            return Err(Error::Record(format!(
                "summary best_loss {} does not match trajectory minimum {best}",
                summary.best_loss
            )));
        }
        if let Some(last) = trajectory.last() {
            if last.generator_calls != summary.generator_calls {
                return Err(Error::Record(
                    "summary generator_calls does not match trajectory".into(),
                ));
            }
        }
        Ok(RunRecord {
            summary,
            trajectory,
            config_snapshot,
        })
    }

    /// The trajectory serialized with wall-clock fields zeroed: the
    /// byte-comparable portion of a run (wall_ms is machine noise).
    pub fn fingerprint(&self) -> String {
        let mut out = String::new();
        for r in &self.trajectory {
            let mut clone = r.clone();
            clone.wall_ms = 0;
            out.push_str(&serde_json::to_string(&clone).expect("serializes"));
            out.push('\n');
        }
        out
    }
}

/// The default output directory: the env var when set, else ./runs.
pub fn default_out_dir() -> PathBuf {
    match std::env::var_os("HYBRID_GRADIENT_OUT") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from("runs"),
    }
}
