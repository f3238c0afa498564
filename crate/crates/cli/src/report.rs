use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use feedback_lab_core::model::CyclicVectorField;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block carried by every report.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub model: Value,
    pub model_hash: String,
    pub convention: String,
    pub seed: u64,
    pub integrator: Value,
    pub thresholds: Value,
}

pub fn model_hash(field: &CyclicVectorField) -> String {
    let bytes = serde_json::to_vec(field.descriptor()).expect("descriptor serializes");
    hex::encode(Sha256::digest(bytes))
}

impl Stamp {
    pub fn new(cfg: &RunConfig, field: &CyclicVectorField) -> Self {
        Self {
            tool: "feedback-lab",
            tool_version: TOOL_VERSION,
            model: field.descriptor().clone(),
            model_hash: model_hash(field),
            convention: cfg.n_convention.name().to_string(),
            seed: cfg.rng_seed,
            integrator: serde_json::to_value(cfg.integrator).expect("serializable"),
            thresholds: serde_json::to_value(&cfg.analysis).expect("serializable"),
        }
    }
}

pub struct Reporter {
    out: PathBuf,
    stamp: Stamp,
}

impl Reporter {
    pub fn new(out: &Path, stamp: Stamp) -> Result<Self, CliError> {
        fs::create_dir_all(out)?;
        // an error file from an earlier run would misdescribe this one
        let stale = out.join("error.json");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
        Ok(Self { out: out.to_path_buf(), stamp })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    /// Writes `<out>/<command>.report.json`; contents depend only on the
    /// config, seed and inputs.
    pub fn write_report<T: Serialize>(&self, command: &str, result: &T) -> Result<PathBuf, CliError> {
        let doc = json!({ "command": command, "stamp": self.stamp, "result": result });
        let path = self.out.join(format!("{command}.report.json"));
        fs::write(&path, serde_json::to_string_pretty(&doc).expect("serializable") + "\n")?;
        Ok(path)
    }

    pub fn write_csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(e.into()))?;
        w.write_record(header).map_err(|e| CliError::Io(e.into()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Io(e.into()))?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn write_trajectory(
        &self,
        name: &str,
        traj: &feedback_lab_core::integrate::Trajectory,
    ) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        let file = fs::File::create(&path)?;
        traj.write_csv(file).map_err(|e| CliError::Io(e.into()))?;
        Ok(path)
    }

    /// Timing and host data live here so reports stay byte-identical.
    pub fn write_meta(&self, command: &str, started: SystemTime, exit_code: i32, extra: Value) -> Result<(), CliError> {
        let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let now = SystemTime::now();
        let meta = json!({
            "command": command,
            "started_unix": secs(started),
            "finished_unix": secs(now),
            "elapsed_seconds": now.duration_since(started).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            "exit_code": exit_code,
            "threads": rayon::current_num_threads(),
            "tool_version": TOOL_VERSION,
            "details": extra,
        });
        fs::write(self.out.join("meta.json"), serde_json::to_string_pretty(&meta).expect("serializable") + "\n")?;
        Ok(())
    }

    pub fn write_error(&self, err: &CliError) -> Result<(), CliError> {
        fs::write(
            self.out.join("error.json"),
            serde_json::to_string_pretty(&err.to_json()).expect("serializable") + "\n",
        )?;
        Ok(())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}
