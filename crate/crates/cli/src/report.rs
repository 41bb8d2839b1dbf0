//! Experiment reports and per-tick telemetry.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;

/// One telemetry record per controller tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub qp_iters: usize,
    pub qp_status: String,
    pub solve_ms: f64,
    pub sqp_residual: f64,
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStats {
    pub run_index: usize,
    pub seed: u64,
    pub crashed: bool,
    /// Present when the run ended in a controller fault or divergence.
    pub failure: Option<String>,
    pub ticks: usize,
    /// Mean squared position error over completed ticks [m^2].
    pub mse: f64,
    pub axis_mse: [f64; 3],
    /// Mean mass-specific thrust over completed ticks [m/s^2].
    pub mean_thrust_norm: f64,
    pub solve_ms_median: f64,
    pub solve_ms_p99: f64,
}

/// Aggregated tracking experiment. Crashed runs are counted but excluded
/// from the averaged errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub controller: String,
    pub altitude: f64,
    pub repeats: usize,
    pub runs: Vec<RunStats>,
    pub crashes: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_axis_mse: [f64; 3],
    pub mean_thrust_norm: f64,
    /// SHA-256 of the model file, when a learned model was used.
    pub model_checksum: Option<String>,
    /// The fully resolved configuration the experiment ran with.
    pub config: AppConfig,
}

impl ExperimentReport {
    pub fn aggregate(
        controller: &str,
        altitude: f64,
        runs: Vec<RunStats>,
        model_checksum: Option<String>,
        config: &AppConfig,
    ) -> Self {
        let completed: Vec<&RunStats> = runs.iter().filter(|r| !r.crashed).collect();
        let crashes = runs.len() - completed.len();
        let mean = |f: &dyn Fn(&RunStats) -> f64| -> f64 {
            if completed.is_empty() {
                f64::NAN
            } else {
                completed.iter().map(|r| f(r)).sum::<f64>() / completed.len() as f64
            }
        };
        let mean_mse = mean(&|r| r.mse);
        let std_mse = if completed.len() > 1 {
            let var = completed
                .iter()
                .map(|r| (r.mse - mean_mse).powi(2))
                .sum::<f64>()
                / (completed.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        Self {
            controller: controller.to_string(),
            altitude,
            repeats: runs.len(),
            crashes,
            mean_mse,
            std_mse,
            mean_axis_mse: [
                mean(&|r| r.axis_mse[0]),
                mean(&|r| r.axis_mse[1]),
                mean(&|r| r.axis_mse[2]),
            ],
            mean_thrust_norm: mean(&|r| r.mean_thrust_norm),
            model_checksum,
            config: config.clone(),
            runs,
        }
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

pub fn write_telemetry(records: &[TelemetryRecord], path: &Path) -> anyhow::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_telemetry(path: &Path) -> anyhow::Result<Vec<TelemetryRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| anyhow::anyhow!("telemetry line {}: {e}", i + 1))?,
        );
    }
    Ok(out)
}

/// Plot-ready sweep summary, one row per (controller, altitude).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub controller: String,
    pub altitude: f64,
    pub repeats: usize,
    pub crashes: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_z_mse: f64,
    pub mean_thrust_norm: f64,
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> anyhow::Result<()> {
    let mut out = String::from(
        "controller,altitude,repeats,crashes,mean_mse,std_mse,mean_z_mse,mean_thrust_norm\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.controller,
            r.altitude,
            r.repeats,
            r.crashes,
            r.mean_mse,
            r.std_mse,
            r.mean_z_mse,
            r.mean_thrust_norm
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
