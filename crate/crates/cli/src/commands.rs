//! Subcommand implementations shared by the binary and the test suites.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use koopman_core::dataset;
use koopman_core::model::{self, KoopmanModel};
use koopman_core::trainer::{self, evaluate_openloop};

use crate::config::AppConfig;
use crate::experiment::{run_repeats, ControllerChoice};
use crate::report::{write_sweep_csv, write_telemetry, ExperimentReport, SweepRow};

fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// `collect`: fly the randomized waypoint protocol and write the dataset.
pub fn cmd_collect(
    config: &AppConfig,
    seed_override: Option<u64>,
    out: &Path,
) -> anyhow::Result<usize> {
    let mut collect_cfg = config.collect.clone();
    if let Some(seed) = seed_override {
        collect_cfg.seed = seed;
    }
    let set = dataset::collect(&collect_cfg, &config.vehicle)?;
    dataset::save(&set, out)?;
    Ok(set.num_samples())
}

pub struct TrainOutcome {
    pub report: trainer::TrainReport,
    pub model_path: PathBuf,
    pub curves_path: PathBuf,
}

/// `train`: split, fit normalization on the training split, train, save the
/// model and the loss curves CSV.
pub fn cmd_train(
    config: &AppConfig,
    dataset_path: &Path,
    seed_override: Option<u64>,
    out_model: &Path,
    out_curves: Option<&Path>,
) -> anyhow::Result<TrainOutcome> {
    let mut train_cfg = config.train.clone();
    if let Some(seed) = seed_override {
        train_cfg.seed = seed;
    }
    let set = dataset::load(dataset_path)?;
    let (mut train_set, mut val_set, _test) = set.split(0.3)?;
    let norm = dataset::fit_normalization(&train_set)?;
    train_set.normalization = Some(norm.clone());
    val_set.normalization = Some(norm.clone());

    let (net, report) = trainer::train(&train_set, &val_set, &train_cfg)?;
    let model = KoopmanModel::new(net, norm, set.dt)?;
    model::save(&model, out_model)?;

    let curves_path = match out_curves {
        Some(p) => p.to_path_buf(),
        None => out_model.with_extension("curves.csv"),
    };
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for (epoch, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        csv.push_str(&format!("{epoch},{t},{v}\n"));
    }
    std::fs::write(&curves_path, csv)?;

    Ok(TrainOutcome {
        report,
        model_path: out_model.to_path_buf(),
        curves_path,
    })
}

/// `eval`: open-loop position prediction MSE per step, written as CSV.
pub fn cmd_eval(
    model_path: &Path,
    dataset_path: &Path,
    horizon: usize,
    out: &Path,
) -> anyhow::Result<trainer::OpenLoopReport> {
    let model = model::load(model_path)?;
    let mut set = dataset::load(dataset_path)?;
    // Predictions must use the model's own preprocessing.
    set.normalization = Some(model.normalization.clone());
    let report = evaluate_openloop(&model.net, &set, horizon, &[0, 1, 2])?;
    let mut csv = String::from("step,position_mse\n");
    for (i, mse) in report.per_step_mse.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, mse));
    }
    std::fs::write(out, csv)?;
    Ok(report)
}

/// `track`: repeated closed-loop figure-eight runs with one controller.
pub fn cmd_track(
    config: &AppConfig,
    controller: &str,
    model_path: Option<&Path>,
    altitude: f64,
    repeats: usize,
    seed: u64,
    out_report: &Path,
    telemetry_dir: Option<&Path>,
) -> anyhow::Result<ExperimentReport> {
    let (choice, checksum) = resolve_controller(controller, model_path)?;
    let outcomes = run_repeats(config, &choice, altitude, repeats, seed)?;

    if let Some(dir) = telemetry_dir {
        std::fs::create_dir_all(dir)?;
        for o in &outcomes {
            let path = dir.join(format!("run_{:02}.jsonl", o.stats.run_index));
            write_telemetry(&o.telemetry, &path)?;
        }
    }
    let runs = outcomes.into_iter().map(|o| o.stats).collect();
    let report = ExperimentReport::aggregate(choice.name(), altitude, runs, checksum, config);
    report.save(out_report)?;
    Ok(report)
}

/// `sweep`: both controllers across an altitude list, summarized as a
/// plot-ready CSV plus a JSON report collection.
pub fn cmd_sweep(
    config: &AppConfig,
    model_path: &Path,
    altitudes: &[f64],
    repeats: usize,
    seed: u64,
    out_csv: &Path,
    out_reports: Option<&Path>,
) -> anyhow::Result<Vec<SweepRow>> {
    if altitudes.is_empty() {
        anyhow::bail!("altitude list is empty");
    }
    let model = model::load(model_path)?;
    let checksum = Some(file_sha256(model_path)?);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &altitude in altitudes {
        for choice in [
            ControllerChoice::Koopman(model.clone()),
            ControllerChoice::Nominal,
        ] {
            let outcomes = run_repeats(config, &choice, altitude, repeats, seed)?;
            let runs: Vec<_> = outcomes.into_iter().map(|o| o.stats).collect();
            let report = ExperimentReport::aggregate(
                choice.name(),
                altitude,
                runs,
                checksum.clone(),
                config,
            );
            rows.push(SweepRow {
                controller: report.controller.clone(),
                altitude,
                repeats: report.repeats,
                crashes: report.crashes,
                mean_mse: report.mean_mse,
                std_mse: report.std_mse,
                mean_z_mse: report.mean_axis_mse[2],
                mean_thrust_norm: report.mean_thrust_norm,
            });
            reports.push(report);
        }
    }
    write_sweep_csv(&rows, out_csv)?;
    if let Some(path) = out_reports {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &reports)?;
    }
    Ok(rows)
}

pub fn resolve_controller(
    controller: &str,
    model_path: Option<&Path>,
) -> anyhow::Result<(ControllerChoice, Option<String>)> {
    match controller {
        "nominal" => Ok((ControllerChoice::Nominal, None)),
        "koopman" => {
            let path = model_path
                .ok_or_else(|| anyhow::anyhow!("--model is required for the koopman controller"))?;
            let model = model::load(path)?;
            Ok((ControllerChoice::Koopman(model), Some(file_sha256(path)?)))
        }
        other => anyhow::bail!("unknown controller {other:?} (expected koopman or nominal)"),
    }
}
