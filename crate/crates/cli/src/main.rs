use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use koopman_cli::commands;
use koopman_cli::config::AppConfig;

/// Learned lifted bilinear dynamics and NMPC for a simulated quadrotor.
#[derive(Parser)]
#[command(name = "koopman", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; omitted fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the invoked stage.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fly randomized PID waypoints and write the learning dataset (JSONL).
    Collect {
        #[command(flatten)]
        common: Common,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the lifted bilinear model on a collected dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Input dataset (from `collect`).
        #[arg(long)]
        dataset: PathBuf,
        /// Output model path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Loss-curve CSV path (defaults next to the model).
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Open-loop prediction error of a model on a dataset.
    Eval {
        /// Trained model path.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Prediction horizon in steps.
        #[arg(long, default_value_t = 25)]
        horizon: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop figure-eight tracking with one controller.
    Track {
        #[command(flatten)]
        common: Common,
        /// Controller selection.
        #[arg(long, value_parser = ["koopman", "nominal"])]
        controller: String,
        /// Trained model (required for the koopman controller).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Reference altitude [m].
        #[arg(long, default_value_t = 0.25)]
        altitude: f64,
        /// Independent runs with distinct noise seeds.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Report output path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-run telemetry JSONL files.
        #[arg(long)]
        telemetry_dir: Option<PathBuf>,
    },
    /// Both controllers across a list of altitudes; plot-ready CSV summary.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Trained model for the koopman controller.
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated altitudes [m].
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.25, 0.15, 0.10, 0.05])]
        altitudes: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Summary CSV output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON file with the full per-altitude reports.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAULTED: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Configuration problems exit with a distinct code.
            let msg = format!("{e:#}");
            if msg.contains("config") || msg.contains("invalid configuration") {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Collect { common, out } => {
            let config = AppConfig::load(common.config.as_deref())?;
            let n = commands::cmd_collect(&config, common.seed, &out)?;
            println!("collected {n} samples -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            common,
            dataset,
            out,
            curves,
        } => {
            let config = AppConfig::load(common.config.as_deref())?;
            let outcome =
                commands::cmd_train(&config, &dataset, common.seed, &out, curves.as_deref())?;
            println!(
                "trained: best epoch {} (val loss {:.6e}), open-loop MSE {:.6e} -> {}",
                outcome.report.best_epoch,
                outcome.report.val_loss[outcome.report.best_epoch],
                outcome.report.final_openloop_mse,
                outcome.model_path.display()
            );
            if let Some(msg) = &outcome.report.diverged {
                eprintln!("warning: training aborted early: {msg}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            model,
            dataset,
            horizon,
            out,
        } => {
            let report = commands::cmd_eval(&model, &dataset, horizon, &out)?;
            println!(
                "open-loop position MSE over {} steps: mean {:.6e}, final {:.6e} ({} windows) -> {}",
                horizon,
                report.mean_mse(),
                report.per_step_mse.last().unwrap(),
                report.windows,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Track {
            common,
            controller,
            model,
            altitude,
            repeats,
            out,
            telemetry_dir,
        } => {
            let config = AppConfig::load(common.config.as_deref())?;
            let report = commands::cmd_track(
                &config,
                &controller,
                model.as_deref(),
                altitude,
                repeats,
                common.seed.unwrap_or(1),
                &out,
                telemetry_dir.as_deref(),
            )?;
            println!(
                "{} @ {:.2} m: mean MSE {:.4e} m^2 (std {:.2e}), thrust norm {:.3}, {}/{} crashed -> {}",
                report.controller,
                altitude,
                report.mean_mse,
                report.std_mse,
                report.mean_thrust_norm,
                report.crashes,
                report.repeats,
                out.display()
            );
            if report.crashes == report.repeats {
                return Ok(ExitCode::from(EXIT_ALL_FAULTED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            common,
            model,
            altitudes,
            repeats,
            out,
            reports,
        } => {
            let config = AppConfig::load(common.config.as_deref())?;
            let rows = commands::cmd_sweep(
                &config,
                &model,
                &altitudes,
                repeats,
                common.seed.unwrap_or(1),
                &out,
                reports.as_deref(),
            )?;
            for row in &rows {
                println!(
                    "{:8} @ {:.2} m: MSE {:.4e} +/- {:.2e}, z-MSE {:.4e}, thrust {:.3}, crashes {}/{}",
                    row.controller,
                    row.altitude,
                    row.mean_mse,
                    row.std_mse,
                    row.mean_z_mse,
                    row.mean_thrust_norm,
                    row.crashes,
                    row.repeats
                );
            }
            let all_crashed = rows.iter().all(|r| r.crashes == r.repeats);
            if all_crashed {
                return Ok(ExitCode::from(EXIT_ALL_FAULTED));
            }
            println!("summary -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
