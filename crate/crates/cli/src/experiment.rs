//! Closed-loop tracking experiments: one figure-eight flight per run, with
//! crash handling, telemetry capture and aggregation over repeats.

use nalgebra::{DVector, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use koopman_core::error::CoreError;
use koopman_core::model::KoopmanModel;
use koopman_core::nmpc::{NmpcController, NominalPredictor};
use koopman_core::nominal::NominalModel;
use koopman_core::sim::{
    figure8_reference, ControlInput, Figure8Config, RigidBodyState, Simulator,
};

use crate::config::AppConfig;
use crate::report::{RunStats, TelemetryRecord};

/// Controller under test.
#[derive(Debug, Clone)]
pub enum ControllerChoice {
    Koopman(KoopmanModel),
    Nominal,
}

impl ControllerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerChoice::Koopman(_) => "koopman",
            ControllerChoice::Nominal => "nominal",
        }
    }
}

/// Raw 13-state references along a trajectory: positions and velocities from
/// the generator, level attitude, zero rates.
fn reference_states(traj_cfg: &Figure8Config) -> anyhow::Result<Vec<DVector<f64>>> {
    let traj = figure8_reference(traj_cfg)?;
    let mut refs = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let (p, v) = traj.at(k);
        let mut x = DVector::zeros(13);
        x.fixed_rows_mut::<3>(0).copy_from(&p);
        x.fixed_rows_mut::<3>(3).copy_from(&v);
        x[6] = 1.0;
        refs.push(x);
    }
    Ok(refs)
}

pub struct RunOutcome {
    pub stats: RunStats,
    pub telemetry: Vec<TelemetryRecord>,
}

/// Flies one closed-loop tracking run. The process-noise stream is seeded per
/// run, so repeats with distinct seeds differ and identical seeds reproduce
/// bit-identical telemetry.
pub fn run_tracking(
    config: &AppConfig,
    choice: &ControllerChoice,
    altitude: f64,
    run_index: usize,
    seed: u64,
) -> anyhow::Result<RunOutcome> {
    let traj_cfg = Figure8Config {
        altitude,
        timestep: config.nmpc.dt,
        ..config.trajectory.clone()
    };
    let refs = reference_states(&traj_cfg)?;
    let ticks = refs.len() - 1;
    let params = config.vehicle.params.clone();
    let problem = config.nmpc.to_problem(&params);

    let start = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, altitude));
    let mut sim = Simulator::new(config.vehicle.clone(), start.clone())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    enum Loop<'m> {
        Koopman(NmpcController<&'m KoopmanModel>),
        Nominal(NmpcController<NominalPredictor>),
    }
    let mut controller = match choice {
        ControllerChoice::Koopman(model) => Loop::Koopman(NmpcController::new(
            model,
            problem,
            refs.clone(),
            start.flatten().as_slice(),
        )?),
        ControllerChoice::Nominal => {
            let predictor = NominalPredictor::new(NominalModel::new(
                params.clone(),
                config.nmpc.dt,
                config.nmpc.nominal_substeps,
            ));
            Loop::Nominal(NmpcController::new(
                predictor,
                problem,
                refs.clone(),
                start.flatten().as_slice(),
            )?)
        }
    };

    let mut telemetry = Vec::with_capacity(ticks);
    let mut crashed = false;
    let mut failure = None;
    let mut sq_err = 0.0;
    let mut axis_sq = [0.0f64; 3];
    let mut thrust_sum = 0.0;
    let mut completed = 0usize;

    for tick in 0..ticks {
        sim.apply_process_noise(&mut rng);
        let x = sim.state.flatten();
        let step = match &mut controller {
            Loop::Koopman(c) => c.step(x.as_slice()),
            Loop::Nominal(c) => c.step(x.as_slice()),
        };
        let (u, stats) = match step {
            Ok(u) => {
                let stats = match &controller {
                    Loop::Koopman(c) => c.last_stats().cloned(),
                    Loop::Nominal(c) => c.last_stats().cloned(),
                };
                (u, stats)
            }
            Err(CoreError::ControllerFault(msg)) => {
                crashed = true;
                failure = Some(format!("controller fault: {msg}"));
                break;
            }
            Err(e) => return Err(e.into()),
        };

        let t = tick as f64 * config.nmpc.dt;
        if let Some(s) = stats {
            telemetry.push(TelemetryRecord {
                t,
                x: x.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                qp_iters: s.qp_iterations,
                qp_status: format!("{:?}", s.qp_status),
                solve_ms: s.solve_ms,
                sqp_residual: s.sqp_residual,
            });
        }

        let control = ControlInput::from_vector(&Vector4::new(u[0], u[1], u[2], u[3]));
        match sim.advance(&control, config.nmpc.dt) {
            Ok(_) => {}
            Err(CoreError::Divergence(msg)) => {
                crashed = true;
                failure = Some(format!("divergence: {msg}"));
                break;
            }
            Err(e) => return Err(e.into()),
        }
        if sim.crashed() {
            crashed = true;
            failure = Some(format!(
                "crash at t = {:.2} s (attitude/ground limit)",
                t + config.nmpc.dt
            ));
            break;
        }

        // Tracking error of the realized state against the next reference.
        let reference = &refs[(tick + 1).min(refs.len() - 1)];
        let mut tick_sq = 0.0;
        for i in 0..3 {
            let e = sim.state.p[i] - reference[i];
            axis_sq[i] += e * e;
            tick_sq += e * e;
        }
        sq_err += tick_sq;
        thrust_sum += control.thrust / params.mass;
        completed += 1;
    }

    let denom = completed.max(1) as f64;
    let mut solve_times: Vec<f64> = telemetry.iter().map(|r| r.solve_ms).collect();
    solve_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        if solve_times.is_empty() {
            f64::NAN
        } else {
            solve_times[((solve_times.len() - 1) as f64 * q).round() as usize]
        }
    };

    Ok(RunOutcome {
        stats: RunStats {
            run_index,
            seed,
            crashed,
            failure,
            ticks: completed,
            mse: sq_err / denom,
            axis_mse: [axis_sq[0] / denom, axis_sq[1] / denom, axis_sq[2] / denom],
            mean_thrust_norm: thrust_sum / denom,
            solve_ms_median: quantile(0.5),
            solve_ms_p99: quantile(0.99),
        },
        telemetry,
    })
}

/// Derives the per-run noise seed from the base seed.
pub fn run_seed(base: u64, run_index: usize) -> u64 {
    base.wrapping_add((run_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs `repeats` independent flights, optionally in parallel
/// (`KOOPMAN_THREADS`, default 1); outcomes are ordered by run index either
/// way.
pub fn run_repeats(
    config: &AppConfig,
    choice: &ControllerChoice,
    altitude: f64,
    repeats: usize,
    base_seed: u64,
) -> anyhow::Result<Vec<RunOutcome>> {
    let threads: usize = std::env::var("KOOPMAN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let threads = threads.clamp(1, repeats.max(1));

    if threads == 1 {
        return (0..repeats)
            .map(|i| run_tracking(config, choice, altitude, i, run_seed(base_seed, i)))
            .collect();
    }

    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<anyhow::Result<RunOutcome>>> = Vec::new();
    slots.resize_with(repeats, || None);
    let slots = std::sync::Mutex::new(slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= repeats {
                    break;
                }
                let outcome = run_tracking(config, choice, altitude, i, run_seed(base_seed, i));
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}
