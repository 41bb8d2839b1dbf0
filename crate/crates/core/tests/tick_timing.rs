//! Rough wall-clock probe of a full-size controller tick (run with
//! `--ignored --nocapture`); the binding budget check lives in the
//! acceptance suite with a trained model.

use koopman_core::dataset::Normalization;
use koopman_core::diffnet::KoopmanNet;
use koopman_core::model::KoopmanModel;
use koopman_core::nmpc::{NmpcConfig, NmpcController};
use koopman_core::sim::{ControlInput, RigidBodyState, SimConfig, Simulator};
use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
#[ignore]
fn probe_tick_latency() {
    let mut sim_cfg = SimConfig::default();
    sim_cfg.noise.enabled = false;
    sim_cfg.ground_effect.enabled = false;
    let params = sim_cfg.params.clone();

    // Quadrotor-sized surrogate model: n = 23, m = 4, stable-ish F.
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut net = KoopmanNet::new_seeded(13, &[100, 100], 10, 4, 7);
    for i in 0..23 {
        for j in 0..23 {
            net.f[(i, j)] = if i == j { 0.97 } else { rng.gen_range(-0.01..0.01) };
        }
    }
    for g in &mut net.g {
        *g = nalgebra::DMatrix::from_fn(23, 23, |_, _| rng.gen_range(-0.005..0.005));
    }
    let mut norm = Normalization::identity(13, 4);
    norm.u_offset[0] = params.hover_thrust();
    norm.u_scale = vec![0.05, 1e-3, 1e-3, 1e-4];
    let model = KoopmanModel::new(net, norm, 0.02).unwrap();

    let cfg = NmpcConfig::default();
    let problem = cfg.to_problem(&params);
    let mut x_ref = DVector::zeros(13);
    x_ref[2] = 0.5;
    x_ref[6] = 1.0;
    let refs = vec![x_ref; 330];

    // Latency only: drive the controller with perturbed hover states rather
    // than closing the loop around the physics (the surrogate model is not a
    // usable flight model).
    let start = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 0.5));
    let _ = Simulator::new(sim_cfg, start.clone()).unwrap();
    let _ = ControlInput::hover(&params);
    let mut controller =
        NmpcController::new(&model, problem, refs, start.flatten().as_slice()).unwrap();

    let mut times = Vec::new();
    for _ in 0..300 {
        let mut x = start.flatten();
        for i in 0..6 {
            x[i] += rng.gen_range(-0.02..0.02);
        }
        let t0 = std::time::Instant::now();
        let _ = controller.step(x.as_slice()).unwrap();
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    let p99 = times[(times.len() as f64 * 0.99) as usize];
    let stats = controller.last_stats().unwrap();
    println!(
        "tick latency: median {median:.2} ms, p99 {p99:.2} ms, last qp iters {}",
        stats.qp_iterations
    );
}
