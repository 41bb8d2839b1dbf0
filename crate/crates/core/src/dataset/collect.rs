//! Simulated data-collection flights.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use nalgebra::Vector4;

use super::{Sample, SampleSet};
use crate::error::{CoreError, Result};
use crate::sim::{pid_waypoint_yaw_controller, PidGains, RigidBodyState, SimConfig, Simulator};

/// Data-collection protocol parameters (the `collect` config block).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    /// Waypoint box: per-axis [min, max] in meters.
    pub waypoint_box: [[f64; 2]; 3],
    /// Total flight time across all trajectories [s].
    pub total_duration: f64,
    /// Logging / PID rate [Hz]; an integer multiple of `sample_rate`.
    pub fast_rate: f64,
    /// Dataset rate [Hz].
    pub sample_rate: f64,
    pub seed: u64,
    /// Number of independent trajectories the flight time is divided into.
    pub trajectories: usize,
    /// Dwell time at each waypoint before drawing the next [s].
    pub waypoint_dwell: f64,
    /// Yaw setpoints are drawn uniformly from `±yaw_range` [rad] alongside
    /// each waypoint, exciting the heading dynamics.
    pub yaw_range: f64,
    /// Thrust dither amplitude [N]: a fresh uniform offset per sample
    /// interval, held constant within it, decorrelating the input channels.
    pub dither_thrust: f64,
    /// Torque dither amplitude per axis [N m].
    pub dither_torque: f64,
    pub pid: PidGains,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            waypoint_box: [[-0.3, 0.3], [-0.3, 0.3], [0.1, 1.0]],
            total_duration: 240.0,
            fast_rate: 500.0,
            sample_rate: 50.0,
            seed: 1,
            trajectories: 10,
            waypoint_dwell: 1.5,
            yaw_range: 0.9,
            dither_thrust: 0.02,
            dither_torque: 4.0e-4,
            pid: PidGains::default(),
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_duration <= 0.0 || self.fast_rate <= 0.0 || self.sample_rate <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "durations and rates must be positive".into(),
            ));
        }
        let ratio = self.fast_rate / self.sample_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(CoreError::InvalidConfig(format!(
                "fast_rate {} must be an integer multiple of sample_rate {}",
                self.fast_rate, self.sample_rate
            )));
        }
        if self.trajectories == 0 || self.waypoint_dwell <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "trajectories and waypoint_dwell must be positive".into(),
            ));
        }
        for axis in &self.waypoint_box {
            if axis[0] > axis[1] {
                return Err(CoreError::InvalidConfig("waypoint box crossed".into()));
            }
        }
        Ok(())
    }
}

fn draw_waypoint(rng: &mut ChaCha20Rng, cfg: &CollectConfig) -> (Vector3<f64>, f64) {
    let position = Vector3::from_fn(|i, _| {
        let [lo, hi] = cfg.waypoint_box[i];
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    });
    let yaw = if cfg.yaw_range > 0.0 {
        rng.gen_range(-cfg.yaw_range..cfg.yaw_range)
    } else {
        0.0
    };
    (position, yaw)
}

/// Flies PID waypoint-tracking trajectories and returns the downsampled
/// dataset: states decimated to `sample_rate`, inputs averaged over each
/// sample interval. Deterministic in the seed.
pub fn collect(cfg: &CollectConfig, sim_cfg: &SimConfig) -> Result<SampleSet> {
    cfg.validate()?;
    sim_cfg.validate()?;

    let decimation = (cfg.fast_rate / cfg.sample_rate).round() as usize;
    let fast_dt = 1.0 / cfg.fast_rate;
    let sample_dt = 1.0 / cfg.sample_rate;
    let traj_duration = cfg.total_duration / cfg.trajectories as f64;
    let samples_per_traj = (traj_duration * cfg.sample_rate).round() as usize;
    if samples_per_traj == 0 {
        return Err(CoreError::InvalidConfig(
            "trajectory duration shorter than one sample interval".into(),
        ));
    }
    let dwell_ticks = (cfg.waypoint_dwell * cfg.fast_rate).round().max(1.0) as usize;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut trajectories = Vec::with_capacity(cfg.trajectories);

    for traj_idx in 0..cfg.trajectories {
        let (start, _) = draw_waypoint(&mut rng, cfg);
        let mut sim = Simulator::new(sim_cfg.clone(), RigidBodyState::at_rest(start))?;
        let (mut waypoint, mut yaw) = draw_waypoint(&mut rng, cfg);

        // Fast-rate log of (state at tick, input applied over tick).
        let n_fast = samples_per_traj * decimation;
        let mut states = Vec::with_capacity(n_fast + 1);
        let mut inputs = Vec::with_capacity(n_fast);
        states.push(sim.state.flatten());
        let mut dither = Vector4::zeros();
        for tick in 0..n_fast {
            if tick % dwell_ticks == 0 && tick > 0 {
                (waypoint, yaw) = draw_waypoint(&mut rng, cfg);
            }
            if tick % decimation == 0 {
                sim.apply_process_noise(&mut rng);
                // One dither draw per sample interval keeps the excitation
                // visible at the dataset rate.
                dither = Vector4::new(
                    rng.gen_range(-1.0..1.0) * cfg.dither_thrust,
                    rng.gen_range(-1.0..1.0) * cfg.dither_torque,
                    rng.gen_range(-1.0..1.0) * cfg.dither_torque,
                    rng.gen_range(-1.0..1.0) * cfg.dither_torque,
                );
            }
            let mut u =
                pid_waypoint_yaw_controller(&sim.state, &waypoint, yaw, &cfg.pid, &sim_cfg.params);
            u.thrust += dither[0];
            u.torque += dither.fixed_rows::<3>(1);
            let applied = sim.advance(&u, fast_dt).map_err(|e| {
                CoreError::Divergence(format!("trajectory {traj_idx}: {e}"))
            })?;
            inputs.push(applied.as_vector());
            states.push(sim.state.flatten());
        }

        // Decimate states, average inputs over each sample interval.
        let mut samples = Vec::with_capacity(samples_per_traj);
        for k in 0..samples_per_traj {
            let x = states[k * decimation].as_slice().to_vec();
            let x_next = states[(k + 1) * decimation].as_slice().to_vec();
            let mut u_avg = nalgebra::Vector4::zeros();
            for j in 0..decimation {
                u_avg += inputs[k * decimation + j];
            }
            u_avg /= decimation as f64;
            samples.push(Sample {
                x,
                u: u_avg.as_slice().to_vec(),
                x_next,
            });
        }
        trajectories.push(samples);
    }

    Ok(SampleSet {
        trajectories,
        dt: sample_dt,
        state_dim: crate::sim::STATE_DIM,
        input_dim: crate::sim::INPUT_DIM,
        hover_thrust_offset: sim_cfg.params.hover_thrust(),
        normalization: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> (CollectConfig, SimConfig) {
        let cfg = CollectConfig {
            total_duration: 6.0,
            trajectories: 3,
            seed: 11,
            ..Default::default()
        };
        let mut sim_cfg = SimConfig::default();
        sim_cfg.noise.enabled = false;
        (cfg, sim_cfg)
    }

    #[test]
    fn four_minutes_at_50hz_gives_12000_samples() {
        // Count math only; the full-duration flight is exercised elsewhere.
        let cfg = CollectConfig::default();
        let per_traj = cfg.total_duration / cfg.trajectories as f64 * cfg.sample_rate;
        assert_eq!(per_traj as usize * cfg.trajectories, 12_000);

        let (cfg, sim_cfg) = small_cfg();
        let set = collect(&cfg, &sim_cfg).unwrap();
        assert_eq!(
            set.num_samples(),
            (cfg.total_duration * cfg.sample_rate) as usize
        );
        assert_eq!(set.num_trajectories(), 3);
        set.validate().unwrap();
    }

    #[test]
    fn degenerate_window_passes_inputs_through() {
        let (mut cfg, sim_cfg) = small_cfg();
        cfg.fast_rate = 50.0; // averaging window of one fast tick
        cfg.total_duration = 3.0;
        let set = collect(&cfg, &sim_cfg).unwrap();
        set.validate().unwrap();
        // With a window of 1 the averaged input equals the single applied
        // input, which is bounded by the actuator envelope.
        for s in set.iter_samples() {
            assert!(s.u[0] >= 0.0 && s.u[0] <= sim_cfg.params.max_total_thrust + 1e-12);
        }
    }

    #[test]
    fn fixed_seed_reproduces_identically() {
        let (cfg, sim_cfg) = small_cfg();
        let a = collect(&cfg, &sim_cfg).unwrap();
        let b = collect(&cfg, &sim_cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_invariant_holds() {
        let (cfg, sim_cfg) = small_cfg();
        let set = collect(&cfg, &sim_cfg).unwrap();
        for traj in &set.trajectories {
            for pair in traj.windows(2) {
                assert_eq!(pair[0].x_next, pair[1].x);
            }
        }
    }

    #[test]
    fn averaged_input_within_fast_envelope() {
        // Averaging cannot escape the min/max envelope of the window; with
        // the PID active the thrust stays strictly inside (0, max].
        let (cfg, sim_cfg) = small_cfg();
        let set = collect(&cfg, &sim_cfg).unwrap();
        for s in set.iter_samples() {
            assert!(s.u[0] > 0.0);
            assert!(s.u[0] <= sim_cfg.params.max_total_thrust);
            for j in 1..4 {
                assert!(s.u[j].abs() <= sim_cfg.params.max_torque + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_integer_rate_ratio() {
        let (mut cfg, sim_cfg) = small_cfg();
        cfg.fast_rate = 120.0;
        assert!(collect(&cfg, &sim_cfg).is_err());
    }
}
