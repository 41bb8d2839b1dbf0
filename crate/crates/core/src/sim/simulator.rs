//! Stepped simulation harness.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{mixer, rk4_step, ControlInput, RigidBodyState, SimConfig};
use crate::error::{CoreError, Result};

/// One quadrotor instance advanced at a fixed internal integration step.
/// Instances own their state and are safe to run in parallel.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub state: RigidBodyState,
    pub t: f64,
}

impl Simulator {
    pub fn new(config: SimConfig, initial: RigidBodyState) -> Result<Self> {
        config.validate()?;
        initial.check_quaternion()?;
        Ok(Self {
            config,
            state: initial,
            t: 0.0,
        })
    }

    /// Advances the true state by `duration` holding `u` constant, after
    /// projecting the command onto the rotor-feasible set. The integration
    /// step subdivides `duration` exactly.
    pub fn advance(&mut self, u: &ControlInput, duration: f64) -> Result<ControlInput> {
        let applied = mixer::rotor_feasible(u, &self.config.params);
        let dt = self.config.integration_dt();
        let substeps = (duration / dt).round().max(1.0) as usize;
        let h = duration / substeps as f64;
        for _ in 0..substeps {
            self.state = rk4_step(
                &self.state,
                &applied,
                h,
                &self.config.params,
                &self.config.ground_effect,
            )?;
        }
        self.t += duration;
        if self.state.p.norm() > 100.0 {
            return Err(CoreError::Divergence(format!(
                "|p| = {:.1} m at t = {:.2} s",
                self.state.p.norm(),
                self.t
            )));
        }
        Ok(applied)
    }

    /// Applies one tick of config-gated process noise to the true state.
    pub fn apply_process_noise<R: Rng>(&mut self, rng: &mut R) {
        let noise = &self.config.noise;
        if !noise.enabled {
            return;
        }
        if noise.vel_std > 0.0 {
            let n = Normal::new(0.0, noise.vel_std).expect("std must be finite");
            self.state.v += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        }
        if noise.rate_std > 0.0 {
            let n = Normal::new(0.0, noise.rate_std).expect("std must be finite");
            self.state.omega += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        }
    }

    /// Crash detection: more than 60 degrees of roll or pitch, or ground
    /// penetration.
    pub fn crashed(&self) -> bool {
        let (roll, pitch) = super::quat::roll_pitch(&self.state.q);
        let limit = 60f64.to_radians();
        roll.abs() > limit || pitch.abs() > limit || self.state.p[2] < 0.0
    }
}
