//! Reference trajectory generation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Uniformly sampled position/velocity reference.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    /// Sample times, strictly increasing with uniform spacing.
    pub t: Vec<f64>,
    pub position: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    pub timestep: f64,
    pub duration: f64,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sample index clamped to the final point; controllers hold the last
    /// reference beyond the end of the trajectory.
    pub fn at(&self, index: usize) -> (Vector3<f64>, Vector3<f64>) {
        let i = index.min(self.t.len() - 1);
        (self.position[i], self.velocity[i])
    }
}

/// Figure-eight generation parameters (the `trajectory` config block).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Figure8Config {
    pub period: f64,
    pub amplitude_xy: [f64; 2],
    pub altitude: f64,
    pub duration: f64,
    pub timestep: f64,
}

impl Default for Figure8Config {
    fn default() -> Self {
        Self {
            period: 6.0,
            amplitude_xy: [0.5, 0.25],
            altitude: 0.25,
            duration: 6.0,
            timestep: 0.02,
        }
    }
}

/// Lemniscate reference `(A_x sin(2πs/P), A_y sin(4πs/P)/2, alt)` traversed
/// through a smooth time warp that starts and ends the trajectory at zero
/// reference velocity: cosine speed ramps over the first and last `D/4` of
/// the run around a constant-rate plateau of rate `k = D / (D - D/4)`.
/// Velocities are the analytic derivative of the warped path.
///
/// The peak reference speed has the closed form `k ω_p sqrt(A_x^2 + A_y^2)`
/// with `ω_p = 2π/P`, attained on the plateau.
pub fn figure8_reference(cfg: &Figure8Config) -> Result<ReferenceTrajectory> {
    if cfg.period <= 0.0 || cfg.duration <= 0.0 || cfg.timestep <= 0.0 {
        return Err(CoreError::InvalidConfig(
            "figure-8 period, duration and timestep must be > 0".into(),
        ));
    }
    let steps = (cfg.duration / cfg.timestep).round() as usize;
    let omega = 2.0 * std::f64::consts::PI / cfg.period;
    let (ax, ay) = (cfg.amplitude_xy[0], cfg.amplitude_xy[1]);
    let ramp = 0.25 * cfg.duration;
    let plateau_rate = cfg.duration / (cfg.duration - ramp);

    // Progress s(t) and rate s'(t) of the ramp-plateau-ramp profile;
    // integrals of the cosine ramps have closed forms.
    let half_pi = 0.5 * std::f64::consts::PI;
    let profile = |tk: f64| -> (f64, f64) {
        let d = cfg.duration;
        if tk <= ramp {
            let phase = half_pi * tk / ramp;
            // integral of sin^2(pi t / 2T) = t/2 - T sin(pi t / T) / (2 pi)
            let s = plateau_rate
                * (0.5 * tk
                    - ramp * (std::f64::consts::PI * tk / ramp).sin()
                        / (2.0 * std::f64::consts::PI));
            (s, plateau_rate * phase.sin().powi(2))
        } else if tk < d - ramp {
            let s_ramp = plateau_rate * 0.5 * ramp;
            (s_ramp + plateau_rate * (tk - ramp), plateau_rate)
        } else {
            let tau = d - tk;
            let phase = half_pi * tau / ramp;
            let s_tail = plateau_rate * (0.5 * tau - ramp
                * (std::f64::consts::PI * tau / ramp).sin()
                / (2.0 * std::f64::consts::PI));
            (d - s_tail, plateau_rate * phase.sin().powi(2))
        }
    };

    let mut t = Vec::with_capacity(steps + 1);
    let mut position = Vec::with_capacity(steps + 1);
    let mut velocity = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let tk = k as f64 * cfg.timestep;
        let (s, s_rate) = profile(tk);
        position.push(Vector3::new(
            ax * (omega * s).sin(),
            0.5 * ay * (2.0 * omega * s).sin(),
            cfg.altitude,
        ));
        velocity.push(Vector3::new(
            ax * omega * (omega * s).cos() * s_rate,
            ay * omega * (2.0 * omega * s).cos() * s_rate,
            0.0,
        ));
        t.push(tk);
    }
    Ok(ReferenceTrajectory {
        t,
        position,
        velocity,
        timestep: cfg.timestep,
        duration: cfg.duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn starts_at_rest_on_the_start_point() {
        let cfg = Figure8Config::default();
        let traj = figure8_reference(&cfg).unwrap();
        assert_relative_eq!(
            traj.position[0],
            Vector3::new(0.0, 0.0, cfg.altitude),
            epsilon = 1e-15
        );
        assert_relative_eq!(traj.velocity[0].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn returns_to_start_at_rest() {
        let cfg = Figure8Config::default();
        let traj = figure8_reference(&cfg).unwrap();
        let last = traj.len() - 1;
        assert_relative_eq!(traj.position[last], traj.position[0], epsilon = 1e-9);
        assert_relative_eq!(traj.velocity[last].norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn peak_speed_matches_closed_form() {
        let cfg = Figure8Config {
            timestep: 1e-4,
            ..Default::default()
        };
        let traj = figure8_reference(&cfg).unwrap();
        let numeric = traj
            .velocity
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max);
        let omega = 2.0 * std::f64::consts::PI / cfg.period;
        let plateau_rate = cfg.duration / (cfg.duration - 0.25 * cfg.duration);
        let analytic = plateau_rate
            * omega
            * (cfg.amplitude_xy[0].powi(2) + cfg.amplitude_xy[1].powi(2)).sqrt();
        assert_relative_eq!(numeric, analytic, max_relative = 1e-6);
    }

    #[test]
    fn timestamps_uniform_and_increasing() {
        let traj = figure8_reference(&Figure8Config::default()).unwrap();
        for w in traj.t.windows(2) {
            assert_relative_eq!(w[1] - w[0], traj.timestep, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let cfg = Figure8Config {
            period: 0.0,
            ..Default::default()
        };
        assert!(figure8_reference(&cfg).is_err());
    }
}
