//! Six-degree-of-freedom quadrotor simulation: rigid-body dynamics with a
//! configurable ground-effect disturbance, thrust mixing, RK4 integration,
//! a cascaded PID position controller and reference trajectory generation.

pub mod dynamics;
pub mod mixer;
pub mod pid;
pub mod quat;
pub mod reference;
pub mod simulator;

pub use dynamics::{dynamics_deriv, ground_effect_multiplier, rk4_step, StateDeriv};
pub use mixer::{mix, mix_inverse, rotor_feasible};
pub use pid::{pid_waypoint_controller, pid_waypoint_yaw_controller, PidGains};
pub use reference::{figure8_reference, Figure8Config, ReferenceTrajectory};
pub use simulator::Simulator;

use nalgebra::{DVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Flattened rigid-body state dimension: position, velocity, quaternion, body rates.
pub const STATE_DIM: usize = 13;
/// Abstract control dimension: total thrust plus three body torques.
pub const INPUT_DIM: usize = 4;

/// Physical vehicle parameters (SI units). Defaults model a 33.6 g quadrotor
/// with a 1.7 thrust-to-weight ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Mass [kg].
    pub mass: f64,
    /// Diagonal inertia (Jxx, Jyy, Jzz) [kg m^2].
    pub inertia_diag: [f64; 3],
    /// Center-to-rotor arm length [m].
    pub arm_length: f64,
    /// Propeller thrust coefficient [N s^2].
    pub thrust_coeff: f64,
    /// Propeller torque coefficient [N m s^2].
    pub torque_coeff: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
    /// Total thrust ceiling [N].
    pub max_total_thrust: f64,
    /// Per-axis torque envelope [N m] used as the default input box.
    pub max_torque: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.0336,
            inertia_diag: [1.7e-5, 1.7e-5, 2.9e-5],
            arm_length: 0.04,
            thrust_coeff: 2.25e-8,
            torque_coeff: 1.35e-10,
            gravity: 9.81,
            max_total_thrust: 0.057 * 9.81,
            max_torque: 8.0e-3,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.inertia_diag.iter().all(|&j| j > 0.0)
            && self.arm_length > 0.0
            && self.thrust_coeff > 0.0
            && self.torque_coeff > 0.0
            && self.gravity > 0.0
            && self.max_torque > 0.0;
        if !ok {
            return Err(CoreError::InvalidConfig(
                "vehicle parameters must be strictly positive".into(),
            ));
        }
        if self.max_total_thrust <= self.mass * self.gravity {
            return Err(CoreError::InvalidConfig(format!(
                "max_total_thrust {} N does not exceed hover thrust {} N",
                self.max_total_thrust,
                self.mass * self.gravity
            )));
        }
        Ok(())
    }

    /// Thrust that exactly balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn inertia(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.inertia_diag)
    }
}

/// Ground-effect disturbance parameters. Thrust is amplified close to the
/// floor by `1 / (1 - c_g (r_p / 4h)^2)` with the height clamped at `min_height`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundEffectParams {
    /// Rotor radius [m].
    pub rotor_radius: f64,
    /// Dimensionless strength; 0 disables the effect smoothly.
    pub strength: f64,
    /// Height clamp keeping the multiplier finite at touchdown [m].
    pub min_height: f64,
    pub enabled: bool,
}

impl Default for GroundEffectParams {
    fn default() -> Self {
        Self {
            rotor_radius: 0.023,
            strength: 4.0,
            min_height: 0.02,
            enabled: true,
        }
    }
}

impl GroundEffectParams {
    pub fn validate(&self) -> Result<()> {
        if self.rotor_radius <= 0.0 || self.min_height <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "ground effect radius and min_height must be positive".into(),
            ));
        }
        let limit = 16.0 * (self.min_height / self.rotor_radius).powi(2);
        if self.strength < 0.0 || self.strength >= limit {
            return Err(CoreError::InvalidConfig(format!(
                "ground effect strength {} outside [0, {limit})",
                self.strength
            )));
        }
        Ok(())
    }
}

/// Config-gated additive Gaussian process noise, applied to the true state
/// once per controller tick (velocity and body-rate kicks).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub enabled: bool,
    /// Velocity kick standard deviation per tick [m/s].
    pub vel_std: f64,
    /// Body-rate kick standard deviation per tick [rad/s].
    pub rate_std: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            enabled: true,
            vel_std: 0.04,
            rate_std: 0.0,
        }
    }
}

/// The `vehicle` configuration block.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    #[serde(flatten)]
    pub params: VehicleParams,
    pub ground_effect: GroundEffectParams,
    pub noise: NoiseParams,
    /// Internal integration step [s].
    pub integration_dt: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.ground_effect.validate()?;
        if self.integration_dt() <= 0.0 {
            return Err(CoreError::InvalidConfig("integration_dt must be > 0".into()));
        }
        Ok(())
    }

    pub fn integration_dt(&self) -> f64 {
        if self.integration_dt > 0.0 {
            self.integration_dt
        } else {
            1e-3
        }
    }
}

/// Quadrotor rigid-body state with scalar-first unit quaternion attitude.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Unit quaternion `[w, x, y, z]`.
    pub q: Vector4<f64>,
    pub omega: Vector3<f64>,
}

impl RigidBodyState {
    /// Hover at a position: zero velocity, level attitude, zero rates.
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            q: quat::identity(),
            omega: Vector3::zeros(),
        }
    }

    /// Flatten to `[p, v, q, omega]` (13 entries).
    pub fn flatten(&self) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<4>(6).copy_from(&self.q);
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() != STATE_DIM {
            return Err(CoreError::DimensionMismatch(format!(
                "state has {} entries, expected {STATE_DIM}",
                x.len()
            )));
        }
        Ok(Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            q: Vector4::new(x[6], x[7], x[8], x[9]),
            omega: Vector3::new(x[10], x[11], x[12]),
        })
    }

    pub fn check_quaternion(&self) -> Result<()> {
        let err = (self.q.norm() - 1.0).abs();
        if err > 1e-6 {
            return Err(CoreError::InvalidState(format!(
                "quaternion norm off by {err:.3e}"
            )));
        }
        Ok(())
    }

    pub fn renormalize(&mut self) {
        self.q /= self.q.norm();
    }
}

/// Abstract control input: total body-z thrust and body torques.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Total thrust [N].
    pub thrust: f64,
    /// Body torques [N m].
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn zero() -> Self {
        Self::new(0.0, Vector3::zeros())
    }

    pub fn hover(params: &VehicleParams) -> Self {
        Self::new(params.hover_thrust(), Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.torque.iter().all(|t| t.is_finite())
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque[0], self.torque[1], self.torque[2])
    }

    pub fn from_vector(u: &Vector4<f64>) -> Self {
        Self::new(u[0], Vector3::new(u[1], u[2], u[3]))
    }
}
