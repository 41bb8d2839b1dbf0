//! Rigid-body dynamics, ground effect and RK4 integration.

use nalgebra::{Vector3, Vector4};

use super::{quat, ControlInput, GroundEffectParams, RigidBodyState, VehicleParams};
use crate::error::Result;

/// Time derivative of a rigid-body state.
#[derive(Debug, Clone)]
pub struct StateDeriv {
    pub p_dot: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub q_dot: Vector4<f64>,
    pub omega_dot: Vector3<f64>,
}

/// Thrust amplification factor near the floor:
/// `1 / (1 - c_g (r_p / 4 h)^2)` with `h` clamped at `min_height`.
/// Monotone non-increasing in height, approaching 1 far from the ground.
pub fn ground_effect_multiplier(height: f64, ge: &GroundEffectParams) -> f64 {
    let h = height.max(ge.min_height);
    let ratio = ge.rotor_radius / (4.0 * h);
    1.0 / (1.0 - ge.strength * ratio * ratio)
}

/// Continuous-time dynamics:
/// `p_dot = v`, `m v_dot = m g + R f (+ ground effect)`,
/// `J omega_dot = J omega × omega + tau`, quaternion kinematics for attitude.
pub fn dynamics_deriv(
    state: &RigidBodyState,
    u: &ControlInput,
    params: &VehicleParams,
    ge: &GroundEffectParams,
) -> Result<StateDeriv> {
    state.check_quaternion()?;
    if !u.is_finite() {
        return Err(crate::error::CoreError::InvalidState(
            "non-finite control input".into(),
        ));
    }
    Ok(deriv_unchecked(state, u, params, ge))
}

// RK4 intermediate states drift off unit norm by O((|omega| dt)^2); the
// rotation is computed from the normalized quaternion, so they are evaluated
// without the entry-state norm check.
fn deriv_unchecked(
    state: &RigidBodyState,
    u: &ControlInput,
    params: &VehicleParams,
    ge: &GroundEffectParams,
) -> StateDeriv {
    let thrust_eff = if ge.enabled {
        ground_effect_multiplier(state.p[2], ge) * u.thrust
    } else {
        u.thrust
    };

    let rot = quat::to_rotation(&state.q);
    let gravity = Vector3::new(0.0, 0.0, -params.gravity);
    let v_dot = gravity + rot * Vector3::new(0.0, 0.0, thrust_eff) / params.mass;

    let inertia = params.inertia();
    let j_omega = inertia.component_mul(&state.omega);
    let omega_dot = (j_omega.cross(&state.omega) + u.torque).component_div(&inertia);

    StateDeriv {
        p_dot: state.v,
        v_dot,
        q_dot: quat::kinematics(&state.q, &state.omega),
        omega_dot,
    }
}

fn advance(state: &RigidBodyState, d: &StateDeriv, dt: f64) -> RigidBodyState {
    RigidBodyState {
        p: state.p + dt * d.p_dot,
        v: state.v + dt * d.v_dot,
        q: state.q + dt * d.q_dot,
        omega: state.omega + dt * d.omega_dot,
    }
}

/// Classical RK4 step with the input held constant over `dt`. The quaternion
/// is renormalized after the step.
pub fn rk4_step(
    state: &RigidBodyState,
    u: &ControlInput,
    dt: f64,
    params: &VehicleParams,
    ge: &GroundEffectParams,
) -> Result<RigidBodyState> {
    let k1 = dynamics_deriv(state, u, params, ge)?;
    let k2 = deriv_unchecked(&advance(state, &k1, 0.5 * dt), u, params, ge);
    let k3 = deriv_unchecked(&advance(state, &k2, 0.5 * dt), u, params, ge);
    let k4 = deriv_unchecked(&advance(state, &k3, dt), u, params, ge);

    let sixth = dt / 6.0;
    let mut next = RigidBodyState {
        p: state.p + sixth * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot),
        v: state.v + sixth * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot),
        q: state.q + sixth * (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot),
        omega: state.omega
            + sixth * (k1.omega_dot + 2.0 * k2.omega_dot + 2.0 * k3.omega_dot + k4.omega_dot),
    };
    next.renormalize();
    Ok(next)
}

/// Total mechanical energy; conserved by torque-free, thrust-free flight.
pub fn mechanical_energy(state: &RigidBodyState, params: &VehicleParams) -> f64 {
    let kinetic = 0.5 * params.mass * state.v.norm_squared();
    let potential = params.mass * params.gravity * state.p[2];
    let j_omega = params.inertia().component_mul(&state.omega);
    let rotational = 0.5 * state.omega.dot(&j_omega);
    kinetic + potential + rotational
}
