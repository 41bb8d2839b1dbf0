//! Cascaded position -> attitude PID used to fly data-collection waypoints.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{quat, ControlInput, RigidBodyState, VehicleParams};

/// Gains of the cascaded waypoint controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    /// Position error gain [1/s^2].
    pub pos_p: [f64; 3],
    /// Velocity damping gain [1/s].
    pub pos_d: [f64; 3],
    /// Attitude error gain [1/s^2].
    pub att_p: [f64; 3],
    /// Body-rate damping gain [1/s].
    pub att_d: [f64; 3],
    /// Commanded-acceleration tilt limit [rad].
    pub max_tilt: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            pos_p: [8.0, 8.0, 10.0],
            pos_d: [5.0, 5.0, 6.0],
            att_p: [900.0, 900.0, 400.0],
            att_d: [40.0, 40.0, 25.0],
            max_tilt: 0.9,
        }
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// One tick of the cascaded controller: a position PD with gravity
/// feedforward commands an acceleration, realized by a thrust along the
/// current body z-axis and a geometric attitude PD tracking the tilt that
/// points the body z-axis along the commanded acceleration.
///
/// At the waypoint, at rest and level, the output is exactly hover thrust
/// with zero torque. Outputs are saturated to the thrust and torque envelope.
pub fn pid_waypoint_controller(
    state: &RigidBodyState,
    waypoint: &Vector3<f64>,
    gains: &PidGains,
    params: &VehicleParams,
) -> ControlInput {
    pid_waypoint_yaw_controller(state, waypoint, 0.0, gains, params)
}

/// [`pid_waypoint_controller`] with a yaw setpoint; data collection slews yaw
/// to excite the heading dynamics.
pub fn pid_waypoint_yaw_controller(
    state: &RigidBodyState,
    waypoint: &Vector3<f64>,
    yaw: f64,
    gains: &PidGains,
    params: &VehicleParams,
) -> ControlInput {
    let kp = Vector3::from_column_slice(&gains.pos_p);
    let kd = Vector3::from_column_slice(&gains.pos_d);

    let mut accel = kp.component_mul(&(waypoint - state.p)) - kd.component_mul(&state.v)
        + Vector3::new(0.0, 0.0, params.gravity);

    // Keep the commanded acceleration inside a tilt cone so the attitude
    // setpoint never degenerates.
    accel[2] = accel[2].max(0.15 * params.gravity);
    let max_lateral = gains.max_tilt.tan() * accel[2];
    let lateral = accel.fixed_rows::<2>(0).norm();
    if lateral > max_lateral {
        let shrink = max_lateral / lateral;
        accel[0] *= shrink;
        accel[1] *= shrink;
    }

    let rot = quat::to_rotation(&state.q);
    let body_z = rot.column(2).into_owned();
    let thrust = (params.mass * accel.dot(&body_z)).clamp(0.0, params.max_total_thrust);

    // Desired attitude: body z along the commanded acceleration at the
    // requested yaw.
    let b3 = accel.normalize();
    let b1_ref = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut b2 = b3.cross(&b1_ref);
    if b2.norm() < 1e-9 {
        b2 = Vector3::new(0.0, 1.0, 0.0);
    } else {
        b2 = b2.normalize();
    }
    let b1 = b2.cross(&b3);
    let rot_des = Matrix3::from_columns(&[b1, b2, b3]);

    let att_err = 0.5 * vee(&(rot_des.transpose() * rot - rot.transpose() * rot_des));
    let kr = Vector3::from_column_slice(&gains.att_p);
    let kw = Vector3::from_column_slice(&gains.att_d);
    let inertia = params.inertia();
    let j_omega = inertia.component_mul(&state.omega);
    let torque = inertia.component_mul(&(-kr.component_mul(&att_err) - kw.component_mul(&state.omega)))
        + state.omega.cross(&j_omega);
    let torque = torque.map(|t| t.clamp(-params.max_torque, params.max_torque));

    ControlInput::new(thrust, torque)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{rk4_step, GroundEffectParams};
    use approx::assert_relative_eq;

    #[test]
    fn hover_at_waypoint_outputs_exact_hover() {
        let p = VehicleParams::default();
        let wp = Vector3::new(0.2, -0.1, 0.6);
        let state = RigidBodyState::at_rest(wp);
        let u = pid_waypoint_controller(&state, &wp, &PidGains::default(), &p);
        assert_relative_eq!(u.thrust, p.hover_thrust(), epsilon = 1e-14);
        assert_relative_eq!(u.torque.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn waypoint_above_raises_thrust() {
        let p = VehicleParams::default();
        let state = RigidBodyState::at_rest(Vector3::zeros());
        let wp = Vector3::new(0.0, 0.0, 1.0);
        let u = pid_waypoint_controller(&state, &wp, &PidGains::default(), &p);
        assert!(u.thrust > p.hover_thrust());
    }

    #[test]
    fn settles_from_offset_within_four_seconds() {
        let p = VehicleParams::default();
        let ge = GroundEffectParams {
            enabled: false,
            ..Default::default()
        };
        let gains = PidGains::default();
        let wp = Vector3::new(0.3, 0.0, 0.5);
        let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 0.5));
        let dt = 1e-3;
        let mut reached_at = None;
        for step in 0..4000 {
            let u = pid_waypoint_controller(&state, &wp, &gains, &p);
            state = rk4_step(&state, &u, dt, &p, &ge).unwrap();
            if reached_at.is_none() && (state.p - wp).norm() < 0.05 {
                reached_at = Some(step as f64 * dt);
            }
        }
        let t = reached_at.expect("never reached waypoint");
        assert!(t < 4.0, "reached at {t:.2} s");
        assert!((state.p - wp).norm() < 0.05, "did not stay at waypoint");
    }
}
