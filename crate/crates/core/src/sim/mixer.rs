//! Thrust mixing: the linear map between squared rotor speeds and the
//! abstract controls `u = [T, tau_x, tau_y, tau_z]`.

use nalgebra::{Matrix4, Vector3, Vector4};

use super::{ControlInput, VehicleParams};
use crate::error::{CoreError, Result};

/// Mixing matrix mapping squared rotor speeds to thrust and torques.
pub fn mixing_matrix(params: &VehicleParams) -> Matrix4<f64> {
    let ct = params.thrust_coeff;
    let cq = params.torque_coeff;
    let l = params.arm_length;
    Matrix4::new(
        ct, ct, ct, ct, //
        0.0, ct * l, 0.0, -ct * l, //
        -ct * l, 0.0, ct * l, 0.0, //
        -cq, cq, -cq, cq,
    )
}

/// `u = T η` with `η` the squared rotor speeds.
pub fn mix(rotor_speeds_sq: &Vector4<f64>, params: &VehicleParams) -> ControlInput {
    let u = mixing_matrix(params) * rotor_speeds_sq;
    ControlInput::new(u[0], Vector3::new(u[1], u[2], u[3]))
}

/// Inverts the mixing map. Returns an error naming the offending rotors when
/// the requested control implies negative squared speeds; the caller clamps
/// to zero and re-mixes (see [`rotor_feasible`]).
pub fn mix_inverse(u: &ControlInput, params: &VehicleParams) -> Result<Vector4<f64>> {
    let eta = solve_mix(u, params)?;
    let negative: Vec<usize> = (0..4).filter(|&i| eta[i] < 0.0).collect();
    if !negative.is_empty() {
        return Err(CoreError::InvalidState(format!(
            "control saturates rotors {negative:?} (negative squared speed)"
        )));
    }
    Ok(eta)
}

fn solve_mix(u: &ControlInput, params: &VehicleParams) -> Result<Vector4<f64>> {
    let t = mixing_matrix(params);
    t.lu()
        .solve(&u.as_vector())
        .ok_or_else(|| CoreError::InvalidConfig("singular mixing matrix".into()))
}

/// Projects a commanded control onto the rotor-feasible set: squared speeds
/// are clamped to `[0, η_max]` (with `η_max` from the total-thrust ceiling)
/// and re-mixed. Feasible commands pass through unchanged.
pub fn rotor_feasible(u: &ControlInput, params: &VehicleParams) -> ControlInput {
    let eta_max = params.max_total_thrust / (4.0 * params.thrust_coeff);
    match solve_mix(u, params) {
        Ok(eta) => {
            let clamped = eta.map(|e| e.clamp(0.0, eta_max));
            if clamped == eta {
                *u
            } else {
                mix(&clamped, params)
            }
        }
        Err(_) => *u,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_rotors_give_pure_thrust() {
        let p = VehicleParams::default();
        let s = 2.0e6;
        let u = mix(&Vector4::new(s, s, s, s), &p);
        assert_relative_eq!(u.thrust, 4.0 * p.thrust_coeff * s, epsilon = 1e-12);
        assert_relative_eq!(u.torque.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_rotor_matches_first_mixing_column() {
        let p = VehicleParams::default();
        let s = 1.5e6;
        let u = mix(&Vector4::new(s, 0.0, 0.0, 0.0), &p);
        assert_relative_eq!(u.thrust, p.thrust_coeff * s, epsilon = 1e-15);
        assert_relative_eq!(u.torque[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(u.torque[1], -p.thrust_coeff * p.arm_length * s, epsilon = 1e-15);
        assert_relative_eq!(u.torque[2], -p.torque_coeff * s, epsilon = 1e-15);
    }

    #[test]
    fn negative_speed_reported() {
        let p = VehicleParams::default();
        // Large roll torque at low thrust forces one rotor negative.
        let u = ControlInput::new(0.01, Vector3::new(5e-3, 0.0, 0.0));
        assert!(mix_inverse(&u, &p).is_err());
        // The projection produces a feasible control.
        let proj = rotor_feasible(&u, &p);
        assert!(mix_inverse(&proj, &p).is_ok());
    }

    proptest! {
        // mix ∘ mix_inverse is the identity on the feasible set.
        #[test]
        fn mix_round_trip(
            t in 0.05f64..0.5,
            tx in -1e-4f64..1e-4,
            ty in -1e-4f64..1e-4,
            tz in -1e-5f64..1e-5,
        ) {
            let p = VehicleParams::default();
            let u = ControlInput::new(t, Vector3::new(tx, ty, tz));
            if let Ok(eta) = mix_inverse(&u, &p) {
                let back = mix(&eta, &p);
                prop_assert!((back.thrust - u.thrust).abs() < 1e-12);
                prop_assert!((back.torque - u.torque).norm() < 1e-12);
            }
        }

        // The multiplier is >= 1 and monotone non-increasing in height.
        #[test]
        fn ground_effect_monotone(h1 in 0.0f64..2.0, dh in 0.0f64..2.0, cg in 0.0f64..10.0) {
            let ge = crate::sim::GroundEffectParams {
                rotor_radius: 0.023,
                strength: cg,
                min_height: 0.02,
                enabled: true,
            };
            let low = crate::sim::ground_effect_multiplier(h1, &ge);
            let high = crate::sim::ground_effect_multiplier(h1 + dh, &ge);
            prop_assert!(low >= high - 1e-15);
            prop_assert!(high >= 1.0);
        }
    }
}
