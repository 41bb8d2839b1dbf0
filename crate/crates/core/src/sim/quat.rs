//! Scalar-first quaternion helpers.
//!
//! Quaternions are stored as `[w, x, y, z]` throughout the crate. Functions
//! here do not assume unit norm unless stated; callers renormalize after
//! integration steps.

use nalgebra::{Matrix3, Vector3, Vector4};

/// Identity quaternion `[1, 0, 0, 0]`.
pub fn identity() -> Vector4<f64> {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix (body -> world) of a quaternion. The input is normalized
/// internally so the result is a proper rotation for any nonzero `q`.
pub fn to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let qn = q / q.norm();
    let (w, x, y, z) = (qn[0], qn[1], qn[2], qn[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion kinematics `q_dot = 0.5 * q ⊗ (0, omega)` with body-frame rates.
/// Preserves `|q|` along exact flows for any starting norm.
pub fn kinematics(q: &Vector4<f64>, omega: &Vector3<f64>) -> Vector4<f64> {
    let w = q[0];
    let v = Vector3::new(q[1], q[2], q[3]);
    let dw = -0.5 * v.dot(omega);
    let dv = 0.5 * (w * omega + v.cross(omega));
    Vector4::new(dw, dv[0], dv[1], dv[2])
}

/// Hamilton product `a ⊗ b` (scalar-first).
pub fn mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    let (aw, av) = (a[0], Vector3::new(a[1], a[2], a[3]));
    let (bw, bv) = (b[0], Vector3::new(b[1], b[2], b[3]));
    let w = aw * bw - av.dot(&bv);
    let v = aw * bv + bw * av + av.cross(&bv);
    Vector4::new(w, v[0], v[1], v[2])
}

/// Quaternion for a rotation vector (axis * angle).
pub fn from_rotation_vector(r: &Vector3<f64>) -> Vector4<f64> {
    let angle = r.norm();
    if angle < 1e-12 {
        // First-order expansion keeps small perturbations exact enough.
        let half = 0.5 * r;
        let q = Vector4::new(1.0, half[0], half[1], half[2]);
        return q / q.norm();
    }
    let axis = r / angle;
    let (s, c) = (0.5 * angle).sin_cos();
    Vector4::new(c, s * axis[0], s * axis[1], s * axis[2])
}

/// Roll and pitch (rad) of the body attitude, ZYX convention.
pub fn roll_pitch(q: &Vector4<f64>) -> (f64, f64) {
    let r = to_rotation(q);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    (roll, pitch)
}

/// Skew-symmetric matrix `S(v)` with `S(v) w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}
