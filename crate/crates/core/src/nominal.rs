//! Nominal prediction model: the rigid-body dynamics with the disturbance
//! terms zeroed, discretized by RK4, with analytic Jacobians propagated
//! through the integrator stages for SQP use.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};

use crate::sim::{quat, VehicleParams, INPUT_DIM, STATE_DIM};

/// Disturbance-free quadrotor model discretized at the controller rate.
#[derive(Debug, Clone)]
pub struct NominalModel {
    pub params: VehicleParams,
    /// Discretization interval [s].
    pub dt: f64,
    /// RK4 substeps per interval.
    pub substeps: usize,
}

impl NominalModel {
    pub fn new(params: VehicleParams, dt: f64, substeps: usize) -> Self {
        Self {
            params,
            dt,
            substeps: substeps.max(1),
        }
    }

    /// Continuous dynamics with `f_v = tau_omega = 0`. The quaternion is
    /// normalized for the rotation only, keeping the map smooth off the unit
    /// sphere (iterates drift slightly between SQP updates).
    pub fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let q = Vector4::new(x[6], x[7], x[8], x[9]);
        let omega = Vector3::new(x[10], x[11], x[12]);
        let rot = quat::to_rotation(&q);

        let mut dx = DVector::zeros(STATE_DIM);
        dx[0] = x[3];
        dx[1] = x[4];
        dx[2] = x[5];
        let accel = Vector3::new(0.0, 0.0, -p.gravity) + rot * Vector3::new(0.0, 0.0, u[0] / p.mass);
        dx[3] = accel[0];
        dx[4] = accel[1];
        dx[5] = accel[2];
        let qd = quat::kinematics(&q, &omega);
        dx[6] = qd[0];
        dx[7] = qd[1];
        dx[8] = qd[2];
        dx[9] = qd[3];
        let inertia = p.inertia();
        let torque = Vector3::new(u[1], u[2], u[3]);
        let j_omega = inertia.component_mul(&omega);
        let omega_dot = (j_omega.cross(&omega) + torque).component_div(&inertia);
        dx[10] = omega_dot[0];
        dx[11] = omega_dot[1];
        dx[12] = omega_dot[2];
        dx
    }

    /// Analytic Jacobians of [`Self::deriv`] with respect to state and input.
    pub fn deriv_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = &self.params;
        let q = Vector4::new(x[6], x[7], x[8], x[9]);
        let omega = Vector3::new(x[10], x[11], x[12]);
        let qn = q.norm();
        let qh = q / qn;

        let mut fx = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut fu = DMatrix::zeros(STATE_DIM, INPUT_DIM);

        // dp/dv.
        for i in 0..3 {
            fx[(i, 3 + i)] = 1.0;
        }

        // dv/dq through the normalized quaternion: (T/m) dR(qh)e3/dqh * dqh/dq.
        let (w, xq, y, z) = (qh[0], qh[1], qh[2], qh[3]);
        #[rustfmt::skip]
        let d_re3 = nalgebra::Matrix3x4::new(
            2.0 * y, 2.0 * z,  2.0 * w, 2.0 * xq,
            -2.0 * xq, -2.0 * w, 2.0 * z, 2.0 * y,
            0.0, -4.0 * xq, -4.0 * y, 0.0,
        );
        let proj = (nalgebra::Matrix4::identity() - qh * qh.transpose()) / qn;
        let dv_dq = (u[0] / p.mass) * d_re3 * proj;
        for i in 0..3 {
            for j in 0..4 {
                fx[(3 + i, 6 + j)] = dv_dq[(i, j)];
            }
        }

        // dv/dT.
        let re3 = quat::to_rotation(&q) * Vector3::new(0.0, 0.0, 1.0);
        for i in 0..3 {
            fu[(3 + i, 0)] = re3[i] / p.mass;
        }

        // Quaternion kinematics: linear in q for fixed omega and vice versa.
        let qv = Vector3::new(q[1], q[2], q[3]);
        // dq/dq block.
        fx[(6, 6)] = 0.0;
        for j in 0..3 {
            fx[(6, 7 + j)] = -0.5 * omega[j];
            fx[(7 + j, 6)] = 0.5 * omega[j];
        }
        let s_omega = quat::skew(&omega);
        for i in 0..3 {
            for j in 0..3 {
                fx[(7 + i, 7 + j)] = -0.5 * s_omega[(i, j)];
            }
        }
        // dq/domega block.
        for j in 0..3 {
            fx[(6, 10 + j)] = -0.5 * qv[j];
        }
        let s_qv = quat::skew(&qv);
        for i in 0..3 {
            for j in 0..3 {
                let diag = if i == j { q[0] } else { 0.0 };
                fx[(7 + i, 10 + j)] = 0.5 * (diag + s_qv[(i, j)]);
            }
        }

        // Angular acceleration blocks.
        let inertia = p.inertia();
        let j_mat = Matrix3::from_diagonal(&inertia);
        let j_omega = inertia.component_mul(&omega);
        let d_om = -quat::skew(&omega) * j_mat + quat::skew(&j_omega);
        for i in 0..3 {
            for j in 0..3 {
                fx[(10 + i, 10 + j)] = d_om[(i, j)] / inertia[i];
            }
            fu[(10 + i, 1 + i)] = 1.0 / inertia[i];
        }

        (fx, fu)
    }

    /// One controller-interval step (`substeps` RK4 stages, no quaternion
    /// renormalization so the map stays differentiable).
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let h = self.dt / self.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            let k1 = self.deriv(&x, u);
            let k2 = self.deriv(&(&x + 0.5 * h * &k1), u);
            let k3 = self.deriv(&(&x + 0.5 * h * &k2), u);
            let k4 = self.deriv(&(&x + h * &k3), u);
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    /// Discrete-step Jacobians `(A, B) = (dx'/dx, dx'/du)` by chaining the
    /// continuous Jacobians through every RK4 stage.
    pub fn step_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = self.dt / self.substeps as f64;
        let eye = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
        let mut a_total = eye.clone();
        let mut b_total = DMatrix::zeros(STATE_DIM, INPUT_DIM);
        let mut x = x.clone();

        for _ in 0..self.substeps {
            let k1 = self.deriv(&x, u);
            let (a1, b1) = self.deriv_jacobians(&x, u);

            let x2 = &x + 0.5 * h * &k1;
            let k2 = self.deriv(&x2, u);
            let (fx2, fu2) = self.deriv_jacobians(&x2, u);
            let a2 = &fx2 * (&eye + 0.5 * h * &a1);
            let b2 = &fx2 * (0.5 * h * &b1) + fu2;

            let x3 = &x + 0.5 * h * &k2;
            let k3 = self.deriv(&x3, u);
            let (fx3, fu3) = self.deriv_jacobians(&x3, u);
            let a3 = &fx3 * (&eye + 0.5 * h * &a2);
            let b3 = &fx3 * (0.5 * h * &b2) + fu3;

            let x4 = &x + h * &k3;
            let k4 = self.deriv(&x4, u);
            let (fx4, fu4) = self.deriv_jacobians(&x4, u);
            let a4 = &fx4 * (&eye + h * &a3);
            let b4 = &fx4 * (h * &b3) + fu4;

            let a_step = &eye + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            let b_step = (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            b_total = &a_step * b_total + b_step;
            a_total = a_step * a_total;
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        (a_total, b_total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_state(rng: &mut ChaCha20Rng) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        for i in 0..6 {
            x[i] = rng.gen_range(-1.0..1.0);
        }
        let rv = Vector3::new(
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
        );
        let q = quat::from_rotation_vector(&rv);
        for i in 0..4 {
            x[6 + i] = q[i];
        }
        for i in 0..3 {
            x[10 + i] = rng.gen_range(-3.0..3.0);
        }
        x
    }

    fn random_input(rng: &mut ChaCha20Rng, p: &VehicleParams) -> DVector<f64> {
        DVector::from_vec(vec![
            rng.gen_range(0.5..1.5) * p.hover_thrust(),
            rng.gen_range(-1e-3..1e-3),
            rng.gen_range(-1e-3..1e-3),
            rng.gen_range(-1e-4..1e-4),
        ])
    }

    #[test]
    fn continuous_jacobians_match_finite_differences() {
        let model = NominalModel::new(VehicleParams::default(), 0.02, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = random_state(&mut rng);
            let u = random_input(&mut rng, &model.params);
            let (fx, fu) = model.deriv_jacobians(&x, &u);

            for j in 0..STATE_DIM {
                let h = 1e-6 * x[j].abs().max(1.0);
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let col = (model.deriv(&xp, &u) - model.deriv(&xm, &u)) / (2.0 * h);
                for i in 0..STATE_DIM {
                    let err = (fx[(i, j)] - col[i]).abs()
                        / fx[(i, j)].abs().max(col[i].abs()).max(1.0);
                    assert!(err < 1e-6, "fx[{i},{j}] analytic {} vs fd {}", fx[(i, j)], col[i]);
                }
            }
            for j in 0..INPUT_DIM {
                let h = 1e-6 * u[j].abs().max(1e-4);
                let mut up = u.clone();
                up[j] += h;
                let mut um = u.clone();
                um[j] -= h;
                let col = (model.deriv(&x, &up) - model.deriv(&x, &um)) / (2.0 * h);
                for i in 0..STATE_DIM {
                    let err = (fu[(i, j)] - col[i]).abs()
                        / fu[(i, j)].abs().max(col[i].abs()).max(1.0);
                    assert!(err < 1e-6, "fu[{i},{j}]");
                }
            }
        }
    }

    #[test]
    fn discrete_jacobians_match_finite_differences() {
        // The audit required of the SQP linearization: 1e-5 relative.
        let model = NominalModel::new(VehicleParams::default(), 0.02, 2);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..3 {
            let x = random_state(&mut rng);
            let u = random_input(&mut rng, &model.params);
            let (a, b) = model.step_jacobians(&x, &u);

            for j in 0..STATE_DIM {
                let h = 1e-6 * x[j].abs().max(1.0);
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let col = (model.step(&xp, &u) - model.step(&xm, &u)) / (2.0 * h);
                for i in 0..STATE_DIM {
                    let err = (a[(i, j)] - col[i]).abs()
                        / a[(i, j)].abs().max(col[i].abs()).max(1.0);
                    assert!(err < 1e-5, "A[{i},{j}]: {} vs {}", a[(i, j)], col[i]);
                }
            }
            for j in 0..INPUT_DIM {
                let h = 1e-6 * u[j].abs().max(1e-4);
                let mut up = u.clone();
                up[j] += h;
                let mut um = u.clone();
                um[j] -= h;
                let col = (model.step(&x, &up) - model.step(&x, &um)) / (2.0 * h);
                for i in 0..STATE_DIM {
                    let err = (b[(i, j)] - col[i]).abs()
                        / b[(i, j)].abs().max(col[i].abs()).max(1.0);
                    assert!(err < 1e-5, "B[{i},{j}]");
                }
            }
        }
    }

    #[test]
    fn step_matches_simulator_without_disturbances() {
        let params = VehicleParams::default();
        let model = NominalModel::new(params.clone(), 0.02, 20);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = random_state(&mut rng);
        let u = random_input(&mut rng, &params);

        let state = crate::sim::RigidBodyState::from_flat(x.as_slice()).unwrap();
        let ge = crate::sim::GroundEffectParams {
            enabled: false,
            ..Default::default()
        };
        let mut sim_state = state;
        let control = crate::sim::ControlInput::from_vector(&Vector4::new(u[0], u[1], u[2], u[3]));
        for _ in 0..20 {
            sim_state = crate::sim::rk4_step(&sim_state, &control, 0.001, &params, &ge).unwrap();
        }
        let predicted = model.step(&x, &u);
        let sim_flat = sim_state.flatten();
        // The model skips renormalization; agreement stays tight over one tick.
        for i in 0..STATE_DIM {
            assert!(
                (predicted[i] - sim_flat[i]).abs() < 1e-8,
                "component {i}: {} vs {}",
                predicted[i],
                sim_flat[i]
            );
        }
    }
}
