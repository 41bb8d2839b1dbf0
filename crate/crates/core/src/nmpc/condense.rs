//! Assembly of the stage-wise SQP quadratic subproblem.
//!
//! Decision vector: `[dz_0, du_0, dz_1, du_1, ..., dz_{N-1}, du_{N-1}, dz_N]`.
//! The interleaved ordering keeps the solver's reduced KKT matrix banded.
//! Constraints: the measured-state row pins `dz_0`, equality rows encode the
//! linearized dynamics with their residuals, and box rows cover the state
//! dimensions with finite bounds plus every input.

use nalgebra::DVector;

use super::{NmpcProblem, PredictionModel, SqpIterate};
use crate::error::Result;
use crate::qp::{CscMatrix, QuadraticProgram};

/// Variable layout of the subproblem.
pub(crate) struct Layout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl Layout {
    pub fn z_start(&self, k: usize) -> usize {
        k * (self.n + self.m)
    }

    pub fn u_start(&self, k: usize) -> usize {
        k * (self.n + self.m) + self.n
    }

    pub fn num_vars(&self) -> usize {
        (self.horizon + 1) * self.n + self.horizon * self.m
    }
}

/// Builds the Gauss-Newton subproblem around `iterate` for the reference
/// window `reference_dec` (decision state-block references, length `N + 1`)
/// and the lifted measurement `z0_measured`.
pub fn build_subproblem<M: PredictionModel>(
    model: &M,
    problem: &NmpcProblem,
    iterate: &SqpIterate,
    reference_dec: &[DVector<f64>],
    z0_measured: &DVector<f64>,
) -> Result<QuadraticProgram> {
    let n = model.dec_dim();
    let m = model.input_dim();
    let d = model.state_dim();
    let big_n = problem.horizon;
    problem.validate(d, m)?;
    iterate.check(big_n, n, m)?;
    if reference_dec.len() != big_n + 1 {
        return Err(crate::error::CoreError::DimensionMismatch(format!(
            "reference window has {} entries, expected {}",
            reference_dec.len(),
            big_n + 1
        )));
    }
    let layout = Layout {
        n,
        m,
        horizon: big_n,
    };
    let n_vars = layout.num_vars();

    let w_dec = model.state_weights_to_dec(&problem.state_weights);
    let raw_scale = model.input_raw_scale();
    let r_dec = DVector::from_fn(m, |j, _| {
        let ratio = raw_scale[j] / problem.input_weight_scales[j];
        problem.input_weights[j] * ratio * ratio
    });
    let u_ref_dec = model.input_to_dec(&problem.u_ref);
    let state_lo = model.state_to_dec(&problem.state_lower);
    let state_hi = model.state_to_dec(&problem.state_upper);
    let input_lo = model.input_to_dec(&problem.input_lower);
    let input_hi = model.input_to_dec(&problem.input_upper);
    let boxed_dims: Vec<usize> = (0..d)
        .filter(|&i| state_lo[i].is_finite() || state_hi[i].is_finite())
        .collect();

    // Quadratic cost: diagonal Gauss-Newton Hessian, gradient from the
    // reference residuals of the current iterate.
    let mut p_triplets = Vec::with_capacity(n_vars);
    let mut q = DVector::zeros(n_vars);
    for k in 0..=big_n {
        let zs = layout.z_start(k);
        for i in 0..d {
            if w_dec[i] > 0.0 {
                p_triplets.push((zs + i, zs + i, 2.0 * w_dec[i]));
                q[zs + i] = 2.0 * w_dec[i] * (iterate.z[k][i] - reference_dec[k][i]);
            }
        }
        if k < big_n {
            let us = layout.u_start(k);
            for j in 0..m {
                if r_dec[j] > 0.0 {
                    p_triplets.push((us + j, us + j, 2.0 * r_dec[j]));
                    q[us + j] = 2.0 * r_dec[j] * (iterate.u[k][j] - u_ref_dec[j]);
                }
            }
        }
    }
    let p = CscMatrix::from_triplets(n_vars, n_vars, p_triplets);

    // Constraints. The measured stage-0 state is pinned by the equality row,
    // so state boxes apply to stages 1..=N only.
    let n_rows = n + big_n * n + big_n * boxed_dims.len() + big_n * m;
    let mut a_triplets = Vec::with_capacity(n + big_n * n * (n + m + 1) + n_rows);
    let mut lower = DVector::zeros(n_rows);
    let mut upper = DVector::zeros(n_rows);
    let mut row = 0usize;

    // Measured initial state: dz_0 = lift(x_hat) - z_init_0.
    for i in 0..n {
        a_triplets.push((row + i, layout.z_start(0) + i, 1.0));
        let rhs = z0_measured[i] - iterate.z[0][i];
        lower[row + i] = rhs;
        upper[row + i] = rhs;
    }
    row += n;

    // Linearized dynamics: dz_{k+1} - A_k dz_k - B_k du_k = r_k.
    for k in 0..big_n {
        let lin = model.linearize(&iterate.z[k], &iterate.u[k], &iterate.z[k + 1]);
        let zs = layout.z_start(k);
        let us = layout.u_start(k);
        let zn = layout.z_start(k + 1);
        for i in 0..n {
            for j in 0..n {
                let v = lin.a[(i, j)];
                if v != 0.0 {
                    a_triplets.push((row + i, zs + j, -v));
                }
            }
            for j in 0..m {
                let v = lin.b[(i, j)];
                if v != 0.0 {
                    a_triplets.push((row + i, us + j, -v));
                }
            }
            a_triplets.push((row + i, zn + i, 1.0));
            lower[row + i] = lin.r[i];
            upper[row + i] = lin.r[i];
        }
        row += n;
    }

    // State box on the projected block, shifted by the iterate.
    for k in 1..=big_n {
        let zs = layout.z_start(k);
        for &dim in &boxed_dims {
            a_triplets.push((row, zs + dim, 1.0));
            lower[row] = state_lo[dim] - iterate.z[k][dim];
            upper[row] = state_hi[dim] - iterate.z[k][dim];
            row += 1;
        }
    }

    // Input box.
    for k in 0..big_n {
        let us = layout.u_start(k);
        for j in 0..m {
            a_triplets.push((row, us + j, 1.0));
            lower[row] = input_lo[j] - iterate.u[k][j];
            upper[row] = input_hi[j] - iterate.u[k][j];
            row += 1;
        }
    }
    debug_assert_eq!(row, n_rows);

    Ok(QuadraticProgram {
        p,
        q,
        a: CscMatrix::from_triplets(n_rows, n_vars, a_triplets),
        l: lower,
        u: upper,
    })
}

/// Applies the QP step to the iterate and returns the step infinity norm.
pub(crate) fn apply_step(iterate: &mut SqpIterate, delta: &DVector<f64>, layout: &Layout) -> f64 {
    let mut norm = 0.0f64;
    for k in 0..=layout.horizon {
        let zs = layout.z_start(k);
        for i in 0..layout.n {
            let d = delta[zs + i];
            norm = norm.max(d.abs());
            iterate.z[k][i] += d;
        }
        if k < layout.horizon {
            let us = layout.u_start(k);
            for j in 0..layout.m {
                let d = delta[us + j];
                norm = norm.max(d.abs());
                iterate.u[k][j] += d;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Normalization;
    use crate::diffnet::KoopmanNet;
    use crate::model::KoopmanModel;
    use crate::qp::QpSettings;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    pub(crate) fn scalar_toy(f: f64, g: f64) -> KoopmanModel {
        let mut net = KoopmanNet::new_seeded(1, &[], 0, 1, 0);
        net.f[(0, 0)] = f;
        net.g[0][(0, 0)] = g;
        KoopmanModel::new(net, Normalization::identity(1, 1), 0.02).unwrap()
    }

    pub(crate) fn scalar_problem(horizon: usize) -> NmpcProblem {
        NmpcProblem {
            horizon,
            state_weights: DVector::from_vec(vec![2.0]),
            input_weights: DVector::from_vec(vec![0.3]),
            input_weight_scales: DVector::from_vec(vec![1.0]),
            input_lower: DVector::from_vec(vec![-1.0]),
            input_upper: DVector::from_vec(vec![1.0]),
            state_lower: DVector::from_vec(vec![f64::NEG_INFINITY]),
            state_upper: DVector::from_vec(vec![f64::INFINITY]),
            u_ref: DVector::zeros(1),
            sqp_convergence_tol: 1e-8,
            sqp_init_max_iters: 30,
            qp_settings: QpSettings {
                eps_abs: 1e-9,
                eps_rel: 1e-9,
                ..Default::default()
            },
        }
    }

    #[test]
    fn hand_assembled_scalar_subproblem_matches() {
        let model = scalar_toy(1.2, 0.5);
        let problem = scalar_problem(2);
        let iterate = SqpIterate {
            z: vec![
                DVector::from_vec(vec![0.5]),
                DVector::from_vec(vec![0.4]),
                DVector::from_vec(vec![0.3]),
            ],
            u: vec![DVector::from_vec(vec![0.2]), DVector::from_vec(vec![-0.1])],
        };
        let refs = vec![
            DVector::from_vec(vec![0.45]),
            DVector::from_vec(vec![0.35]),
            DVector::from_vec(vec![0.25]),
        ];
        let z0 = DVector::from_vec(vec![0.55]);
        let qp = build_subproblem(&&model, &problem, &iterate, &refs, &z0).unwrap();

        // Hand-written dense assembly; variables [dz0, du0, dz1, du1, dz2].
        let p_expected = DMatrix::from_diagonal(&DVector::from_vec(vec![
            4.0, 0.6, 4.0, 0.6, 4.0,
        ]));
        assert_relative_eq!(qp.p.to_dense(), p_expected, epsilon = 1e-15);

        let q_expected = DVector::from_vec(vec![0.2, 0.12, 0.2, -0.06, 0.2]);
        assert_relative_eq!(qp.q, q_expected, epsilon = 1e-12);

        // A_0 = 1.2 + 0.5 * 0.2, B_0 = 0.5 * 0.5; r_0 = 0.6 + 0.05 - 0.4.
        // A_1 = 1.2 - 0.05, B_1 = 0.5 * 0.4; r_1 = 0.48 - 0.02 - 0.3.
        #[rustfmt::skip]
        let a_expected = DMatrix::from_row_slice(5, 5, &[
            1.0,   0.0,   0.0,   0.0,  0.0,
            -1.3,  -0.25, 1.0,   0.0,  0.0,
            0.0,   0.0,   -1.15, -0.2, 1.0,
            0.0,   1.0,   0.0,   0.0,  0.0,
            0.0,   0.0,   0.0,   1.0,  0.0,
        ]);
        assert_relative_eq!(qp.a.to_dense(), a_expected, epsilon = 1e-12);

        let l_expected = DVector::from_vec(vec![0.05, 0.25, 0.16, -1.2, -0.9]);
        let u_expected = DVector::from_vec(vec![0.05, 0.25, 0.16, 0.8, 1.1]);
        assert_relative_eq!(qp.l, l_expected, epsilon = 1e-12);
        assert_relative_eq!(qp.u, u_expected, epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_iterate_yields_zero_step() {
        // F = 1: any constant state is an equilibrium at u = 0.
        let model = scalar_toy(1.0, 0.4);
        let problem = scalar_problem(3);
        let z_star = DVector::from_vec(vec![0.7]);
        let iterate = SqpIterate {
            z: vec![z_star.clone(); 4],
            u: vec![DVector::zeros(1); 3],
        };
        let refs = vec![z_star.clone(); 4];
        let qp = build_subproblem(&&model, &problem, &iterate, &refs, &z_star).unwrap();

        // The gradient's state part vanishes on the equilibrium reference.
        assert!(qp.q.amax() < 1e-15);
        // Dynamics residuals vanish on the feasible iterate.
        for i in 1..=3 {
            assert!(qp.l[i].abs() < 1e-15, "row {i} residual {}", qp.l[i]);
        }
        let sol = crate::qp::solve(&qp, &problem.qp_settings).unwrap();
        assert!(sol.x.amax() < 1e-7, "optimum should be zero step");
    }

    #[test]
    fn state_box_rows_appear_only_for_finite_bounds() {
        let model = scalar_toy(1.0, 0.4);
        let mut problem = scalar_problem(2);
        let iterate = SqpIterate {
            z: vec![DVector::zeros(1); 3],
            u: vec![DVector::zeros(1); 2],
        };
        let refs = vec![DVector::zeros(1); 3];
        let z0 = DVector::zeros(1);

        let no_box = build_subproblem(&&model, &problem, &iterate, &refs, &z0).unwrap();
        problem.state_lower[0] = -0.5;
        let with_box = build_subproblem(&&model, &problem, &iterate, &refs, &z0).unwrap();
        // Extra rows for stages 1..=N; the pinned measured stage has none.
        assert_eq!(with_box.num_constraints(), no_box.num_constraints() + 2);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = scalar_toy(1.0, 0.4);
        let problem = scalar_problem(2);
        let iterate = SqpIterate {
            z: vec![DVector::zeros(1); 2], // one too few
            u: vec![DVector::zeros(1); 2],
        };
        let refs = vec![DVector::zeros(1); 3];
        assert!(build_subproblem(&&model, &problem, &iterate, &refs, &DVector::zeros(1)).is_err());
    }
}
