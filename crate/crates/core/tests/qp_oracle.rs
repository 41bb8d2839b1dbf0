//! ADMM solutions against the brute-force active-set reference on random
//! strictly convex problems.

use koopman_core::qp::{self, active_set, CscMatrix, QpSettings, QpStatus, QuadraticProgram};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Random strictly convex QP with feasible bounds built around a random
/// point, mixing two-sided, one-sided and equality rows.
pub fn random_feasible_qp(rng: &mut StdRng, max_vars: usize, max_rows: usize) -> QuadraticProgram {
    let n = rng.gen_range(2..=max_vars);
    let m = rng.gen_range(0..=max_rows);

    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let p_dense = &l * l.transpose() + 0.1 * DMatrix::<f64>::identity(n, n);
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

    let a_dense = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let ax0 = &a_dense * &x0;
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for i in 0..m {
        match rng.gen_range(0..4) {
            0 => {
                // Two-sided box around the feasible point.
                lower[i] = ax0[i] - rng.gen_range(0.01..1.0);
                upper[i] = ax0[i] + rng.gen_range(0.01..1.0);
            }
            1 => {
                lower[i] = ax0[i] - rng.gen_range(0.01..1.0);
                upper[i] = f64::INFINITY;
            }
            2 => {
                lower[i] = f64::NEG_INFINITY;
                upper[i] = ax0[i] + rng.gen_range(0.01..1.0);
            }
            _ => {
                lower[i] = ax0[i];
                upper[i] = ax0[i];
            }
        }
    }

    QuadraticProgram {
        p: CscMatrix::from_dense(&p_dense),
        q,
        a: CscMatrix::from_dense(&a_dense),
        l: lower,
        u: upper,
    }
}

#[test]
fn admm_matches_active_set_oracle() {
    let mut rng = StdRng::seed_from_u64(20240117);
    let mut settings = QpSettings::default();
    settings.eps_abs = 1e-8;
    settings.eps_rel = 1e-8;
    settings.max_iter = 50_000;

    for trial in 0..30 {
        let problem = random_feasible_qp(&mut rng, 20, 6);
        let sol = qp::solve(&problem, &settings).unwrap();
        assert_eq!(
            sol.status,
            QpStatus::Solved,
            "trial {trial}: solver status {:?}",
            sol.status
        );
        let (x_ref, _) = active_set::solve_reference(&problem)
            .expect("oracle found no KKT point on a feasible problem");
        let err = (&sol.x - &x_ref).amax();
        assert!(
            err < 1e-4,
            "trial {trial}: primal mismatch {err:.3e} (n = {})",
            problem.num_vars()
        );
        let (p_res, d_res, _) = qp::kkt_residuals(&problem, &sol);
        assert!(p_res < 1e-5 && d_res < 1e-5, "trial {trial}: residuals {p_res:.1e}/{d_res:.1e}");
    }
}
