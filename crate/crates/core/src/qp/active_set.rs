//! Brute-force active-set reference solver for small dense QPs.
//!
//! Enumerates every lower/upper/inactive combination of the constraint rows
//! and solves the corresponding equality-constrained KKT system directly.
//! Exponential in the number of rows; intended as an independent oracle for
//! testing the ADMM solver, not for production use. The implementation shares
//! nothing with the iterative path.

use nalgebra::{DMatrix, DVector};

use super::QuadraticProgram;

const FEAS_TOL: f64 = 1e-8;

#[derive(Clone, Copy, PartialEq)]
enum RowChoice {
    Inactive,
    Lower,
    Upper,
    Equality,
}

/// Returns the optimal primal/dual pair of a feasible, strictly convex QP,
/// or `None` when no active-set combination satisfies the KKT conditions
/// (infeasible problem or tolerance failure).
pub fn solve_reference(qp: &QuadraticProgram) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = qp.num_constraints();
    let p = qp.p.to_dense();
    let a = qp.a.to_dense();

    let mut options: Vec<Vec<RowChoice>> = Vec::with_capacity(m);
    for i in 0..m {
        if qp.l[i].is_finite() && qp.l[i] == qp.u[i] {
            options.push(vec![RowChoice::Equality]);
        } else {
            let mut opts = vec![RowChoice::Inactive];
            if qp.l[i].is_finite() {
                opts.push(RowChoice::Lower);
            }
            if qp.u[i].is_finite() {
                opts.push(RowChoice::Upper);
            }
            options.push(opts);
        }
    }

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let mut choice = vec![0usize; m];
    loop {
        let assignment: Vec<RowChoice> = (0..m).map(|i| options[i][choice[i]]).collect();
        if let Some((x, y)) = try_active_set(qp, &p, &a, &assignment) {
            let obj = 0.5 * x.dot(&(&p * &x)) + qp.q.dot(&x);
            if best.as_ref().map_or(true, |(b, _, _)| obj < *b - 1e-12) {
                best = Some((obj, x, y));
            }
        }
        // Advance the mixed-radix counter over row choices.
        let mut pos = 0;
        loop {
            if pos == m {
                return best.map(|(_, x, y)| (x, y));
            }
            choice[pos] += 1;
            if choice[pos] < options[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

fn try_active_set(
    qp: &QuadraticProgram,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    assignment: &[RowChoice],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let active: Vec<usize> = (0..m)
        .filter(|&i| assignment[i] != RowChoice::Inactive)
        .collect();
    let na = active.len();
    if na > n {
        return None;
    }

    // KKT system: [P A_act'; A_act 0] [x; nu] = [-q; b_act].
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    let mut rhs = DVector::zeros(n + na);
    for j in 0..n {
        rhs[j] = -qp.q[j];
    }
    for (k, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + k, j)] = a[(i, j)];
            kkt[(j, n + k)] = a[(i, j)];
        }
        rhs[n + k] = match assignment[i] {
            RowChoice::Lower => qp.l[i],
            RowChoice::Upper | RowChoice::Equality => qp.u[i],
            RowChoice::Inactive => unreachable!(),
        };
    }

    let sol = kkt.lu().solve(&rhs)?;
    let x = DVector::from(sol.rows(0, n).into_owned());

    // Dual sign conditions: upper-active multipliers nonnegative, lower-active
    // nonpositive, equality rows free.
    let mut y = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        let nu = sol[n + k];
        match assignment[i] {
            RowChoice::Upper if nu < -FEAS_TOL => return None,
            RowChoice::Lower if nu > FEAS_TOL => return None,
            _ => {}
        }
        y[i] = nu;
    }

    // Primal feasibility of the inactive rows.
    let ax = a * &x;
    for i in 0..m {
        if assignment[i] == RowChoice::Inactive
            && (ax[i] < qp.l[i] - FEAS_TOL || ax[i] > qp.u[i] + FEAS_TOL)
        {
            return None;
        }
    }
    Some((x, y))
}
