//! Operator-splitting (ADMM) QP solver with Ruiz preconditioning.

use nalgebra::DVector;

use super::{BandMatrix, CscMatrix, QpSettings, QpSolution, QpStatus, QuadraticProgram};
use crate::error::Result;

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_EQ_BOOST: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_UPDATE_FACTOR: f64 = 5.0;

/// Reusable solver state. Receding-horizon callers keep one workspace per
/// control loop so allocations and the band layout survive across ticks.
#[derive(Debug)]
pub struct AdmmWorkspace {
    band: BandMatrix,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

impl Default for AdmmWorkspace {
    fn default() -> Self {
        Self {
            band: BandMatrix::zeros(0, 0),
            x: DVector::zeros(0),
            z: DVector::zeros(0),
            y: DVector::zeros(0),
        }
    }
}

struct Scaled {
    p: CscMatrix,
    a: CscMatrix,
    at: CscMatrix,
    q: DVector<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    /// Variable scaling (x = d .* x_scaled).
    d: Vec<f64>,
    /// Constraint scaling (y = e .* y_scaled / cost).
    e: Vec<f64>,
    cost: f64,
}

fn equilibrate(qp: &QuadraticProgram, sweeps: usize) -> Scaled {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let mut p = qp.p.clone();
    let mut a = qp.a.clone();
    let mut q = qp.q.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut cost = 1.0;

    let mut col_p = vec![0.0; n];
    let mut col_a = vec![0.0; n];
    let mut row_a = vec![0.0; m];
    for _ in 0..sweeps {
        p.col_inf_norms(&mut col_p);
        a.col_inf_norms(&mut col_a);
        a.row_inf_norms(&mut row_a);

        let delta_x: Vec<f64> = (0..n)
            .map(|j| {
                let norm = col_p[j].max(col_a[j]);
                if norm > 0.0 {
                    (1.0 / norm.sqrt()).clamp(MIN_SCALING, MAX_SCALING)
                } else {
                    1.0
                }
            })
            .collect();
        let delta_e: Vec<f64> = (0..m)
            .map(|i| {
                if row_a[i] > 0.0 {
                    (1.0 / row_a[i].sqrt()).clamp(MIN_SCALING, MAX_SCALING)
                } else {
                    1.0
                }
            })
            .collect();

        p.scale(&delta_x, &delta_x);
        a.scale(&delta_e, &delta_x);
        for j in 0..n {
            q[j] *= delta_x[j];
            d[j] *= delta_x[j];
        }
        for i in 0..m {
            e[i] *= delta_e[i];
        }

        // Cost normalization keeps the objective O(1) after equilibration.
        p.col_inf_norms(&mut col_p);
        let mean_col = if n > 0 {
            col_p.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let gamma_denom = mean_col.max(q.amax());
        if gamma_denom > 0.0 {
            let gamma = (1.0 / gamma_denom).clamp(MIN_SCALING, MAX_SCALING);
            p.scale_values(gamma);
            q *= gamma;
            cost *= gamma;
        }
    }

    let mut l = qp.l.clone();
    let mut u = qp.u.clone();
    for i in 0..m {
        l[i] *= e[i];
        u[i] *= e[i];
    }
    let at = a.transpose();
    Scaled {
        p,
        a,
        at,
        q,
        l,
        u,
        d,
        e,
        cost,
    }
}

/// Half-bandwidth of `P + sigma I + A' diag(rho) A` in the given variable
/// ordering: the widest column of `P` or row support of `A`.
fn kkt_half_bandwidth(p: &CscMatrix, at: &CscMatrix) -> usize {
    let mut hbw = 0usize;
    for c in 0..p.ncols {
        for k in p.indptr[c]..p.indptr[c + 1] {
            hbw = hbw.max(p.indices[k].abs_diff(c));
        }
    }
    // Rows of A are columns of A'.
    for r in 0..at.ncols {
        let lo = at.indptr[r];
        let hi = at.indptr[r + 1];
        if hi > lo {
            let cols = &at.indices[lo..hi];
            let min = cols.iter().min().unwrap();
            let max = cols.iter().max().unwrap();
            hbw = hbw.max(max - min);
        }
    }
    hbw
}

fn assemble_and_factor(
    band: &mut BandMatrix,
    scaled: &Scaled,
    sigma: f64,
    rho: &[f64],
    hbw: usize,
) -> Result<()> {
    let n = scaled.p.ncols;
    band.reset(n, hbw);
    for c in 0..n {
        for k in scaled.p.indptr[c]..scaled.p.indptr[c + 1] {
            let r = scaled.p.indices[k];
            if r >= c {
                band.add(r, c, scaled.p.data[k]);
            }
        }
        band.add(c, c, sigma);
    }
    for row in 0..scaled.at.ncols {
        let lo = scaled.at.indptr[row];
        let hi = scaled.at.indptr[row + 1];
        let rho_i = rho[row];
        for ka in lo..hi {
            let (ja, va) = (scaled.at.indices[ka], scaled.at.data[ka]);
            for kb in lo..=ka {
                let (jb, vb) = (scaled.at.indices[kb], scaled.at.data[kb]);
                band.add(ja.max(jb), ja.min(jb), rho_i * va * vb);
            }
        }
    }
    band.cholesky_in_place()
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// Solves a QP with a fresh workspace. See [`AdmmWorkspace::solve`].
pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    AdmmWorkspace::new().solve(qp, settings)
}

impl AdmmWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
        qp.validate()?;
        settings.validate()?;
        let n = qp.num_vars();
        let m = qp.num_constraints();

        let scaled = equilibrate(qp, settings.scaling_iters);
        let hbw = kkt_half_bandwidth(&scaled.p, &scaled.at);

        // Per-row penalties: equality rows get a stiffer rho.
        let mut rho_base = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let equality: Vec<bool> = (0..m)
            .map(|i| qp.l[i].is_finite() && qp.l[i] == qp.u[i])
            .collect();
        let build_rho = |base: f64| -> Vec<f64> {
            equality
                .iter()
                .map(|&eq| {
                    if eq {
                        (base * RHO_EQ_BOOST).clamp(RHO_MIN, RHO_MAX)
                    } else {
                        base
                    }
                })
                .collect()
        };
        let mut rho = build_rho(rho_base);
        assemble_and_factor(&mut self.band, &scaled, settings.sigma, &rho, hbw)?;

        // Warm start from caller-provided or previously stored unscaled
        // iterates; fall back to zeros.
        let mut x = DVector::zeros(n);
        let warm_x = settings
            .warm_x
            .as_ref()
            .filter(|w| w.len() == n)
            .or_else(|| Some(&self.x).filter(|w| w.len() == n));
        if let Some(wx) = warm_x {
            for j in 0..n {
                x[j] = wx[j] / scaled.d[j];
            }
        }
        let mut y = DVector::zeros(m);
        let warm_y = settings
            .warm_y
            .as_ref()
            .filter(|w| w.len() == m)
            .or_else(|| Some(&self.y).filter(|w| w.len() == m));
        if let Some(wy) = warm_y {
            for i in 0..m {
                y[i] = wy[i] * scaled.cost / scaled.e[i];
            }
        }
        let mut z = DVector::zeros(m);
        scaled.a.mul_vec(&x, &mut z);
        for i in 0..m {
            z[i] = z[i].clamp(scaled.l[i], scaled.u[i]);
        }

        let mut x_tilde = DVector::zeros(n);
        let mut z_tilde = DVector::zeros(m);
        let mut rhs = DVector::zeros(n);
        let mut work_m = DVector::zeros(m);
        let mut work_n = DVector::zeros(n);
        let mut delta_x = DVector::zeros(n);
        let mut delta_y = DVector::zeros(m);

        let mut status = QpStatus::MaxIterations;
        let mut iterations = settings.max_iter;
        let alpha = settings.alpha;

        for iter in 1..=settings.max_iter {
            // x-update: (P + sigma I + A' rho A) x~ = sigma x - q + A'(rho z - y)
            for i in 0..m {
                work_m[i] = rho[i] * z[i] - y[i];
            }
            scaled.a.mul_vec_transpose(&work_m, &mut work_n);
            for j in 0..n {
                rhs[j] = settings.sigma * x[j] - scaled.q[j] + work_n[j];
            }
            x_tilde.copy_from(&rhs);
            self.band.solve_in_place(x_tilde.as_mut_slice());
            scaled.a.mul_vec(&x_tilde, &mut z_tilde);

            for j in 0..n {
                let next = alpha * x_tilde[j] + (1.0 - alpha) * x[j];
                delta_x[j] = next - x[j];
                x[j] = next;
            }
            for i in 0..m {
                let relaxed = alpha * z_tilde[i] + (1.0 - alpha) * z[i];
                let z_next = (relaxed + y[i] / rho[i]).clamp(scaled.l[i], scaled.u[i]);
                let dy = rho[i] * (relaxed - z_next);
                delta_y[i] = dy;
                y[i] += dy;
                z[i] = z_next;
            }

            if iter % settings.check_interval != 0 && iter != settings.max_iter {
                continue;
            }

            // Unscaled residuals.
            let (r_prim, r_dual, norms) = self.residuals(&scaled, &x, &z, &y);
            let eps_prim = settings.eps_abs + settings.eps_rel * norms.prim;
            let eps_dual = settings.eps_abs + settings.eps_rel * norms.dual;
            if (m == 0 || r_prim <= eps_prim) && r_dual <= eps_dual {
                status = QpStatus::Solved;
                iterations = iter;
                break;
            }

            if m > 0 {
                if let Some(infeasible) =
                    self.certify_infeasible(qp, &scaled, &delta_x, &delta_y, settings)
                {
                    status = infeasible;
                    iterations = iter;
                    break;
                }
            }

            if settings.adaptive_rho && m > 0 {
                let prim_rel = r_prim / norms.prim.max(1e-12);
                let dual_rel = r_dual / norms.dual.max(1e-12);
                let ratio = (prim_rel / dual_rel.max(1e-12)).sqrt();
                let candidate = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
                if candidate > rho_base * RHO_UPDATE_FACTOR
                    || candidate < rho_base / RHO_UPDATE_FACTOR
                {
                    rho_base = candidate;
                    rho = build_rho(rho_base);
                    assemble_and_factor(&mut self.band, &scaled, settings.sigma, &rho, hbw)?;
                }
            }
        }

        // Unscale; the workspace keeps the unscaled pair for warm starts.
        let mut x_out = DVector::zeros(n);
        for j in 0..n {
            x_out[j] = scaled.d[j] * x[j];
        }
        let mut y_out = DVector::zeros(m);
        for i in 0..m {
            y_out[i] = scaled.e[i] * y[i] / scaled.cost;
        }
        self.x = x_out.clone();
        self.y = y_out.clone();
        self.z = z;

        let (primal_residual, dual_residual, _) = kkt_residuals_inner(qp, &x_out, &y_out);
        Ok(QpSolution {
            x: x_out,
            y: y_out,
            status,
            iterations,
            primal_residual,
            dual_residual,
        })
    }

    fn residuals(
        &self,
        s: &Scaled,
        x: &DVector<f64>,
        z: &DVector<f64>,
        y: &DVector<f64>,
    ) -> (f64, f64, ResidualNorms) {
        let n = x.len();
        let m = z.len();
        let mut ax = DVector::zeros(m);
        s.a.mul_vec(x, &mut ax);
        let mut r_prim = 0.0f64;
        let mut ax_norm = 0.0f64;
        let mut z_norm = 0.0f64;
        for i in 0..m {
            let inv_e = 1.0 / s.e[i];
            r_prim = r_prim.max(((ax[i] - z[i]) * inv_e).abs());
            ax_norm = ax_norm.max((ax[i] * inv_e).abs());
            z_norm = z_norm.max((z[i] * inv_e).abs());
        }

        let mut px = DVector::zeros(n);
        s.p.mul_vec(x, &mut px);
        let mut aty = DVector::zeros(n);
        s.a.mul_vec_transpose(y, &mut aty);
        let mut r_dual = 0.0f64;
        let mut px_norm = 0.0f64;
        let mut aty_norm = 0.0f64;
        let mut q_norm = 0.0f64;
        let inv_c = 1.0 / s.cost;
        for j in 0..n {
            let inv_d = inv_c / s.d[j];
            r_dual = r_dual.max(((px[j] + s.q[j] + aty[j]) * inv_d).abs());
            px_norm = px_norm.max((px[j] * inv_d).abs());
            aty_norm = aty_norm.max((aty[j] * inv_d).abs());
            q_norm = q_norm.max((s.q[j] * inv_d).abs());
        }

        (
            r_prim,
            r_dual,
            ResidualNorms {
                prim: ax_norm.max(z_norm),
                dual: px_norm.max(aty_norm).max(q_norm),
            },
        )
    }

    fn certify_infeasible(
        &self,
        qp: &QuadraticProgram,
        s: &Scaled,
        delta_x: &DVector<f64>,
        delta_y: &DVector<f64>,
        settings: &QpSettings,
    ) -> Option<QpStatus> {
        let eps = settings.eps_infeasible;
        let n = delta_x.len();
        let m = delta_y.len();

        // Primal infeasibility: a dual direction with A' dy = 0 and negative
        // support function.
        let mut dy_u = DVector::zeros(m);
        for i in 0..m {
            dy_u[i] = s.e[i] * delta_y[i] / s.cost;
        }
        let ny = inf_norm(&dy_u);
        if ny > 1e-12 {
            let mut at_dy = DVector::zeros(n);
            qp.a.mul_vec_transpose(&dy_u, &mut at_dy);
            if inf_norm(&at_dy) <= eps * ny {
                let mut support = 0.0f64;
                let mut valid = true;
                for i in 0..m {
                    let dyp = dy_u[i].max(0.0);
                    let dym = dy_u[i].min(0.0);
                    if dyp > 1e-12 * ny {
                        if qp.u[i].is_finite() {
                            support += qp.u[i] * dyp;
                        } else {
                            valid = false;
                            break;
                        }
                    }
                    if dym < -1e-12 * ny {
                        if qp.l[i].is_finite() {
                            support += qp.l[i] * dym;
                        } else {
                            valid = false;
                            break;
                        }
                    }
                }
                if valid && support <= -eps * ny {
                    return Some(QpStatus::PrimalInfeasible);
                }
            }
        }

        // Dual infeasibility: a primal recession direction with negative cost
        // slope staying feasible for the constraint cone.
        let mut dx_u = DVector::zeros(n);
        for j in 0..n {
            dx_u[j] = s.d[j] * delta_x[j];
        }
        let nx = inf_norm(&dx_u);
        if nx > 1e-12 {
            let mut p_dx = DVector::zeros(n);
            qp.p.mul_vec(&dx_u, &mut p_dx);
            let q_slope = qp.q.dot(&dx_u);
            if inf_norm(&p_dx) <= eps * nx && q_slope <= -eps * nx {
                let mut a_dx = DVector::zeros(m);
                qp.a.mul_vec(&dx_u, &mut a_dx);
                let ok = (0..m).all(|i| {
                    let v = a_dx[i];
                    match (qp.l[i].is_finite(), qp.u[i].is_finite()) {
                        (true, true) => v.abs() <= eps * nx,
                        (true, false) => v >= -eps * nx,
                        (false, true) => v <= eps * nx,
                        (false, false) => true,
                    }
                });
                if ok {
                    return Some(QpStatus::DualInfeasible);
                }
            }
        }
        None
    }
}

struct ResidualNorms {
    prim: f64,
    dual: f64,
}

/// Primal, dual and complementarity residuals of a candidate solution,
/// computed from scratch on the original problem.
pub fn kkt_residuals(qp: &QuadraticProgram, solution: &QpSolution) -> (f64, f64, f64) {
    kkt_residuals_inner(qp, &solution.x, &solution.y)
}

fn kkt_residuals_inner(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> (f64, f64, f64) {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let mut ax = DVector::zeros(m);
    qp.a.mul_vec(x, &mut ax);

    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..m {
        let proj = ax[i].clamp(qp.l[i], qp.u[i]);
        primal = primal.max((ax[i] - proj).abs());
        let y_pos = y[i].max(0.0);
        let y_neg = (-y[i]).max(0.0);
        if y_pos > 1e-12 {
            comp = comp.max(y_pos * (qp.u[i] - ax[i]).abs());
        }
        if y_neg > 1e-12 {
            comp = comp.max(y_neg * (ax[i] - qp.l[i]).abs());
        }
    }

    let mut px = DVector::zeros(n);
    qp.p.mul_vec(x, &mut px);
    let mut aty = DVector::zeros(n);
    qp.a.mul_vec_transpose(y, &mut aty);
    let mut dual = 0.0f64;
    for j in 0..n {
        dual = dual.max((px[j] + qp.q[j] + aty[j]).abs());
    }
    (primal, dual, comp)
}
