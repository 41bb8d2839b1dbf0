//! SQP initialization, the closed-loop controller tick and the solution
//! shift.

use std::time::Instant;

use nalgebra::DVector;

use super::condense::{apply_step, Layout};
use super::{build_subproblem, NmpcProblem, PredictionModel, SqpIterate};
use crate::error::{CoreError, Result};
use crate::qp::{AdmmWorkspace, QpStatus};

/// Per-tick controller diagnostics.
#[derive(Debug, Clone)]
pub struct TickStats {
    pub qp_iterations: usize,
    pub qp_status: QpStatus,
    pub solve_ms: f64,
    /// Infinity norm of the accepted Newton step.
    pub sqp_residual: f64,
    pub degraded: bool,
}

/// Runs the SQP to convergence from a supplied guess: build, solve, full-step
/// update until the step norm drops below the tolerance or the iteration cap.
pub fn sqp_initialize<M: PredictionModel>(
    model: &M,
    problem: &NmpcProblem,
    reference_dec: &[DVector<f64>],
    z0_measured: &DVector<f64>,
    mut iterate: SqpIterate,
    workspace: &mut AdmmWorkspace,
) -> Result<(SqpIterate, usize)> {
    let layout = Layout {
        n: model.dec_dim(),
        m: model.input_dim(),
        horizon: problem.horizon,
    };
    for iter in 1..=problem.sqp_init_max_iters.max(1) {
        let qp = build_subproblem(model, problem, &iterate, reference_dec, z0_measured)?;
        let solution = workspace.solve(&qp, &problem.qp_settings)?;
        if solution.status != QpStatus::Solved {
            return Err(CoreError::QpFailure(format!(
                "SQP initialization iteration {iter}: QP status {:?} after {} iterations \
                 (primal {:.2e}, dual {:.2e})",
                solution.status, solution.iterations, solution.primal_residual, solution.dual_residual
            )));
        }
        let step_norm = apply_step(&mut iterate, &solution.x, &layout);
        if step_norm < problem.sqp_convergence_tol {
            return Ok((iterate, iter));
        }
    }
    Ok((iterate, problem.sqp_init_max_iters))
}

/// One-stage warm-start shift: inputs move forward one stage with the last
/// one duplicated; states move forward one stage and the terminal state is
/// re-predicted from the model, which keeps the final stage dynamics-feasible.
pub fn shift<M: PredictionModel>(iterate: &SqpIterate, model: &M) -> SqpIterate {
    let n_stages = iterate.u.len();
    let mut u = Vec::with_capacity(n_stages);
    for k in 0..n_stages {
        let src = (k + 1).min(n_stages - 1);
        u.push(iterate.u[src].clone());
    }
    let mut z = Vec::with_capacity(iterate.z.len());
    for k in 0..n_stages {
        z.push(iterate.z[k + 1].clone());
    }
    z.push(model.step(&z[n_stages - 1], &u[n_stages - 1]));
    SqpIterate { z, u }
}

/// Builds the default initial guess: decision states lifted from the raw
/// reference window, reference inputs everywhere.
pub fn reference_guess<M: PredictionModel>(
    model: &M,
    problem: &NmpcProblem,
    refs_raw: &[DVector<f64>],
) -> Result<SqpIterate> {
    let u_ref_dec = model.input_to_dec(&problem.u_ref);
    let mut z = Vec::with_capacity(problem.horizon + 1);
    for k in 0..=problem.horizon {
        let idx = k.min(refs_raw.len() - 1);
        z.push(model.lift(refs_raw[idx].as_slice())?);
    }
    Ok(SqpIterate {
        z,
        u: vec![u_ref_dec; problem.horizon],
    })
}

/// Closed-loop receding-horizon controller: initialized to convergence, then
/// one linearization and one QP per tick, emit, shift.
pub struct NmpcController<M: PredictionModel> {
    pub model: M,
    pub problem: NmpcProblem,
    refs_raw: Vec<DVector<f64>>,
    refs_dec: Vec<DVector<f64>>,
    tick: usize,
    iterate: SqpIterate,
    workspace: AdmmWorkspace,
    last_input: DVector<f64>,
    degraded_streak: usize,
    last_stats: Option<TickStats>,
}

impl<M: PredictionModel> NmpcController<M> {
    /// Builds the controller and runs the SQP to convergence from the
    /// reference-based guess at the initial state.
    pub fn new(
        model: M,
        problem: NmpcProblem,
        refs_raw: Vec<DVector<f64>>,
        x0_raw: &[f64],
    ) -> Result<Self> {
        problem.validate(model.state_dim(), model.input_dim())?;
        if refs_raw.is_empty() {
            return Err(CoreError::InvalidConfig("empty reference".into()));
        }
        let refs_dec: Vec<DVector<f64>> =
            refs_raw.iter().map(|x| model.state_to_dec(x)).collect();
        let guess = reference_guess(&model, &problem, &refs_raw)?;
        let mut workspace = AdmmWorkspace::new();
        let z0 = model.lift(x0_raw)?;
        let window = window_refs(&refs_dec, 0, problem.horizon);
        let (iterate, _) = sqp_initialize(&model, &problem, &window, &z0, guess, &mut workspace)?;
        let last_input = model.input_from_dec(&iterate.u[0]);
        Ok(Self {
            model,
            problem,
            refs_raw,
            refs_dec,
            tick: 0,
            iterate,
            workspace,
            last_input,
            degraded_streak: 0,
            last_stats: None,
        })
    }

    pub fn tick_index(&self) -> usize {
        self.tick
    }

    pub fn last_stats(&self) -> Option<&TickStats> {
        self.last_stats.as_ref()
    }

    pub fn iterate(&self) -> &SqpIterate {
        &self.iterate
    }

    /// Raw reference state for the current tick.
    pub fn current_reference(&self) -> &DVector<f64> {
        &self.refs_raw[self.tick.min(self.refs_raw.len() - 1)]
    }

    /// One tick: linearize along the iterate, lift the measurement, solve the
    /// QP once, take the full step, emit the first input (clamped to the raw
    /// box), then shift the solution one stage for the next tick.
    ///
    /// A failed QP yields the previous input and a degraded flag; three
    /// consecutive degraded ticks raise a controller fault.
    pub fn step(&mut self, x_hat_raw: &[f64]) -> Result<DVector<f64>> {
        let layout = Layout {
            n: self.model.dec_dim(),
            m: self.model.input_dim(),
            horizon: self.problem.horizon,
        };
        let z0 = self.model.lift(x_hat_raw)?;
        let window = window_refs(&self.refs_dec, self.tick, self.problem.horizon);
        let qp = build_subproblem(&self.model, &self.problem, &self.iterate, &window, &z0)?;

        let started = Instant::now();
        let solution = self.workspace.solve(&qp, &self.problem.qp_settings)?;
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;

        if solution.status != QpStatus::Solved {
            self.degraded_streak += 1;
            self.last_stats = Some(TickStats {
                qp_iterations: solution.iterations,
                qp_status: solution.status,
                solve_ms,
                sqp_residual: f64::NAN,
                degraded: true,
            });
            if self.degraded_streak >= 3 {
                return Err(CoreError::ControllerFault(format!(
                    "tick {}: {} consecutive degraded ticks (last QP status {:?})",
                    self.tick, self.degraded_streak, solution.status
                )));
            }
            self.tick += 1;
            return Ok(self.last_input.clone());
        }
        self.degraded_streak = 0;

        let step_norm = apply_step(&mut self.iterate, &solution.x, &layout);

        // Emit the first input in raw units, clamped to the box exactly.
        let mut u0 = self.model.input_from_dec(&self.iterate.u[0]);
        for j in 0..u0.len() {
            u0[j] = u0[j].clamp(self.problem.input_lower[j], self.problem.input_upper[j]);
        }

        self.iterate = shift(&self.iterate, &self.model);
        self.tick += 1;
        self.last_input = u0.clone();
        self.last_stats = Some(TickStats {
            qp_iterations: solution.iterations,
            qp_status: solution.status,
            solve_ms,
            sqp_residual: step_norm,
            degraded: false,
        });
        Ok(u0)
    }
}

fn window_refs(refs_dec: &[DVector<f64>], tick: usize, horizon: usize) -> Vec<DVector<f64>> {
    (0..=horizon)
        .map(|k| refs_dec[(tick + k).min(refs_dec.len() - 1)].clone())
        .collect()
}

/// Objective value of the receding-horizon problem for a given input
/// sequence, evaluated by rolling the model forward from `z0` (no
/// linearization): state terms for stages `0..=N`, input terms for `0..N`.
pub fn nlp_cost<M: PredictionModel>(
    model: &M,
    problem: &NmpcProblem,
    reference_dec: &[DVector<f64>],
    z0: &DVector<f64>,
    inputs_dec: &[DVector<f64>],
) -> f64 {
    let w_dec = model.state_weights_to_dec(&problem.state_weights);
    let raw_scale = model.input_raw_scale();
    let u_ref_dec = model.input_to_dec(&problem.u_ref);
    let d = model.state_dim();
    let mut z = z0.clone();
    let mut cost = 0.0;
    for k in 0..=inputs_dec.len() {
        let reference = &reference_dec[k.min(reference_dec.len() - 1)];
        for i in 0..d {
            let e = z[i] - reference[i];
            cost += w_dec[i] * e * e;
        }
        if k < inputs_dec.len() {
            for j in 0..inputs_dec[k].len() {
                let ratio = raw_scale[j] / problem.input_weight_scales[j];
                let e = (inputs_dec[k][j] - u_ref_dec[j]) * ratio;
                cost += problem.input_weights[j] * e * e;
            }
            z = model.step(&z, &inputs_dec[k]);
        }
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Normalization;
    use crate::diffnet::KoopmanNet;
    use crate::model::KoopmanModel;
    use crate::qp::QpSettings;

    fn scalar_toy(f: f64, g: f64) -> KoopmanModel {
        let mut net = KoopmanNet::new_seeded(1, &[], 0, 1, 0);
        net.f[(0, 0)] = f;
        net.g[0][(0, 0)] = g;
        KoopmanModel::new(net, Normalization::identity(1, 1), 0.02).unwrap()
    }

    fn scalar_problem(horizon: usize) -> NmpcProblem {
        NmpcProblem {
            horizon,
            state_weights: nalgebra::DVector::from_vec(vec![2.0]),
            input_weights: nalgebra::DVector::from_vec(vec![0.3]),
            input_weight_scales: nalgebra::DVector::from_vec(vec![1.0]),
            input_lower: nalgebra::DVector::from_vec(vec![-1.0]),
            input_upper: nalgebra::DVector::from_vec(vec![1.0]),
            state_lower: nalgebra::DVector::from_vec(vec![f64::NEG_INFINITY]),
            state_upper: nalgebra::DVector::from_vec(vec![f64::INFINITY]),
            u_ref: nalgebra::DVector::zeros(1),
            sqp_convergence_tol: 1e-8,
            sqp_init_max_iters: 40,
            qp_settings: QpSettings {
                eps_abs: 1e-9,
                eps_rel: 1e-9,
                max_iter: 20_000,
                ..Default::default()
            },
        }
    }

    #[test]
    fn equilibrium_initialization_converges_immediately() {
        let model = scalar_toy(1.0, 0.4);
        let problem = scalar_problem(3);
        let z_star = DVector::from_vec(vec![0.6]);
        let guess = SqpIterate {
            z: vec![z_star.clone(); 4],
            u: vec![DVector::zeros(1); 3],
        };
        let refs = vec![z_star.clone(); 4];
        let mut ws = AdmmWorkspace::new();
        let (iterate, iters) =
            sqp_initialize(&&model, &problem, &refs, &z_star, guess, &mut ws).unwrap();
        assert!(iters <= 2, "took {iters} iterations at an equilibrium");
        assert!((iterate.z[0][0] - 0.6).abs() < 1e-7);
        assert!(iterate.u.iter().all(|u| u.amax() < 1e-7));
    }

    #[test]
    fn infinite_tolerance_returns_after_one_iteration() {
        let model = scalar_toy(1.1, 0.4);
        let mut problem = scalar_problem(3);
        problem.sqp_convergence_tol = f64::INFINITY;
        let guess = SqpIterate {
            z: vec![DVector::from_vec(vec![0.5]); 4],
            u: vec![DVector::zeros(1); 3],
        };
        let refs = vec![DVector::zeros(1); 4];
        let mut ws = AdmmWorkspace::new();
        let (_, iters) = sqp_initialize(
            &&model,
            &problem,
            &refs,
            &DVector::from_vec(vec![0.5]),
            guess,
            &mut ws,
        )
        .unwrap();
        assert_eq!(iters, 1);
    }

    #[test]
    fn zero_step_at_a_converged_point() {
        // After convergence, one more QP returns a near-zero Newton step.
        let model = scalar_toy(1.15, 0.5);
        let problem = scalar_problem(4);
        let refs: Vec<DVector<f64>> = (0..5)
            .map(|k| DVector::from_vec(vec![0.3 - 0.05 * k as f64]))
            .collect();
        let z0 = DVector::from_vec(vec![0.45]);
        let guess = SqpIterate {
            z: vec![z0.clone(); 5],
            u: vec![DVector::zeros(1); 4],
        };
        let mut ws = AdmmWorkspace::new();
        let (iterate, _) =
            sqp_initialize(&&model, &problem, &refs, &z0, guess, &mut ws).unwrap();
        let qp = build_subproblem(&&model, &problem, &iterate, &refs, &z0).unwrap();
        let sol = ws.solve(&qp, &problem.qp_settings).unwrap();
        assert!(
            sol.x.amax() < 10.0 * problem.sqp_convergence_tol,
            "step norm {:.3e} after convergence",
            sol.x.amax()
        );
    }

    #[test]
    fn shift_is_identity_at_equilibrium() {
        let model = scalar_toy(1.0, 0.4);
        let z_star = DVector::from_vec(vec![0.8]);
        let iterate = SqpIterate {
            z: vec![z_star.clone(); 5],
            u: vec![DVector::zeros(1); 4],
        };
        let shifted = shift(&iterate, &&model);
        assert_eq!(shifted, iterate);
    }

    #[test]
    fn shift_keeps_dynamics_feasibility() {
        // Roll a feasible trajectory, shift it, and audit the residuals: all
        // stages stay feasible, including the re-predicted terminal one.
        let model = scalar_toy(1.05, 0.3);
        let mut z = vec![DVector::from_vec(vec![0.4])];
        let u: Vec<DVector<f64>> = (0..4)
            .map(|k| DVector::from_vec(vec![0.1 * (k as f64 - 1.5)]))
            .collect();
        for k in 0..4 {
            let next = PredictionModel::step(&&model, &z[k], &u[k]);
            z.push(next);
        }
        let iterate = SqpIterate { z, u };
        let shifted = shift(&iterate, &&model);
        for k in 0..4 {
            let lin = PredictionModel::linearize(
                &&model,
                &shifted.z[k],
                &shifted.u[k],
                &shifted.z[k + 1],
            );
            assert!(
                lin.r.amax() < 1e-12,
                "stage {k} residual {:.3e} after shift",
                lin.r.amax()
            );
        }
        // Input shift layout: u_new[k] = u_old[k+1], last duplicated.
        assert_eq!(shifted.u[0], iterate.u[1]);
        assert_eq!(shifted.u[2], iterate.u[3]);
        assert_eq!(shifted.u[3], iterate.u[3]);
    }

    #[test]
    fn box_constraint_becomes_active() {
        // A far reference demands more input than the box allows; the SQP
        // solution rides the bound.
        let model = scalar_toy(1.0, 0.5);
        let mut problem = scalar_problem(3);
        problem.input_upper[0] = 0.3;
        let refs = vec![DVector::from_vec(vec![5.0]); 4];
        let z0 = DVector::from_vec(vec![0.5]);
        let guess = SqpIterate {
            z: vec![z0.clone(); 4],
            u: vec![DVector::zeros(1); 3],
        };
        let mut ws = AdmmWorkspace::new();
        let (iterate, _) =
            sqp_initialize(&&model, &problem, &refs, &z0, guess, &mut ws).unwrap();
        for u in &iterate.u {
            assert!(u[0] <= 0.3 + 1e-6);
        }
        assert!((iterate.u[0][0] - 0.3).abs() < 1e-4, "u0 = {}", iterate.u[0][0]);
        assert!((iterate.u[1][0] - 0.3).abs() < 1e-4, "u1 = {}", iterate.u[1][0]);
    }
}
