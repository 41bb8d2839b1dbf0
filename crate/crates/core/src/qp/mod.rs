//! Embedded convex quadratic-program solver.
//!
//! Problems are posed in the standard form
//! `min 0.5 x'Px + q'x  s.t.  l <= Ax <= u` with sparse `P` (symmetric PSD)
//! and `A`; equality rows use `l = u` and one-sided rows use infinite bounds.
//! The solver is an operator-splitting (ADMM) method with Ruiz diagonal
//! preconditioning and a banded Cholesky for the reduced KKT system, which
//! keeps receding-horizon problems fast and supports warm starting.

pub mod active_set;
mod banded;
mod csc;
mod solver;

pub use banded::BandMatrix;
pub use csc::CscMatrix;
pub use solver::{kkt_residuals, solve, AdmmWorkspace};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Standard-form convex QP.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    /// Quadratic cost, full symmetric matrix.
    pub p: CscMatrix,
    /// Linear cost.
    pub q: DVector<f64>,
    /// Constraint matrix.
    pub a: CscMatrix,
    /// Lower bounds; entries may be `-inf`.
    pub l: DVector<f64>,
    /// Upper bounds; entries may be `+inf`.
    pub u: DVector<f64>,
}

impl QuadraticProgram {
    pub fn num_vars(&self) -> usize {
        self.p.ncols
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.nrows != self.p.ncols {
            return Err(CoreError::DimensionMismatch("P must be square".into()));
        }
        if self.q.len() != self.p.ncols
            || self.a.ncols != self.p.ncols
            || self.l.len() != self.a.nrows
            || self.u.len() != self.a.nrows
        {
            return Err(CoreError::DimensionMismatch(
                "QP dimensions are inconsistent".into(),
            ));
        }
        if !self.p.is_symmetric(1e-9) {
            return Err(CoreError::InvalidConfig("P is not symmetric".into()));
        }
        for i in 0..self.l.len() {
            if self.l[i] > self.u[i] {
                return Err(CoreError::InvalidConfig(format!(
                    "bounds crossed at row {i}: l = {} > u = {}",
                    self.l[i], self.u[i]
                )));
            }
        }
        Ok(())
    }

    /// Writes the problem to a JSON file for offline reproduction. Infinite
    /// bounds are encoded as nulls.
    pub fn dump_json(&self, path: &std::path::Path) -> Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            n: usize,
            m: usize,
            p: &'a CscMatrix,
            q: Vec<f64>,
            a: &'a CscMatrix,
            l: Vec<Option<f64>>,
            u: Vec<Option<f64>>,
        }
        let encode = |v: f64| if v.is_finite() { Some(v) } else { None };
        let dump = Dump {
            n: self.num_vars(),
            m: self.num_constraints(),
            p: &self.p,
            q: self.q.iter().copied().collect(),
            a: &self.a,
            l: self.l.iter().map(|&v| encode(v)).collect(),
            u: self.u.iter().map(|&v| encode(v)).collect(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &dump)?;
        Ok(())
    }
}

/// Solver tuning knobs and optional warm start.
#[derive(Debug, Clone)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// ADMM penalty; adapted online unless `adaptive_rho` is off.
    pub rho: f64,
    /// x-update regularization.
    pub sigma: f64,
    /// Over-relaxation parameter.
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Ruiz equilibration sweeps; 0 disables preconditioning.
    pub scaling_iters: usize,
    /// Residual/termination check cadence in iterations.
    pub check_interval: usize,
    pub eps_infeasible: f64,
    pub warm_x: Option<DVector<f64>>,
    pub warm_y: Option<DVector<f64>>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            scaling_iters: 10,
            check_interval: 25,
            eps_infeasible: 1e-4,
            warm_x: None,
            warm_y: None,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if self.eps_abs <= 0.0 || self.eps_rel <= 0.0 {
            return Err(CoreError::InvalidConfig("tolerances must be > 0".into()));
        }
        if !(0.0 < self.alpha && self.alpha < 2.0) {
            return Err(CoreError::InvalidConfig("alpha must be in (0, 2)".into()));
        }
        Ok(())
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

/// Solver output. Residuals are recomputed from the returned iterate on the
/// original (unscaled) problem, never trusted from the iteration.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}
