//! Receding-horizon SQP controller on a lifted bilinear or nominal
//! prediction model: quadratic subproblems from stage linearizations, a
//! convergence loop for initialization, a single Gauss-Newton step per tick
//! in closed loop, and the one-stage solution shift between ticks.

mod condense;
mod controller;

pub use condense::build_subproblem;
pub use controller::{nlp_cost, reference_guess, shift, sqp_initialize, NmpcController, TickStats};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{KoopmanModel, StageLinearization};
use crate::nominal::NominalModel;
use crate::qp::QpSettings;
use crate::sim::VehicleParams;

/// A dynamics model usable by the SQP machinery. Decision-space states are
/// the model's preferred coordinates (lifted/normalized for the learned
/// model, raw for the nominal one); the trait carries the maps between raw
/// quantities and decision coordinates so one controller serves both.
pub trait PredictionModel {
    /// Decision-state dimension (lifted dimension or the raw state size).
    fn dec_dim(&self) -> usize;
    /// Raw state dimension (the projected block of the decision state).
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Raw measurement to decision state.
    fn lift(&self, x_raw: &[f64]) -> Result<DVector<f64>>;
    /// One-step dynamics in decision coordinates.
    fn step(&self, z: &DVector<f64>, u_dec: &DVector<f64>) -> DVector<f64>;
    /// Stage linearization around `(z, u_dec)` with residual against `z_next`.
    fn linearize(
        &self,
        z: &DVector<f64>,
        u_dec: &DVector<f64>,
        z_next: &DVector<f64>,
    ) -> StageLinearization;
    /// Raw state-space vector to decision state-block coordinates
    /// (also maps per-dimension bounds; scales are positive).
    fn state_to_dec(&self, x_raw: &DVector<f64>) -> DVector<f64>;
    /// Raw per-dimension quadratic weights to decision coordinates, so the
    /// penalized quantity is the raw-space error regardless of model.
    fn state_weights_to_dec(&self, w_raw: &DVector<f64>) -> DVector<f64>;
    fn input_to_dec(&self, u_raw: &DVector<f64>) -> DVector<f64>;
    fn input_from_dec(&self, u_dec: &DVector<f64>) -> DVector<f64>;
    /// Raw-unit span of one decision-input unit per channel (the diagonal of
    /// `d u_raw / d u_dec`); weights given per raw scale are mapped through it.
    fn input_raw_scale(&self) -> DVector<f64>;
}

impl PredictionModel for &KoopmanModel {
    fn dec_dim(&self) -> usize {
        self.lifted_dim()
    }

    fn state_dim(&self) -> usize {
        KoopmanModel::state_dim(self)
    }

    fn input_dim(&self) -> usize {
        KoopmanModel::input_dim(self)
    }

    fn lift(&self, x_raw: &[f64]) -> Result<DVector<f64>> {
        self.lift_state(x_raw)
    }

    fn step(&self, z: &DVector<f64>, u_dec: &DVector<f64>) -> DVector<f64> {
        self.predict_step_pre(z, u_dec)
    }

    fn linearize(
        &self,
        z: &DVector<f64>,
        u_dec: &DVector<f64>,
        z_next: &DVector<f64>,
    ) -> StageLinearization {
        KoopmanModel::linearize(self, z, u_dec, z_next)
    }

    fn state_to_dec(&self, x_raw: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        self.normalization
            .apply_state(x_raw.as_slice(), out.as_mut_slice());
        out
    }

    fn state_weights_to_dec(&self, w_raw: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.state_dim(), |i, _| {
            w_raw[i] * self.normalization.x_scale[i] * self.normalization.x_scale[i]
        })
    }

    fn input_to_dec(&self, u_raw: &DVector<f64>) -> DVector<f64> {
        self.preprocess_input(u_raw.as_slice())
    }

    fn input_from_dec(&self, u_dec: &DVector<f64>) -> DVector<f64> {
        self.deprocess_input(u_dec)
    }

    fn input_raw_scale(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.normalization.u_scale)
    }
}

/// The nominal model as a prediction model: raw 13-dimensional states, inputs
/// scaled by the actuator envelope so cost weights and the solver see O(1)
/// quantities.
#[derive(Debug, Clone)]
pub struct NominalPredictor {
    pub model: NominalModel,
    u_offset: DVector<f64>,
    u_scale: DVector<f64>,
}

impl NominalPredictor {
    pub fn new(model: NominalModel) -> Self {
        let p = &model.params;
        let u_offset = DVector::from_vec(vec![p.hover_thrust(), 0.0, 0.0, 0.0]);
        let u_scale = DVector::from_vec(vec![
            p.hover_thrust(),
            p.max_torque,
            p.max_torque,
            p.max_torque,
        ]);
        Self {
            model,
            u_offset,
            u_scale,
        }
    }
}

impl PredictionModel for NominalPredictor {
    fn dec_dim(&self) -> usize {
        crate::sim::STATE_DIM
    }

    fn state_dim(&self) -> usize {
        crate::sim::STATE_DIM
    }

    fn input_dim(&self) -> usize {
        crate::sim::INPUT_DIM
    }

    fn lift(&self, x_raw: &[f64]) -> Result<DVector<f64>> {
        if x_raw.len() != crate::sim::STATE_DIM {
            return Err(CoreError::DimensionMismatch(format!(
                "state has {} entries, expected {}",
                x_raw.len(),
                crate::sim::STATE_DIM
            )));
        }
        Ok(DVector::from_column_slice(x_raw))
    }

    fn step(&self, z: &DVector<f64>, u_dec: &DVector<f64>) -> DVector<f64> {
        let u_raw = self.input_from_dec(u_dec);
        self.model.step(z, &u_raw)
    }

    fn linearize(
        &self,
        z: &DVector<f64>,
        u_dec: &DVector<f64>,
        z_next: &DVector<f64>,
    ) -> StageLinearization {
        let u_raw = self.input_from_dec(u_dec);
        let (a, mut b) = self.model.step_jacobians(z, &u_raw);
        for (j, mut col) in b.column_iter_mut().enumerate() {
            col *= self.u_scale[j];
        }
        let r = self.model.step(z, &u_raw) - z_next;
        StageLinearization { a, b, r }
    }

    fn state_to_dec(&self, x_raw: &DVector<f64>) -> DVector<f64> {
        x_raw.clone()
    }

    fn state_weights_to_dec(&self, w_raw: &DVector<f64>) -> DVector<f64> {
        w_raw.clone()
    }

    fn input_to_dec(&self, u_raw: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.u_offset.len(), |j, _| {
            (u_raw[j] - self.u_offset[j]) / self.u_scale[j]
        })
    }

    fn input_from_dec(&self, u_dec: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.u_offset.len(), |j, _| {
            u_dec[j] * self.u_scale[j] + self.u_offset[j]
        })
    }

    fn input_raw_scale(&self) -> DVector<f64> {
        self.u_scale.clone()
    }
}

/// Runtime problem description in raw units; the controller maps it into
/// decision coordinates through the model.
#[derive(Debug, Clone)]
pub struct NmpcProblem {
    pub horizon: usize,
    /// Per-dimension quadratic weights on raw state errors (length `d`).
    pub state_weights: DVector<f64>,
    /// Per-dimension quadratic weights on scaled input deviations (length
    /// `m`): the cost term is `r_j ((u_raw_j - u_ref_j) / s_j)^2` with `s_j`
    /// from `input_weight_scales`.
    pub input_weights: DVector<f64>,
    /// Raw-unit scale `s_j` each input weight is expressed against; the
    /// actuator envelope by default.
    pub input_weight_scales: DVector<f64>,
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
    /// Raw per-dimension state box; infinite entries are inactive.
    pub state_lower: DVector<f64>,
    pub state_upper: DVector<f64>,
    /// Raw input reference (the cost penalizes deviation from it).
    pub u_ref: DVector<f64>,
    pub sqp_convergence_tol: f64,
    pub sqp_init_max_iters: usize,
    pub qp_settings: QpSettings,
}

impl NmpcProblem {
    pub fn validate(&self, d: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(CoreError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.state_weights.len() != d
            || self.state_lower.len() != d
            || self.state_upper.len() != d
            || self.input_weights.len() != m
            || self.input_weight_scales.len() != m
            || self.input_lower.len() != m
            || self.input_upper.len() != m
            || self.u_ref.len() != m
        {
            return Err(CoreError::DimensionMismatch(
                "problem vectors do not match model dimensions".into(),
            ));
        }
        let any_weight = self.state_weights.iter().chain(self.input_weights.iter()).any(|&w| w > 0.0);
        if !any_weight
            || self
                .state_weights
                .iter()
                .chain(self.input_weights.iter())
                .any(|&w| w < 0.0)
        {
            return Err(CoreError::InvalidConfig(
                "weights must be nonnegative and not all zero".into(),
            ));
        }
        for j in 0..m {
            if self.input_lower[j] > self.input_upper[j] {
                return Err(CoreError::InvalidConfig("input box crossed".into()));
            }
        }
        for i in 0..d {
            if self.state_lower[i] > self.state_upper[i] {
                return Err(CoreError::InvalidConfig("state box crossed".into()));
            }
        }
        Ok(())
    }
}

/// The `nmpc` configuration block (quadrotor-shaped defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NmpcConfig {
    /// Horizon length in steps (0.5 s at the controller rate).
    pub horizon: usize,
    /// Position error penalties.
    pub q: [f64; 3],
    /// Attitude regularization on the quaternion vector components toward
    /// level flight. Weak relative to the position weights; it keeps the
    /// cost-free attitude directions (yaw above all) from drifting.
    pub q_attitude: [f64; 3],
    /// Input penalties on envelope-normalized inputs.
    pub r: [f64; 4],
    /// Controller interval [s].
    pub dt: f64,
    /// Controller torque box [N m]; kept well inside the mechanical limit so
    /// learned models operate near their data distribution.
    pub torque_limit: f64,
    /// Optional altitude floor [m]; the state box is otherwise inactive.
    pub min_altitude: Option<f64>,
    /// Box on the quaternion vector components `(q_x, q_y, q_z)`: a wide
    /// attitude envelope that stops cost-free drift (yaw in particular) from
    /// leaving the model's trusted region. `None` disables it.
    pub attitude_box: Option<[f64; 3]>,
    pub sqp_init_max_iters: usize,
    pub sqp_convergence_tol: f64,
    pub qp_eps: f64,
    pub qp_max_iter: usize,
    /// RK4 substeps of the nominal prediction model.
    pub nominal_substeps: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            q: [10.0, 10.0, 10.0],
            q_attitude: [1.0, 1.0, 1.0],
            r: [1.0, 1.0, 1.0, 1.0],
            dt: 0.02,
            torque_limit: 2.0e-3,
            min_altitude: None,
            attitude_box: Some([0.45, 0.45, 0.45]),
            sqp_init_max_iters: 30,
            sqp_convergence_tol: 1e-6,
            qp_eps: 1e-4,
            qp_max_iter: 2000,
            nominal_substeps: 1,
        }
    }
}

impl NmpcConfig {
    pub fn to_problem(&self, params: &VehicleParams) -> NmpcProblem {
        let d = crate::sim::STATE_DIM;
        let mut state_weights = DVector::zeros(d);
        for i in 0..3 {
            state_weights[i] = self.q[i];
            state_weights[7 + i] = self.q_attitude[i];
        }
        let mut state_lower = DVector::from_element(d, f64::NEG_INFINITY);
        let mut state_upper = DVector::from_element(d, f64::INFINITY);
        if let Some(floor) = self.min_altitude {
            state_lower[2] = floor;
        }
        if let Some(envelope) = self.attitude_box {
            for (axis, &half_width) in envelope.iter().enumerate() {
                state_lower[7 + axis] = -half_width;
                state_upper[7 + axis] = half_width;
            }
        }
        let mut qp_settings = QpSettings::default();
        qp_settings.eps_abs = self.qp_eps;
        qp_settings.eps_rel = self.qp_eps;
        qp_settings.max_iter = self.qp_max_iter;
        NmpcProblem {
            horizon: self.horizon,
            state_weights,
            input_weights: DVector::from_column_slice(&self.r),
            input_weight_scales: DVector::from_vec(vec![
                params.hover_thrust(),
                params.max_torque,
                params.max_torque,
                params.max_torque,
            ]),
            input_lower: DVector::from_vec(vec![
                0.0,
                -self.torque_limit,
                -self.torque_limit,
                -self.torque_limit,
            ]),
            input_upper: DVector::from_vec(vec![
                params.max_total_thrust,
                self.torque_limit,
                self.torque_limit,
                self.torque_limit,
            ]),
            state_lower,
            state_upper,
            u_ref: DVector::from_vec(vec![params.hover_thrust(), 0.0, 0.0, 0.0]),
            sqp_convergence_tol: self.sqp_convergence_tol,
            sqp_init_max_iters: self.sqp_init_max_iters,
            qp_settings,
        }
    }
}

/// SQP iterate: decision states for stages `0..=N` and inputs for `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqpIterate {
    pub z: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl SqpIterate {
    pub fn check(&self, horizon: usize, n: usize, m: usize) -> Result<()> {
        let shapes_ok = self.z.len() == horizon + 1
            && self.u.len() == horizon
            && self.z.iter().all(|z| z.len() == n && z.iter().all(|v| v.is_finite()))
            && self.u.iter().all(|u| u.len() == m && u.iter().all(|v| v.is_finite()));
        if !shapes_ok {
            return Err(CoreError::DimensionMismatch(format!(
                "iterate shapes do not match horizon {horizon} (n = {n}, m = {m})"
            )));
        }
        Ok(())
    }
}
