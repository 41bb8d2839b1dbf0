//! The learned discrete-time lifted bilinear system packaged with its
//! preprocessing metadata: lifting, prediction, linearization for SQP and
//! persistence. A model without its normalization is invalid; raw states and
//! inputs are transformed on entry and predictions de-normalized on exit.

mod store;

pub use store::{load, save};

use nalgebra::{DMatrix, DVector};

use crate::dataset::Normalization;
use crate::diffnet::KoopmanNet;
use crate::error::{CoreError, Result};

/// Encoder parameters, bilinear matrices `F`, `G_1..G_m`, the fixed
/// projection, sample interval and normalization metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub net: KoopmanNet,
    pub normalization: Normalization,
    /// Model sample interval [s].
    pub dt: f64,
}

/// Stage linearization of the bilinear dynamics around an iterate, all in
/// normalized (preprocessed) coordinates:
/// `A = F + sum_j G_j u_j`, `B = [G_1 z ... G_m z]`,
/// `r = F z + sum_j G_j z u_j - z_next`.
#[derive(Debug, Clone)]
pub struct StageLinearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl KoopmanModel {
    pub fn new(net: KoopmanNet, normalization: Normalization, dt: f64) -> Result<Self> {
        normalization.validate()?;
        if normalization.state_dim() != net.state_dim()
            || normalization.input_dim() != net.input_dim()
        {
            return Err(CoreError::DimensionMismatch(
                "normalization metadata does not match the network".into(),
            ));
        }
        if dt <= 0.0 {
            return Err(CoreError::InvalidConfig("model dt must be > 0".into()));
        }
        Ok(Self {
            net,
            normalization,
            dt,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn lifted_dim(&self) -> usize {
        self.net.lifted_dim()
    }

    /// Normalizes a raw state and lifts it: `z = [x_norm; phi(x_norm)]`.
    pub fn lift_state(&self, x_raw: &[f64]) -> Result<DVector<f64>> {
        if x_raw.len() != self.state_dim() {
            return Err(CoreError::DimensionMismatch(format!(
                "state has {} entries, model expects {}",
                x_raw.len(),
                self.state_dim()
            )));
        }
        let mut x_norm = DVector::zeros(self.state_dim());
        self.normalization
            .apply_state(x_raw, x_norm.as_mut_slice());
        Ok(self.net.lift(&x_norm))
    }

    /// Normalized input for a raw control vector.
    pub fn preprocess_input(&self, u_raw: &[f64]) -> DVector<f64> {
        let mut u = DVector::zeros(self.input_dim());
        self.normalization.apply_input(u_raw, u.as_mut_slice());
        u
    }

    /// Raw control vector for a normalized input.
    pub fn deprocess_input(&self, u_pre: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.input_dim());
        self.normalization
            .invert_input(u_pre.as_slice(), u.as_mut_slice());
        u
    }

    /// De-normalized state block of a lifted vector.
    pub fn project_state(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        self.normalization
            .invert_state(z.rows(0, self.state_dim()).as_slice(), out.as_mut_slice());
        out
    }

    /// One bilinear step with a raw input (shifted and scaled internally).
    pub fn predict_step(&self, z: &DVector<f64>, u_raw: &[f64]) -> DVector<f64> {
        let u = self.preprocess_input(u_raw);
        self.net.step_lifted(z, &u)
    }

    /// One bilinear step with an already-preprocessed input.
    pub fn predict_step_pre(&self, z: &DVector<f64>, u_pre: &DVector<f64>) -> DVector<f64> {
        self.net.step_lifted(z, u_pre)
    }

    /// Exact linearization around `(z, u_pre)` with residual against
    /// `z_next`; matrix adds and multiplies only.
    pub fn linearize(
        &self,
        z: &DVector<f64>,
        u_pre: &DVector<f64>,
        z_next: &DVector<f64>,
    ) -> StageLinearization {
        let n = self.lifted_dim();
        let m = self.input_dim();
        let mut a = self.net.f.clone();
        for (j, g) in self.net.g.iter().enumerate() {
            a.zip_apply(g, |av, gv| *av += u_pre[j] * gv);
        }
        let mut b = DMatrix::zeros(n, m);
        for (j, g) in self.net.g.iter().enumerate() {
            b.column_mut(j).gemv(1.0, g, z, 0.0);
        }
        let r = self.net.step_lifted(z, u_pre) - z_next;
        StageLinearization { a, b, r }
    }

    /// Multi-step prediction from a raw initial state: a single encoder
    /// evaluation, `k` bilinear steps in the lifted space, projection and
    /// de-normalization at every step. Returns the raw state sequence
    /// including the initial state (`k + 1` entries).
    pub fn rollout(&self, x0_raw: &[f64], inputs_raw: &[Vec<f64>], k: usize) -> Result<Vec<DVector<f64>>> {
        if k > inputs_raw.len() {
            return Err(CoreError::InvalidConfig(format!(
                "rollout of {k} steps needs {k} inputs, got {}",
                inputs_raw.len()
            )));
        }
        let mut states = Vec::with_capacity(k + 1);
        states.push(DVector::from_column_slice(x0_raw));
        let mut z = self.lift_state(x0_raw)?;
        for u in inputs_raw.iter().take(k) {
            z = self.predict_step(&z, u);
            states.push(self.project_state(&z));
        }
        Ok(states)
    }
}
