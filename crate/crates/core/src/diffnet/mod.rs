//! The differentiable learning core: a feedforward encoder producing the
//! function dictionary, bilinear output layers `z' = F z + sum_j G_j z u_j`,
//! and exact reverse-mode gradients of the training loss for every trainable
//! parameter. All math runs in f64 on normalized data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn forward(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the layer output.
    #[inline]
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer, weights stored `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub activation: Activation,
}

/// The encoder network `phi(x)`. An empty layer list is the degenerate
/// dictionary with no learned observables (`n_phi = 0`), used when the lifted
/// state is the raw state itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Encoder {
    pub layers: Vec<Layer>,
}

impl Encoder {
    /// Hidden widths with tanh activations and a linear output layer.
    /// Weights are uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new_seeded(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        if output_dim == 0 {
            return Self { layers: Vec::new() };
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (idx, &width) in hidden.iter().chain(std::iter::once(&output_dim)).enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = DMatrix::from_fn(width, fan_in, |_, _| rng.gen_range(-bound..bound));
            let activation = if idx == hidden.len() {
                Activation::Linear
            } else {
                Activation::Tanh
            };
            layers.push(Layer {
                w,
                b: DVector::zeros(width),
                activation,
            });
            fan_in = width;
        }
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn input_dim(&self, fallback: usize) -> usize {
        self.layers.first().map_or(fallback, |l| l.w.ncols())
    }

    /// Forward pass for a column batch; returns per-layer outputs (the last
    /// entry is `phi(X)`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for layer in &self.layers {
            let mut h = &layer.w * input;
            for mut col in h.column_iter_mut() {
                col += &layer.b;
            }
            h.apply(|v| *v = layer.activation.forward(*v));
            outputs.push(h);
            input = outputs.last().unwrap();
        }
        outputs
    }

    /// Backprop through the encoder given `d_phi = dL/d phi(X)`; accumulates
    /// parameter gradients into `grads`.
    fn backward_batch(
        &self,
        x: &DMatrix<f64>,
        outputs: &[DMatrix<f64>],
        d_phi: DMatrix<f64>,
        grads: &mut [LayerGrad],
    ) {
        let mut d_out = d_phi;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let out = &outputs[idx];
            // d pre-activation.
            let mut da = d_out;
            da.zip_apply(out, |d, o| *d *= layer.activation.grad_from_output(o));
            let input: &DMatrix<f64> = if idx == 0 { x } else { &outputs[idx - 1] };
            grads[idx].w.gemm(1.0, &da, &input.transpose(), 1.0);
            for col in da.column_iter() {
                grads[idx].b += col;
            }
            if idx > 0 {
                d_out = layer.w.transpose() * da;
            } else {
                break;
            }
        }
    }
}

/// Gradient accumulator matching one [`Layer`].
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Gradients for every trainable parameter (the fixed projection is not
/// trainable and has no entry).
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub encoder: Vec<LayerGrad>,
    pub f: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.encoder
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
            && self.f.iter().all(|v| v.is_finite())
            && self.g.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// A normalized minibatch stored column-wise: states `d x B`, inputs `m x B`,
/// next states `d x B`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub x_next: DMatrix<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss hyperparameters: the lifted-space prediction weight and the l2
/// penalty on weights (biases excluded).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub beta: f64,
    pub l2: f64,
}

/// Encoder plus bilinear dynamics matrices: the trainable model
/// `z = [x; phi(x)]`, `z' = F z + sum_j G_j z u_j`, with the fixed projection
/// `[I 0]` recovering the state block.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanNet {
    pub encoder: Encoder,
    pub f: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
    state_dim: usize,
    input_dim: usize,
}

impl KoopmanNet {
    /// Fresh network: encoder as in [`Encoder::new_seeded`], `F` identity
    /// (persistence model), `G_j` zero.
    pub fn new_seeded(
        state_dim: usize,
        hidden: &[usize],
        n_phi: usize,
        input_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let encoder = Encoder::new_seeded(state_dim, hidden, n_phi, &mut rng);
        let n = state_dim + n_phi;
        Self {
            encoder,
            f: DMatrix::identity(n, n),
            g: (0..input_dim).map(|_| DMatrix::zeros(n, n)).collect(),
            state_dim,
            input_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_phi(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn lifted_dim(&self) -> usize {
        self.state_dim + self.n_phi()
    }

    /// `phi(x)` for a single normalized state.
    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let outputs = self.encoder.forward_batch(&xm);
        match outputs.last() {
            Some(phi) => DVector::from_column_slice(phi.as_slice()),
            None => DVector::zeros(0),
        }
    }

    /// `z = [x; phi(x)]`.
    pub fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        let phi = self.encode(x);
        let mut z = DVector::zeros(self.lifted_dim());
        z.rows_mut(0, self.state_dim).copy_from(x);
        z.rows_mut(self.state_dim, phi.len()).copy_from(&phi);
        z
    }

    pub fn lift_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let b = x.ncols();
        let mut z = DMatrix::zeros(self.lifted_dim(), b);
        z.rows_mut(0, self.state_dim).copy_from(x);
        if self.n_phi() > 0 {
            let outputs = self.encoder.forward_batch(x);
            z.rows_mut(self.state_dim, self.n_phi())
                .copy_from(outputs.last().unwrap());
        }
        z
    }

    /// One bilinear step in the lifted space (normalized input).
    pub fn step_lifted(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut z_next = &self.f * z;
        for (j, g) in self.g.iter().enumerate() {
            z_next.gemv(u[j], g, z, 1.0);
        }
        z_next
    }

    fn step_lifted_batch(&self, z: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z_next = &self.f * z;
        for (j, g) in self.g.iter().enumerate() {
            let mut gz = g * z;
            for (mut col, &uj) in gz.column_iter_mut().zip(u.row(j).iter()) {
                col *= uj;
            }
            z_next += gz;
        }
        z_next
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(CoreError::InvalidConfig("empty batch".into()));
        }
        if batch.x.nrows() != self.state_dim
            || batch.x_next.nrows() != self.state_dim
            || batch.u.nrows() != self.input_dim
            || batch.u.ncols() != batch.len()
            || batch.x_next.ncols() != batch.len()
        {
            return Err(CoreError::DimensionMismatch(
                "batch shapes do not match the network".into(),
            ));
        }
        Ok(())
    }

    fn squared_weight_norm(&self) -> f64 {
        let enc: f64 = self
            .encoder
            .layers
            .iter()
            .map(|l| l.w.iter().map(|v| v * v).sum::<f64>())
            .sum();
        let f: f64 = self.f.iter().map(|v| v * v).sum();
        let g: f64 = self
            .g
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum();
        enc + f + g
    }

    /// Batch-mean loss: state-space one-step error plus `beta` times the
    /// dictionary-space one-step error, plus the l2 penalty.
    pub fn loss(&self, batch: &Batch, weights: &LossWeights) -> Result<f64> {
        self.check_batch(batch)?;
        let d = self.state_dim;
        let n_phi = self.n_phi();
        let b = batch.len() as f64;

        let z = self.lift_batch(&batch.x);
        let z_pred = self.step_lifted_batch(&z, &batch.u);

        let e_pred = z_pred.rows(0, d) - &batch.x_next;
        let mut data = e_pred.iter().map(|v| v * v).sum::<f64>();
        if n_phi > 0 {
            let phi_next = self.encoder.forward_batch(&batch.x_next);
            let e_kct = z_pred.rows(d, n_phi) - phi_next.last().unwrap();
            data += weights.beta * e_kct.iter().map(|v| v * v).sum::<f64>();
        }
        let loss = data / b + weights.l2 * self.squared_weight_norm();
        if !loss.is_finite() {
            return Err(CoreError::TrainingDivergence(format!("loss = {loss}")));
        }
        Ok(loss)
    }

    /// Loss together with exact reverse-mode gradients for `theta`, `F` and
    /// every `G_j`.
    pub fn loss_gradient(
        &self,
        batch: &Batch,
        weights: &LossWeights,
    ) -> Result<(f64, GradientSet)> {
        self.check_batch(batch)?;
        let d = self.state_dim;
        let n_phi = self.n_phi();
        let n = self.lifted_dim();
        let b = batch.len() as f64;

        // Forward.
        let enc_out_x = self.encoder.forward_batch(&batch.x);
        let mut z = DMatrix::zeros(n, batch.len());
        z.rows_mut(0, d).copy_from(&batch.x);
        if n_phi > 0 {
            z.rows_mut(d, n_phi).copy_from(enc_out_x.last().unwrap());
        }
        let z_pred = self.step_lifted_batch(&z, &batch.u);

        let e_pred = z_pred.rows(0, d) - &batch.x_next;
        let enc_out_xn = if n_phi > 0 {
            self.encoder.forward_batch(&batch.x_next)
        } else {
            Vec::new()
        };

        let mut data = e_pred.iter().map(|v| v * v).sum::<f64>();
        let mut d_zpred = DMatrix::zeros(n, batch.len());
        d_zpred.rows_mut(0, d).copy_from(&((2.0 / b) * &e_pred));
        let mut e_kct = DMatrix::zeros(0, 0);
        if n_phi > 0 {
            e_kct = z_pred.rows(d, n_phi) - enc_out_xn.last().unwrap();
            data += weights.beta * e_kct.iter().map(|v| v * v).sum::<f64>();
            d_zpred
                .rows_mut(d, n_phi)
                .copy_from(&((2.0 * weights.beta / b) * &e_kct));
        }
        let loss = data / b + weights.l2 * self.squared_weight_norm();
        if !loss.is_finite() {
            return Err(CoreError::TrainingDivergence(format!("loss = {loss}")));
        }

        // Bilinear-layer gradients.
        let zt = z.transpose();
        let mut g_f = &d_zpred * &zt;
        g_f.zip_apply(&self.f, |g, f| *g += 2.0 * weights.l2 * f);
        let mut g_g = Vec::with_capacity(self.input_dim);
        // dZ accumulates the backprop into the lifted state.
        let mut d_z = self.f.transpose() * &d_zpred;
        for (j, g) in self.g.iter().enumerate() {
            let mut d_zpred_u = d_zpred.clone();
            for (mut col, &uj) in d_zpred_u.column_iter_mut().zip(batch.u.row(j).iter()) {
                col *= uj;
            }
            let mut gj = &d_zpred_u * &zt;
            gj.zip_apply(g, |gr, gv| *gr += 2.0 * weights.l2 * gv);
            g_g.push(gj);
            d_z.gemm(1.0, &g.transpose(), &d_zpred_u, 1.0);
        }

        // Encoder gradients: the phi(x) path through the dynamics and the
        // phi(x') path through the dictionary-space error.
        let mut enc_grads: Vec<LayerGrad> = self
            .encoder
            .layers
            .iter()
            .map(|l| LayerGrad {
                w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                b: DVector::zeros(l.b.len()),
            })
            .collect();
        if n_phi > 0 {
            let d_phi_x = d_z.rows(d, n_phi).into_owned();
            self.encoder
                .backward_batch(&batch.x, &enc_out_x, d_phi_x, &mut enc_grads);
            let d_phi_xn = (-2.0 * weights.beta / b) * &e_kct;
            self.encoder
                .backward_batch(&batch.x_next, &enc_out_xn, d_phi_xn, &mut enc_grads);
            for (lg, layer) in enc_grads.iter_mut().zip(&self.encoder.layers) {
                lg.w.zip_apply(&layer.w, |g, w| *g += 2.0 * weights.l2 * w);
            }
        }

        Ok((
            loss,
            GradientSet {
                encoder: enc_grads,
                f: g_f,
                g: g_g,
            },
        ))
    }

    /// Flattened parameter vector: encoder layers (weights row-major, then
    /// bias) in order, then `F`, then each `G_j`, all column-major from
    /// nalgebra storage.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out.extend_from_slice(self.f.as_slice());
        for g in &self.g {
            out.extend_from_slice(g.as_slice());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        let mut take = |len: usize| {
            let s = &flat[offset..offset + len];
            offset += len;
            s
        };
        for l in &mut self.encoder.layers {
            let len = l.w.len();
            l.w.as_mut_slice().copy_from_slice(take(len));
            let len = l.b.len();
            l.b.as_mut_slice().copy_from_slice(take(len));
        }
        let len = self.f.len();
        self.f.as_mut_slice().copy_from_slice(take(len));
        for g in &mut self.g {
            let len = g.len();
            g.as_mut_slice().copy_from_slice(take(len));
        }
        debug_assert_eq!(offset, flat.len());
    }

    /// Gradients flattened in the same order as [`Self::params_flat`].
    pub fn gradient_flat(&self, grads: &GradientSet) -> Vec<f64> {
        let mut out = Vec::new();
        for lg in &grads.encoder {
            out.extend_from_slice(lg.w.as_slice());
            out.extend_from_slice(lg.b.as_slice());
        }
        out.extend_from_slice(grads.f.as_slice());
        for g in &grads.g {
            out.extend_from_slice(g.as_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mini_net() -> KoopmanNet {
        KoopmanNet::new_seeded(3, &[8, 8], 4, 2, 99)
    }

    fn random_batch(net: &KoopmanNet, n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = net.state_dim();
        let m = net.input_dim();
        Batch {
            x: DMatrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0)),
            u: DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0)),
            x_next: DMatrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn zero_weights_output_equals_output_bias() {
        let mut net = KoopmanNet::new_seeded(2, &[3], 2, 1, 7);
        for layer in &mut net.encoder.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let out_bias = DVector::from_vec(vec![0.7, -0.3]);
        net.encoder.layers.last_mut().unwrap().b.copy_from(&out_bias);
        let phi = net.encode(&DVector::from_vec(vec![1.5, -2.0]));
        assert_relative_eq!(phi, out_bias, epsilon = 1e-15);
    }

    #[test]
    fn encode_is_deterministic() {
        let net = mini_net();
        let x = DVector::from_vec(vec![0.3, -0.1, 0.8]);
        assert_eq!(net.encode(&x), net.encode(&x));
    }

    #[test]
    fn hand_computed_2_2_1_forward_pass() {
        // Pencil-and-paper network: 2 -> 2 (tanh) -> 1 (linear).
        let mut net = KoopmanNet::new_seeded(2, &[2], 1, 1, 0);
        net.encoder.layers[0].w =
            DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]);
        net.encoder.layers[0].b = DVector::from_vec(vec![0.05, -0.1]);
        net.encoder.layers[1].w = DMatrix::from_row_slice(1, 2, &[0.7, -0.5]);
        net.encoder.layers[1].b = DVector::from_vec(vec![0.2]);

        let x = DVector::from_vec(vec![0.4, -0.3]);
        let phi = net.encode(&x);

        // Scripted arithmetic, no shared code with the forward pass.
        let a1: f64 = 0.3 * 0.4 + (-0.2) * (-0.3) + 0.05;
        let a2: f64 = 0.1 * 0.4 + 0.4 * (-0.3) + (-0.1);
        let expected = 0.7 * a1.tanh() - 0.5 * a2.tanh() + 0.2;
        assert_relative_eq!(phi[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn lift_projects_back_to_state() {
        let net = mini_net();
        let x = DVector::from_vec(vec![0.2, -0.4, 1.1]);
        let z = net.lift(&x);
        assert_eq!(z.len(), 7);
        assert_relative_eq!(z.rows(0, 3).into_owned(), x, epsilon = 1e-15);
    }

    #[test]
    fn exact_scalar_model_has_zero_data_loss() {
        // d = n = 1, no dictionary, F = 0.9 and data from x' = 0.9 x.
        let mut net = KoopmanNet::new_seeded(1, &[], 0, 1, 3);
        net.f[(0, 0)] = 0.9;
        let xs: Vec<f64> = (0..16).map(|i| (i as f64 - 8.0) / 4.0).collect();
        let batch = Batch {
            x: DMatrix::from_vec(1, 16, xs.clone()),
            u: DMatrix::zeros(1, 16),
            x_next: DMatrix::from_vec(1, 16, xs.iter().map(|v| 0.9 * v).collect()),
        };
        let w = LossWeights { beta: 0.2, l2: 0.0 };
        let loss = net.loss(&batch, &w).unwrap();
        assert!(loss < 1e-28);

        // With the regularizer the loss is exactly the penalty.
        let w = LossWeights { beta: 0.2, l2: 5e-4 };
        let loss = net.loss(&batch, &w).unwrap();
        assert_relative_eq!(loss, 5e-4 * 0.81, epsilon = 1e-15);
    }

    #[test]
    fn identity_dynamics_zero_prediction_loss() {
        let mut net = KoopmanNet::new_seeded(1, &[], 0, 1, 3);
        net.f[(0, 0)] = 1.0;
        let batch = Batch {
            x: DMatrix::from_vec(1, 1, vec![1.0]),
            u: DMatrix::zeros(1, 1),
            x_next: DMatrix::from_vec(1, 1, vec![1.0]),
        };
        let w = LossWeights { beta: 0.2, l2: 0.0 };
        assert!(net.loss(&batch, &w).unwrap() < 1e-30);
    }

    #[test]
    fn hand_built_sample_matches_arithmetic_oracle() {
        // d = 2 with a single linear observable phi(x) = w.x + b.
        let mut net = KoopmanNet::new_seeded(2, &[], 1, 1, 1);
        net.encoder.layers = vec![Layer {
            w: DMatrix::from_row_slice(1, 2, &[0.4, -0.7]),
            b: DVector::from_vec(vec![0.1]),
            activation: Activation::Linear,
        }];
        net.f = DMatrix::from_row_slice(3, 3, &[
            0.9, 0.1, 0.0, //
            -0.2, 0.8, 0.3, //
            0.0, 0.2, 0.7,
        ]);
        net.g[0] = DMatrix::from_row_slice(3, 3, &[
            0.1, 0.0, 0.2, //
            0.0, -0.1, 0.0, //
            0.3, 0.0, 0.1,
        ]);

        let (x1, x2, u, xn1, xn2) = (0.5, -0.3, 0.4, 0.35, -0.1);
        let batch = Batch {
            x: DMatrix::from_vec(2, 1, vec![x1, x2]),
            u: DMatrix::from_vec(1, 1, vec![u]),
            x_next: DMatrix::from_vec(2, 1, vec![xn1, xn2]),
        };
        let weights = LossWeights { beta: 0.2, l2: 1e-3 };
        let loss = net.loss(&batch, &weights).unwrap();

        // Fully scripted oracle.
        let phi = 0.4 * x1 - 0.7 * x2 + 0.1;
        let z = [x1, x2, phi];
        let fz = [
            0.9 * z[0] + 0.1 * z[1],
            -0.2 * z[0] + 0.8 * z[1] + 0.3 * z[2],
            0.2 * z[1] + 0.7 * z[2],
        ];
        let gz = [
            0.1 * z[0] + 0.2 * z[2],
            -0.1 * z[1],
            0.3 * z[0] + 0.1 * z[2],
        ];
        let zp = [fz[0] + u * gz[0], fz[1] + u * gz[1], fz[2] + u * gz[2]];
        let l_pred = (zp[0] - xn1).powi(2) + (zp[1] - xn2).powi(2);
        let phi_next = 0.4 * xn1 - 0.7 * xn2 + 0.1;
        let l_kct = (zp[2] - phi_next).powi(2);
        let w_norm: f64 = [0.4f64, -0.7].iter().map(|v| v * v).sum::<f64>()
            + net.f.iter().map(|v| v * v).sum::<f64>()
            + net.g[0].iter().map(|v| v * v).sum::<f64>();
        let expected = l_pred + 0.2 * l_kct + 1e-3 * w_norm;
        assert_relative_eq!(loss, expected, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let net = mini_net();
        let batch = random_batch(&net, 12, 4);
        let weights = LossWeights { beta: 0.2, l2: 5e-4 };
        let (_, grads) = net.loss_gradient(&batch, &weights).unwrap();
        let analytic = net.gradient_flat(&grads);

        let params = net.params_flat();
        assert!(params.len() >= 200, "want >= 200 params, got {}", params.len());
        let mut worst = 0.0f64;
        for i in 0..params.len() {
            let h = 1e-5 * params[i].abs().max(1.0);
            let mut probe = net.clone();
            let mut p = params.clone();
            p[i] = params[i] + h;
            probe.set_params_flat(&p);
            let up = probe.loss(&batch, &weights).unwrap();
            p[i] = params[i] - h;
            probe.set_params_flat(&p);
            let down = probe.loss(&batch, &weights).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "worst relative gradient error {worst:.3e}");
    }

    #[test]
    fn zero_loss_configuration_has_only_regularizer_gradient() {
        let mut net = KoopmanNet::new_seeded(1, &[], 0, 1, 3);
        net.f[(0, 0)] = 0.9;
        let xs: Vec<f64> = (0..8).map(|i| i as f64 - 4.0).collect();
        let batch = Batch {
            x: DMatrix::from_vec(1, 8, xs.clone()),
            u: DMatrix::zeros(1, 8),
            x_next: DMatrix::from_vec(1, 8, xs.iter().map(|v| 0.9 * v).collect()),
        };
        let w = LossWeights { beta: 0.2, l2: 0.0 };
        let (_, grads) = net.loss_gradient(&batch, &w).unwrap();
        assert!(grads.f[(0, 0)].abs() < 1e-14);

        let w = LossWeights { beta: 0.2, l2: 1e-3 };
        let (_, grads) = net.loss_gradient(&batch, &w).unwrap();
        assert_relative_eq!(grads.f[(0, 0)], 2.0 * 1e-3 * 0.9, epsilon = 1e-12);
    }

    #[test]
    fn kct_gradient_scales_linearly_in_beta() {
        let net = mini_net();
        let batch = random_batch(&net, 6, 11);
        let grad_at = |beta: f64| {
            let w = LossWeights { beta, l2: 0.0 };
            let (_, g) = net.loss_gradient(&batch, &w).unwrap();
            net.gradient_flat(&g)
        };
        let g0 = grad_at(0.0);
        let g1 = grad_at(0.3);
        let g2 = grad_at(0.6);
        for i in 0..g0.len() {
            let lhs = g2[i] - g1[i];
            let rhs = g1[i] - g0[i];
            assert!((lhs - rhs).abs() < 1e-12, "nonlinear in beta at {i}");
        }
    }

    #[test]
    fn params_flat_round_trip() {
        let net = mini_net();
        let flat = net.params_flat();
        let mut other = KoopmanNet::new_seeded(3, &[8, 8], 4, 2, 123);
        other.set_params_flat(&flat);
        assert_eq!(net, other);
    }
}
