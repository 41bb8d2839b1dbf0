//! Minibatch training of the lifted bilinear model and open-loop evaluation.

mod adam;
mod openloop;

pub use adam::Adam;
pub use openloop::{evaluate_openloop, evaluate_openloop_lti, OpenLoopReport};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleSet;
use crate::diffnet::{Batch, KoopmanNet, LossWeights};
use crate::error::{CoreError, Result};

/// Training hyperparameters (the `train` config block). Defaults reproduce
/// the published architecture and tuning: two tanh layers of width 100,
/// lifting dimension 23 for the 13-state quadrotor, learning rate 1e-3,
/// dictionary-loss weight 0.2, l2 strength 5e-4, 200 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta_kct: f64,
    pub l2_strength: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Encoder hidden widths.
    pub hidden: Vec<usize>,
    /// Dictionary size; the lifted dimension is `state_dim + n_phi`.
    pub n_phi: usize,
    /// Open-loop evaluation horizon in steps (0.5 s at 50 Hz).
    pub eval_horizon: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta_kct: 2e-1,
            l2_strength: 5e-4,
            epochs: 200,
            batch_size: 256,
            seed: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden: vec![100, 100],
            n_phi: 10,
            eval_horizon: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta_kct >= 0.0
            && self.l2_strength >= 0.0
            && self.epochs >= 1
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_epsilon > 0.0;
        if !ok {
            return Err(CoreError::InvalidConfig(
                "training hyperparameters out of range (epochs >= 1, positive rates)".into(),
            ));
        }
        Ok(())
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta_kct,
            l2: self.l2_strength,
        }
    }
}

/// Loss curves and selection outcome of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Full validation loss after each epoch.
    pub val_loss: Vec<f64>,
    /// Epoch whose snapshot was returned (argmin of `val_loss`).
    pub best_epoch: usize,
    /// Mean per-step state MSE over the evaluation horizon on the validation
    /// split, in normalized units.
    pub final_openloop_mse: f64,
    /// Set when training aborted on a non-finite loss; the returned model is
    /// the last good snapshot.
    pub diverged: Option<String>,
}

/// Normalized batch views of a whole split, in trajectory order.
fn normalized_arrays(set: &SampleSet) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let norm = set
        .normalization
        .as_ref()
        .ok_or_else(|| CoreError::Dataset("normalization must be fitted before training".into()))?;
    let n = set.num_samples();
    let d = set.state_dim;
    let m = set.input_dim;
    let mut x = DMatrix::zeros(d, n);
    let mut u = DMatrix::zeros(m, n);
    let mut x_next = DMatrix::zeros(d, n);
    for (col, s) in set.iter_samples().enumerate() {
        norm.apply_state(&s.x, x.column_mut(col).as_mut_slice());
        norm.apply_input(&s.u, u.column_mut(col).as_mut_slice());
        norm.apply_state(&s.x_next, x_next.column_mut(col).as_mut_slice());
    }
    Ok((x, u, x_next))
}

fn gather(src: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(src.nrows(), cols.len());
    for (dst, &c) in cols.iter().enumerate() {
        out.column_mut(dst).copy_from(&src.column(c));
    }
    out
}

/// Trains a network on pre-normalized data with shuffled minibatches and
/// returns the snapshot with the lowest validation loss. Deterministic for a
/// fixed seed: shuffling and initialization come from one seeded stream and
/// reductions run in a fixed order on one thread.
pub fn train(train_set: &SampleSet, val_set: &SampleSet, cfg: &TrainConfig) -> Result<(KoopmanNet, TrainReport)> {
    cfg.validate()?;
    let d = train_set.state_dim;
    let m = train_set.input_dim;
    let weights = cfg.loss_weights();

    let (x, u, x_next) = normalized_arrays(train_set)?;
    let (vx, vu, vx_next) = normalized_arrays(val_set)?;
    let val_batch = Batch {
        x: vx,
        u: vu,
        x_next: vx_next,
    };

    let mut net = KoopmanNet::new_seeded(d, &cfg.hidden, cfg.n_phi, m, cfg.seed);
    let mut adam = Adam::new(net.params_flat().len(), cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E3779B97F4A7C15));

    let n_train = x.ncols();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, KoopmanNet)> = None;

    let mut diverged = None;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                x: gather(&x, chunk),
                u: gather(&u, chunk),
                x_next: gather(&x_next, chunk),
            };
            let step = net.loss_gradient(&batch, &weights).and_then(|(loss, grads)| {
                if grads.is_finite() {
                    Ok((loss, grads))
                } else {
                    Err(CoreError::TrainingDivergence("non-finite gradient".into()))
                }
            });
            let (loss, grads) = match step {
                Ok(ok) => ok,
                Err(e) => {
                    // Abort, keeping the last good snapshot.
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
            };
            let flat = net.gradient_flat(&grads);
            let mut params = net.params_flat();
            adam.step(&mut params, &flat, cfg.learning_rate);
            net.set_params_flat(&params);
            epoch_loss += loss;
            batches += 1;
        }
        train_curve.push(epoch_loss / batches.max(1) as f64);

        let val_loss = net.loss(&val_batch, &weights)?;
        val_curve.push(val_loss);
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, net.clone()));
        }
    }

    let (_, best_epoch, best_net) = best.ok_or_else(|| {
        CoreError::TrainingDivergence(format!(
            "no usable snapshot: {}",
            diverged.clone().unwrap_or_default()
        ))
    })?;
    let final_openloop_mse = openloop::normalized_openloop_mse(&best_net, val_set, cfg.eval_horizon)?;
    Ok((
        best_net,
        TrainReport {
            train_loss: train_curve,
            val_loss: val_curve,
            best_epoch,
            final_openloop_mse,
            diverged,
        },
    ))
}
