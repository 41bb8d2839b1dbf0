//! Multi-step open-loop prediction evaluation: lift once, roll the bilinear
//! model forward in the lifted space, project at every step.

use nalgebra::{DMatrix, DVector};

use crate::dataset::SampleSet;
use crate::diffnet::KoopmanNet;
use crate::error::{CoreError, Result};

/// Per-step mean squared prediction error over all horizon windows.
#[derive(Debug, Clone)]
pub struct OpenLoopReport {
    /// `per_step_mse[s]` is the mean squared Euclidean error over the scored
    /// dimensions at step `s + 1`.
    pub per_step_mse: Vec<f64>,
    pub windows: usize,
    /// Trajectories shorter than the horizon, skipped entirely.
    pub skipped_trajectories: usize,
}

impl OpenLoopReport {
    /// Mean of the per-step errors over the horizon.
    pub fn mean_mse(&self) -> f64 {
        if self.per_step_mse.is_empty() {
            return f64::NAN;
        }
        self.per_step_mse.iter().sum::<f64>() / self.per_step_mse.len() as f64
    }
}

/// Evaluates the learned model on raw-unit errors over `dims` (for the
/// quadrotor, `[0, 1, 2]` scores position). States are normalized on entry,
/// predictions de-normalized before scoring.
pub fn evaluate_openloop(
    net: &KoopmanNet,
    set: &SampleSet,
    horizon: usize,
    dims: &[usize],
) -> Result<OpenLoopReport> {
    if horizon == 0 {
        return Err(CoreError::InvalidConfig("horizon must be >= 1".into()));
    }
    let norm = set
        .normalization
        .as_ref()
        .ok_or_else(|| CoreError::Dataset("dataset has no normalization metadata".into()))?;
    let d = set.state_dim;

    let mut sq_err = vec![0.0; horizon];
    let mut windows = 0usize;
    let mut skipped = 0usize;
    let mut xhat_raw = vec![0.0; d];

    for traj in &set.trajectories {
        if traj.len() < horizon {
            skipped += 1;
            continue;
        }
        let n_windows = traj.len() - horizon + 1;

        // Normalize the whole trajectory once.
        let mut x_norm = DMatrix::zeros(d, traj.len());
        let mut u_norm = DMatrix::zeros(set.input_dim, traj.len());
        for (k, s) in traj.iter().enumerate() {
            norm.apply_state(&s.x, x_norm.column_mut(k).as_mut_slice());
            norm.apply_input(&s.u, u_norm.column_mut(k).as_mut_slice());
        }

        // Batched rollout: one lifted column per window.
        let mut z = net.lift_batch(&x_norm.columns(0, n_windows).into_owned());
        for step in 0..horizon {
            let u_step = u_norm.columns(step, n_windows).into_owned();
            z = step_batch(net, &z, &u_step);
            for w in 0..n_windows {
                // Truth at start + step + 1 is x_next of sample start + step.
                let truth = &traj[w + step].x_next;
                norm.invert_state(z.column(w).rows(0, d).as_slice(), &mut xhat_raw);
                let mut e = 0.0;
                for &dim in dims {
                    let diff = xhat_raw[dim] - truth[dim];
                    e += diff * diff;
                }
                sq_err[step] += e;
            }
        }
        windows += n_windows;
    }

    if windows == 0 {
        return Err(CoreError::Dataset(format!(
            "no trajectory long enough for horizon {horizon} ({skipped} skipped)"
        )));
    }
    for e in &mut sq_err {
        *e /= windows as f64;
    }
    Ok(OpenLoopReport {
        per_step_mse: sq_err,
        windows,
        skipped_trajectories: skipped,
    })
}

fn step_batch(net: &KoopmanNet, z: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z_next = &net.f * z;
    for (j, g) in net.g.iter().enumerate() {
        let mut gz = g * z;
        for (mut col, &uj) in gz.column_iter_mut().zip(u.row(j).iter()) {
            col *= uj;
        }
        z_next += gz;
    }
    z_next
}

/// Scalar training-report metric: mean per-step squared error over all state
/// dimensions in normalized units.
pub(crate) fn normalized_openloop_mse(
    net: &KoopmanNet,
    set: &SampleSet,
    horizon: usize,
) -> Result<f64> {
    let norm = set
        .normalization
        .as_ref()
        .ok_or_else(|| CoreError::Dataset("dataset has no normalization metadata".into()))?;
    let d = set.state_dim;
    let mut sq_err = 0.0;
    let mut count = 0usize;
    let mut truth_norm = vec![0.0; d];

    for traj in &set.trajectories {
        if traj.len() < horizon {
            continue;
        }
        let n_windows = traj.len() - horizon + 1;
        let mut x_norm = DMatrix::zeros(d, traj.len());
        let mut u_norm = DMatrix::zeros(set.input_dim, traj.len());
        for (k, s) in traj.iter().enumerate() {
            norm.apply_state(&s.x, x_norm.column_mut(k).as_mut_slice());
            norm.apply_input(&s.u, u_norm.column_mut(k).as_mut_slice());
        }
        let mut z = net.lift_batch(&x_norm.columns(0, n_windows).into_owned());
        for step in 0..horizon {
            let u_step = u_norm.columns(step, n_windows).into_owned();
            z = step_batch(net, &z, &u_step);
            for w in 0..n_windows {
                norm.apply_state(&traj[w + step].x_next, &mut truth_norm);
                for i in 0..d {
                    let diff = z[(i, w)] - truth_norm[i];
                    sq_err += diff * diff;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(CoreError::Dataset("no window fits the horizon".into()));
    }
    Ok(sq_err / count as f64)
}

/// Open-loop evaluation of a fixed linear model `x' = x_op + A (x - x_op) +
/// B (u - u_op)` on raw states; the comparison baseline for the learned
/// model. Scores the same `dims` convention as [`evaluate_openloop`].
pub fn evaluate_openloop_lti(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x_op: &DVector<f64>,
    u_op: &DVector<f64>,
    set: &SampleSet,
    horizon: usize,
    dims: &[usize],
) -> Result<OpenLoopReport> {
    if horizon == 0 {
        return Err(CoreError::InvalidConfig("horizon must be >= 1".into()));
    }
    let d = set.state_dim;
    let m = set.input_dim;
    let mut sq_err = vec![0.0; horizon];
    let mut windows = 0usize;
    let mut skipped = 0usize;

    for traj in &set.trajectories {
        if traj.len() < horizon {
            skipped += 1;
            continue;
        }
        let n_windows = traj.len() - horizon + 1;
        let mut x = DMatrix::zeros(d, n_windows);
        for w in 0..n_windows {
            for i in 0..d {
                x[(i, w)] = traj[w].x[i] - x_op[i];
            }
        }
        for step in 0..horizon {
            let mut du = DMatrix::zeros(m, n_windows);
            for w in 0..n_windows {
                for j in 0..m {
                    du[(j, w)] = traj[w + step].u[j] - u_op[j];
                }
            }
            x = a * x + b * du;
            for w in 0..n_windows {
                let truth = &traj[w + step].x_next;
                let mut e = 0.0;
                for &dim in dims {
                    let diff = (x[(dim, w)] + x_op[dim]) - truth[dim];
                    e += diff * diff;
                }
                sq_err[step] += e;
            }
        }
        windows += n_windows;
    }
    if windows == 0 {
        return Err(CoreError::Dataset(format!(
            "no trajectory long enough for horizon {horizon} ({skipped} skipped)"
        )));
    }
    for e in &mut sq_err {
        *e /= windows as f64;
    }
    Ok(OpenLoopReport {
        per_step_mse: sq_err,
        windows,
        skipped_trajectories: skipped,
    })
}
