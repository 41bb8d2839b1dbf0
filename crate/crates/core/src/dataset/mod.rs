//! Data collection and the learning dataset: PID waypoint flights logged at
//! a fast rate, downsampled to the controller rate with interval-averaged
//! inputs, grouped by trajectory and serialized as JSONL.

mod collect;
mod normalize;
mod store;

pub use collect::{collect, CollectConfig};
pub use normalize::{fit_normalization, Normalization};
pub use store::{load, save};

use crate::error::{CoreError, Result};

/// One training triple: state, interval-averaged input, next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// The learning dataset: trajectories of consecutive samples at a fixed
/// interval, plus preprocessing metadata. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub trajectories: Vec<Vec<Sample>>,
    /// Sample interval [s].
    pub dt: f64,
    pub state_dim: usize,
    pub input_dim: usize,
    /// Input offset making `u = 0` the hover input (thrust channel) [N].
    pub hover_thrust_offset: f64,
    /// Fitted on the training split; `None` until fitted.
    pub normalization: Option<Normalization>,
}

impl SampleSet {
    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn iter_samples(&self) -> impl Iterator<Item = &Sample> {
        self.trajectories.iter().flatten()
    }

    /// Splits by whole trajectories: `1 - holdout` of the trajectories go to
    /// train; validation and test each receive half the held-out ones.
    /// Deterministic in the trajectory order.
    pub fn split(&self, holdout_fraction: f64) -> Result<(SampleSet, SampleSet, SampleSet)> {
        if !(0.0..1.0).contains(&holdout_fraction) || holdout_fraction <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "holdout fraction {holdout_fraction} outside (0, 1)"
            )));
        }
        let total = self.num_trajectories();
        if total < 3 {
            return Err(CoreError::Dataset(format!(
                "need at least 3 trajectories to split, have {total}"
            )));
        }
        let holdout = (holdout_fraction * total as f64).round() as usize;
        if holdout == 0 {
            return Err(CoreError::Dataset(
                "holdout fraction rounds to zero trajectories".into(),
            ));
        }
        if holdout >= total {
            return Err(CoreError::Dataset(
                "holdout fraction leaves no training trajectories".into(),
            ));
        }
        let n_val = holdout.div_ceil(2);
        let n_train = total - holdout;

        let subset = |range: std::ops::Range<usize>| SampleSet {
            trajectories: self.trajectories[range].to_vec(),
            dt: self.dt,
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            hover_thrust_offset: self.hover_thrust_offset,
            normalization: self.normalization.clone(),
        };
        let train = subset(0..n_train);
        let val = subset(n_train..n_train + n_val);
        let test = subset(n_train + n_val..total);
        Ok((train, val, test))
    }

    pub fn validate(&self) -> Result<()> {
        for (t, traj) in self.trajectories.iter().enumerate() {
            for (k, s) in traj.iter().enumerate() {
                if s.x.len() != self.state_dim
                    || s.x_next.len() != self.state_dim
                    || s.u.len() != self.input_dim
                {
                    return Err(CoreError::Dataset(format!(
                        "sample ({t}, {k}) has inconsistent dimensions"
                    )));
                }
            }
            for k in 1..traj.len() {
                if traj[k].x != traj[k - 1].x_next {
                    return Err(CoreError::Dataset(format!(
                        "trajectory {t} breaks the x_next chain at sample {k}"
                    )));
                }
            }
        }
        Ok(())
    }
}
