//! Per-dimension standardization fitted on the training split.

use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{CoreError, Result};

/// State standardization plus input offset/scale. States map to zero mean and
/// unit scale; inputs are shifted by the hover offset (thrust channel) so
/// `u = 0` corresponds to hover, then scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub u_offset: Vec<f64>,
    pub u_scale: Vec<f64>,
}

impl Normalization {
    /// Identity transform for a given dimensionality.
    pub fn identity(state_dim: usize, input_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; state_dim],
            x_scale: vec![1.0; state_dim],
            u_offset: vec![0.0; input_dim],
            u_scale: vec![1.0; input_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn input_dim(&self) -> usize {
        self.u_offset.len()
    }

    pub fn apply_state(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.x_mean[i]) / self.x_scale[i];
        }
    }

    pub fn invert_state(&self, xn: &[f64], out: &mut [f64]) {
        for i in 0..xn.len() {
            out[i] = xn[i] * self.x_scale[i] + self.x_mean[i];
        }
    }

    pub fn apply_input(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..u.len() {
            out[i] = (u[i] - self.u_offset[i]) / self.u_scale[i];
        }
    }

    pub fn invert_input(&self, un: &[f64], out: &mut [f64]) {
        for i in 0..un.len() {
            out[i] = un[i] * self.u_scale[i] + self.u_offset[i];
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_scale.iter().chain(&self.u_scale).all(|&s| s > 0.0)
            && self.x_mean.len() == self.x_scale.len()
            && self.u_offset.len() == self.u_scale.len();
        if !ok {
            return Err(CoreError::InvalidConfig(
                "normalization scales must be positive and shapes consistent".into(),
            ));
        }
        Ok(())
    }
}

/// Fits standardization statistics on a training split. Dimensions with zero
/// variance get scale 1. The input offset is the hover thrust on channel 0;
/// input scales are standard deviations of the offset inputs.
pub fn fit_normalization(train: &SampleSet) -> Result<Normalization> {
    let n_samples = train.num_samples();
    if n_samples == 0 {
        return Err(CoreError::Dataset("cannot fit normalization on an empty set".into()));
    }
    let d = train.state_dim;
    let m = train.input_dim;

    let mut x_mean = vec![0.0; d];
    for s in train.iter_samples() {
        for i in 0..d {
            x_mean[i] += s.x[i];
        }
    }
    for v in &mut x_mean {
        *v /= n_samples as f64;
    }

    let mut x_var = vec![0.0; d];
    for s in train.iter_samples() {
        for i in 0..d {
            let e = s.x[i] - x_mean[i];
            x_var[i] += e * e;
        }
    }
    let x_scale: Vec<f64> = x_var
        .iter()
        .map(|&v| {
            let std = (v / n_samples as f64).sqrt();
            if std > 1e-12 {
                std
            } else {
                1.0
            }
        })
        .collect();

    let mut u_offset = vec![0.0; m];
    u_offset[0] = train.hover_thrust_offset;
    let mut u_var = vec![0.0; m];
    for s in train.iter_samples() {
        for j in 0..m {
            let e = s.u[j] - u_offset[j];
            u_var[j] += e * e;
        }
    }
    let u_scale: Vec<f64> = u_var
        .iter()
        .map(|&v| {
            let rms = (v / n_samples as f64).sqrt();
            if rms > 1e-12 {
                rms
            } else {
                1.0
            }
        })
        .collect();

    Ok(Normalization {
        x_mean,
        x_scale,
        u_offset,
        u_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use proptest::prelude::*;

    fn toy_set(xs: Vec<Vec<f64>>, us: Vec<Vec<f64>>) -> SampleSet {
        let samples: Vec<Sample> = xs
            .windows(2)
            .zip(us)
            .map(|(w, u)| Sample {
                x: w[0].clone(),
                u,
                x_next: w[1].clone(),
            })
            .collect();
        SampleSet {
            state_dim: samples[0].x.len(),
            input_dim: samples[0].u.len(),
            trajectories: vec![samples],
            dt: 0.02,
            hover_thrust_offset: 0.0,
            normalization: None,
        }
    }

    #[test]
    fn constant_dimension_gets_unit_scale() {
        let set = toy_set(
            vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]],
            vec![vec![0.0], vec![0.0]],
        );
        let norm = fit_normalization(&set).unwrap();
        assert_eq!(norm.x_scale[0], 1.0);
        assert_eq!(norm.x_mean[0], 5.0);
        assert!(norm.x_scale[1] > 0.0 && norm.x_scale[1] != 1.0);
    }

    #[test]
    fn fitted_statistics_standardize_the_train_split() {
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![3.0 * t.sin() + 1.0, 0.5 * (2.0 * t).cos() - 2.0]
            })
            .collect();
        let us = vec![vec![0.3]; 199];
        let set = toy_set(xs, us);
        let norm = fit_normalization(&set).unwrap();

        let n = set.num_samples() as f64;
        let mut mean = vec![0.0; 2];
        let mut var = vec![0.0; 2];
        for s in set.iter_samples() {
            let mut xn = vec![0.0; 2];
            norm.apply_state(&s.x, &mut xn);
            for i in 0..2 {
                mean[i] += xn[i] / n;
                var[i] += xn[i] * xn[i] / n;
            }
        }
        for i in 0..2 {
            assert!(mean[i].abs() < 1e-10, "mean {i} = {:.2e}", mean[i]);
            let scale = (var[i] - mean[i] * mean[i]).sqrt();
            assert!((0.999..=1.001).contains(&scale), "scale {i} = {scale}");
        }
    }

    proptest! {
        #[test]
        fn apply_invert_round_trip(
            x in prop::collection::vec(-10.0f64..10.0, 4),
            u in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let norm = Normalization {
                x_mean: vec![0.5, -1.0, 2.0, 0.0],
                x_scale: vec![2.0, 0.3, 1.5, 4.0],
                u_offset: vec![0.33, 0.0],
                u_scale: vec![0.1, 2.0],
            };
            let mut xn = vec![0.0; 4];
            let mut back = vec![0.0; 4];
            norm.apply_state(&x, &mut xn);
            norm.invert_state(&xn, &mut back);
            for i in 0..4 {
                prop_assert!((back[i] - x[i]).abs() < 1e-12);
            }
            let mut un = vec![0.0; 2];
            let mut ub = vec![0.0; 2];
            norm.apply_input(&u, &mut un);
            norm.invert_input(&un, &mut ub);
            for i in 0..2 {
                prop_assert!((ub[i] - u[i]).abs() < 1e-12);
            }
        }
    }
}
