use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::training::grad::GradientBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update in place.
    pub fn step(
        &mut self,
        params: Vec<&mut [T]>,
        grads: &GradientBundle<T>,
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.values.len() != self.m.len() {
            return Err(Error::invalid(
                "parameter groups do not match the optimizer state",
            ));
        }
        for (i, (p, g)) in params.iter().zip(&grads.values).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.m[i].len(),
                    found: g.len(),
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let c1 = T::one() - T::c(cfg.beta1.powf(self.t as f64));
        let c2 = T::one() - T::c(cfg.beta2.powf(self.t as f64));
        let (lr, eps) = (T::c(lr), T::c(cfg.eps));
        for (i, p) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.iter_mut().enumerate() {
                let g = grads.values[i][j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(v: Vec<f64>) -> GradientBundle<f64> {
        GradientBundle {
            names: vec!["p".into()],
            values: vec![v],
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, 2.0, 3.0];
        let mut s = AdamState::new(&[3]);
        s.step(
            vec![&mut p],
            &bundle(vec![0.5, -3.0, 0.0]),
            0.01,
            &AdamConfig::default(),
        )
        .unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((p[1] - (2.0 + 0.01)).abs() < 1e-8);
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn zero_gradient_keeps_params_and_runs_are_reproducible() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(&[2]);
        for _ in 0..5 {
            s.step(
                vec![&mut p],
                &bundle(vec![0.0, 0.0]),
                0.1,
                &AdamConfig::default(),
            )
            .unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0]);
        let run = || {
            let mut p = vec![0.3, 0.7];
            let mut s = AdamState::new(&[2]);
            for k in 0..20 {
                let g = vec![(k as f64).sin(), p[0] - p[1]];
                s.step(vec![&mut p], &bundle(g), 0.05, &AdamConfig::default())
                    .unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(&[2]);
        assert!(s
            .step(
                vec![&mut p],
                &bundle(vec![0.0]),
                0.1,
                &AdamConfig::default()
            )
            .is_err());
    }
}
