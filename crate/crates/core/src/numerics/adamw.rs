//! AdamW with decoupled weight decay.
//!
//! ```text
//! theta <- theta - lr * wd * theta
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use ndarray::Zip;

use crate::connectome::Matrix;
use crate::error::{LuminaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamWState {
    /// Zeroed moments mirroring `params`.
    pub fn new(config: AdamWConfig, params: &[Matrix]) -> Self {
        Self {
            config,
            step_count: 0,
            m: params.iter().map(|p| Matrix::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.dim())).collect(),
        }
    }

    /// One update of every parameter tensor in place.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(LuminaError::InvalidInput(format!(
                "adamw: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.m[k].dim() {
                return Err(LuminaError::ShapeMismatch {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *p *= decay;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut params = vec![array![[1.5, -2.0]], array![[0.25]]];
        let before = params.clone();
        let grads = vec![Matrix::zeros((1, 2)), Matrix::zeros((1, 1))];
        let mut state = AdamWState::new(cfg, &params);
        for _ in 0..5 {
            state.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn single_scalar_step_matches_hand_computation() {
        // hand-stepped: decay, then m_hat = 1, v_hat = 1
        let (lr, wd, eps) = (2e-4, 1e-2, 1e-8);
        let m = 0.1 * 1.0;
        let v = 0.001 * 1.0;
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.999);
        let expect = (1.0 - lr * wd) * 1.0 - lr * m_hat / (f64::sqrt(v_hat) + eps);
        assert!((expect - 0.999_798_000_002).abs() < 1e-12);

        let mut params = vec![array![[1.0]]];
        let mut state = AdamWState::new(AdamWConfig::default(), &params);
        state.step(&mut params, &[array![[1.0]]]).unwrap();
        assert!((params[0][[0, 0]] - expect).abs() < 1e-15);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn identical_tensors_stay_identical() {
        let mut params = vec![array![[0.3, -0.7]], array![[0.3, -0.7]]];
        let mut state = AdamWState::new(AdamWConfig::default(), &params);
        for i in 0..20 {
            let g = array![[0.1 * i as f64, -0.05]];
            state.step(&mut params, &[g.clone(), g]).unwrap();
        }
        assert_eq!(params[0], params[1]);
        assert!(state.v.iter().all(|v| v.iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![array![[1.0, 2.0]]];
        let mut state = AdamWState::new(AdamWConfig::default(), &params);
        assert!(state.step(&mut params, &[array![[1.0]]]).is_err());
    }
}
