//! Element-wise optimizers. Applying a step to a slice gives bitwise the
//! same values as applying it to the whole vector, which is what lets
//! sharded optimizer state reproduce the single-device trajectory.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Optimizer-state elements kept per parameter (`m` and `v` for Adam).
    pub fn state_per_param(&self) -> usize {
        match self {
            Optimizer::Sgd { .. } => 0,
            Optimizer::Adam { .. } => 2,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer state for a contiguous region of one layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptState {
    pub fn zeros(opt: &Optimizer, len: usize) -> Self {
        match opt {
            Optimizer::Sgd { .. } => OptState::default(),
            Optimizer::Adam { .. } => OptState {
                m: vec![0.0; len],
                v: vec![0.0; len],
            },
        }
    }

    pub fn elements(&self) -> usize {
        self.m.len() + self.v.len()
    }

    /// Concatenated `m` then `v`, for checksums.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.m.clone();
        out.extend(&self.v);
        out
    }
}

impl Optimizer {
    /// One update of `params` from `grads`. `step` counts from 1.
    pub fn apply(&self, params: &mut [f64], grads: &[f64], state: &mut OptState, step: u64) {
        assert_eq!(params.len(), grads.len());
        match *self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(step as i32);
                let bc2 = 1.0 - beta2.powi(step as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = state.m[i] / bc1;
                    let v_hat = state.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_keeps_params() {
        for opt in [Optimizer::Sgd { lr: 0.0 }, Optimizer::adam(0.0)] {
            let mut p = vec![1.0, -2.0, 3.5];
            let mut s = OptState::zeros(&opt, 3);
            for t in 1..=10 {
                opt.apply(&mut p, &[0.3, -0.1, 2.0], &mut s, t);
            }
            assert_eq!(p, vec![1.0, -2.0, 3.5]);
        }
    }

    #[test]
    fn sliced_update_is_bitwise_equal() {
        let opt = Optimizer::adam(0.01);
        let g: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut full = vec![0.5; 10];
        let mut fs = OptState::zeros(&opt, 10);
        opt.apply(&mut full, &g, &mut fs, 1);

        let mut parts = vec![0.5; 10];
        for r in [0..3, 3..7, 7..10] {
            let mut s = OptState::zeros(&opt, r.len());
            opt.apply(&mut parts[r.clone()], &g[r], &mut s, 1);
        }
        assert_eq!(full, parts);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let opt = Optimizer::adam(0.1);
        let mut p = vec![0.0];
        let mut s = OptState::zeros(&opt, 1);
        opt.apply(&mut p, &[4.0], &mut s, 1);
        // bias-corrected m̂/√v̂ = ±1
        assert!((p[0] + 0.1).abs() < 1e-8);
    }
}
