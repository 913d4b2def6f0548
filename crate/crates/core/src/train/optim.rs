//! First-order optimizers over flat parameter tensors.

use serde::{Deserialize, Serialize};

use super::backward::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam moment estimates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// `θ ← θ − lr · g`.
pub fn sgd_step(params: &mut [&mut Vec<f64>], grads: &Gradients, lr: f64) {
    for (p, g) in params.iter_mut().zip(&grads.tensors) {
        for (p, g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
}

/// Adam update with bias-corrected moments.
pub fn adam_step(
    params: &mut [&mut Vec<f64>],
    grads: &Gradients,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
    state: &mut AdamState,
) {
    if state.m.is_empty() {
        state.m = grads.tensors.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(v: Vec<f64>) -> Gradients {
        Gradients { tensors: vec![v] }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0];
        sgd_step(&mut [&mut p], &grads(vec![0.0, 0.0]), 0.5);
        assert_eq!(p, vec![1.0, -2.0]);
        let mut st = AdamState::default();
        adam_step(&mut [&mut p], &grads(vec![0.0, 0.0]), 0.5, (0.9, 0.999, 1e-8), &mut st);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_unit_rate() {
        let mut p = vec![1.0, -2.0];
        sgd_step(&mut [&mut p], &grads(vec![0.25, 4.0]), 1.0);
        assert_eq!(p, vec![0.75, -6.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-3, 1.0, 1e6] {
            let mut p = vec![0.0; 3];
            let mut st = AdamState::default();
            adam_step(&mut [&mut p], &grads(vec![scale, -scale, 3.0 * scale]), 0.01, (0.9, 0.999, 1e-8), &mut st);
            for (v, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
                assert!((v - sign * 0.01).abs() < 1e-4 * 0.01 + 1e-10, "{v}");
            }
        }
    }
}
