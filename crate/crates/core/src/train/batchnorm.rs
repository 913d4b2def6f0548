//! Batch normalization with running statistics.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};

/// Weight of the old running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub mode: BnMode,
}

/// Batch statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<Vec<f64>>,
    pub inv_std: Vec<f64>,
}

impl BatchNormState {
    /// Identity-initialized state (`γ = 1`, `ζ = 0`, unit running variance).
    pub fn new(dim: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; dim],
            zeta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: BN_EPSILON,
            mode: BnMode::Train,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_dim("batchnorm zeta", d, self.zeta.len())?;
        check_dim("batchnorm running mean", d, self.running_mean.len())?;
        check_dim("batchnorm running variance", d, self.running_var.len())?;
        if !(self.eps > 0.0) {
            return Err(MasoError::InvalidParam("batchnorm eps must be positive".into()));
        }
        if self.running_var.iter().any(|v| *v < 0.0) {
            return Err(MasoError::InvalidParam("negative running variance".into()));
        }
        Ok(())
    }

    /// Per-feature `(a, b)` with `bn(z) = a ⊙ z + b` under running statistics.
    pub fn scale_shift(&self) -> (Vec<f64>, Vec<f64>) {
        let a: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let b = self
            .zeta
            .iter()
            .zip(&self.running_mean)
            .zip(&a)
            .map(|((z, m), a)| z - m * a)
            .collect();
        (a, b)
    }

    /// Inference-mode BN as a diagonal affine map. Fails in train mode, where
    /// the output depends on the batch.
    pub fn fold(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.mode == BnMode::Train {
            return Err(MasoError::WrongMode("batchnorm must be in infer mode to fold"));
        }
        Ok(self.scale_shift())
    }

    /// Single-sample evaluation with running statistics.
    pub fn apply_running(&self, z: &[f64]) -> Vec<f64> {
        let (a, b) = self.scale_shift();
        z.iter().zip(a.iter().zip(&b)).map(|(z, (a, b))| a * z + b).collect()
    }

    /// Normalizes a batch. In train mode batch statistics are used (biased
    /// variance), running statistics are updated, and a cache is returned.
    pub fn forward_batch(&mut self, batch: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Option<BnCache>)> {
        let d = self.dim();
        for z in batch {
            check_dim("batchnorm input", d, z.len())?;
        }
        if self.mode == BnMode::Infer {
            return Ok((batch.iter().map(|z| self.apply_running(z)).collect(), None));
        }
        let n = batch.len();
        if n < 2 {
            return Err(MasoError::InvalidParam(format!(
                "batchnorm needs at least 2 samples in train mode, got {n}"
            )));
        }
        let mut mean = vec![0.0; d];
        for z in batch {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for z in batch {
            for ((s, v), m) in var.iter_mut().zip(z).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let xhat: Vec<Vec<f64>> = batch
            .iter()
            .map(|z| (0..d).map(|i| (z[i] - mean[i]) * inv_std[i]).collect())
            .collect();
        let out = xhat
            .iter()
            .map(|h| (0..d).map(|i| h[i] * self.gamma[i] + self.zeta[i]).collect())
            .collect();
        for i in 0..d {
            self.running_mean[i] = BN_MOMENTUM * self.running_mean[i] + (1.0 - BN_MOMENTUM) * mean[i];
            self.running_var[i] = BN_MOMENTUM * self.running_var[i] + (1.0 - BN_MOMENTUM) * var[i];
        }
        Ok((out, Some(BnCache { xhat, inv_std })))
    }

    /// Backward pass through train-mode BN. Returns input gradients and
    /// accumulates `∂γ`, `∂ζ`.
    pub fn backward_batch(
        &self,
        cache: &BnCache,
        grad_out: &[Vec<f64>],
        grad_gamma: &mut [f64],
        grad_zeta: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = grad_out.len() as f64;
        let mut sum_g = vec![0.0; d];
        let mut sum_gx = vec![0.0; d];
        for (g, h) in grad_out.iter().zip(&cache.xhat) {
            for i in 0..d {
                sum_g[i] += g[i];
                sum_gx[i] += g[i] * h[i];
            }
        }
        for i in 0..d {
            grad_gamma[i] += sum_gx[i];
            grad_zeta[i] += sum_g[i];
        }
        grad_out
            .iter()
            .zip(&cache.xhat)
            .map(|(g, h)| {
                (0..d)
                    .map(|i| {
                        self.gamma[i] * cache.inv_std[i] / n
                            * (n * g[i] - sum_g[i] - h[i] * sum_gx[i])
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_batch() {
        let mut bn = BatchNormState::new(1);
        let (out, _) = bn.forward_batch(&[vec![-1.0], vec![1.0]]).unwrap();
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out[0][0] + want).abs() < 1e-12);
        assert!((out[1][0] - want).abs() < 1e-12);
        assert!((out[1][0] - 0.999995).abs() < 1e-7);
    }

    #[test]
    fn zero_gamma_gives_constant() {
        let mut bn = BatchNormState::new(2);
        bn.gamma = vec![0.0, 0.0];
        bn.zeta = vec![0.3, -0.7];
        let (out, _) = bn.forward_batch(&[vec![1.0, 5.0], vec![2.0, -4.0], vec![9.0, 0.0]]).unwrap();
        assert!(out.iter().all(|o| o == &vec![0.3, -0.7]));
    }

    #[test]
    fn single_sample_train_batch_rejected() {
        let mut bn = BatchNormState::new(1);
        assert!(bn.forward_batch(&[vec![1.0]]).is_err());
    }

    #[test]
    fn running_stats_momentum() {
        let mut bn = BatchNormState::new(1);
        bn.forward_batch(&[vec![1.0], vec![3.0]]).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn infer_mode_is_deterministic_and_frozen() {
        let mut bn = BatchNormState::new(2);
        bn.running_mean = vec![0.5, -1.0];
        bn.running_var = vec![2.0, 0.25];
        bn.mode = BnMode::Infer;
        let batch = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let (a, _) = bn.forward_batch(&batch).unwrap();
        let (b, _) = bn.forward_batch(&batch).unwrap();
        assert_eq!(a, b);
        assert_eq!(bn.running_mean, vec![0.5, -1.0]);
    }

    #[test]
    fn fold_examples() {
        let mut bn = BatchNormState::new(1);
        assert!(bn.fold().is_err());
        bn.mode = BnMode::Infer;
        bn.running_var = vec![1.0 - bn.eps];
        let (a, b) = bn.fold().unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15);
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let batch = vec![vec![0.3, -1.0], vec![1.5, 0.2], vec![-0.4, 0.9], vec![0.1, 0.1]];
        let weights = [[0.7, -0.2], [0.1, 0.5], [-0.9, 0.3], [0.4, 0.8]];
        let mut bn = BatchNormState::new(2);
        bn.gamma = vec![1.3, 0.6];
        bn.zeta = vec![0.2, -0.1];
        let loss = |bn: &BatchNormState, batch: &[Vec<f64>]| {
            let mut s = bn.clone();
            let (out, _) = s.forward_batch(batch).unwrap();
            out.iter()
                .zip(&weights)
                .map(|(o, w)| o[0] * w[0] + o[1] * w[1] + o[0] * o[0] * 0.5)
                .sum::<f64>()
        };
        let mut s = bn.clone();
        let (out, cache) = s.forward_batch(&batch).unwrap();
        let grad_out: Vec<Vec<f64>> = out
            .iter()
            .zip(&weights)
            .map(|(o, w)| vec![w[0] + o[0], w[1]])
            .collect();
        let mut gg = vec![0.0; 2];
        let mut gz = vec![0.0; 2];
        let gx = bn.backward_batch(&cache.unwrap(), &grad_out, &mut gg, &mut gz);
        let h = 1e-6;
        for n in 0..4 {
            for i in 0..2 {
                let mut p = batch.clone();
                let mut m = batch.clone();
                p[n][i] += h;
                m[n][i] -= h;
                let fd = (loss(&bn, &p) - loss(&bn, &m)) / (2.0 * h);
                assert!((fd - gx[n][i]).abs() < 1e-6, "x[{n}][{i}] {fd} vs {}", gx[n][i]);
            }
        }
        for i in 0..2 {
            let (mut p, mut m) = (bn.clone(), bn.clone());
            p.gamma[i] += h;
            m.gamma[i] -= h;
            let fd = (loss(&p, &batch) - loss(&m, &batch)) / (2.0 * h);
            assert!((fd - gg[i]).abs() < 1e-6);
            let (mut p, mut m) = (bn.clone(), bn.clone());
            p.zeta[i] += h;
            m.zeta[i] -= h;
            let fd = (loss(&p, &batch) - loss(&m, &batch)) / (2.0 * h);
            assert!((fd - gz[i]).abs() < 1e-6);
        }
    }
}
