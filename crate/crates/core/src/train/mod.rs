//! Losses, gradients, batch normalization and optimizers.

mod backward;
mod batchnorm;
mod loss;
mod optim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::network::{LayerSpec, Network};
use crate::rng;

pub use backward::{accuracy, backward, batch_loss, BackwardOutput, Gradients, LossKind, Targets};
pub use batchnorm::{BatchNormState, BnCache, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use loss::{
    cross_entropy, log_sum_exp, offdiag_cosine_magnitude, offdiag_gram_magnitude, ortho_penalty,
    ortho_penalty_grad, softmax, softmax_jacobian_frobenius_sq, squared_error,
};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub lambda_ortho: f64,
    /// Per-epoch multiplicative learning-rate decay (1 keeps it constant).
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::adam(),
            loss: LossKind::Ce,
            lambda_ortho: 0.0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MasoError::InvalidParam(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.lambda_ortho >= 0.0) {
            return Err(MasoError::InvalidParam("lambda_ortho must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(MasoError::InvalidParam("batch size must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(MasoError::InvalidParam("lr_decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    /// Training accuracy after the epoch (labelled data only).
    pub accuracy: Option<f64>,
    /// `ortho_penalty(W_final)` after the epoch.
    pub penalty: f64,
    pub offdiag_gram: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

impl History {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

fn set_bn_mode(net: &mut Network, mode: BnMode) -> Result<bool> {
    let mut any = false;
    for spec in net.layers_mut() {
        if let LayerSpec::BatchNorm { state } = spec {
            state.mode = mode;
            any = true;
        }
    }
    net.recompile()?;
    Ok(any)
}

/// Minibatch training. Deterministic for a given seed: the example order of
/// epoch `e` comes from sub-stream `e` of the seed. BN layers train with
/// batch statistics and are left in infer mode afterwards.
pub fn train(net: &mut Network, inputs: &[Vec<f64>], targets: &Targets, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(MasoError::InvalidParam("empty dataset".into()));
    }
    crate::error::check_dim("targets", inputs.len(), targets.len())?;
    let mut history = History::default();
    if let Some(labels) = targets.labels() {
        let first = labels[0];
        if labels.iter().all(|l| *l == first) {
            history.warnings.push(format!("degenerate dataset: every label is {first}"));
        }
    }
    let has_bn = set_bn_mode(net, BnMode::Train)?;
    let mut adam = AdamState::default();
    let mut lr = cfg.lr;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::substream(cfg.seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if has_bn && chunk.len() < 2 {
                continue;
            }
            let out = backward(net, inputs, targets, chunk, cfg.loss, cfg.lambda_ortho)?;
            loss_sum += out.loss;
            batches += 1;
            {
                let mut params = net.parameters_mut();
                match cfg.optimizer {
                    Optimizer::Sgd => sgd_step(&mut params, &out.grads, lr),
                    Optimizer::Adam { beta1, beta2, eps } => {
                        adam_step(&mut params, &out.grads, lr, (beta1, beta2, eps), &mut adam)
                    }
                }
            }
            net.recompile()?;
        }
        if !loss_sum.is_finite() {
            return Err(MasoError::NoConvergence {
                iterations: epoch + 1,
                residual: loss_sum,
            });
        }
        let accuracy = match targets.labels() {
            Some(labels) => Some(accuracy(net, inputs, labels)?),
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / batches.max(1) as f64,
            accuracy,
            penalty: ortho_penalty(net.w_final()),
            offdiag_gram: offdiag_gram_magnitude(net.w_final()),
        });
        lr *= cfg.lr_decay;
    }
    set_bn_mode(net, BnMode::Infer)?;
    Ok(history)
}

/// Returns an equivalent network without BN layers: each inference-mode BN
/// is merged into the dense layer right before it, or else replaced by a
/// diagonal dense layer.
pub fn fold_batchnorm(net: &Network) -> Result<Network> {
    let mut out: Vec<LayerSpec> = Vec::with_capacity(net.layers().len());
    for spec in net.layers() {
        let LayerSpec::BatchNorm { state } = spec else {
            out.push(spec.clone());
            continue;
        };
        let (a, b) = state.fold()?;
        if let Some(LayerSpec::Dense { weight, bias }) = out.last_mut() {
            for (r, ar) in a.iter().enumerate() {
                weight.row_mut(r).iter_mut().for_each(|w| *w *= ar);
                bias[r] = ar * bias[r] + b[r];
            }
        } else {
            out.push(LayerSpec::Dense {
                weight: crate::linalg::Matrix::diag(&a),
                bias: b,
            });
        }
    }
    Network::new(net.input_shape(), out, net.w_final().clone(), net.b_final().to_vec())
}
