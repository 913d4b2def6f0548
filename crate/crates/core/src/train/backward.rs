//! Batch forward/backward with parameter gradients.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};
use crate::maso::SelectionCode;
use crate::network::{Compiled, LayerSpec, Network};

use super::batchnorm::{BatchNormState, BnCache, BnMode};
use super::loss::{cross_entropy, ortho_penalty, ortho_penalty_grad, softmax, squared_error};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy on class labels.
    Ce,
    /// Squared error, per example `‖f − y‖²`, averaged over the batch.
    Mse,
}

/// Supervision for a dataset: class labels or real-valued target vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Vec<Vec<f64>>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }
}

/// Parameter gradients in the order of [`Network::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            tensors: net.parameters().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct BackwardOutput {
    /// Mean data loss plus `λ_ortho · ortho_penalty(W_final)`.
    pub loss: f64,
    pub penalty: f64,
    pub grads: Gradients,
    /// Gradient of the total loss with respect to each input in the batch.
    pub input_grads: Vec<Vec<f64>>,
}

/// Index of the first parameter tensor of each layer.
fn param_slots(net: &Network) -> Vec<usize> {
    let mut slots = Vec::with_capacity(net.layers().len());
    let mut next = 0;
    for spec in net.layers() {
        slots.push(next);
        next += match spec {
            LayerSpec::Dense { .. } | LayerSpec::Conv { .. } | LayerSpec::BatchNorm { .. } => 2,
            LayerSpec::ResNetBlock { .. } => 4,
            LayerSpec::Activation { .. } | LayerSpec::Pool { .. } => 0,
        };
    }
    slots.push(next);
    slots
}

/// Accumulates `g zᵀ` into a row-major `rows × cols` buffer.
fn add_outer(buf: &mut [f64], g: &[f64], z: &[f64]) {
    let cols = z.len();
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        for (b, zc) in buf[r * cols..(r + 1) * cols].iter_mut().zip(z) {
            *b += gr * zc;
        }
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

struct BatchTrace {
    /// `acts[i][n]`: input of layer `i` for example `n`; last entry feeds the
    /// classifier.
    acts: Vec<Vec<Vec<f64>>>,
    codes: Vec<Vec<Option<SelectionCode>>>,
    bn: Vec<Option<(BatchNormState, BnCache)>>,
    logits: Vec<Vec<f64>>,
}

fn batch_forward(net: &Network, batch: &[&[f64]]) -> Result<BatchTrace> {
    let n_layers = net.layers().len();
    let mut acts: Vec<Vec<Vec<f64>>> = vec![batch.iter().map(|x| x.to_vec()).collect()];
    let mut codes = Vec::with_capacity(n_layers);
    let mut bn = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let input = acts.last().unwrap();
        if let LayerSpec::BatchNorm { state } = &net.layers()[i] {
            if state.mode == BnMode::Train {
                let mut s = state.clone();
                let (out, cache) = s.forward_batch(input)?;
                acts.push(out);
                codes.push(vec![None; batch.len()]);
                bn.push(Some((s, cache.expect("train mode cache"))));
                continue;
            }
        }
        let layer = net.layer(i);
        let mut out = Vec::with_capacity(batch.len());
        let mut cs = Vec::with_capacity(batch.len());
        for z in input {
            let (y, c) = layer.forward(z)?;
            out.push(y);
            cs.push(c);
        }
        acts.push(out);
        codes.push(cs);
        bn.push(None);
    }
    let logits = acts
        .last()
        .unwrap()
        .iter()
        .map(|z| {
            let mut l = net.w_final().gemv(z)?;
            add_into(&mut l, net.b_final());
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchTrace {
        acts,
        codes,
        bn,
        logits,
    })
}

fn loss_and_dlogits(
    logits: &[Vec<f64>],
    targets: &Targets,
    indices: &[usize],
    loss: LossKind,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = logits.len() as f64;
    let c = logits.first().map_or(0, Vec::len);
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, &idx) in logits.iter().zip(indices) {
        match (loss, targets) {
            (LossKind::Ce, Targets::Labels(labels)) => {
                let y = labels[idx];
                if y >= c {
                    return Err(MasoError::InvalidParam(format!("label {y} out of range for {c} classes")));
                }
                total += cross_entropy(l, y);
                let mut g = softmax(l);
                g[y] -= 1.0;
                grads.push(g.into_iter().map(|v| v / n).collect());
            }
            (LossKind::Ce, Targets::Values(_)) => {
                return Err(MasoError::InvalidParam("cross-entropy needs class labels".into()))
            }
            (LossKind::Mse, _) => {
                let y = match targets {
                    Targets::Labels(labels) => {
                        let mut onehot = vec![0.0; c];
                        onehot[labels[idx]] = 1.0;
                        onehot
                    }
                    Targets::Values(v) => v[idx].clone(),
                };
                check_dim("regression target", c, y.len())?;
                total += squared_error(l, &y);
                grads.push(l.iter().zip(&y).map(|(f, t)| 2.0 * (f - t) / n).collect());
            }
        }
    }
    Ok((total / n, grads))
}

/// Mean loss over `indices` plus `λ_ortho · ortho_penalty(W_final)`, with
/// gradients for every parameter and input. Train-mode BN layers use batch
/// statistics and have their running statistics updated in `net`.
pub fn backward(
    net: &mut Network,
    inputs: &[Vec<f64>],
    targets: &Targets,
    indices: &[usize],
    loss: LossKind,
    lambda_ortho: f64,
) -> Result<BackwardOutput> {
    if indices.is_empty() {
        return Err(MasoError::InvalidParam("empty batch".into()));
    }
    check_dim("targets", inputs.len(), targets.len())?;
    let batch: Vec<&[f64]> = indices.iter().map(|&i| inputs[i].as_slice()).collect();
    let trace = batch_forward(net, &batch)?;
    let (data_loss, dlogits) = loss_and_dlogits(&trace.logits, targets, indices, loss)?;
    let penalty = ortho_penalty(net.w_final());

    let slots = param_slots(net);
    let mut grads = Gradients::zeros_like(net);
    let fin = slots[slots.len() - 1];
    let last = trace.acts.last().unwrap();
    for (g, z) in dlogits.iter().zip(last) {
        add_outer(&mut grads.tensors[fin], g, z);
        add_into(&mut grads.tensors[fin + 1], g);
    }
    if lambda_ortho != 0.0 {
        let og = ortho_penalty_grad(net.w_final()).scaled(lambda_ortho);
        add_into(&mut grads.tensors[fin], og.data());
    }
    let mut g: Vec<Vec<f64>> = dlogits
        .iter()
        .map(|g| net.w_final().gemv_t(g))
        .collect::<Result<_>>()?;

    for i in (0..net.layers().len()).rev() {
        let zin = &trace.acts[i];
        let slot = slots[i];
        if let Some((state, cache)) = &trace.bn[i] {
            let (gg, gz) = grads.tensors.split_at_mut(slot + 1);
            g = state.backward_batch(cache, &g, &mut gg[slot], &mut gz[0]);
            continue;
        }
        let layer = net.layer(i);
        let in_dim = net.shapes()[i].dim();
        match (&net.layers()[i], net.compiled(i)) {
            (LayerSpec::Dense { .. }, _) => {
                for (gn, z) in g.iter().zip(zin) {
                    add_outer(&mut grads.tensors[slot], gn, z);
                    add_into(&mut grads.tensors[slot + 1], gn);
                }
            }
            (LayerSpec::Conv { .. }, Compiled::Conv { taps, .. }) => {
                let out_shape = net.shapes()[i + 1];
                let plane = out_shape.height * out_shape.width;
                for (gn, z) in g.iter().zip(zin) {
                    for t in taps {
                        grads.tensors[slot][t.filter as usize] += gn[t.row as usize] * z[t.col as usize];
                    }
                    for (k, v) in gn.iter().enumerate() {
                        grads.tensors[slot + 1][k / plane] += v;
                    }
                }
            }
            (LayerSpec::BatchNorm { state }, _) => {
                // inference-mode BN: z ↦ a z + b with running statistics
                for (gn, z) in g.iter().zip(zin) {
                    for k in 0..gn.len() {
                        let inv = 1.0 / (state.running_var[k] + state.eps).sqrt();
                        grads.tensors[slot][k] += gn[k] * (z[k] - state.running_mean[k]) * inv;
                        grads.tensors[slot + 1][k] += gn[k];
                    }
                }
            }
            (LayerSpec::ResNetBlock { activation, .. }, _) => {
                let pieces = activation.pieces();
                for ((gn, z), code) in g.iter().zip(zin).zip(&trace.codes[i]) {
                    let code = code.as_ref().expect("resnet code");
                    let gated: Vec<f64> = gn
                        .iter()
                        .zip(&code.0)
                        .map(|(g, c)| pieces[*c as usize] * g)
                        .collect();
                    add_outer(&mut grads.tensors[slot], &gated, z);
                    add_into(&mut grads.tensors[slot + 1], &gated);
                    add_outer(&mut grads.tensors[slot + 2], gn, z);
                    add_into(&mut grads.tensors[slot + 3], gn);
                }
            }
            _ => {}
        }
        g = g
            .iter()
            .zip(&trace.codes[i])
            .map(|(gn, code)| layer.pullback(gn, code.as_ref(), in_dim))
            .collect::<Result<_>>()?;
    }

    // commit updated running statistics
    let mut touched = false;
    for (spec, bn) in net.layers_mut().iter_mut().zip(trace.bn) {
        if let (LayerSpec::BatchNorm { state }, Some((s, _))) = (spec, bn) {
            *state = s;
            touched = true;
        }
    }
    if touched {
        net.recompile()?;
    }

    Ok(BackwardOutput {
        loss: data_loss + lambda_ortho * penalty,
        penalty,
        grads,
        input_grads: g,
    })
}

/// Loss of [`backward`] without gradients or side effects.
pub fn batch_loss(
    net: &Network,
    inputs: &[Vec<f64>],
    targets: &Targets,
    indices: &[usize],
    loss: LossKind,
    lambda_ortho: f64,
) -> Result<f64> {
    let batch: Vec<&[f64]> = indices.iter().map(|&i| inputs[i].as_slice()).collect();
    let trace = batch_forward(net, &batch)?;
    let (data_loss, _) = loss_and_dlogits(&trace.logits, targets, indices, loss)?;
    Ok(data_loss + lambda_ortho * ortho_penalty(net.w_final()))
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (x, y) in inputs.iter().zip(labels) {
        if net.predict(x)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.len() as f64)
}
