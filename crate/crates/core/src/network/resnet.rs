//! Expansion of a residual network into an ensemble of paths.
//!
//! With `z_ℓ = (A_σ[x] C_ℓ + C_skip,ℓ) z_{ℓ−1} + b_ℓ[x]`, the product over
//! blocks expands into `2^L` terms, one per choice of the conv or skip branch
//! in each block.

use crate::error::{MasoError, Result};

use super::{LayerSpec, Network};

#[derive(Clone, Debug, PartialEq)]
pub struct PathTerm {
    /// `true` where the path goes through the block's conv branch.
    pub conv_path: Vec<bool>,
    /// `W_final · M_L ⋯ M_1 · x` for this choice of branches.
    pub contribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResNetExpansion {
    pub terms: Vec<PathTerm>,
    /// Accumulated bias `b_RES[x]`, including `b_final`.
    pub bias: Vec<f64>,
}

impl ResNetExpansion {
    /// Sum of all path contributions plus the bias.
    pub fn total(&self) -> Vec<f64> {
        let mut out = self.bias.clone();
        for t in &self.terms {
            for (o, c) in out.iter_mut().zip(&t.contribution) {
                *o += c;
            }
        }
        out
    }

    /// Terms with a nonzero contribution.
    pub fn surviving(&self) -> impl Iterator<Item = &PathTerm> {
        self.terms.iter().filter(|t| t.contribution.iter().any(|v| *v != 0.0))
    }
}

pub fn resnet_ensemble_terms(net: &Network, x: &[f64]) -> Result<ResNetExpansion> {
    if let Some(bad) = net.layers().iter().find(|l| !matches!(l, LayerSpec::ResNetBlock { .. })) {
        return Err(MasoError::InvalidParam(format!(
            "ensemble expansion needs resnet blocks only, found {}",
            bad.kind_name()
        )));
    }
    let blocks = net.layers().len();
    if blocks >= 24 {
        return Err(MasoError::BudgetExceeded {
            needed: format!("2^{blocks}"),
            budget: 1 << 23,
        });
    }
    let trace = net.forward(x)?;
    let mut terms = Vec::with_capacity(1 << blocks);
    for mask in 0..(1usize << blocks) {
        let conv_path: Vec<bool> = (0..blocks).map(|l| mask >> l & 1 == 1).collect();
        let mut v = x.to_vec();
        for (l, through_conv) in conv_path.iter().enumerate() {
            let LayerSpec::ResNetBlock {
                conv,
                activation,
                skip,
                ..
            } = &net.layers()[l]
            else {
                unreachable!()
            };
            v = if *through_conv {
                let code = trace.codes[l].as_ref().expect("resnet block code");
                let pieces = activation.pieces();
                conv.gemv(&v)?
                    .iter()
                    .zip(&code.0)
                    .map(|(u, c)| pieces[*c as usize] * u)
                    .collect()
            } else {
                skip.gemv(&v)?
            };
        }
        terms.push(PathTerm {
            conv_path,
            contribution: net.w_final().gemv(&v)?,
        });
    }
    let beta = net.forward_bias(&trace, blocks)?;
    let mut bias = net.w_final().gemv(&beta)?;
    for (b, f) in bias.iter_mut().zip(net.b_final()) {
        *b += f;
    }
    Ok(ResNetExpansion { terms, bias })
}
