//! Exact signal-dependent affine decomposition `f(x) = A[x] x + b[x]`.
//!
//! Rows of `A[x]` are obtained by pulling unit vectors (or classifier rows)
//! back through the recorded selection codes; `b[x]` is accumulated forward
//! through the per-layer offsets. The input gradient uses the very same
//! pullback, so templates and gradients agree bit-for-bit.

use crate::error::{check_dim, MasoError, Result};
use crate::linalg::{dot, Matrix};

use super::{ForwardTrace, Network};

#[derive(Clone, Debug, PartialEq)]
pub struct AffineDecomposition {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl AffineDecomposition {
    /// `A x + b`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.a.gemv(x)?;
        for (y, b) in y.iter_mut().zip(&self.b) {
            *y += b;
        }
        Ok(y)
    }

    /// `‖target − (A x + b)‖∞`.
    pub fn residual(&self, x: &[f64], target: &[f64]) -> Result<f64> {
        let y = self.apply(x)?;
        check_dim("decomposition residual", y.len(), target.len())?;
        Ok(crate::linalg::max_abs_diff(&y, target))
    }
}

impl Network {
    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        check_dim("trace layers", self.layers.len(), trace.codes.len())?;
        check_dim("trace input", self.input_dim(), trace.input().len())
    }

    /// Pulls `g` (a covector on the output of layer `end − 1`) back to the
    /// input through layers `end − 1, …, 0`.
    pub(crate) fn pull_back(&self, trace: &ForwardTrace, end: usize, mut g: Vec<f64>) -> Result<Vec<f64>> {
        for i in (0..end).rev() {
            g = self
                .layer(i)
                .pullback(&g, trace.codes[i].as_ref(), self.shapes[i].dim())?;
        }
        Ok(g)
    }

    /// Offset of the affine map from the input to the output of layer
    /// `end − 1`, accumulated as `β ← L_i β + c_i`.
    pub(crate) fn forward_bias(&self, trace: &ForwardTrace, end: usize) -> Result<Vec<f64>> {
        let mut beta = vec![0.0; self.input_dim()];
        for i in 0..end {
            let layer = self.layer(i);
            let code = trace.codes[i].as_ref();
            let mut next = layer.linear(&beta, code)?;
            for (n, c) in next.iter_mut().zip(layer.offset(code, self.shapes[i + 1].dim())) {
                *n += c;
            }
            beta = next;
        }
        Ok(beta)
    }

    /// Layer index one past the end of level `level` (1-based).
    fn level_end(&self, level: usize) -> Result<usize> {
        let ends = self.level_ends();
        if level == 0 || level > ends.len() {
            return Err(MasoError::InvalidParam(format!(
                "level {level} out of range 1..={}",
                ends.len()
            )));
        }
        Ok(ends[level - 1] + 1)
    }

    /// Affine map valid at `trace.input()`. With `upto = None` the map is the
    /// full network (`C × D` up to the logits); with `Some(ℓ)` it maps the
    /// input to the output of level `ℓ`.
    pub fn decompose(&self, trace: &ForwardTrace, upto: Option<usize>) -> Result<AffineDecomposition> {
        self.check_trace(trace)?;
        let d = self.input_dim();
        match upto {
            None => {
                let end = self.layers.len();
                let c = self.output_dim();
                let mut a = Matrix::zeros(c, d);
                for k in 0..c {
                    let row = self.pull_back(trace, end, self.w_final.row(k).to_vec())?;
                    a.row_mut(k).copy_from_slice(&row);
                }
                let beta = self.forward_bias(trace, end)?;
                let mut b = self.w_final.gemv(&beta)?;
                for (b, bf) in b.iter_mut().zip(&self.b_final) {
                    *b += bf;
                }
                Ok(AffineDecomposition { a, b })
            }
            Some(level) => {
                let end = self.level_end(level)?;
                let k_out = self.shapes[end].dim();
                let mut a = Matrix::zeros(k_out, d);
                for k in 0..k_out {
                    let mut e = vec![0.0; k_out];
                    e[k] = 1.0;
                    let row = self.pull_back(trace, end, e)?;
                    a.row_mut(k).copy_from_slice(&row);
                }
                Ok(AffineDecomposition {
                    a,
                    b: self.forward_bias(trace, end)?,
                })
            }
        }
    }

    /// Class template: row `c` of the full `A[x]`.
    pub fn template(&self, trace: &ForwardTrace, c: usize) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        self.check_class(c)?;
        self.pull_back(trace, self.layers.len(), self.w_final.row(c).to_vec())
    }

    /// `logits_c − ⟨template_c, x⟩`.
    pub fn template_bias(&self, trace: &ForwardTrace, c: usize) -> Result<f64> {
        let t = self.template(trace, c)?;
        Ok(trace.logits[c] - dot(&t, trace.input()))
    }

    /// Reverse-mode derivative of `logits_c` with respect to the input.
    pub fn input_gradient(&self, x: &[f64], c: usize) -> Result<Vec<f64>> {
        self.check_class(c)?;
        let trace = self.forward(x)?;
        self.pull_back(&trace, self.layers.len(), self.w_final.row(c).to_vec())
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.output_dim() {
            return Err(MasoError::InvalidParam(format!(
                "class {c} out of range for {} classes",
                self.output_dim()
            )));
        }
        Ok(())
    }
}
