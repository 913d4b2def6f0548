//! Layer stacks and their exact affine analysis.
//!
//! A network is a list of [`LayerSpec`]s followed by a final linear
//! classifier `logits = W_final z + b_final`. Affine layers (dense, conv,
//! average pooling, inference-mode BN) are folded into the next nonlinear
//! layer when the stack is viewed as a composition of MASOs; each nonlinear
//! layer therefore ends one *level*.

mod decompose;
pub mod init;
mod layer;
mod matching;
mod probes;
mod resnet;
mod stack;

use fnv::FnvHasher;
use std::hash::Hasher;

use crate::error::{check_dim, Result};
use crate::linalg::{Matrix, Shape3};
use crate::maso::SelectionCode;

pub use decompose::AffineDecomposition;
pub use layer::LayerSpec;
pub(crate) use layer::{Compiled, LayerRef};
pub use matching::{brute_force_match, BRUTE_FORCE_BUDGET};
pub use probes::{check_output_convexity, depth_matrix_norm, ConvexityReport, CONVEXITY_SLACK};
pub use resnet::{resnet_ensemble_terms, PathTerm, ResNetExpansion};
pub use stack::MasoStack;

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Shape3,
    layers: Vec<LayerSpec>,
    compiled: Vec<Compiled>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the
    /// shape fed to the classifier.
    shapes: Vec<Shape3>,
    w_final: Matrix,
    b_final: Vec<f64>,
}

/// Everything recorded during one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `outputs[0] = x`, `outputs[i + 1]` is the output of layer `i`.
    pub outputs: Vec<Vec<f64>>,
    /// Selection code of each layer (`None` for affine layers).
    pub codes: Vec<Option<SelectionCode>>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.outputs[0]
    }

    /// Codes of the nonlinear layers in order, one per level.
    pub fn level_codes(&self) -> Vec<&SelectionCode> {
        self.codes.iter().flatten().collect()
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.w_final == other.w_final
            && self.b_final == other.b_final
    }
}

impl Network {
    pub fn new(input_shape: Shape3, layers: Vec<LayerSpec>, w_final: Matrix, b_final: Vec<f64>) -> Result<Self> {
        let mut net = Network {
            input_shape,
            layers,
            compiled: Vec::new(),
            shapes: Vec::new(),
            w_final,
            b_final,
        };
        net.recompile()?;
        Ok(net)
    }

    /// Rebuilds derived data (conv matrices, pooling regions, BN scales) and
    /// revalidates the dimension chain. Call after mutating parameters.
    pub fn recompile(&mut self) -> Result<()> {
        let mut shape = self.input_shape;
        let mut compiled = Vec::with_capacity(self.layers.len());
        let mut shapes = vec![shape];
        for spec in &self.layers {
            let (c, out) = layer::compile(spec, shape)?;
            compiled.push(c);
            shapes.push(out);
            shape = out;
        }
        check_dim("final classifier input", shape.dim(), self.w_final.cols())?;
        check_dim("final classifier bias", self.w_final.rows(), self.b_final.len())?;
        self.compiled = compiled;
        self.shapes = shapes;
        Ok(())
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.dim()
    }

    /// Number of classes C.
    pub fn output_dim(&self) -> usize {
        self.w_final.rows()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Mutable access to the layers. Follow with [`Network::recompile`].
    pub fn layers_mut(&mut self) -> &mut Vec<LayerSpec> {
        &mut self.layers
    }

    /// Input shape of each layer followed by the classifier input shape.
    pub fn shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    pub fn w_final(&self) -> &Matrix {
        &self.w_final
    }

    pub fn b_final(&self) -> &[f64] {
        &self.b_final
    }

    pub fn set_final(&mut self, w: Matrix, b: Vec<f64>) -> Result<()> {
        self.w_final = w;
        self.b_final = b;
        self.recompile()
    }

    pub(crate) fn layer(&self, i: usize) -> LayerRef<'_> {
        LayerRef {
            spec: &self.layers[i],
            compiled: &self.compiled[i],
        }
    }

    pub(crate) fn compiled(&self, i: usize) -> &Compiled {
        &self.compiled[i]
    }

    /// Index of the nonlinear layer that ends each level.
    pub fn level_ends(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_nonlinear()).collect()
    }

    pub fn num_levels(&self) -> usize {
        self.level_ends().len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        let mut codes = Vec::with_capacity(self.layers.len());
        outputs.push(x.to_vec());
        for i in 0..self.layers.len() {
            let (y, code) = self.layer(i).forward(outputs.last().unwrap())?;
            outputs.push(y);
            codes.push(code);
        }
        let mut logits = self.w_final.gemv(outputs.last().unwrap())?;
        for (l, b) in logits.iter_mut().zip(&self.b_final) {
            *l += b;
        }
        Ok(ForwardTrace {
            outputs,
            codes,
            logits,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::linalg::argmax(&self.logits(x)?))
    }

    /// Parameter tensors in a fixed order: per layer (dense `W, b`; conv
    /// `filters, bias`; BN `γ, ζ`; resnet `C, b_C, C_skip, b_skip`), then
    /// `W_final, b_final`.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for spec in &self.layers {
            match spec {
                LayerSpec::Dense { weight, bias } => {
                    out.push(weight.data());
                    out.push(bias);
                }
                LayerSpec::Conv { filters, bias, .. } => {
                    out.push(&filters.data);
                    out.push(bias);
                }
                LayerSpec::BatchNorm { state } => {
                    out.push(&state.gamma);
                    out.push(&state.zeta);
                }
                LayerSpec::ResNetBlock {
                    conv,
                    conv_bias,
                    skip,
                    skip_bias,
                    ..
                } => {
                    out.push(conv.data());
                    out.push(conv_bias);
                    out.push(skip.data());
                    out.push(skip_bias);
                }
                LayerSpec::Activation { .. } | LayerSpec::Pool { .. } => {}
            }
        }
        out.push(self.w_final.data());
        out.push(&self.b_final);
        out
    }

    /// Mutable view of [`Network::parameters`]. Follow with
    /// [`Network::recompile`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for spec in &mut self.layers {
            match spec {
                LayerSpec::Dense { weight, bias } => {
                    out.push(weight.data_mut());
                    out.push(bias);
                }
                LayerSpec::Conv { filters, bias, .. } => {
                    out.push(&mut filters.data);
                    out.push(bias);
                }
                LayerSpec::BatchNorm { state } => {
                    out.push(&mut state.gamma);
                    out.push(&mut state.zeta);
                }
                LayerSpec::ResNetBlock {
                    conv,
                    conv_bias,
                    skip,
                    skip_bias,
                    ..
                } => {
                    out.push(conv.data_mut());
                    out.push(conv_bias);
                    out.push(skip.data_mut());
                    out.push(skip_bias);
                }
                LayerSpec::Activation { .. } | LayerSpec::Pool { .. } => {}
            }
        }
        out.push(self.w_final.data_mut());
        out.push(&mut self.b_final);
        out
    }

    /// FNV-1a hash of the architecture and every parameter bit, including BN
    /// running statistics.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        let shape = |h: &mut FnvHasher, s: Shape3| {
            h.write_u64(s.channels as u64);
            h.write_u64(s.height as u64);
            h.write_u64(s.width as u64);
        };
        let floats = |h: &mut FnvHasher, v: &[f64]| {
            h.write_u64(v.len() as u64);
            for x in v {
                h.write_u64(x.to_bits());
            }
        };
        shape(&mut h, self.input_shape);
        for spec in &self.layers {
            h.write(spec.kind_name().as_bytes());
            match spec {
                LayerSpec::Activation { activation } => {
                    h.write(activation.name().as_bytes());
                    floats(&mut h, &activation.pieces());
                }
                LayerSpec::Pool { pool, geometry } => {
                    h.write(format!("{pool:?}{geometry:?}").as_bytes());
                }
                LayerSpec::BatchNorm { state } => {
                    floats(&mut h, &state.running_mean);
                    floats(&mut h, &state.running_var);
                    floats(&mut h, &[state.eps]);
                }
                LayerSpec::Conv { padding, stride, filters, .. } => {
                    h.write(format!("{padding:?}{stride:?}").as_bytes());
                    shape(&mut h, Shape3::flat(filters.out_channels));
                    shape(&mut h, Shape3::flat(filters.in_channels));
                    h.write_u64(filters.height as u64);
                    h.write_u64(filters.width as u64);
                }
                LayerSpec::ResNetBlock { activation, conv, .. } => {
                    h.write(activation.name().as_bytes());
                    floats(&mut h, &activation.pieces());
                    h.write_u64(conv.rows() as u64);
                }
                LayerSpec::Dense { weight, .. } => {
                    h.write_u64(weight.rows() as u64);
                }
            }
        }
        h.write_u64(self.w_final.rows() as u64);
        for p in self.parameters() {
            floats(&mut h, p);
        }
        h.finish()
    }
}
