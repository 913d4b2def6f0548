//! Layer variants and their per-sample maps.
//!
//! Every layer is affine once its selection code is fixed, so each exposes
//! four views of the same map: `forward` (which also picks the code), the
//! linear part for a fixed code, the offset for a fixed code, and the
//! transpose of the linear part (`pullback`).

use serde::{Deserialize, Serialize};

use crate::conv::{build_conv_bias, conv_geometry, conv_taps, matrix_from_taps, ConvFilters, Padding, Tap};
use crate::error::{check_dim, Result};
use crate::linalg::{Matrix, Shape3};
use crate::maso::{ActivationKind, PoolKind, SelectionCode};
use crate::pool::{build_pool_regions, PoolGeometry, PoolRegions};
use crate::train::BatchNormState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        weight: Matrix,
        bias: Vec<f64>,
    },
    Conv {
        filters: ConvFilters,
        /// One bias per output channel.
        bias: Vec<f64>,
        padding: Padding,
        stride: (usize, usize),
    },
    Activation {
        activation: ActivationKind,
    },
    Pool {
        pool: PoolKind,
        geometry: PoolGeometry,
    },
    BatchNorm {
        state: BatchNormState,
    },
    /// `σ(C z + b_C) + C_skip z + b_skip`.
    #[serde(rename = "resnet_block")]
    ResNetBlock {
        conv: Matrix,
        conv_bias: Vec<f64>,
        activation: ActivationKind,
        skip: Matrix,
        skip_bias: Vec<f64>,
    },
}

impl LayerSpec {
    /// True for layers that select among several affine pieces, i.e. the
    /// layers that end a MASO level.
    pub fn is_nonlinear(&self) -> bool {
        match self {
            LayerSpec::Activation { .. } | LayerSpec::ResNetBlock { .. } => true,
            LayerSpec::Pool { pool, .. } => *pool == PoolKind::Max,
            _ => false,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::ResNetBlock { .. } => "resnet_block",
        }
    }
}

/// Derived per-layer data rebuilt whenever parameters change.
#[derive(Clone, Debug)]
pub(crate) enum Compiled {
    Plain,
    Conv {
        matrix: Matrix,
        bias: Vec<f64>,
        taps: Vec<Tap>,
    },
    Pool {
        regions: PoolRegions,
    },
    BatchNorm {
        scale: Vec<f64>,
        shift: Vec<f64>,
    },
}

pub(crate) fn compile(spec: &LayerSpec, in_shape: Shape3) -> Result<(Compiled, Shape3)> {
    let d = in_shape.dim();
    match spec {
        LayerSpec::Dense { weight, bias } => {
            check_dim("dense layer input", d, weight.cols())?;
            check_dim("dense layer bias", weight.rows(), bias.len())?;
            Ok((Compiled::Plain, Shape3::flat(weight.rows())))
        }
        LayerSpec::Conv {
            filters,
            bias,
            padding,
            stride,
        } => {
            let geom = conv_geometry(filters, in_shape, *padding, *stride)?;
            let taps = conv_taps(filters, &geom);
            let matrix = matrix_from_taps(filters, &geom, &taps);
            let bias = build_conv_bias(bias, geom.out_shape)?;
            Ok((Compiled::Conv { matrix, bias, taps }, geom.out_shape))
        }
        LayerSpec::Activation { activation } => {
            activation.validate()?;
            Ok((Compiled::Plain, in_shape))
        }
        LayerSpec::Pool { geometry, .. } => {
            let (regions, out) = build_pool_regions(*geometry, in_shape)?;
            Ok((Compiled::Pool { regions }, out))
        }
        LayerSpec::BatchNorm { state } => {
            state.validate()?;
            check_dim("batchnorm features", d, state.dim())?;
            let (scale, shift) = state.scale_shift();
            Ok((Compiled::BatchNorm { scale, shift }, in_shape))
        }
        LayerSpec::ResNetBlock {
            conv,
            conv_bias,
            activation,
            skip,
            skip_bias,
        } => {
            activation.validate()?;
            check_dim("resnet conv input", d, conv.cols())?;
            check_dim("resnet conv bias", conv.rows(), conv_bias.len())?;
            check_dim("resnet skip rows", conv.rows(), skip.rows())?;
            check_dim("resnet skip input", d, skip.cols())?;
            check_dim("resnet skip bias", conv.rows(), skip_bias.len())?;
            let out = if conv.rows() == d {
                in_shape
            } else {
                Shape3::flat(conv.rows())
            };
            Ok((Compiled::Plain, out))
        }
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn piece_slope(kind: &ActivationKind, code: u16) -> f64 {
    kind.pieces()[code as usize]
}

/// Borrowed view of one layer plus its compiled data.
#[derive(Clone, Copy)]
pub(crate) struct LayerRef<'a> {
    pub spec: &'a LayerSpec,
    pub compiled: &'a Compiled,
}

impl LayerRef<'_> {
    fn conv_parts(&self) -> (&Matrix, &[f64]) {
        match self.compiled {
            Compiled::Conv { matrix, bias, .. } => (matrix, bias),
            _ => unreachable!("conv layer without compiled matrix"),
        }
    }

    fn regions(&self) -> &PoolRegions {
        match self.compiled {
            Compiled::Pool { regions } => regions,
            _ => unreachable!("pool layer without compiled regions"),
        }
    }

    fn bn_parts(&self) -> (&[f64], &[f64]) {
        match self.compiled {
            Compiled::BatchNorm { scale, shift } => (scale, shift),
            _ => unreachable!("batchnorm layer without compiled scale"),
        }
    }

    /// Evaluates the layer, returning the output and, for nonlinear layers,
    /// the selection code.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, Option<SelectionCode>)> {
        match self.spec {
            LayerSpec::Dense { weight, bias } => {
                let mut y = weight.gemv(z)?;
                add_into(&mut y, bias);
                Ok((y, None))
            }
            LayerSpec::Conv { .. } => {
                let (m, b) = self.conv_parts();
                let mut y = m.gemv(z)?;
                add_into(&mut y, b);
                Ok((y, None))
            }
            LayerSpec::Activation { activation } => {
                let (y, code): (Vec<f64>, Vec<u16>) = z.iter().map(|u| activation.apply(*u)).unzip();
                Ok((y, Some(SelectionCode(code))))
            }
            LayerSpec::Pool { pool, .. } => {
                let regions = self.regions();
                check_dim("pool input", regions.input_dim, z.len())?;
                match pool {
                    PoolKind::Max => {
                        let mut y = Vec::with_capacity(regions.output_dim());
                        let mut code = Vec::with_capacity(regions.output_dim());
                        for members in &regions.regions {
                            let mut best = 0;
                            for (r, &i) in members.iter().enumerate().skip(1) {
                                if z[i] > z[members[best]] {
                                    best = r;
                                }
                            }
                            y.push(z[members[best]]);
                            code.push(best as u16);
                        }
                        Ok((y, Some(SelectionCode(code))))
                    }
                    PoolKind::Avg => Ok((self.linear(z, None)?, None)),
                }
            }
            LayerSpec::BatchNorm { .. } => {
                let (a, b) = self.bn_parts();
                check_dim("batchnorm input", a.len(), z.len())?;
                Ok((z.iter().zip(a.iter().zip(b)).map(|(z, (a, b))| a * z + b).collect(), None))
            }
            LayerSpec::ResNetBlock {
                conv,
                conv_bias,
                activation,
                skip,
                skip_bias,
            } => {
                let mut u = conv.gemv(z)?;
                add_into(&mut u, conv_bias);
                let (mut y, code): (Vec<f64>, Vec<u16>) = u.iter().map(|u| activation.apply(*u)).unzip();
                add_into(&mut y, &skip.gemv(z)?);
                add_into(&mut y, skip_bias);
                Ok((y, Some(SelectionCode(code))))
            }
        }
    }

    /// Linear part of the layer under a fixed code, applied to `v`.
    pub fn linear(&self, v: &[f64], code: Option<&SelectionCode>) -> Result<Vec<f64>> {
        match self.spec {
            LayerSpec::Dense { weight, .. } => weight.gemv(v),
            LayerSpec::Conv { .. } => self.conv_parts().0.gemv(v),
            LayerSpec::Activation { activation } => {
                let code = code.expect("activation needs a code");
                check_dim("activation input", code.len(), v.len())?;
                Ok(v.iter()
                    .zip(&code.0)
                    .map(|(v, c)| piece_slope(activation, *c) * v)
                    .collect())
            }
            LayerSpec::Pool { pool, .. } => {
                let regions = self.regions();
                check_dim("pool input", regions.input_dim, v.len())?;
                Ok(match pool {
                    PoolKind::Max => {
                        let code = code.expect("max pool needs a code");
                        regions
                            .regions
                            .iter()
                            .zip(&code.0)
                            .map(|(m, c)| v[m[*c as usize]])
                            .collect()
                    }
                    PoolKind::Avg => regions
                        .regions
                        .iter()
                        .map(|m| {
                            let w = 1.0 / m.len() as f64;
                            m.iter().map(|&i| w * v[i]).sum()
                        })
                        .collect(),
                })
            }
            LayerSpec::BatchNorm { .. } => {
                let (a, _) = self.bn_parts();
                check_dim("batchnorm input", a.len(), v.len())?;
                Ok(v.iter().zip(a).map(|(v, a)| a * v).collect())
            }
            LayerSpec::ResNetBlock {
                conv,
                activation,
                skip,
                ..
            } => {
                let code = code.expect("resnet block needs a code");
                let mut y: Vec<f64> = conv
                    .gemv(v)?
                    .iter()
                    .zip(&code.0)
                    .map(|(u, c)| piece_slope(activation, *c) * u)
                    .collect();
                add_into(&mut y, &skip.gemv(v)?);
                Ok(y)
            }
        }
    }

    /// Offset of the layer under a fixed code.
    pub fn offset(&self, code: Option<&SelectionCode>, out_dim: usize) -> Vec<f64> {
        match self.spec {
            LayerSpec::Dense { bias, .. } => bias.clone(),
            LayerSpec::Conv { .. } => self.conv_parts().1.to_vec(),
            LayerSpec::Activation { .. } | LayerSpec::Pool { .. } => vec![0.0; out_dim],
            LayerSpec::BatchNorm { .. } => self.bn_parts().1.to_vec(),
            LayerSpec::ResNetBlock {
                conv_bias,
                activation,
                skip_bias,
                ..
            } => {
                let code = code.expect("resnet block needs a code");
                conv_bias
                    .iter()
                    .zip(&code.0)
                    .zip(skip_bias)
                    .map(|((b, c), s)| piece_slope(activation, *c) * b + s)
                    .collect()
            }
        }
    }

    /// Transpose of the linear part applied to `g` (vector-Jacobian product).
    pub fn pullback(&self, g: &[f64], code: Option<&SelectionCode>, in_dim: usize) -> Result<Vec<f64>> {
        match self.spec {
            LayerSpec::Dense { weight, .. } => weight.gemv_t(g),
            LayerSpec::Conv { .. } => self.conv_parts().0.gemv_t(g),
            LayerSpec::Activation { .. } | LayerSpec::BatchNorm { .. } => self.linear(g, code),
            LayerSpec::Pool { pool, .. } => {
                let regions = self.regions();
                check_dim("pool output", regions.output_dim(), g.len())?;
                let mut out = vec![0.0; in_dim];
                match pool {
                    PoolKind::Max => {
                        let code = code.expect("max pool needs a code");
                        for ((m, c), gk) in regions.regions.iter().zip(&code.0).zip(g) {
                            out[m[*c as usize]] += gk;
                        }
                    }
                    PoolKind::Avg => {
                        for (m, gk) in regions.regions.iter().zip(g) {
                            let w = 1.0 / m.len() as f64;
                            for &i in m {
                                out[i] += w * gk;
                            }
                        }
                    }
                }
                Ok(out)
            }
            LayerSpec::ResNetBlock {
                conv,
                activation,
                skip,
                ..
            } => {
                let code = code.expect("resnet block needs a code");
                check_dim("resnet output", code.len(), g.len())?;
                let gated: Vec<f64> = g
                    .iter()
                    .zip(&code.0)
                    .map(|(g, c)| piece_slope(activation, *c) * g)
                    .collect();
                let mut out = conv.gemv_t(&gated)?;
                add_into(&mut out, &skip.gemv_t(g)?);
                Ok(out)
            }
        }
    }
}
