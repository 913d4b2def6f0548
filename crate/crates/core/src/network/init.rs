//! Seeded random network constructors.

use serde::{Deserialize, Serialize};

use crate::conv::{ConvFilters, Padding};
use crate::error::{MasoError, Result};
use crate::linalg::{Matrix, Shape3};
use crate::maso::{ActivationKind, PoolKind};
use crate::pool::PoolGeometry;
use crate::rng::{self, SeededRng};
use crate::train::BatchNormState;

use super::{LayerSpec, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitOptions {
    /// Insert a BN layer before every activation.
    pub batchnorm: bool,
    /// Standard deviation of the initial biases (0 gives zero biases).
    pub bias_scale: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            batchnorm: false,
            bias_scale: 0.1,
        }
    }
}

fn he_matrix(g: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    let scale = (2.0 / cols as f64).sqrt();
    Matrix::from_vec(rows, cols, rng::normal_vec(g, rows * cols, scale)).expect("finite init")
}

fn biases(g: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        vec![0.0; n]
    } else {
        rng::normal_vec(g, n, scale)
    }
}

pub fn dense_layer(g: &mut SeededRng, input: usize, output: usize, bias_scale: f64) -> LayerSpec {
    LayerSpec::Dense {
        weight: he_matrix(g, output, input),
        bias: biases(g, output, bias_scale),
    }
}

impl Network {
    /// Fully connected net `dims[0] → … → dims[n−1]` with an activation after
    /// every hidden dense layer; the last hop is the classifier.
    pub fn mlp(dims: &[usize], activation: ActivationKind, opts: InitOptions, seed: u64) -> Result<Network> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(MasoError::InvalidParam(format!("bad layer widths {dims:?}")));
        }
        let mut g = rng::seeded(seed);
        let mut layers = Vec::new();
        for w in dims.windows(2).take(dims.len() - 2) {
            layers.push(dense_layer(&mut g, w[0], w[1], opts.bias_scale));
            if opts.batchnorm {
                layers.push(LayerSpec::BatchNorm {
                    state: BatchNormState::new(w[1]),
                });
            }
            layers.push(LayerSpec::Activation { activation });
        }
        let (last_in, classes) = (dims[dims.len() - 2], dims[dims.len() - 1]);
        let w_final = he_matrix(&mut g, classes, last_in);
        let b_final = biases(&mut g, classes, opts.bias_scale);
        Network::new(Shape3::flat(dims[0]), layers, w_final, b_final)
    }

    /// Stages of `conv (k×k, same) → activation → 2×2 max pool`, then the
    /// classifier. `stages` lists `(out_channels, kernel)`.
    pub fn cnn(
        input: Shape3,
        stages: &[(usize, usize)],
        classes: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Result<Network> {
        let mut g = rng::seeded(seed);
        let mut layers = Vec::new();
        let mut in_ch = input.channels;
        for &(out_ch, k) in stages {
            let fan_in = (in_ch * k * k) as f64;
            let data = rng::normal_vec(&mut g, out_ch * in_ch * k * k, (2.0 / fan_in).sqrt());
            layers.push(LayerSpec::Conv {
                filters: ConvFilters::new(out_ch, in_ch, k, k, data)?,
                bias: rng::normal_vec(&mut g, out_ch, 0.1),
                padding: Padding::Same,
                stride: (1, 1),
            });
            layers.push(LayerSpec::Activation { activation });
            layers.push(LayerSpec::Pool {
                pool: PoolKind::Max,
                geometry: PoolGeometry::Spatial {
                    window: (2, 2),
                    stride: (2, 2),
                },
            });
            in_ch = out_ch;
        }
        let mut shape = input;
        for spec in &layers {
            shape = super::layer::compile(spec, shape)?.1;
        }
        let w_final = he_matrix(&mut g, classes, shape.dim());
        let b_final = rng::normal_vec(&mut g, classes, 0.1);
        Network::new(input, layers, w_final, b_final)
    }

    /// `blocks` residual blocks of width `dim` with general linear skips.
    pub fn resnet(dim: usize, blocks: usize, classes: usize, activation: ActivationKind, seed: u64) -> Result<Network> {
        let mut g = rng::seeded(seed);
        let scale = (1.0 / dim as f64).sqrt();
        let layers = (0..blocks)
            .map(|_| {
                let conv = Matrix::from_vec(dim, dim, rng::normal_vec(&mut g, dim * dim, scale)).expect("finite");
                let conv_bias = rng::normal_vec(&mut g, dim, 0.1);
                let skip = Matrix::from_vec(dim, dim, rng::normal_vec(&mut g, dim * dim, scale)).expect("finite");
                let skip_bias = rng::normal_vec(&mut g, dim, 0.1);
                LayerSpec::ResNetBlock {
                    conv,
                    conv_bias,
                    activation,
                    skip,
                    skip_bias,
                }
            })
            .collect();
        let w_final = he_matrix(&mut g, classes, dim);
        let b_final = rng::normal_vec(&mut g, classes, 0.1);
        Network::new(Shape3::flat(dim), layers, w_final, b_final)
    }
}
