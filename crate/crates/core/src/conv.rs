//! Multichannel convolution as an explicit dense matrix.
//!
//! The matrix is assembled from "taps": one `(row, col, filter_index)`
//! triple per nonzero entry. The same taps give filter gradients during
//! training, since every matrix entry is a copy of one filter weight.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};
use crate::linalg::{Matrix, Shape3};

/// Filter bank of shape `out_channels × in_channels × height × width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvFilters {
    pub out_channels: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ConvFilters {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_dim(
            "filter bank length",
            out_channels * in_channels * height * width,
            data.len(),
        )?;
        if out_channels == 0 || in_channels == 0 || height == 0 || width == 0 {
            return Err(MasoError::InvalidParam("empty filter bank".into()));
        }
        Ok(ConvFilters {
            out_channels,
            in_channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn index(&self, co: usize, ci: usize, ki: usize, kj: usize) -> usize {
        ((co * self.in_channels + ci) * self.height + ki) * self.width + kj
    }

    #[inline]
    pub fn get(&self, co: usize, ci: usize, ki: usize, kj: usize) -> f64 {
        self.data[self.index(co, ci, ki, kj)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; the filter stays inside the input.
    Valid,
    /// Zero padding so the output has `ceil(input / stride)` positions.
    Same,
}

/// Output geometry and padding offsets of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_shape: Shape3,
    pub out_shape: Shape3,
    pub pad_top: usize,
    pub pad_left: usize,
    pub stride: (usize, usize),
}

fn axis_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(MasoError::InvalidParam(format!(
                    "filter extent {kernel} exceeds input extent {input}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

pub fn conv_geometry(
    filters: &ConvFilters,
    in_shape: Shape3,
    padding: Padding,
    stride: (usize, usize),
) -> Result<ConvGeometry> {
    check_dim("filter input channels", in_shape.channels, filters.in_channels)?;
    if stride.0 == 0 || stride.1 == 0 {
        return Err(MasoError::InvalidParam("stride must be positive".into()));
    }
    let (oh, pad_top) = axis_geometry(in_shape.height, filters.height, stride.0, padding)?;
    let (ow, pad_left) = axis_geometry(in_shape.width, filters.width, stride.1, padding)?;
    Ok(ConvGeometry {
        in_shape,
        out_shape: Shape3::new(filters.out_channels, oh, ow)?,
        pad_top,
        pad_left,
        stride,
    })
}

/// One nonzero entry of the convolution matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tap {
    pub row: u32,
    pub col: u32,
    pub filter: u32,
}

/// Enumerates the nonzero entries of the convolution matrix, sorted by
/// `(row, col)`.
pub fn conv_taps(filters: &ConvFilters, geom: &ConvGeometry) -> Vec<Tap> {
    let ins = geom.in_shape;
    let outs = geom.out_shape;
    let mut taps = Vec::new();
    for co in 0..outs.channels {
        for oi in 0..outs.height {
            for oj in 0..outs.width {
                let row = outs.index(co, oi, oj) as u32;
                let start = taps.len();
                for ci in 0..ins.channels {
                    for ki in 0..filters.height {
                        let ii = (oi * geom.stride.0 + ki) as isize - geom.pad_top as isize;
                        if ii < 0 || ii >= ins.height as isize {
                            continue;
                        }
                        for kj in 0..filters.width {
                            let jj = (oj * geom.stride.1 + kj) as isize - geom.pad_left as isize;
                            if jj < 0 || jj >= ins.width as isize {
                                continue;
                            }
                            taps.push(Tap {
                                row,
                                col: ins.index(ci, ii as usize, jj as usize) as u32,
                                filter: filters.index(co, ci, ki, kj) as u32,
                            });
                        }
                    }
                }
                taps[start..].sort_by_key(|t| t.col);
            }
        }
    }
    taps
}

/// Scatters filter weights into a dense matrix using precomputed taps.
pub fn matrix_from_taps(filters: &ConvFilters, geom: &ConvGeometry, taps: &[Tap]) -> Matrix {
    let mut m = Matrix::zeros(geom.out_shape.dim(), geom.in_shape.dim());
    for t in taps {
        m.set(t.row as usize, t.col as usize, filters.data[t.filter as usize]);
    }
    m
}

/// Builds the super-matrix `M` with `M·flatten(z) = flatten(conv(z))`, where
/// `conv` is the multichannel cross-correlation used by DN layers. Returns the
/// matrix together with the output shape.
pub fn build_conv_matrix(
    filters: &ConvFilters,
    in_shape: Shape3,
    padding: Padding,
    stride: (usize, usize),
) -> Result<(Matrix, Shape3)> {
    let geom = conv_geometry(filters, in_shape, padding, stride)?;
    let taps = conv_taps(filters, &geom);
    Ok((matrix_from_taps(filters, &geom, &taps), geom.out_shape))
}

/// Replicates per-channel biases over every spatial position.
pub fn build_conv_bias(channel_bias: &[f64], out_shape: Shape3) -> Result<Vec<f64>> {
    check_dim("conv bias length", out_shape.channels, channel_bias.len())?;
    let plane = out_shape.height * out_shape.width;
    Ok(channel_bias
        .iter()
        .flat_map(|b| std::iter::repeat_n(*b, plane))
        .collect())
}
