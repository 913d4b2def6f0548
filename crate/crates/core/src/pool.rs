//! Pooling regions over flattened feature maps.

use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::linalg::Shape3;

/// How pooling windows slide over a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolGeometry {
    /// Spatial windows applied independently per channel.
    Spatial {
        window: (usize, usize),
        stride: (usize, usize),
    },
    /// Windows across channels at each spatial position.
    Channel { window: usize, stride: usize },
}

/// One index set per pooled output, over the flattened input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRegions {
    pub input_dim: usize,
    pub regions: Vec<Vec<usize>>,
}

impl PoolRegions {
    pub fn new(input_dim: usize, regions: Vec<Vec<usize>>) -> Result<Self> {
        let mut covered = vec![false; input_dim];
        for region in &regions {
            if region.is_empty() {
                return Err(MasoError::InvalidParam("empty pooling region".into()));
            }
            for &i in region {
                if i >= input_dim {
                    return Err(MasoError::InvalidParam(format!(
                        "pooling index {i} out of range for input dim {input_dim}"
                    )));
                }
                covered[i] = true;
            }
        }
        if let Some(gap) = covered.iter().position(|c| !c) {
            return Err(MasoError::InvalidParam(format!(
                "input index {gap} is not covered by any pooling region"
            )));
        }
        Ok(PoolRegions { input_dim, regions })
    }

    pub fn output_dim(&self) -> usize {
        self.regions.len()
    }

    /// Largest region size, the region count R of the max-pooling MASO.
    pub fn max_size(&self) -> usize {
        self.regions.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Window starts along one axis; the last window is clipped at the border.
fn starts(extent: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(MasoError::InvalidParam("pool window and stride must be positive".into()));
    }
    if window > extent {
        return Err(MasoError::InvalidParam(format!(
            "pool window {window} larger than input extent {extent}"
        )));
    }
    let count = (extent - window).div_ceil(stride) + 1;
    Ok((0..count).map(|i| i * stride).collect())
}

/// Builds pooling regions and the pooled output shape.
pub fn build_pool_regions(geometry: PoolGeometry, in_shape: Shape3) -> Result<(PoolRegions, Shape3)> {
    let mut regions = Vec::new();
    let out_shape = match geometry {
        PoolGeometry::Spatial { window, stride } => {
            let rows = starts(in_shape.height, window.0, stride.0)?;
            let cols = starts(in_shape.width, window.1, stride.1)?;
            for c in 0..in_shape.channels {
                for &i0 in &rows {
                    for &j0 in &cols {
                        let mut region = Vec::new();
                        for i in i0..(i0 + window.0).min(in_shape.height) {
                            for j in j0..(j0 + window.1).min(in_shape.width) {
                                region.push(in_shape.index(c, i, j));
                            }
                        }
                        regions.push(region);
                    }
                }
            }
            Shape3::new(in_shape.channels, rows.len(), cols.len())?
        }
        PoolGeometry::Channel { window, stride } => {
            let chans = starts(in_shape.channels, window, stride)?;
            for &c0 in &chans {
                for i in 0..in_shape.height {
                    for j in 0..in_shape.width {
                        regions.push(
                            (c0..(c0 + window).min(in_shape.channels))
                                .map(|c| in_shape.index(c, i, j))
                                .collect(),
                        );
                    }
                }
            }
            Shape3::new(chans.len(), in_shape.height, in_shape.width)?
        }
    };
    Ok((PoolRegions::new(in_shape.dim(), regions)?, out_shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covers_all(p: &PoolRegions) -> bool {
        let mut seen = vec![false; p.input_dim];
        p.regions.iter().flatten().for_each(|&i| seen[i] = true);
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn two_by_two_tiling() {
        let s = Shape3::new(1, 4, 4).unwrap();
        let g = PoolGeometry::Spatial { window: (2, 2), stride: (2, 2) };
        let (p, out) = build_pool_regions(g, s).unwrap();
        assert_eq!(p.regions.len(), 4);
        assert!(p.regions.iter().all(|r| r.len() == 4));
        assert_eq!(p.regions[0], vec![0, 1, 4, 5]);
        assert_eq!(out, Shape3::new(1, 2, 2).unwrap());
        assert!(covers_all(&p));
    }

    #[test]
    fn channel_pool_over_three_maps() {
        let s = Shape3::new(3, 2, 2).unwrap();
        let g = PoolGeometry::Channel { window: 3, stride: 3 };
        let (p, out) = build_pool_regions(g, s).unwrap();
        assert_eq!(p.regions.len(), 4);
        assert!(p.regions.iter().all(|r| r.len() == 3));
        assert_eq!(p.regions[1], vec![1, 5, 9]);
        assert_eq!(out, Shape3::new(1, 2, 2).unwrap());
    }

    #[test]
    fn full_window_is_single_region() {
        let s = Shape3::new(1, 3, 3).unwrap();
        let g = PoolGeometry::Spatial { window: (3, 3), stride: (3, 3) };
        let (p, _) = build_pool_regions(g, s).unwrap();
        assert_eq!(p.regions, vec![(0..9).collect::<Vec<_>>()]);
    }

    #[test]
    fn odd_extent_clips_last_window() {
        let s = Shape3::new(2, 5, 5).unwrap();
        let g = PoolGeometry::Spatial { window: (2, 2), stride: (2, 2) };
        let (p, out) = build_pool_regions(g, s).unwrap();
        assert_eq!(out, Shape3::new(2, 3, 3).unwrap());
        assert!(covers_all(&p));
    }

    #[test]
    fn oversized_window_rejected() {
        let s = Shape3::new(1, 2, 2).unwrap();
        let g = PoolGeometry::Spatial { window: (3, 3), stride: (1, 1) };
        assert!(build_pool_regions(g, s).is_err());
    }

    #[test]
    fn gaps_rejected() {
        let s = Shape3::new(1, 1, 5).unwrap();
        let g = PoolGeometry::Spatial { window: (1, 1), stride: (1, 2) };
        assert!(build_pool_regions(g, s).is_err());
    }
}
