//! Input-space partitions induced by a network's selection codes.
//!
//! Two inputs lie in the same region of the global partition up to level ℓ
//! iff their codes agree on levels `1..=ℓ`; the local partition of level ℓ
//! only looks at that level's code. Region counts are estimated by sampling:
//! the number of distinct signatures seen is a lower bound on the number of
//! regions with nonzero volume.

use std::collections::HashMap;
use std::hash::Hasher;

use fnv::{FnvBuildHasher, FnvHasher};
use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};
use crate::maso::SelectionCode;
use crate::network::{ForwardTrace, Network};
use crate::rng;

/// Which levels a signature covers (levels are 1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Levels `1..=ℓ`.
    Global(usize),
    /// Level `ℓ` only.
    Local(usize),
}

impl Scope {
    fn levels(&self) -> std::ops::RangeInclusive<usize> {
        match *self {
            Scope::Global(l) => 1..=l,
            Scope::Local(l) => l..=l,
        }
    }

    fn last(&self) -> usize {
        match *self {
            Scope::Global(l) | Scope::Local(l) => l,
        }
    }

    fn check(&self, net: &Network) -> Result<()> {
        let n = net.num_levels();
        let l = self.last();
        if l == 0 || l > n {
            return Err(MasoError::InvalidParam(format!("level {l} out of range 1..={n}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionSignature {
    pub fingerprint: u64,
    pub first_level: usize,
    pub codes: Vec<SelectionCode>,
}

impl RegionSignature {
    /// Canonical bytes: per level, `u32` LE level index, `u32` LE unit count,
    /// then one `u16` LE region index per unit.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (i, code) in self.codes.iter().enumerate() {
            out.extend_from_slice(&((self.first_level + i) as u32).to_le_bytes());
            out.extend_from_slice(&(code.len() as u32).to_le_bytes());
            for c in &code.0 {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    /// FNV-1a 64 of [`RegionSignature::to_bytes`].
    pub fn hash64(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&self.to_bytes());
        h.finish()
    }

    /// Code of one level, if covered.
    pub fn slice(&self, level: usize) -> Option<&SelectionCode> {
        level
            .checked_sub(self.first_level)
            .and_then(|i| self.codes.get(i))
    }

    pub fn last_level(&self) -> usize {
        self.first_level + self.codes.len() - 1
    }
}

pub fn signature(net: &Network, trace: &ForwardTrace, scope: Scope) -> Result<RegionSignature> {
    scope.check(net)?;
    let all = trace.level_codes();
    check_dim("trace levels", net.num_levels(), all.len())?;
    let range = scope.levels();
    Ok(RegionSignature {
        fingerprint: net.fingerprint(),
        first_level: *range.start(),
        codes: range.map(|l| all[l - 1].clone()).collect(),
    })
}

fn signature_with(fingerprint: u64, trace: &ForwardTrace, scope: Scope) -> RegionSignature {
    let all = trace.level_codes();
    let range = scope.levels();
    RegionSignature {
        fingerprint,
        first_level: *range.start(),
        codes: range.map(|l| all[l - 1].clone()).collect(),
    }
}

/// Regular 2-D grid including both endpoints of each range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid2DSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: (usize, usize),
}

impl Default for Grid2DSpec {
    fn default() -> Self {
        Grid2DSpec {
            x_range: (-3.0, 3.0),
            y_range: (-3.0, 3.0),
            resolution: (1024, 1024),
        }
    }
}

impl Grid2DSpec {
    pub fn square(lo: f64, hi: f64, n: usize) -> Self {
        Grid2DSpec {
            x_range: (lo, hi),
            y_range: (lo, hi),
            resolution: (n, n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.0 < 2 || self.resolution.1 < 2 {
            return Err(MasoError::InvalidParam("grid resolution must be at least 2".into()));
        }
        if !(self.x_range.0 < self.x_range.1 && self.y_range.0 < self.y_range.1) {
            return Err(MasoError::InvalidParam("grid ranges must be increasing".into()));
        }
        Ok(())
    }

    /// Point in column `i`, row `j` (row 0 at the bottom, `y_range.0`).
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let t = |r: (f64, f64), n: usize, k: usize| r.0 + (r.1 - r.0) * k as f64 / (n - 1) as f64;
        [t(self.x_range, self.resolution.0, i), t(self.y_range, self.resolution.1, j)]
    }
}

/// How inputs are drawn for [`estimate_partition`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    Grid(Grid2DSpec),
    /// `n` points uniform in `[lo, hi]^D`. Sample `i` does not depend on `n`,
    /// so larger runs extend smaller ones.
    Uniform { n: usize, lo: f64, hi: f64, seed: u64 },
}

const SAMPLE_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStats {
    pub samples: usize,
    /// `(signature, count)` sorted by descending count, then signature.
    pub occupancy: Vec<(RegionSignature, usize)>,
    pub upper_bound: BigUint,
}

impl PartitionStats {
    pub fn unique(&self) -> usize {
        self.occupancy.len()
    }

    /// Region sizes in descending order.
    pub fn sorted_counts(&self) -> Vec<usize> {
        self.occupancy.iter().map(|(_, c)| *c).collect()
    }
}

type Counts = HashMap<RegionSignature, usize, FnvBuildHasher>;

fn merge(mut a: Counts, b: Counts) -> Counts {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

fn finish(net: &Network, counts: Counts, samples: usize, scope: Scope) -> Result<PartitionStats> {
    let mut occupancy: Vec<(RegionSignature, usize)> = counts.into_iter().collect();
    occupancy.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(PartitionStats {
        samples,
        occupancy,
        upper_bound: region_count_upper_bound(net, scope)?,
    })
}

pub fn estimate_partition(net: &Network, sampler: &Sampler, scope: Scope) -> Result<PartitionStats> {
    scope.check(net)?;
    let fp = net.fingerprint();
    let d = net.input_dim();
    let (samples, counts) = match *sampler {
        Sampler::Grid(grid) => {
            grid.validate()?;
            check_dim("grid sampling input", 2, d)?;
            let counts = (0..grid.resolution.1)
                .into_par_iter()
                .map(|j| -> Result<Counts> {
                    let mut c = Counts::default();
                    for i in 0..grid.resolution.0 {
                        let trace = net.forward(&grid.point(i, j))?;
                        *c.entry(signature_with(fp, &trace, scope)).or_insert(0) += 1;
                    }
                    Ok(c)
                })
                .try_reduce(Counts::default, |a, b| Ok(merge(a, b)))?;
            (grid.resolution.0 * grid.resolution.1, counts)
        }
        Sampler::Uniform { n, lo, hi, seed } => {
            if !(lo < hi) {
                return Err(MasoError::InvalidParam("sampler range must be increasing".into()));
            }
            let chunks = n.div_ceil(SAMPLE_CHUNK);
            let counts = (0..chunks)
                .into_par_iter()
                .map(|c| -> Result<Counts> {
                    let mut g = rng::substream(seed, c as u64);
                    let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
                    let mut counts = Counts::default();
                    for _ in 0..len {
                        let x = rng::uniform_vec(&mut g, d, lo, hi);
                        let trace = net.forward(&x)?;
                        *counts.entry(signature_with(fp, &trace, scope)).or_insert(0) += 1;
                    }
                    Ok(counts)
                })
                .try_reduce(Counts::default, |a, b| Ok(merge(a, b)))?;
            (n, counts)
        }
    };
    finish(net, counts, samples, scope)
}

/// Number of points of `inputs` in each region.
pub fn occupancy(net: &Network, inputs: &[Vec<f64>], scope: Scope) -> Result<PartitionStats> {
    scope.check(net)?;
    let fp = net.fingerprint();
    let counts = inputs
        .par_iter()
        .map(|x| -> Result<Counts> {
            let trace = net.forward(x)?;
            let mut c = Counts::default();
            c.insert(signature_with(fp, &trace, scope), 1);
            Ok(c)
        })
        .try_reduce(Counts::default, |a, b| Ok(merge(a, b)))?;
    finish(net, counts, inputs.len(), scope)
}

/// `Π R_ℓ^{K_ℓ}` over the levels in scope.
pub fn region_count_upper_bound(net: &Network, scope: Scope) -> Result<BigUint> {
    scope.check(net)?;
    let shapes = net.layer_masos()?.level_shapes();
    Ok(scope.levels().fold(BigUint::from(1u32), |acc, l| {
        let (k, r) = shapes[l - 1];
        acc * BigUint::from(r).pow(k as u32)
    }))
}

/// Signature hash of every grid point, row-major from the bottom row, for
/// rendering.
pub fn grid_signature_hashes(net: &Network, grid: &Grid2DSpec, scope: Scope) -> Result<Vec<u64>> {
    scope.check(net)?;
    grid.validate()?;
    check_dim("grid sampling input", 2, net.input_dim())?;
    let fp = net.fingerprint();
    let rows: Vec<Vec<u64>> = (0..grid.resolution.1)
        .into_par_iter()
        .map(|j| {
            (0..grid.resolution.0)
                .map(|i| Ok(signature_with(fp, &net.forward(&grid.point(i, j))?, scope).hash64()))
                .collect::<Result<Vec<u64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, Shape3};
    use crate::maso::{ActivationKind, PoolKind};
    use crate::network::init::InitOptions;
    use crate::network::LayerSpec;
    use crate::pool::PoolGeometry;

    fn one_layer(w: Vec<Vec<f64>>, b: Vec<f64>) -> Network {
        let k = w.len();
        let layers = vec![
            LayerSpec::Dense {
                weight: Matrix::from_rows(&w).unwrap(),
                bias: b,
            },
            LayerSpec::Activation {
                activation: ActivationKind::Relu,
            },
        ];
        Network::new(Shape3::flat(2), layers, Matrix::identity(k), vec![0.0; k]).unwrap()
    }

    /// Sign patterns realised by an arrangement of lines, counted from a
    /// fine grid plus every pairwise intersection neighbourhood. Independent
    /// of the network code path.
    fn sign_patterns(w: &[Vec<f64>], b: &[f64]) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        let n = 400;
        for i in 0..n {
            for j in 0..n {
                let x = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
                let y = -3.0 + 6.0 * j as f64 / (n - 1) as f64;
                let p: Vec<bool> = w.iter().zip(b).map(|(r, c)| r[0] * x + r[1] * y + c > 0.0).collect();
                seen.insert(p);
            }
        }
        seen.len()
    }

    #[test]
    fn relu_layer_code() {
        let net = one_layer(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let t = net.forward(&[-1.0, 2.0]).unwrap();
        let s = signature(&net, &t, Scope::Global(1)).unwrap();
        assert_eq!(s.slice(1).unwrap(), &SelectionCode(vec![0, 1]));
        let t2 = net.forward(&[-5.0, 0.1]).unwrap();
        assert_eq!(s, signature(&net, &t2, Scope::Global(1)).unwrap());
        assert!(signature(&net, &t, Scope::Global(2)).is_err());
    }

    #[test]
    fn max_pool_code_is_argmax_position() {
        let layers = vec![LayerSpec::Pool {
            pool: PoolKind::Max,
            geometry: PoolGeometry::Spatial {
                window: (2, 2),
                stride: (2, 2),
            },
        }];
        let net = Network::new(Shape3::new(1, 2, 4).unwrap(), layers, Matrix::identity(2), vec![0.0; 2]).unwrap();
        let t = net.forward(&[0.0, 1.0, 9.0, 0.0, 3.0, 2.0, 0.0, 0.0]).unwrap();
        let s = signature(&net, &t, Scope::Local(1)).unwrap();
        assert_eq!(s.codes[0], SelectionCode(vec![2, 0]));
    }

    #[test]
    fn byte_layout() {
        let s = RegionSignature {
            fingerprint: 0,
            first_level: 2,
            codes: vec![SelectionCode(vec![1, 258])],
        };
        assert_eq!(s.to_bytes(), vec![2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 2, 1]);
        let mut h = FnvHasher::default();
        h.write(&s.to_bytes());
        assert_eq!(s.hash64(), h.finish());
    }

    #[test]
    fn generic_arrangements() {
        let grid = Sampler::Grid(Grid2DSpec::square(-3.0, 3.0, 512));
        let w2 = vec![vec![1.0, 0.3], vec![-0.4, 1.0]];
        let b2 = vec![0.2, -0.1];
        let s = estimate_partition(&one_layer(w2.clone(), b2.clone()), &grid, Scope::Global(1)).unwrap();
        assert_eq!(s.unique(), 4);
        assert_eq!(sign_patterns(&w2, &b2), 4);
        let w3 = vec![vec![1.0, 0.3], vec![-0.4, 1.0], vec![0.7, 0.8]];
        let b3 = vec![0.2, -0.1, -0.5];
        let s = estimate_partition(&one_layer(w3.clone(), b3.clone()), &grid, Scope::Global(1)).unwrap();
        assert_eq!(s.unique(), 7);
        assert_eq!(sign_patterns(&w3, &b3), 7);
        assert_eq!(s.upper_bound, BigUint::from(8u32));
    }

    #[test]
    fn duplicated_unit_collapses_count() {
        let grid = Sampler::Grid(Grid2DSpec::square(-3.0, 3.0, 512));
        // duplicated line plus a crossing line: 4 regions instead of 7
        let crossing = one_layer(vec![vec![1.0, 0.3], vec![1.0, 0.3], vec![-0.4, 1.0]], vec![0.2, 0.2, -0.1]);
        assert_eq!(estimate_partition(&crossing, &grid, Scope::Global(1)).unwrap().unique(), 4);
        // duplicated line plus a parallel line: 3 regions
        let parallel = one_layer(vec![vec![1.0, 0.3], vec![1.0, 0.3], vec![1.0, 0.3]], vec![0.2, 0.2, -0.6]);
        assert_eq!(estimate_partition(&parallel, &grid, Scope::Global(1)).unwrap().unique(), 3);
    }

    #[test]
    fn sampler_count_is_monotone_and_deterministic() {
        let net = Network::mlp(&[2, 10, 3, 4], ActivationKind::Relu, InitOptions::default(), 3).unwrap();
        let mut last = 0;
        for n in [100, 1000, 10_000] {
            let s = Sampler::Uniform {
                n,
                lo: -3.0,
                hi: 3.0,
                seed: 5,
            };
            let a = estimate_partition(&net, &s, Scope::Global(2)).unwrap();
            let b = estimate_partition(&net, &s, Scope::Global(2)).unwrap();
            assert_eq!(a, b);
            assert!(a.unique() >= last);
            assert!(BigUint::from(a.unique()) <= a.upper_bound);
            last = a.unique();
        }
    }

    #[test]
    fn signature_equality_implies_equal_decomposition() {
        let net = Network::mlp(&[2, 6, 3, 4], ActivationKind::Abs, InitOptions::default(), 8).unwrap();
        let mut g = rng::seeded(3);
        let pts: Vec<Vec<f64>> = (0..400).map(|_| rng::uniform_vec(&mut g, 2, -1.0, 1.0)).collect();
        let mut by_sig: HashMap<RegionSignature, crate::network::AffineDecomposition> = HashMap::new();
        let mut repeats = 0;
        for x in &pts {
            let t = net.forward(x).unwrap();
            let s = signature(&net, &t, Scope::Global(2)).unwrap();
            let d = net.decompose(&t, None).unwrap();
            if let Some(prev) = by_sig.get(&s) {
                assert_eq!(prev, &d);
                repeats += 1;
            } else {
                by_sig.insert(s, d);
            }
        }
        assert!(repeats > 100);
    }

    #[test]
    fn occupancy_examples() {
        let net = Network::mlp(&[2, 10, 3, 4], ActivationKind::Relu, InitOptions::default(), 2).unwrap();
        let one = occupancy(&net, &[vec![0.1, 0.2]], Scope::Global(2)).unwrap();
        assert_eq!(one.unique(), 1);
        let grid = Grid2DSpec::square(-3.0, 3.0, 200);
        let pts: Vec<Vec<f64>> = (0..50).map(|i| grid.point(i * 3, 199 - i * 2).to_vec()).collect();
        let occ = occupancy(&net, &pts, Scope::Global(2)).unwrap();
        let full = estimate_partition(&net, &Sampler::Grid(grid), Scope::Global(2)).unwrap();
        assert!(occ.unique() <= full.unique());
        let counts = occ.sorted_counts();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(counts.iter().sum::<usize>(), 50);
    }

    #[test]
    fn upper_bounds() {
        let net = Network::mlp(&[2, 45, 3, 4], ActivationKind::Relu, InitOptions::default(), 1).unwrap();
        assert_eq!(region_count_upper_bound(&net, Scope::Local(1)).unwrap(), BigUint::from(1u64 << 45));
        assert_eq!(region_count_upper_bound(&net, Scope::Local(2)).unwrap(), BigUint::from(8u32));
        assert_eq!(region_count_upper_bound(&net, Scope::Global(2)).unwrap(), BigUint::from(1u64 << 48));
        let layers = vec![LayerSpec::Pool {
            pool: PoolKind::Max,
            geometry: PoolGeometry::Spatial {
                window: (1, 1),
                stride: (1, 1),
            },
        }];
        let degenerate = Network::new(Shape3::new(1, 2, 2).unwrap(), layers, Matrix::identity(4), vec![0.0; 4]).unwrap();
        assert_eq!(region_count_upper_bound(&degenerate, Scope::Global(1)).unwrap(), BigUint::from(1u32));
    }

    #[test]
    fn grid_hashes_match_signatures() {
        let net = one_layer(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let grid = Grid2DSpec::square(-1.0, 1.0, 4);
        let hashes = grid_signature_hashes(&net, &grid, Scope::Global(1)).unwrap();
        assert_eq!(hashes.len(), 16);
        let t = net.forward(&grid.point(3, 0)).unwrap();
        assert_eq!(hashes[3], signature(&net, &t, Scope::Global(1)).unwrap().hash64());
    }
}
