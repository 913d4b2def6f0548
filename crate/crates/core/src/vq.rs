//! Vector-quantization view of selection codes: code distances, code-based
//! retrieval, and the equivalence between a max-affine unit and a K-means
//! nearest-centroid rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};
use crate::linalg::{norm_sq, sub, Matrix};
use crate::maso::MasoParams;
use crate::network::Network;
use crate::partition::{signature, RegionSignature, Scope};
use crate::rng;

/// Fraction of units of `level` whose selected region differs.
pub fn vq_distance(a: &RegionSignature, b: &RegionSignature, level: usize) -> Result<f64> {
    if a.fingerprint != b.fingerprint {
        return Err(MasoError::FingerprintMismatch(a.fingerprint, b.fingerprint));
    }
    let (ca, cb) = match (a.slice(level), b.slice(level)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(MasoError::InvalidParam(format!("level {level} not covered by both signatures"))),
    };
    check_dim("code length", ca.len(), cb.len())?;
    if ca.len() == 0 {
        return Ok(0.0);
    }
    Ok(ca.hamming(cb) as f64 / ca.len() as f64)
}

/// Mean of [`vq_distance`] over the levels both signatures cover.
pub fn vq_distance_mean(a: &RegionSignature, b: &RegionSignature) -> Result<f64> {
    let lo = a.first_level.max(b.first_level);
    let hi = a.last_level().min(b.last_level());
    if lo > hi {
        return Err(MasoError::InvalidParam("signatures share no level".into()));
    }
    let mut total = 0.0;
    for l in lo..=hi {
        total += vq_distance(a, b, l)?;
    }
    Ok(total / (hi - lo + 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelChoice {
    Level(usize),
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
    pub euclidean: f64,
}

/// Stored inputs with their full-depth signatures.
#[derive(Clone, Debug)]
pub struct VqCorpus {
    fingerprint: u64,
    inputs: Vec<Vec<f64>>,
    signatures: Vec<RegionSignature>,
}

impl VqCorpus {
    pub fn build(net: &Network, inputs: Vec<Vec<f64>>) -> Result<Self> {
        let scope = Scope::Global(net.num_levels());
        let signatures = inputs
            .par_iter()
            .map(|x| signature(net, &net.forward(x)?, scope))
            .collect::<Result<Vec<_>>>()?;
        Ok(VqCorpus {
            fingerprint: net.fingerprint(),
            inputs,
            signatures,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn signature(&self, id: usize) -> &RegionSignature {
        &self.signatures[id]
    }

    /// The `k` items closest to `query` in code distance. Ties go to the
    /// smaller Euclidean distance, then the smaller id.
    pub fn nearest(&self, net: &Network, query: &[f64], level: LevelChoice, k: usize) -> Result<Vec<Neighbor>> {
        let fp = net.fingerprint();
        if fp != self.fingerprint {
            return Err(MasoError::FingerprintMismatch(self.fingerprint, fp));
        }
        let q = signature(net, &net.forward(query)?, Scope::Global(net.num_levels()))?;
        let mut out = self
            .signatures
            .iter()
            .zip(&self.inputs)
            .enumerate()
            .map(|(id, (s, x))| {
                let distance = match level {
                    LevelChoice::Level(l) => vq_distance(&q, s, l)?,
                    LevelChoice::Mean => vq_distance_mean(&q, s)?,
                };
                Ok(Neighbor {
                    id,
                    distance,
                    euclidean: norm_sq(&sub(query, x)).sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.euclidean.total_cmp(&b.euclidean))
                .then(a.id.cmp(&b.id))
        });
        out.truncate(k);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub mu: Vec<Vec<f64>>,
}

impl Centroids {
    pub fn new(mu: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = mu.first() else {
            return Err(MasoError::InvalidParam("no centroids".into()));
        };
        for m in &mu {
            check_dim("centroid", first.len(), m.len())?;
        }
        Ok(Centroids { mu })
    }

    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }
}

/// Bias of unit `k`, region `r` becomes `−½‖A_{k,r}‖²`, which turns the
/// argmax over regions into a nearest-slope rule.
pub fn set_kmeans_bias(p: &MasoParams) -> MasoParams {
    let mut offsets = p.offsets().to_vec();
    for k in 0..p.units() {
        for r in 0..p.regions() {
            offsets[k * p.regions() + r] = -0.5 * norm_sq(p.slope(k, r));
        }
    }
    MasoParams::new(p.units(), p.regions(), p.input_dim(), p.slopes().to_vec(), offsets)
        .expect("shape unchanged")
}

/// Single-unit MASO whose slopes are the centroids, with K-means biases.
pub fn maso_from_centroids(c: &Centroids) -> MasoParams {
    let slopes: Vec<f64> = c.mu.iter().flatten().copied().collect();
    let p = MasoParams::new(1, c.mu.len(), c.dim(), slopes, vec![0.0; c.mu.len()]).expect("consistent centroids");
    set_kmeans_bias(&p)
}

/// Index of the nearest centroid, smallest index on ties.
pub fn kmeans_assign(c: &Centroids, x: &[f64]) -> Result<usize> {
    check_dim("point", c.dim(), x.len())?;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, m) in c.mu.iter().enumerate() {
        let d = norm_sq(&sub(x, m));
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoronoiReport {
    pub samples: usize,
    pub units: usize,
    pub mismatches: usize,
    /// Samples skipped because two centroids were equidistant within rounding.
    pub near_ties: usize,
}

/// Compares, for every unit of `p`, the MASO region choice against the
/// nearest-centroid rule on the unit's slopes, at `n` uniform samples of
/// `[lo, hi]^D`.
pub fn check_voronoi_equiv(p: &MasoParams, n: usize, (lo, hi): (f64, f64), seed: u64) -> Result<VoronoiReport> {
    let mut g = rng::seeded(seed);
    let mut report = VoronoiReport {
        samples: n,
        units: p.units(),
        mismatches: 0,
        near_ties: 0,
    };
    let centroids: Vec<Centroids> = (0..p.units())
        .map(|k| Centroids::new((0..p.regions()).map(|r| p.slope(k, r).to_vec()).collect()))
        .collect::<Result<_>>()?;
    for _ in 0..n {
        let x = rng::uniform_vec(&mut g, p.input_dim(), lo, hi);
        let (_, code) = p.eval(&x)?;
        for (k, c) in centroids.iter().enumerate() {
            let mut d: Vec<f64> = c.mu.iter().map(|m| norm_sq(&sub(&x, m))).collect();
            let nearest = kmeans_assign(c, &x)?;
            d.sort_by(f64::total_cmp);
            if d.len() > 1 && d[1] - d[0] <= 1e-9 * (1.0 + d[1]) {
                report.near_ties += 1;
                continue;
            }
            if code.0[k] as usize != nearest {
                report.mismatches += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LloydResult {
    pub centroids: Centroids,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn objective(data: &[Vec<f64>], c: &Centroids, assign: &[usize]) -> f64 {
    data.iter().zip(assign).map(|(x, a)| norm_sq(&sub(x, &c.mu[*a]))).sum()
}

/// Lloyd's algorithm from `r` distinct data points chosen by `seed`. An empty
/// cluster is reseeded at the point farthest from its current centroid.
pub fn lloyd(data: &[Vec<f64>], r: usize, max_iter: usize, seed: u64) -> Result<LloydResult> {
    if r == 0 || r > data.len() {
        return Err(MasoError::InvalidParam(format!("cannot form {r} clusters from {} points", data.len())));
    }
    let d = data[0].len();
    for x in data {
        check_dim("data point", d, x.len())?;
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::seeded(seed));
    let mut mu: Vec<Vec<f64>> = Vec::with_capacity(r);
    for &i in &order {
        if !mu.contains(&data[i]) {
            mu.push(data[i].clone());
            if mu.len() == r {
                break;
            }
        }
    }
    if mu.len() < r {
        return Err(MasoError::InvalidParam(format!("fewer than {r} distinct points")));
    }
    let mut c = Centroids { mu };
    let mut assign: Vec<usize> = vec![usize::MAX; data.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let next: Vec<usize> = data.iter().map(|x| kmeans_assign(&c, x)).collect::<Result<_>>()?;
        let changed = next != assign;
        assign = next;
        let mut sums = vec![vec![0.0; d]; r];
        let mut counts = vec![0usize; r];
        for (x, a) in data.iter().zip(&assign) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..r {
            if counts[j] > 0 {
                c.mu[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        history.push(objective(data, &c, &assign));
        for j in 0..r {
            if counts[j] == 0 {
                let far = (0..data.len())
                    .max_by(|&a, &b| {
                        let da = norm_sq(&sub(&data[a], &c.mu[assign[a]]));
                        let db = norm_sq(&sub(&data[b], &c.mu[assign[b]]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("nonempty data");
                c.mu[j] = data[far].clone();
            }
        }
        if !changed {
            break;
        }
    }
    Ok(LloydResult {
        centroids: c,
        assignments: assign,
        objective: history,
        iterations,
    })
}

/// Slope matrix of one unit as a `R × D` matrix, handy for printing.
pub fn unit_slopes(p: &MasoParams, k: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..p.regions()).map(|r| p.slope(k, r).to_vec()).collect();
    Matrix::from_rows(&rows).expect("rectangular")
}
