//! Max-affine spline operators.
//!
//! A MASO with slopes `A ∈ R^{K×R×D}` and offsets `B ∈ R^{K×R}` maps
//! `x ∈ R^D` to `y_k = max_r ⟨A[k,r,·], x⟩ + B[k,r]`. Every standard DN
//! operator (affine map, ReLU-like activation, pooling) is one, and so is any
//! affine map followed by one of them.
//!
//! Region indices are 0-based throughout; ties go to the smallest index.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};
use crate::linalg::{dot, Matrix};
use crate::pool::PoolRegions;

/// Residual above which [`MasoParams::to_simplified`] reports inconsistency.
pub const SIMPLIFY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasoParams {
    units: usize,
    regions: usize,
    input_dim: usize,
    slopes: Vec<f64>,
    offsets: Vec<f64>,
}

/// Winning region per output unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SelectionCode(pub Vec<u16>);

impl SelectionCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of units whose region differs.
    pub fn hamming(&self, other: &SelectionCode) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// Selection recovered from the derivative of each unit's max.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradientSelection {
    pub code: SelectionCode,
    /// Set when some unit's maximum is attained by more than one region.
    pub tie: bool,
}

/// MASO with a single bias vector shared by all units and regions:
/// `y_k = max_r ⟨A[k,r,·], x + β′⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplifiedMaso {
    pub slopes: MasoParams,
    pub shared_bias: Vec<f64>,
}

impl SimplifiedMaso {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("simplified maso input", self.shared_bias.len(), x.len())?;
        let shifted: Vec<f64> = x.iter().zip(&self.shared_bias).map(|(a, b)| a + b).collect();
        let p = &self.slopes;
        Ok((0..p.units)
            .map(|k| {
                (0..p.regions)
                    .map(|r| dot(p.slope(k, r), &shifted))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect())
    }
}

/// Temperature of the entropy-regularized (soft) MASO.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftConfig {
    beta: f64,
}

impl SoftConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(MasoError::InvalidParam(format!("soft beta {beta} outside (0, 1)")));
        }
        Ok(SoftConfig { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Inverse temperature `β / (1 − β)` applied to the affine responses.
    pub fn gain(&self) -> f64 {
        self.beta / (1.0 - self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    Abs,
}

impl ActivationKind {
    /// Scalar slopes of the two affine pieces `[region 0, region 1]`.
    pub fn pieces(&self) -> [f64; 2] {
        match *self {
            ActivationKind::Relu => [0.0, 1.0],
            ActivationKind::LeakyRelu { slope } => [slope, 1.0],
            ActivationKind::Abs => [-1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ActivationKind::LeakyRelu { slope } = *self {
            if !(slope > 0.0 && slope.is_finite()) {
                return Err(MasoError::InvalidParam(format!(
                    "leaky relu slope {slope} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Scalar evaluation returning `(value, region)`, consistent with
    /// [`MasoParams::eval`] on the activation MASO.
    #[inline]
    pub fn apply(&self, u: f64) -> (f64, u16) {
        let [s0, s1] = self.pieces();
        let (a, b) = (s0 * u, s1 * u);
        if b > a {
            (b, 1)
        } else {
            (a, 0)
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu { .. } => "leaky_relu",
            ActivationKind::Abs => "abs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

impl MasoParams {
    pub fn new(
        units: usize,
        regions: usize,
        input_dim: usize,
        slopes: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if regions == 0 || regions > u16::MAX as usize {
            return Err(MasoError::InvalidParam(format!(
                "region count {regions} must be in 1..={}",
                u16::MAX
            )));
        }
        check_dim("maso slopes length", units * regions * input_dim, slopes.len())?;
        check_dim("maso offsets length", units * regions, offsets.len())?;
        if slopes.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(MasoError::InvalidParam("maso parameters must be finite".into()));
        }
        Ok(MasoParams {
            units,
            regions,
            input_dim,
            slopes,
            offsets,
        })
    }

    /// Output dimension K.
    pub fn units(&self) -> usize {
        self.units
    }

    /// Regions per unit R.
    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Input dimension D.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn is_degenerate(&self) -> bool {
        self.regions == 1
    }

    #[inline]
    pub fn slope(&self, k: usize, r: usize) -> &[f64] {
        let start = (k * self.regions + r) * self.input_dim;
        &self.slopes[start..start + self.input_dim]
    }

    #[inline]
    pub fn offset(&self, k: usize, r: usize) -> f64 {
        self.offsets[k * self.regions + r]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    #[inline]
    fn response(&self, k: usize, r: usize, x: &[f64]) -> f64 {
        dot(self.slope(k, r), x) + self.offset(k, r)
    }

    /// Evaluates the operator and records the winning region per unit.
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, SelectionCode)> {
        check_dim("maso input", self.input_dim, x.len())?;
        let mut y = Vec::with_capacity(self.units);
        let mut code = Vec::with_capacity(self.units);
        for k in 0..self.units {
            let mut best = 0;
            let mut best_val = self.response(k, 0, x);
            for r in 1..self.regions {
                let v = self.response(k, r, x);
                if v > best_val {
                    best = r;
                    best_val = v;
                }
            }
            y.push(best_val);
            code.push(best as u16);
        }
        Ok((y, SelectionCode(code)))
    }

    /// Recovers the selection code as the derivative of each unit's max with
    /// respect to its affine responses: the max is computed as a running
    /// pairwise fold, and a unit adjoint is pulled back through it. The
    /// region receiving the adjoint is the winner.
    pub fn selection_from_gradient(&self, x: &[f64]) -> Result<GradientSelection> {
        check_dim("maso input", self.input_dim, x.len())?;
        let mut code = Vec::with_capacity(self.units);
        let mut tie = false;
        for k in 0..self.units {
            let responses: Vec<f64> = (0..self.regions).map(|r| self.response(k, r, x)).collect();
            // forward fold: took_new[r] records whether max(m, u_r) picked u_r
            let mut running = responses[0];
            let mut took_new = vec![false; self.regions];
            for r in 1..self.regions {
                took_new[r] = responses[r] > running;
                if took_new[r] {
                    running = responses[r];
                }
            }
            // reverse pass
            let mut grad = vec![0.0; self.regions];
            let mut adjoint = 1.0;
            for r in (1..self.regions).rev() {
                if took_new[r] {
                    grad[r] += adjoint;
                    adjoint = 0.0;
                }
            }
            grad[0] += adjoint;
            let winner = grad.iter().position(|g| *g != 0.0).unwrap_or(0);
            tie |= responses
                .iter()
                .enumerate()
                .any(|(r, v)| r != winner && *v == running);
            code.push(winner as u16);
        }
        Ok(GradientSelection {
            code: SelectionCode(code),
            tie,
        })
    }

    /// Affine map `(A[code], B[code])` selected by a given code.
    pub fn affine_for_code(&self, code: &SelectionCode) -> Result<(Matrix, Vec<f64>)> {
        check_dim("selection code length", self.units, code.len())?;
        let mut a = Matrix::zeros(self.units, self.input_dim);
        let mut b = Vec::with_capacity(self.units);
        for (k, &r) in code.0.iter().enumerate() {
            let r = r as usize;
            if r >= self.regions {
                return Err(MasoError::InvalidParam(format!(
                    "region {r} out of range for R = {}",
                    self.regions
                )));
            }
            a.row_mut(k).copy_from_slice(self.slope(k, r));
            b.push(self.offset(k, r));
        }
        Ok((a, b))
    }

    /// Signal-dependent affine map `(A[x], B[x])` with `eval(x) = A[x]x + B[x]`.
    pub fn affine_at(&self, x: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        let (_, code) = self.eval(x)?;
        self.affine_for_code(&code)
    }

    /// Entropy-regularized evaluation: each unit returns the softmax-weighted
    /// average of its affine responses with gain `β / (1 − β)`.
    pub fn eval_soft(&self, x: &[f64], cfg: SoftConfig) -> Result<Vec<f64>> {
        check_dim("maso input", self.input_dim, x.len())?;
        let gain = cfg.gain();
        Ok((0..self.units)
            .map(|k| {
                let c: Vec<f64> = (0..self.regions).map(|r| self.response(k, r, x)).collect();
                let top = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = c.iter().map(|v| (gain * (v - top)).exp()).collect();
                let z: f64 = w.iter().sum();
                w.iter().zip(&c).map(|(wi, ci)| wi * ci).sum::<f64>() / z
            })
            .collect())
    }

    /// Degenerate (R = 1) MASO computing `Wx + b`.
    pub fn affine(w: &Matrix, b: &[f64]) -> Result<Self> {
        check_dim("affine bias length", w.rows(), b.len())?;
        MasoParams::new(w.rows(), 1, w.cols(), w.data().to_vec(), b.to_vec())
    }

    /// Elementwise two-piece activation on `dim` inputs.
    pub fn activation(kind: ActivationKind, dim: usize) -> Result<Self> {
        kind.validate()?;
        let pieces = kind.pieces();
        let mut slopes = vec![0.0; dim * 2 * dim];
        for k in 0..dim {
            for (r, s) in pieces.iter().enumerate() {
                slopes[(k * 2 + r) * dim + k] = *s;
            }
        }
        MasoParams::new(dim, 2, dim, slopes, vec![0.0; dim * 2])
    }

    /// Max pooling has one region per pooled element (R = largest region;
    /// smaller regions repeat their last element). Average pooling is
    /// degenerate.
    pub fn pool(regions: &PoolRegions, kind: PoolKind) -> Result<Self> {
        let d = regions.input_dim;
        let k_out = regions.output_dim();
        match kind {
            PoolKind::Max => {
                let r_max = regions.max_size();
                let mut slopes = vec![0.0; k_out * r_max * d];
                for (k, members) in regions.regions.iter().enumerate() {
                    for r in 0..r_max {
                        let idx = members[r.min(members.len() - 1)];
                        slopes[(k * r_max + r) * d + idx] = 1.0;
                    }
                }
                MasoParams::new(k_out, r_max, d, slopes, vec![0.0; k_out * r_max])
            }
            PoolKind::Avg => {
                let mut slopes = vec![0.0; k_out * d];
                for (k, members) in regions.regions.iter().enumerate() {
                    let w = 1.0 / members.len() as f64;
                    for &i in members {
                        slopes[k * d + i] += w;
                    }
                }
                MasoParams::new(k_out, 1, d, slopes, vec![0.0; k_out])
            }
        }
    }

    /// Folds a preceding affine map into the operator: the result `q`
    /// satisfies `q(x) = self(Wx + b)`, with `A′[k,r] = Wᵀ A[k,r]` and
    /// `B′[k,r] = B[k,r] + ⟨b, A[k,r]⟩`.
    pub fn compose_affine(&self, w: &Matrix, b: &[f64]) -> Result<Self> {
        check_dim("composed affine rows", self.input_dim, w.rows())?;
        check_dim("composed affine bias", w.rows(), b.len())?;
        let d = w.cols();
        let mut slopes = Vec::with_capacity(self.units * self.regions * d);
        let mut offsets = Vec::with_capacity(self.units * self.regions);
        for k in 0..self.units {
            for r in 0..self.regions {
                let a = self.slope(k, r);
                slopes.extend(w.gemv_t(a)?);
                offsets.push(self.offset(k, r) + dot(b, a));
            }
        }
        MasoParams::new(self.units, self.regions, d, slopes, offsets)
    }

    /// Residual layer `self(Cx + b_C) + C_skip x + b_skip` as a single MASO:
    /// `A′[k,r] = Cᵀ A[k,r] + C_skip[k,·]`,
    /// `B′[k,r] = ⟨A[k,r], b_C⟩ + B[k,r] + b_skip[k]`.
    pub fn compose_skip(
        &self,
        conv: &Matrix,
        conv_bias: &[f64],
        skip: &Matrix,
        skip_bias: &[f64],
    ) -> Result<Self> {
        check_dim("skip matrix rows", self.units, skip.rows())?;
        check_dim("skip matrix cols", conv.cols(), skip.cols())?;
        check_dim("skip bias length", self.units, skip_bias.len())?;
        let inner = self.compose_affine(conv, conv_bias)?;
        let d = conv.cols();
        let mut slopes = inner.slopes;
        let mut offsets = inner.offsets;
        for k in 0..self.units {
            for r in 0..self.regions {
                let base = (k * self.regions + r) * d;
                for (s, c) in slopes[base..base + d].iter_mut().zip(skip.row(k)) {
                    *s += c;
                }
                offsets[k * self.regions + r] += skip_bias[k];
            }
        }
        MasoParams::new(self.units, self.regions, d, slopes, offsets)
    }

    /// Identity skip connection `self(x) + x`: adds `e_k` to every slope of
    /// unit k.
    pub fn with_identity_skip(&self) -> Result<Self> {
        check_dim("identity skip", self.units, self.input_dim)?;
        let mut out = self.clone();
        for k in 0..self.units {
            for r in 0..self.regions {
                out.slopes[(k * self.regions + r) * self.input_dim + k] += 1.0;
            }
        }
        Ok(out)
    }

    /// Finds a shared bias `β′` with `⟨A[k,r], β′⟩ = B[k,r]` for every unit and
    /// region (least squares), failing when the system is inconsistent.
    pub fn to_simplified(&self) -> Result<SimplifiedMaso> {
        let rows = self.units * self.regions;
        let d = self.input_dim;
        let system = DMatrix::from_row_slice(rows, d, &self.slopes);
        let rhs = DVector::from_row_slice(&self.offsets);
        let beta = system
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| MasoError::InvalidParam(e.to_string()))?;
        let residual = (&system * &beta - &rhs).amax();
        if residual > SIMPLIFY_TOLERANCE {
            return Err(MasoError::Inconsistent { residual });
        }
        Ok(SimplifiedMaso {
            slopes: self.clone(),
            shared_bias: beta.iter().copied().collect(),
        })
    }

    /// True iff every slope entry is nonnegative, i.e. every output is
    /// nondecreasing in every input.
    pub fn is_nondecreasing(&self) -> bool {
        self.slopes.iter().all(|v| *v >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::pool::{build_pool_regions, PoolGeometry};
    use crate::rng;
    use proptest::prelude::*;

    fn random_maso(seed: u64, k: usize, r: usize, d: usize) -> MasoParams {
        let mut g = rng::seeded(seed);
        MasoParams::new(
            k,
            r,
            d,
            rng::normal_vec(&mut g, k * r * d, 1.0),
            rng::normal_vec(&mut g, k * r, 1.0),
        )
        .unwrap()
    }

    fn random_matrix(g: &mut rng::SeededRng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, rng::normal_vec(g, rows * cols, 1.0)).unwrap()
    }

    #[test]
    fn eval_examples() {
        let relu = MasoParams::activation(ActivationKind::Relu, 2).unwrap();
        let (y, code) = relu.eval(&[-1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 2.0]);
        assert_eq!(code, SelectionCode(vec![0, 1]));

        let abs = MasoParams::activation(ActivationKind::Abs, 1).unwrap();
        let (y, code) = abs.eval(&[-3.0]).unwrap();
        assert_eq!(y, vec![3.0]);
        assert_eq!(code, SelectionCode(vec![0]));

        let two = MasoParams::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let (y, code) = two.eval(&[2.0, 1.0]).unwrap();
        assert_eq!(y, vec![2.0]);
        assert_eq!(code, SelectionCode(vec![0]));
    }

    #[test]
    fn eval_dim_mismatch() {
        let relu = MasoParams::activation(ActivationKind::Relu, 2).unwrap();
        assert!(relu.eval(&[1.0]).is_err());
    }

    #[test]
    fn gradient_selection_examples() {
        let relu = MasoParams::activation(ActivationKind::Relu, 2).unwrap();
        let s = relu.selection_from_gradient(&[5.0, -5.0]).unwrap();
        assert_eq!(s.code, SelectionCode(vec![1, 0]));
        assert!(!s.tie);
        let s = relu.selection_from_gradient(&[0.0, 0.0]).unwrap();
        assert_eq!(s.code, SelectionCode(vec![0, 0]));
        assert!(s.tie);
    }

    #[test]
    fn gradient_selection_matches_eval() {
        let mut g = rng::seeded(3);
        for i in 0..1000 {
            let p = random_maso(1000 + i, 3, 1 + (i as usize % 5), 4);
            let x = rng::normal_vec(&mut g, 4, 1.0);
            let s = p.selection_from_gradient(&x).unwrap();
            assert!(!s.tie);
            assert_eq!(s.code, p.eval(&x).unwrap().1);
        }
    }

    #[test]
    fn affine_at_examples() {
        let relu = MasoParams::activation(ActivationKind::Relu, 2).unwrap();
        let (a, b) = relu.affine_at(&[-1.0, 2.0]).unwrap();
        assert_eq!(a, Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap());
        assert_eq!(b, vec![0.0, 0.0]);

        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let aff = MasoParams::affine(&w, &[1.0, -1.0]).unwrap();
        assert!(aff.is_degenerate());
        assert_eq!(aff.affine_at(&[9.0, -4.0]).unwrap().0, w);
        assert_eq!(aff.affine_at(&[0.0, 1.0]).unwrap().0, w);
    }

    #[test]
    fn affine_at_reconstructs_output() {
        let mut g = rng::seeded(5);
        for i in 0..1000 {
            let p = random_maso(i, 4, 3, 5);
            let x = rng::normal_vec(&mut g, 5, 2.0);
            let (y, _) = p.eval(&x).unwrap();
            let (a, b) = p.affine_at(&x).unwrap();
            let recon: Vec<f64> = a.gemv(&x).unwrap().iter().zip(&b).map(|(u, v)| u + v).collect();
            assert!(max_abs_diff(&y, &recon) <= 1e-12);
        }
    }

    #[test]
    fn soft_relu_at_half_is_gated_sigmoid() {
        let relu = MasoParams::activation(ActivationKind::Relu, 1).unwrap();
        let cfg = SoftConfig::new(0.5).unwrap();
        let y = relu.eval_soft(&[1.0], cfg).unwrap()[0];
        let sig = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((y - 0.731058578630005).abs() < 1e-12);
        assert!((y - sig).abs() < 1e-15);
        assert_eq!(relu.eval_soft(&[0.0], cfg).unwrap()[0], 0.0);
    }

    #[test]
    fn soft_beta_validation() {
        assert!(SoftConfig::new(0.0).is_err());
        assert!(SoftConfig::new(1.0).is_err());
        assert!(SoftConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn soft_approaches_hard() {
        let mut g = rng::seeded(9);
        for i in 0..200 {
            let p = random_maso(500 + i, 3, 4, 3);
            let x = rng::normal_vec(&mut g, 3, 1.0);
            let hard = p.eval(&x).unwrap().0;
            let gaps: Vec<f64> = [0.9, 0.99, 0.999]
                .iter()
                .map(|b| max_abs_diff(&hard, &p.eval_soft(&x, SoftConfig::new(*b).unwrap()).unwrap()))
                .collect();
            assert!(gaps[2] <= 1e-3, "gap {}", gaps[2]);
            assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2]);
        }
    }

    #[test]
    fn affine_constructor_examples() {
        let id = MasoParams::affine(&Matrix::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(id.eval(&[1.0, -2.0, 3.0]).unwrap().0, vec![1.0, -2.0, 3.0]);
        let w = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let p = MasoParams::affine(&w, &[0.5]).unwrap();
        assert_eq!(p.eval(&[1.0, 0.0]).unwrap().0, vec![1.5]);
        assert!(MasoParams::affine(&w, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn activation_examples() {
        let relu = MasoParams::activation(ActivationKind::Relu, 1).unwrap();
        assert_eq!(relu.eval(&[-2.0]).unwrap().0, vec![0.0]);
        let lrelu = MasoParams::activation(ActivationKind::LeakyRelu { slope: 0.1 }, 1).unwrap();
        assert!((lrelu.eval(&[-2.0]).unwrap().0[0] + 0.2).abs() < 1e-15);
        let abs = MasoParams::activation(ActivationKind::Abs, 1).unwrap();
        assert_eq!(abs.eval(&[-3.0]).unwrap().0, vec![3.0]);
        assert!(MasoParams::activation(ActivationKind::LeakyRelu { slope: 0.0 }, 1).is_err());
        assert!(MasoParams::activation(ActivationKind::LeakyRelu { slope: -0.5 }, 1).is_err());
    }

    #[test]
    fn activation_scalar_path_matches_maso() {
        for kind in [
            ActivationKind::Relu,
            ActivationKind::LeakyRelu { slope: 0.2 },
            ActivationKind::Abs,
        ] {
            let p = MasoParams::activation(kind, 1).unwrap();
            for u in [-2.0, -0.0, 0.0, 0.5, 3.0] {
                let (y, code) = p.eval(&[u]).unwrap();
                assert_eq!(kind.apply(u), (y[0], code.0[0]));
            }
        }
    }

    #[test]
    fn pool_examples() {
        let regions = PoolRegions::new(2, vec![vec![0, 1]]).unwrap();
        let max = MasoParams::pool(&regions, PoolKind::Max).unwrap();
        let (y, code) = max.eval(&[3.0, 5.0]).unwrap();
        assert_eq!((y, code), (vec![5.0], SelectionCode(vec![1])));
        let avg = MasoParams::pool(&regions, PoolKind::Avg).unwrap();
        assert_eq!(avg.eval(&[3.0, 5.0]).unwrap().0, vec![4.0]);
        assert!(PoolRegions::new(2, vec![vec![0, 1], vec![]]).is_err());
    }

    #[test]
    fn channel_max_pool_is_elementwise_max() {
        let shape = crate::linalg::Shape3::new(3, 2, 2).unwrap();
        let (regions, _) =
            build_pool_regions(PoolGeometry::Channel { window: 3, stride: 3 }, shape).unwrap();
        let p = MasoParams::pool(&regions, PoolKind::Max).unwrap();
        let mut g = rng::seeded(21);
        for _ in 0..100 {
            let z = rng::normal_vec(&mut g, 12, 1.0);
            let want: Vec<f64> = (0..4).map(|i| z[i].max(z[4 + i]).max(z[8 + i])).collect();
            assert_eq!(p.eval(&z).unwrap().0, want);
        }
    }

    #[test]
    fn compose_affine_example() {
        let relu = MasoParams::activation(ActivationKind::Relu, 1).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let q = relu.compose_affine(&w, &[0.5]).unwrap();
        assert_eq!(q.slope(0, 0), &[0.0, 0.0]);
        assert_eq!(q.offset(0, 0), 0.0);
        assert_eq!(q.slope(0, 1), &[1.0, -1.0]);
        assert_eq!(q.offset(0, 1), 0.5);
        assert_eq!(q.eval(&[1.0, 0.0]).unwrap().0, vec![1.5]);
    }

    #[test]
    fn compose_affine_identity_is_noop() {
        let p = random_maso(77, 3, 2, 3);
        let q = p.compose_affine(&Matrix::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn compose_affine_matches_sequential() {
        let mut g = rng::seeded(13);
        for i in 0..1000 {
            let p = random_maso(2000 + i, 3, 2, 4);
            let w = random_matrix(&mut g, 4, 3);
            let b = rng::normal_vec(&mut g, 4, 1.0);
            let x = rng::normal_vec(&mut g, 3, 1.0);
            let q = p.compose_affine(&w, &b).unwrap();
            let inner: Vec<f64> = w.gemv(&x).unwrap().iter().zip(&b).map(|(u, v)| u + v).collect();
            let want = p.eval(&inner).unwrap().0;
            assert!(max_abs_diff(&q.eval(&x).unwrap().0, &want) <= 1e-12);
        }
    }

    #[test]
    fn compose_skip_reductions() {
        let mut g = rng::seeded(17);
        let relu = MasoParams::activation(ActivationKind::Relu, 3).unwrap();
        let c = random_matrix(&mut g, 3, 3);
        let bc = rng::normal_vec(&mut g, 3, 1.0);
        let zero_skip = relu.compose_skip(&c, &bc, &Matrix::zeros(3, 3), &[0.0; 3]).unwrap();
        assert_eq!(zero_skip, relu.compose_affine(&c, &bc).unwrap());

        let cs = random_matrix(&mut g, 3, 3);
        let bs = rng::normal_vec(&mut g, 3, 1.0);
        let q = relu.compose_skip(&Matrix::zeros(3, 3), &bc, &cs, &bs).unwrap();
        let x = rng::normal_vec(&mut g, 3, 1.0);
        let relu_bc: Vec<f64> = bc.iter().map(|v| v.max(0.0)).collect();
        let want: Vec<f64> = cs
            .gemv(&x)
            .unwrap()
            .iter()
            .zip(&bs)
            .zip(&relu_bc)
            .map(|((a, b), c)| a + b + c)
            .collect();
        assert!(max_abs_diff(&q.eval(&x).unwrap().0, &want) <= 1e-12);
    }

    #[test]
    fn compose_skip_matches_residual_layer() {
        let mut g = rng::seeded(19);
        for _ in 0..500 {
            let act = MasoParams::activation(ActivationKind::LeakyRelu { slope: 0.3 }, 4).unwrap();
            let c = random_matrix(&mut g, 4, 5);
            let bc = rng::normal_vec(&mut g, 4, 1.0);
            let cs = random_matrix(&mut g, 4, 5);
            let bs = rng::normal_vec(&mut g, 4, 1.0);
            let x = rng::normal_vec(&mut g, 5, 1.0);
            let q = act.compose_skip(&c, &bc, &cs, &bs).unwrap();
            let u: Vec<f64> = c.gemv(&x).unwrap().iter().zip(&bc).map(|(a, b)| a + b).collect();
            let a = act.eval(&u).unwrap().0;
            let s = cs.gemv(&x).unwrap();
            let want: Vec<f64> = (0..4).map(|k| s[k] + bs[k] + a[k]).collect();
            assert!(max_abs_diff(&q.eval(&x).unwrap().0, &want) <= 1e-12);
        }
    }

    #[test]
    fn identity_skip_adds_input() {
        let p = random_maso(31, 3, 3, 3);
        let q = p.with_identity_skip().unwrap();
        let x = [0.3, -1.2, 2.0];
        let want: Vec<f64> = p.eval(&x).unwrap().0.iter().zip(&x).map(|(a, b)| a + b).collect();
        assert!(max_abs_diff(&q.eval(&x).unwrap().0, &want) <= 1e-12);
        assert!(random_maso(1, 2, 2, 3).with_identity_skip().is_err());
    }

    #[test]
    fn simplified_zero_bias() {
        let relu = MasoParams::activation(ActivationKind::Relu, 3).unwrap();
        let s = relu.to_simplified().unwrap();
        assert!(s.shared_bias.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn simplified_recovers_inverse_bias() {
        let mut g = rng::seeded(23);
        let w = random_matrix(&mut g, 3, 3);
        let b = rng::normal_vec(&mut g, 3, 1.0);
        let relu = MasoParams::activation(ActivationKind::Relu, 3).unwrap();
        let q = relu.compose_affine(&w, &b).unwrap();
        let s = q.to_simplified().unwrap();
        // β′ = W⁻¹ b, checked through W β′ = b
        let wb = w.gemv(&s.shared_bias).unwrap();
        assert!(max_abs_diff(&wb, &b) <= 1e-10);
        for _ in 0..100 {
            let x = rng::normal_vec(&mut g, 3, 1.0);
            assert!(max_abs_diff(&s.eval(&x).unwrap(), &q.eval(&x).unwrap().0) <= 1e-10);
        }
    }

    #[test]
    fn simplified_inconsistent_rejected() {
        // two identical filters with different biases
        let relu = MasoParams::activation(ActivationKind::Relu, 2).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let q = relu.compose_affine(&w, &[0.0, 1.0]).unwrap();
        assert!(matches!(q.to_simplified(), Err(MasoError::Inconsistent { .. })));
    }

    #[test]
    fn monotonicity_flags() {
        assert!(MasoParams::activation(ActivationKind::Relu, 3).unwrap().is_nondecreasing());
        assert!(!MasoParams::activation(ActivationKind::Abs, 3).unwrap().is_nondecreasing());
        let regions = PoolRegions::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert!(MasoParams::pool(&regions, PoolKind::Max).unwrap().is_nondecreasing());
    }

    proptest! {
        #[test]
        fn unit_outputs_are_convex(seed in 0u64..10_000, lambda in 0.0f64..1.0) {
            let p = random_maso(seed, 3, 4, 3);
            let mut g = rng::seeded(seed ^ 0xabc);
            let x1 = rng::normal_vec(&mut g, 3, 2.0);
            let x2 = rng::normal_vec(&mut g, 3, 2.0);
            let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let (y1, _) = p.eval(&x1).unwrap();
            let (y2, _) = p.eval(&x2).unwrap();
            let (ym, _) = p.eval(&mid).unwrap();
            for k in 0..3 {
                prop_assert!(ym[k] <= lambda * y1[k] + (1.0 - lambda) * y2[k] + 1e-9);
            }
        }

        #[test]
        fn exact_affine_reconstruction(seed in 0u64..10_000) {
            let p = random_maso(seed, 2, 3, 4);
            let mut g = rng::seeded(seed.wrapping_mul(31));
            let x = rng::normal_vec(&mut g, 4, 3.0);
            let (y, _) = p.eval(&x).unwrap();
            let (a, b) = p.affine_at(&x).unwrap();
            let recon: Vec<f64> = a.gemv(&x).unwrap().iter().zip(&b).map(|(u, v)| u + v).collect();
            prop_assert!(max_abs_diff(&y, &recon) <= 1e-12);
        }
    }
}
