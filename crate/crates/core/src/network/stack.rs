//! A network rewritten as a composition of MASOs, one per level.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::maso::{MasoParams, PoolKind, SelectionCode};

use super::{AffineDecomposition, Compiled, LayerSpec, Network};

/// `logits = W_final · (q_L ∘ … ∘ q_1)(x) + b_final` with every `q_ℓ` a MASO.
#[derive(Clone, Debug, PartialEq)]
pub struct MasoStack {
    pub levels: Vec<MasoParams>,
    pub w_final: Matrix,
    pub b_final: Vec<f64>,
}

/// Affine map waiting to be folded into the next nonlinear layer.
struct Pending {
    map: Option<(Matrix, Vec<f64>)>,
}

impl Pending {
    fn identity() -> Self {
        Pending { map: None }
    }

    fn push(&mut self, w: &Matrix, b: &[f64]) -> Result<()> {
        self.map = Some(match self.map.take() {
            None => (w.clone(), b.to_vec()),
            Some((p, q)) => {
                let mut q2 = w.gemv(&q)?;
                for (x, y) in q2.iter_mut().zip(b) {
                    *x += y;
                }
                (w.matmul(&p)?, q2)
            }
        });
        Ok(())
    }

    fn fold_into(&mut self, maso: MasoParams) -> Result<MasoParams> {
        match self.map.take() {
            None => Ok(maso),
            Some((p, q)) => maso.compose_affine(&p, &q),
        }
    }
}

impl Network {
    /// Rewrites the network as one MASO per level. Trailing affine layers are
    /// merged into the final classifier.
    pub fn layer_masos(&self) -> Result<MasoStack> {
        let mut pending = Pending::identity();
        let mut levels = Vec::new();
        for (i, spec) in self.layers.iter().enumerate() {
            let in_dim = self.shapes[i].dim();
            match (spec, self.compiled(i)) {
                (LayerSpec::Dense { weight, bias }, _) => pending.push(weight, bias)?,
                (LayerSpec::Conv { .. }, Compiled::Conv { matrix, bias, .. }) => pending.push(matrix, bias)?,
                (LayerSpec::BatchNorm { .. }, Compiled::BatchNorm { scale, shift }) => {
                    pending.push(&Matrix::diag(scale), shift)?
                }
                (LayerSpec::Pool { pool, .. }, Compiled::Pool { regions }) => {
                    let maso = MasoParams::pool(regions, *pool)?;
                    if *pool == PoolKind::Avg {
                        let w = Matrix::from_vec(maso.units(), in_dim, maso.slopes().to_vec())?;
                        pending.push(&w, maso.offsets())?;
                    } else {
                        levels.push(pending.fold_into(maso)?);
                    }
                }
                (LayerSpec::Activation { activation }, _) => {
                    let maso = MasoParams::activation(*activation, in_dim)?;
                    levels.push(pending.fold_into(maso)?);
                }
                (
                    LayerSpec::ResNetBlock {
                        conv,
                        conv_bias,
                        activation,
                        skip,
                        skip_bias,
                    },
                    _,
                ) => {
                    let act = MasoParams::activation(*activation, conv.rows())?;
                    let maso = act.compose_skip(conv, conv_bias, skip, skip_bias)?;
                    levels.push(pending.fold_into(maso)?);
                }
                _ => unreachable!("layer compiled with mismatched variant"),
            }
        }
        let (w_final, b_final) = match pending.map.take() {
            None => (self.w_final.clone(), self.b_final.clone()),
            Some((p, q)) => {
                let mut b = self.w_final.gemv(&q)?;
                for (x, y) in b.iter_mut().zip(&self.b_final) {
                    *x += y;
                }
                (self.w_final.matmul(&p)?, b)
            }
        };
        Ok(MasoStack {
            levels,
            w_final,
            b_final,
        })
    }
}

impl MasoStack {
    pub fn input_dim(&self) -> usize {
        self.levels.first().map_or(self.w_final.cols(), MasoParams::input_dim)
    }

    /// Evaluates level by level, returning logits and per-level codes.
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<SelectionCode>)> {
        let mut z = x.to_vec();
        let mut codes = Vec::with_capacity(self.levels.len());
        for q in &self.levels {
            let (y, code) = q.eval(&z)?;
            z = y;
            codes.push(code);
        }
        let mut logits = self.w_final.gemv(&z)?;
        for (l, b) in logits.iter_mut().zip(&self.b_final) {
            *l += b;
        }
        Ok((logits, codes))
    }

    /// Affine map at `x` as the explicit product `W_final · A_L[x] ⋯ A_1[x]`
    /// of per-level selected matrices. Independent of the pullback route.
    pub fn affine_product(&self, x: &[f64]) -> Result<AffineDecomposition> {
        let mut z = x.to_vec();
        let mut a = Matrix::identity(x.len());
        let mut b = vec![0.0; x.len()];
        for q in &self.levels {
            let (aq, bq) = q.affine_at(&z)?;
            z = q.eval(&z)?.0;
            let mut nb = aq.gemv(&b)?;
            for (x, y) in nb.iter_mut().zip(&bq) {
                *x += y;
            }
            a = aq.matmul(&a)?;
            b = nb;
        }
        let mut fb = self.w_final.gemv(&b)?;
        for (x, y) in fb.iter_mut().zip(&self.b_final) {
            *x += y;
        }
        Ok(AffineDecomposition {
            a: self.w_final.matmul(&a)?,
            b: fb,
        })
    }

    /// `(K, R)` of every level.
    pub fn level_shapes(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|q| (q.units(), q.regions())).collect()
    }

    /// True when levels `2..L` and the classifier have nonnegative slopes.
    pub fn is_nondecreasing_after_first(&self) -> bool {
        self.levels.iter().skip(1).all(MasoParams::is_nondecreasing)
            && self.w_final.data().iter().all(|v| *v >= 0.0)
    }
}
