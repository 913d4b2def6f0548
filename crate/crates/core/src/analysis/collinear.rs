//! Per-example cross-entropy optimum under a norm budget on the templates.
//!
//! With logits `z_c = ⟨A_c, x⟩`, `‖x‖ = 1` and `Σ_c ‖A_c‖² = α`, the optimum
//! is collinear with `x`: `A_y = √((C−1)α/C) x` and `A_c = −√(α/(C(C−1))) x`
//! for every other class.

use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::rng;
use crate::train::{cross_entropy, softmax};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollinearResult {
    pub optimized: Matrix,
    pub predicted: Matrix,
    /// `max |optimized − predicted|` over all entries.
    pub max_deviation: f64,
    /// Stationarity residual of the Lagrangian at the closed form.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub loss: f64,
}

/// `(correct, incorrect)` scalings of `x`.
pub fn collinear_scalings(c: usize, alpha: f64) -> (f64, f64) {
    let cf = c as f64;
    (((cf - 1.0) * alpha / cf).sqrt(), -(alpha / (cf * (cf - 1.0))).sqrt())
}

pub fn collinear_templates(x: &[f64], y: usize, c: usize, alpha: f64) -> Matrix {
    let (pos, neg) = collinear_scalings(c, alpha);
    let mut m = Matrix::zeros(c, x.len());
    for k in 0..c {
        let s = if k == y { pos } else { neg };
        for (dst, xi) in m.row_mut(k).iter_mut().zip(x) {
            *dst = s * xi;
        }
    }
    m
}

fn loss_and_grad(a: &Matrix, x: &[f64], y: usize) -> (f64, Matrix) {
    let z = a.gemv(x).expect("template width matches x");
    let p = softmax(&z);
    let mut g = Matrix::zeros(a.rows(), a.cols());
    for k in 0..a.rows() {
        let coef = p[k] - if k == y { 1.0 } else { 0.0 };
        for (dst, xi) in g.row_mut(k).iter_mut().zip(x) {
            *dst = coef * xi;
        }
    }
    (cross_entropy(&z, y), g)
}

/// `‖∇L + 2νA‖_∞` with the multiplier `ν` fitted by least squares, plus
/// the constraint violation `|Σ‖A_c‖² − α|`.
pub fn kkt_residual(a: &Matrix, x: &[f64], y: usize, alpha: f64) -> f64 {
    let (_, g) = loss_and_grad(a, x, y);
    let aa = a.frobenius_sq();
    let nu = -dot(g.data(), a.data()) / (2.0 * aa);
    let stationarity = g
        .data()
        .iter()
        .zip(a.data())
        .map(|(g, a)| (g + 2.0 * nu * a).abs())
        .fold(0.0, f64::max);
    stationarity + (aa - alpha).abs()
}

fn project(a: &mut Matrix, alpha: f64) {
    let s = (alpha / a.frobenius_sq()).sqrt();
    a.data_mut().iter_mut().for_each(|v| *v *= s);
}

/// Projected gradient descent on the sphere `Σ‖A_c‖² = α` with backtracking,
/// from a seeded random start, until the KKT residual drops below `tol`.
pub fn collinear_optimize(x: &[f64], y: usize, c: usize, alpha: f64, tol: f64, seed: u64) -> Result<CollinearResult> {
    if (norm(x) - 1.0).abs() > 1e-12 {
        return Err(MasoError::InvalidParam("x must have unit norm".into()));
    }
    if !(alpha > 0.0) || c < 2 || y >= c {
        return Err(MasoError::InvalidParam(format!("need alpha > 0 and 0 <= y < C >= 2, got alpha={alpha}, y={y}, C={c}")));
    }
    const MAX_ITER: usize = 200_000;
    let mut g = rng::seeded(seed);
    let mut a = Matrix::from_vec(c, x.len(), rng::normal_vec(&mut g, c * x.len(), 1.0))?;
    project(&mut a, alpha);
    let (mut loss, mut grad) = loss_and_grad(&a, x, y);
    let mut step = 1.0;
    let mut iterations = 0;
    while kkt_residual(&a, x, y, alpha) > tol {
        if iterations == MAX_ITER {
            return Err(MasoError::NoConvergence {
                iterations,
                residual: kkt_residual(&a, x, y, alpha),
            });
        }
        iterations += 1;
        loop {
            let mut cand = a.add(&grad.scaled(-step))?;
            project(&mut cand, alpha);
            let (l, gr) = loss_and_grad(&cand, x, y);
            if l <= loss || step < 1e-12 {
                a = cand;
                loss = l;
                grad = gr;
                step = (step * 2.0).min(64.0);
                break;
            }
            step *= 0.5;
        }
    }
    let predicted = collinear_templates(x, y, c, alpha);
    Ok(CollinearResult {
        max_deviation: a.max_abs_diff(&predicted),
        kkt_residual: kkt_residual(&predicted, x, y, alpha),
        optimized: a,
        predicted,
        iterations,
        loss,
    })
}
