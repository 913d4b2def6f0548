//! Softmax, losses and the orthogonal-template penalty.

use crate::linalg::{dot, Matrix};

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `−logits_y + log Σ_c exp(logits_c)`.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    log_sum_exp(logits) - logits[y]
}

/// `‖f − y‖²` for one example.
pub fn squared_error(f: &[f64], y: &[f64]) -> f64 {
    f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `Σ_{c₁≠c₂} ⟨w_{c₁}, w_{c₂}⟩²` over ordered pairs of rows.
pub fn ortho_penalty(w: &Matrix) -> f64 {
    let g = w.gram();
    let n = g.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += g.get(i, j) * g.get(i, j);
            }
        }
    }
    s
}

/// Gradient of [`ortho_penalty`]: `4 (G − diag G) W` with `G = W Wᵀ`.
pub fn ortho_penalty_grad(w: &Matrix) -> Matrix {
    let mut g = w.gram();
    for i in 0..g.rows() {
        g.set(i, i, 0.0);
    }
    g.matmul(w).expect("square gram").scaled(4.0)
}

/// Mean `|⟨w_{c₁}, w_{c₂}⟩|` over ordered pairs `c₁ ≠ c₂`.
pub fn offdiag_gram_magnitude(w: &Matrix) -> f64 {
    let n = w.rows();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += dot(w.row(i), w.row(j)).abs();
            }
        }
    }
    s / (n * (n - 1)) as f64
}

/// Mean `|cos ∠(w_{c₁}, w_{c₂})|` over ordered pairs, a scale-free variant of
/// [`offdiag_gram_magnitude`].
pub fn offdiag_cosine_magnitude(w: &Matrix) -> f64 {
    let n = w.rows();
    if n < 2 {
        return 0.0;
    }
    let norms: Vec<f64> = (0..n).map(|i| crate::linalg::norm(w.row(i))).collect();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && norms[i] > 0.0 && norms[j] > 0.0 {
                s += (dot(w.row(i), w.row(j)) / (norms[i] * norms[j])).abs();
            }
        }
    }
    s / (n * (n - 1)) as f64
}

/// `‖∂softmax/∂logits‖_F²` at probabilities `p`:
/// `Σ_i p_i²(1−p_i)² + Σ_{i≠j} p_i² p_j²`.
pub fn softmax_jacobian_frobenius_sq(p: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, pi) in p.iter().enumerate() {
        for (j, pj) in p.iter().enumerate() {
            let jij = if i == j { pi * (1.0 - pi) } else { -pi * pj };
            s += jij * jij;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        let v = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = v.iter().map(|x| x + 17.0).collect();
        let (a, b) = (softmax(&v), softmax(&shifted));
        assert!(crate::linalg::max_abs_diff(&a, &b) < 1e-15);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0; 4], 2) - 4f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.0; 4], 2) - 1.386294).abs() < 1e-6);
        assert!(cross_entropy(&[0.0, 1e4, 0.0], 1) < 1e-300);
        let mut g = rng::seeded(4);
        for _ in 0..1000 {
            let l = rng::normal_vec(&mut g, 5, 3.0);
            let want = -softmax(&l)[3].ln();
            assert!((cross_entropy(&l, 3) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ortho_examples() {
        assert_eq!(ortho_penalty(&Matrix::identity(3)), 0.0);
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(ortho_penalty(&w), 2.0);
    }

    #[test]
    fn ortho_gradient_finite_differences() {
        let mut g = rng::seeded(8);
        let w = Matrix::from_vec(4, 3, rng::normal_vec(&mut g, 12, 1.0)).unwrap();
        let grad = ortho_penalty_grad(&w);
        let h = 1e-6;
        for i in 0..12 {
            let mut p = w.clone();
            let mut m = w.clone();
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (ortho_penalty(&p) - ortho_penalty(&m)) / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() / fd.abs().max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn softmax_jacobian_at_uniform() {
        for c in 2..=10 {
            let p = vec![1.0 / c as f64; c];
            let want = (c as f64 - 1.0) / (c * c) as f64;
            assert!((softmax_jacobian_frobenius_sq(&p) - want).abs() < 1e-10);
        }
        assert!((softmax_jacobian_frobenius_sq(&[0.5, 0.5]) - 0.25).abs() < 1e-15);
    }
}
