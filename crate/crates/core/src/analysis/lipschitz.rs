//! Squared Lipschitz bounds per layer and for the whole network.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::linalg::{norm_sq, Matrix};
use crate::maso::{MasoParams, PoolKind};
use crate::network::{Compiled, LayerSpec, Network};
use crate::train::softmax_jacobian_frobenius_sq;

/// `Σ_k max_r ‖A_{k,r,·}‖²`.
pub fn layer_lipschitz(p: &MasoParams) -> f64 {
    (0..p.units())
        .map(|k| {
            (0..p.regions())
                .map(|r| norm_sq(p.slope(k, r)))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Largest squared singular value.
pub fn spectral_norm_sq(m: &Matrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let s = d.singular_values().max();
    s * s
}

/// One row of the operator table. `closed_form` is the textbook operator
/// bound (`‖W‖²` for linear maps, `D²` for activations and max pooling),
/// `maso` the per-layer spline bound; `used` is the smaller of the two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorBound {
    pub layer: Option<usize>,
    pub operator: String,
    pub closed_form: Option<f64>,
    pub maso: f64,
    pub used: f64,
}

impl OperatorBound {
    fn new(layer: Option<usize>, operator: &str, closed_form: Option<f64>, maso: f64) -> Self {
        let used = closed_form.map_or(maso, |c| c.min(maso));
        OperatorBound {
            layer,
            operator: operator.to_string(),
            closed_form,
            maso,
            used,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxBound {
    pub classes: usize,
    /// `(C−1)/C²`, the Jacobian norm at the uniform distribution.
    pub at_uniform: f64,
    /// Numerical supremum over the simplex.
    pub supremum: f64,
    pub maximizer: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `κ^(ℓ)` of every operator, logits layer last.
    pub operators: Vec<OperatorBound>,
    /// `Π used`, a bound on `‖f(x₁)−f(x₂)‖² / ‖x₁−x₂‖²` for the logits.
    pub kappa: f64,
    /// `Σ_k max_r ‖A‖²` of each merged level, then of the merged classifier.
    pub level_bounds: Vec<f64>,
    pub level_product: f64,
    /// Reported separately; the network output is the logits.
    pub softmax: SoftmaxBound,
}

fn linear_row(layer: usize, name: &str, m: &Matrix) -> OperatorBound {
    OperatorBound::new(Some(layer), name, Some(spectral_norm_sq(m)), m.frobenius_sq())
}

pub fn operator_lipschitz_table(net: &Network) -> Result<Vec<OperatorBound>> {
    let mut rows = Vec::new();
    for (i, spec) in net.layers().iter().enumerate() {
        let in_dim = net.shapes()[i].dim();
        let out_dim = net.shapes()[i + 1].dim();
        let d2 = (out_dim * out_dim) as f64;
        let row = match (spec, net.compiled(i)) {
            (LayerSpec::Dense { weight, .. }, _) => linear_row(i, "dense", weight),
            (LayerSpec::Conv { .. }, Compiled::Conv { matrix, .. }) => linear_row(i, "conv", matrix),
            (LayerSpec::BatchNorm { .. }, Compiled::BatchNorm { scale, .. }) => {
                linear_row(i, "batch_norm", &Matrix::diag(scale))
            }
            (LayerSpec::Activation { activation }, _) => {
                let p = MasoParams::activation(*activation, in_dim)?;
                OperatorBound::new(Some(i), activation.name(), Some(d2), layer_lipschitz(&p))
            }
            (LayerSpec::Pool { pool, .. }, Compiled::Pool { regions }) => {
                let p = MasoParams::pool(regions, *pool)?;
                match pool {
                    PoolKind::Max => OperatorBound::new(Some(i), "max_pool", Some(d2), layer_lipschitz(&p)),
                    PoolKind::Avg => {
                        let m = Matrix::from_vec(p.units(), in_dim, p.slopes().to_vec())?;
                        linear_row(i, "avg_pool", &m)
                    }
                }
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
                let p = act.compose_skip(conv, conv_bias, skip, skip_bias)?;
                OperatorBound::new(Some(i), "resnet_block", None, layer_lipschitz(&p))
            }
            _ => {
                return Err(MasoError::InvalidParam(format!(
                    "layer {i} ({}) compiled inconsistently",
                    spec.kind_name()
                )))
            }
        };
        rows.push(row);
    }
    rows.push(linear_row(net.layers().len(), "final_dense", net.w_final()));
    Ok(rows)
}

pub fn network_lipschitz(net: &Network) -> Result<LipschitzReport> {
    let operators = operator_lipschitz_table(net)?;
    let kappa = operators.iter().map(|o| o.used).product();
    let stack = net.layer_masos()?;
    let mut level_bounds: Vec<f64> = stack.levels.iter().map(layer_lipschitz).collect();
    level_bounds.push(stack.w_final.frobenius_sq());
    let level_product = level_bounds.iter().product();
    let c = net.output_dim();
    let softmax = if c >= 2 {
        softmax_lipschitz_max(c)?
    } else {
        SoftmaxBound {
            classes: c,
            at_uniform: 0.0,
            supremum: 0.0,
            maximizer: vec![1.0; c],
        }
    };
    Ok(LipschitzReport {
        operators,
        kappa,
        level_bounds,
        level_product,
        softmax,
    })
}

const SIMPLEX_GRID: usize = 120;

fn simplex_grid_max(c: usize, n: usize) -> (f64, Vec<f64>) {
    let mut best = (f64::NEG_INFINITY, vec![]);
    let mut counts = vec![0usize; c];
    fn rec(i: usize, left: usize, n: usize, counts: &mut Vec<usize>, best: &mut (f64, Vec<f64>)) {
        if i + 1 == counts.len() {
            counts[i] = left;
            let p: Vec<f64> = counts.iter().map(|k| *k as f64 / n as f64).collect();
            let v = softmax_jacobian_frobenius_sq(&p);
            if v > best.0 {
                *best = (v, p);
            }
            return;
        }
        for k in 0..=left {
            counts[i] = k;
            rec(i + 1, left - k, n, counts, best);
        }
    }
    rec(0, n, n, &mut counts, &mut best);
    best
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `∂/∂p_k` of `Σp² − 2Σp³ + (Σp²)²`, the closed form of the squared
/// Jacobian norm on the simplex.
fn jacobian_norm_grad(p: &[f64]) -> Vec<f64> {
    let s2: f64 = p.iter().map(|x| x * x).sum();
    p.iter().map(|x| 2.0 * x - 6.0 * x * x + 4.0 * s2 * x).collect()
}

fn ascend(mut p: Vec<f64>) -> Vec<f64> {
    let mut step = 0.5;
    let mut f = softmax_jacobian_frobenius_sq(&p);
    for _ in 0..5000 {
        let g = jacobian_norm_grad(&p);
        let cand = project_simplex(&p.iter().zip(&g).map(|(x, g)| x + step * g).collect::<Vec<_>>());
        let fc = softmax_jacobian_frobenius_sq(&cand);
        if fc > f {
            let moved = crate::linalg::max_abs_diff(&cand, &p);
            p = cand;
            f = fc;
            if moved < 1e-15 {
                break;
            }
        } else {
            step *= 0.5;
            if step < 1e-16 {
                break;
            }
        }
    }
    p
}

/// Maximizes `‖∂softmax/∂z‖_F²` over the probability simplex (the supremum
/// over logits, attained in the closure). Exhaustive grid for `C ≤ 4`,
/// multi-start projected ascent otherwise; both finish with a local ascent.
pub fn softmax_lipschitz_max(c: usize) -> Result<SoftmaxBound> {
    if c < 2 {
        return Err(MasoError::InvalidParam(format!("softmax needs at least 2 classes, got {c}")));
    }
    let at_uniform = softmax_jacobian_frobenius_sq(&vec![1.0 / c as f64; c]);
    let starts: Vec<Vec<f64>> = if c <= 4 {
        vec![simplex_grid_max(c, SIMPLEX_GRID).1]
    } else {
        let mut g = crate::rng::seeded(c as u64);
        let mut s: Vec<Vec<f64>> = (0..64)
            .map(|_| {
                let v: Vec<f64> = (0..c).map(|_| rand::Rng::random::<f64>(&mut g)).collect();
                let t: f64 = v.iter().sum();
                v.into_iter().map(|x| x / t).collect()
            })
            .collect();
        s.push(vec![1.0 / c as f64; c]);
        s
    };
    let mut best = (f64::NEG_INFINITY, vec![]);
    for s in starts {
        let p = ascend(s);
        let v = softmax_jacobian_frobenius_sq(&p);
        if v > best.0 {
            best = (v, p);
        }
    }
    Ok(SoftmaxBound {
        classes: c,
        at_uniform,
        supremum: best.0,
        maximizer: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Shape3;
    use crate::maso::ActivationKind;
    use crate::network::init::InitOptions;
    use crate::rng;
    use crate::train::softmax;

    #[test]
    fn layer_bound_examples() {
        let relu = MasoParams::activation(ActivationKind::Relu, 3).unwrap();
        assert_eq!(layer_lipschitz(&relu), 3.0);
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let p = MasoParams::affine(&w, &[0.0, 0.0]).unwrap();
        assert_eq!(layer_lipschitz(&p), w.frobenius_sq());
        let zero = MasoParams::new(2, 2, 2, vec![0.0; 8], vec![1.0; 4]).unwrap();
        assert_eq!(layer_lipschitz(&zero), 0.0);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        assert!((spectral_norm_sq(&Matrix::diag(&[1.0, -3.0, 2.0])) - 9.0).abs() < 1e-12);
    }

    /// Jacobian by central differences of softmax at logits `ln p`.
    fn fd_jacobian_norm(p: &[f64]) -> f64 {
        let z: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let h = 1e-6;
        let mut s = 0.0;
        for j in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let (a, b) = (softmax(&zp), softmax(&zm));
            for i in 0..z.len() {
                let d = (a[i] - b[i]) / (2.0 * h);
                s += d * d;
            }
        }
        s
    }

    #[test]
    fn jacobian_norm_matches_finite_differences() {
        for p in [vec![0.5, 0.5], vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.4, 0.4]] {
            assert!((fd_jacobian_norm(&p) - softmax_jacobian_frobenius_sq(&p)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_two_classes() {
        let b = softmax_lipschitz_max(2).unwrap();
        assert!((b.supremum - 0.25).abs() < 1e-12);
        assert!((b.at_uniform - 0.25).abs() < 1e-15);
        assert!(crate::linalg::max_abs_diff(&b.maximizer, &[0.5, 0.5]) < 1e-6);
    }

    #[test]
    fn softmax_uniform_value_and_true_supremum() {
        for c in 2..=6 {
            let b = softmax_lipschitz_max(c).unwrap();
            let cf = c as f64;
            assert!((b.at_uniform - (cf - 1.0) / (cf * cf)).abs() < 1e-15);
            // two classes at one half each give 1/4, which no point exceeds
            let mut half = vec![0.0; c];
            half[0] = 0.5;
            half[1] = 0.5;
            assert!((softmax_jacobian_frobenius_sq(&half) - 0.25).abs() < 1e-15);
            assert!((b.supremum - 0.25).abs() < 1e-9, "C={c}: {}", b.supremum);
        }
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&[0.9, 0.8, -2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(crate::linalg::max_abs_diff(&p, &[0.55, 0.45, 0.0]) < 1e-15);
    }

    fn empirical_max_ratio(net: &Network, pairs: usize, seed: u64) -> f64 {
        let mut g = rng::seeded(seed);
        let d = net.input_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let a = rng::uniform_vec(&mut g, d, -3.0, 3.0);
            let b = rng::uniform_vec(&mut g, d, -3.0, 3.0);
            let fa = net.logits(&a).unwrap();
            let fb = net.logits(&b).unwrap();
            worst = worst.max(norm_sq(&crate::linalg::sub(&fa, &fb)) / norm_sq(&crate::linalg::sub(&a, &b)));
        }
        worst
    }

    #[test]
    fn bounds_dominate_sampled_ratios() {
        let nets = [
            Network::mlp(&[2, 45, 3, 4], ActivationKind::Relu, InitOptions::default(), 1).unwrap(),
            Network::cnn(Shape3::new(1, 8, 8).unwrap(), &[(2, 3), (3, 3)], 3, ActivationKind::Relu, 2).unwrap(),
            Network::resnet(4, 3, 3, ActivationKind::Abs, 3).unwrap(),
        ];
        for net in &nets {
            let rep = network_lipschitz(net).unwrap();
            let prod: f64 = rep.operators.iter().map(|o| o.used).product();
            assert_eq!(rep.kappa, prod);
            assert!(rep.operators.iter().all(|o| o.used >= 0.0 && o.maso >= 0.0));
            let ratio = empirical_max_ratio(net, 2000, 4);
            assert!(ratio <= rep.kappa, "{ratio} > {}", rep.kappa);
            assert!(ratio <= rep.level_product);
        }
    }

    #[test]
    fn table_rows() {
        let net = Network::mlp(&[2, 5, 3], ActivationKind::Relu, InitOptions::default(), 1).unwrap();
        let t = operator_lipschitz_table(&net).unwrap();
        let names: Vec<&str> = t.iter().map(|o| o.operator.as_str()).collect();
        assert_eq!(names, ["dense", "relu", "final_dense"]);
        assert_eq!(t[1].closed_form, Some(25.0));
        assert_eq!(t[1].maso, 5.0);
        assert_eq!(t[1].used, 5.0);
        assert!(t[0].used <= t[0].maso);
    }
}
