//! Width trend of two-layer ReLU approximators and 1-D max-affine fits.

use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::maso::{ActivationKind, MasoParams};
use crate::network::init::InitOptions;
use crate::network::Network;
use crate::rng;
use crate::train::{train, LossKind, Targets, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalityConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Inputs are drawn uniformly from `[lo, hi]^D`.
    pub domain: (f64, f64),
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for UniversalityConfig {
    fn default() -> Self {
        UniversalityConfig {
            train_samples: 512,
            test_samples: 1024,
            domain: (-1.0, 1.0),
            seeds: (0..5).collect(),
            train: TrainConfig {
                lr: 1e-2,
                epochs: 300,
                batch_size: 64,
                loss: LossKind::Mse,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthResult {
    pub width: usize,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
    pub median_test_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalityResult {
    pub widths: Vec<WidthResult>,
    /// Median held-out error of the widest net is below that of the narrowest.
    pub widest_beats_narrowest: bool,
}

pub type Target<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mse(net: &Network, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        s += crate::train::squared_error(&net.logits(x)?, y);
    }
    Ok(s / xs.len() as f64)
}

/// Trains `D → width → C` ReLU nets (one MASO level plus a linear read-out)
/// on samples of `target` for every width and seed.
pub fn universality_experiment(
    target: Target<'_>,
    input_dim: usize,
    widths: &[usize],
    cfg: &UniversalityConfig,
) -> Result<UniversalityResult> {
    if widths.is_empty() || widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MasoError::InvalidParam("widths must be nonempty and strictly ascending".into()));
    }
    if cfg.seeds.is_empty() || cfg.train_samples == 0 || cfg.test_samples == 0 {
        return Err(MasoError::InvalidParam("need at least one seed and one sample".into()));
    }
    let (lo, hi) = cfg.domain;
    let mut out = Vec::with_capacity(widths.len());
    for &width in widths {
        let mut train_mse = Vec::new();
        let mut test_mse = Vec::new();
        for &seed in &cfg.seeds {
            let mut g = rng::seeded(seed);
            let xs: Vec<Vec<f64>> = (0..cfg.train_samples).map(|_| rng::uniform_vec(&mut g, input_dim, lo, hi)).collect();
            let test: Vec<Vec<f64>> = (0..cfg.test_samples).map(|_| rng::uniform_vec(&mut g, input_dim, lo, hi)).collect();
            let ys: Vec<Vec<f64>> = xs.iter().map(|x| target(x)).collect();
            let test_ys: Vec<Vec<f64>> = test.iter().map(|x| target(x)).collect();
            let c = ys[0].len();
            let mut net = Network::mlp(&[input_dim, width, c], ActivationKind::Relu, InitOptions::default(), seed)?;
            let tc = TrainConfig {
                seed,
                loss: LossKind::Mse,
                ..cfg.train.clone()
            };
            train(&mut net, &xs, &Targets::Values(ys.clone()), &tc)?;
            train_mse.push(mse(&net, &xs, &ys)?);
            test_mse.push(mse(&net, &test, &test_ys)?);
        }
        out.push(WidthResult {
            width,
            median_test_mse: median(&test_mse),
            train_mse,
            test_mse,
        });
    }
    let widest_beats_narrowest = out.last().unwrap().median_test_mse < out[0].median_test_mse;
    Ok(UniversalityResult {
        widths: out,
        widest_beats_narrowest,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxAffineFit {
    pub params: MasoParams,
    pub rmse: f64,
    pub iterations: usize,
}

fn line_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.is_empty() {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Some((slope, my - slope * mx))
}

/// Least-squares fit of `max_r (a_r x + b_r)` by alternating between
/// assigning samples to their active piece and refitting each piece.
/// Starts from `r` contiguous blocks of the sorted samples.
pub fn fit_max_affine_1d(xs: &[f64], ys: &[f64], r: usize, max_iter: usize) -> Result<MaxAffineFit> {
    crate::error::check_dim("fit targets", xs.len(), ys.len())?;
    if r == 0 || xs.len() < r {
        return Err(MasoError::InvalidParam(format!("cannot fit {r} pieces to {} samples", xs.len())));
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut assign = vec![0; xs.len()];
    for (pos, &i) in idx.iter().enumerate() {
        assign[i] = pos * r / xs.len();
    }
    let mut pieces = vec![(0.0, 0.0); r];
    let eval = |pieces: &[(f64, f64)], x: f64| -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, (a, b)) in pieces.iter().enumerate() {
            let v = a * x + b;
            if v > best.0 {
                best = (v, k);
            }
        }
        best
    };
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        for (k, piece) in pieces.iter_mut().enumerate() {
            let pts: Vec<(f64, f64)> = (0..xs.len()).filter(|i| assign[*i] == k).map(|i| (xs[i], ys[i])).collect();
            if let Some(fit) = line_fit(&pts) {
                *piece = fit;
            }
        }
        let next: Vec<usize> = xs.iter().map(|x| eval(&pieces, *x).1).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (eval(&pieces, *x).0 - y).powi(2)).sum();
    let params = MasoParams::new(
        1,
        r,
        1,
        pieces.iter().map(|p| p.0).collect(),
        pieces.iter().map(|p| p.1).collect(),
    )?;
    Ok(MaxAffineFit {
        params,
        rmse: (sse / xs.len() as f64).sqrt(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn linear_target_is_learned_at_any_width() {
        let f = |x: &[f64]| vec![0.5 * x[0] - x[1] + 0.2];
        let cfg = UniversalityConfig {
            seeds: vec![0],
            train_samples: 256,
            test_samples: 256,
            train: TrainConfig {
                epochs: 150,
                batch_size: 32,
                loss: LossKind::Mse,
                ..TrainConfig::default()
            },
            ..UniversalityConfig::default()
        };
        let r = universality_experiment(&f, 2, &[4, 16], &cfg).unwrap();
        for w in &r.widths {
            assert!(w.median_test_mse < 1e-3, "width {}: {}", w.width, w.median_test_mse);
        }
    }

    #[test]
    fn widths_must_ascend() {
        let f = |x: &[f64]| vec![x[0]];
        let cfg = UniversalityConfig::default();
        assert!(universality_experiment(&f, 1, &[8, 8], &cfg).is_err());
        assert!(universality_experiment(&f, 1, &[], &cfg).is_err());
    }

    #[test]
    fn max_affine_fit_improves_with_pieces() {
        let xs: Vec<f64> = (0..401).map(|i| -1.0 + i as f64 / 200.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let mut last = f64::INFINITY;
        for r in [1, 2, 4, 8, 16] {
            let fit = fit_max_affine_1d(&xs, &ys, r, 100).unwrap();
            assert!(fit.rmse < last, "R={r}: {} !< {last}", fit.rmse);
            last = fit.rmse;
            // the fitted spline is convex: its MASO evaluation is the fit
            let (v, _) = fit.params.eval(&[0.3]).unwrap();
            assert!((v[0] - 0.09).abs() < 0.5);
        }
        assert!(last < 5e-3);
    }

    #[test]
    fn exact_on_max_affine_target() {
        let xs: Vec<f64> = (0..100).map(|i| -2.0 + i as f64 * 0.04).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x - 1.0).max(-x)).collect();
        let fit = fit_max_affine_1d(&xs, &ys, 2, 50).unwrap();
        assert!(fit.rmse < 1e-12, "{}", fit.rmse);
    }
}
