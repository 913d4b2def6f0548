//! Statistics of the per-input class templates `W A[x]` and the bias ablation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::linalg::{argmax, dot, norm, Matrix};
use crate::network::Network;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside are clamped into the
    /// end bins.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let i = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts }
    }

    /// Bins spanning the range of `a` and `b` together, so both share edges.
    pub fn paired(a: &[f64], b: &[f64], bins: usize) -> (Self, Self) {
        let all = a.iter().chain(b);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi.max(lo + 1e-12)) } else { (0.0, 1.0) };
        (Self::new(a, lo, hi, bins), Self::new(b, lo, hi, bins))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

pub const HISTOGRAM_BINS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    /// `⟨template_y, x⟩` for the true class.
    pub inner_correct: Histogram,
    /// `⟨template_c, x⟩` for every other class.
    pub inner_incorrect: Histogram,
    /// Cosine between the true-class template and each other template.
    pub cosine: Histogram,
    pub mean_inner_correct: f64,
    pub mean_inner_incorrect: f64,
    pub mean_cosine: f64,
    /// Mean `|cos|` between distinct rows of the final classifier.
    pub final_row_cosine: f64,
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let d = norm(u) * norm(v);
    if d == 0.0 {
        0.0
    } else {
        (dot(u, v) / d).clamp(-1.0, 1.0)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn template_stats(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<TemplateStats> {
    check_dim("labels", inputs.len(), labels.len())?;
    let per: Vec<(f64, Vec<f64>, Vec<f64>)> = inputs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| -> Result<_> {
            let t = net.forward(x)?;
            let a = net.decompose(&t, None)?.a;
            check_dim("label", a.rows(), a.rows().max(y + 1))?;
            let mut wrong = Vec::with_capacity(a.rows());
            let mut cos = Vec::with_capacity(a.rows());
            for c in (0..a.rows()).filter(|c| *c != y) {
                wrong.push(dot(a.row(c), x));
                cos.push(cosine(a.row(y), a.row(c)));
            }
            Ok((dot(a.row(y), x), wrong, cos))
        })
        .collect::<Result<_>>()?;
    let correct: Vec<f64> = per.iter().map(|p| p.0).collect();
    let incorrect: Vec<f64> = per.iter().flat_map(|p| p.1.iter().copied()).collect();
    let cosines: Vec<f64> = per.iter().flat_map(|p| p.2.iter().copied()).collect();
    let (hc, hi) = Histogram::paired(&correct, &incorrect, HISTOGRAM_BINS);
    Ok(TemplateStats {
        inner_correct: hc,
        inner_incorrect: hi,
        cosine: Histogram::new(&cosines, -1.0, 1.0, HISTOGRAM_BINS),
        mean_inner_correct: mean(&correct),
        mean_inner_incorrect: mean(&incorrect),
        mean_cosine: mean(&cosines),
        final_row_cosine: final_row_cosine(net.w_final()),
    })
}

fn final_row_cosine(w: &Matrix) -> f64 {
    crate::train::offdiag_cosine_magnitude(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasAblation {
    /// Accuracy of `argmax (A[x] x + b[x])`.
    pub full: f64,
    /// Accuracy of `argmax A[x] x`.
    pub template_only: f64,
}

pub fn bias_ablation_eval(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<BiasAblation> {
    check_dim("labels", inputs.len(), labels.len())?;
    let hits: Vec<(bool, bool)> = inputs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| -> Result<_> {
            let t = net.forward(x)?;
            let d = net.decompose(&t, None)?;
            let full = d.apply(x)?;
            let tmpl = d.a.gemv(x)?;
            Ok((argmax(&full) == y, argmax(&tmpl) == y))
        })
        .collect::<Result<_>>()?;
    let n = inputs.len().max(1) as f64;
    Ok(BiasAblation {
        full: hits.iter().filter(|h| h.0).count() as f64 / n,
        template_only: hits.iter().filter(|h| h.1).count() as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::collinear::collinear_templates;
    use crate::linalg::Shape3;
    use crate::maso::ActivationKind;
    use crate::network::init::InitOptions;
    use crate::network::LayerSpec;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn histogram_binning() {
        let h = Histogram::new(&[0.0, 0.5, 0.99, 1.0, -4.0, 7.0], 0.0, 1.0, 2);
        assert_eq!(h.counts, vec![2, 4]);
        assert_eq!(h.bin_edges(), vec![0.0, 0.5, 1.0]);
        let (a, b) = Histogram::paired(&[], &[], 3);
        assert_eq!(a.total() + b.total(), 0);
    }

    #[test]
    fn collinear_templates_are_antipodal() {
        let x = [0.6, 0.8];
        let a = collinear_templates(&x, 2, 4, 1.0);
        for c in [0, 1, 3] {
            assert!((cosine(a.row(2), a.row(c)) + 1.0).abs() < 1e-15);
        }
    }

    /// Linear net whose templates are the collinear rows for a fixed input.
    #[test]
    fn stats_on_linear_net() {
        let x = vec![0.6, 0.8];
        let w = collinear_templates(&x, 0, 3, 1.0);
        let net = Network::new(Shape3::flat(2), vec![], w, vec![0.0; 3]).unwrap();
        let s = template_stats(&net, &[x.clone()], &[0]).unwrap();
        assert!((s.mean_cosine + 1.0).abs() < 1e-12);
        assert!(s.mean_inner_correct > 0.0 && s.mean_inner_incorrect < 0.0);
        assert_eq!(s.cosine.counts[0], 2);
    }

    #[test]
    fn bias_free_net_has_equal_accuracies() {
        let mut net = Network::mlp(&[2, 8, 3], ActivationKind::Relu, InitOptions { batchnorm: false, bias_scale: 0.0 }, 5).unwrap();
        let w = net.w_final().clone();
        net.set_final(w, vec![0.0; 3]).unwrap();
        let mut g = rng::seeded(1);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| rng::uniform_vec(&mut g, 2, -2.0, 2.0)).collect();
        let ys: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let r = bias_ablation_eval(&net, &xs, &ys).unwrap();
        assert_eq!(r.full, r.template_only);
        assert!((0.0..=1.0).contains(&r.full));
        for l in net.layers() {
            if let LayerSpec::Dense { bias, .. } = l {
                assert!(bias.iter().all(|b| *b == 0.0));
            }
        }
    }

    proptest! {
        #[test]
        fn prediction_invariant_to_common_bias_shift(seed in 0u64..50, shift in -100.0f64..100.0) {
            let mut net = Network::mlp(&[3, 6, 4], ActivationKind::Relu, InitOptions::default(), seed).unwrap();
            let x = rng::normal_vec(&mut rng::seeded(seed + 1), 3, 1.0);
            let before = net.predict(&x).unwrap();
            let b: Vec<f64> = net.b_final().iter().map(|b| b + shift).collect();
            let w = net.w_final().clone();
            net.set_final(w, b).unwrap();
            prop_assert_eq!(before, net.predict(&x).unwrap());
        }
    }
}
