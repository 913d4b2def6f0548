//! Observational probes: partial-product norms and output convexity.

use crate::error::Result;
use crate::rng;

use super::Network;

/// Frobenius norm of the input-to-level-ℓ matrix `A^{(1→ℓ)}[x]` for every
/// level ℓ.
pub fn depth_matrix_norm(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let trace = net.forward(x)?;
    (1..=net.num_levels())
        .map(|l| Ok(net.decompose(&trace, Some(l))?.a.frobenius()))
        .collect()
}

/// Outcome of a randomized midpoint-convexity test.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ConvexityReport {
    pub pairs: usize,
    /// Number of (pair, output) combinations violating convexity by more
    /// than the slack.
    pub violations: usize,
    /// Largest `f(mid) − (f(x₁) + f(x₂))/2` seen.
    pub worst_excess: f64,
}

pub const CONVEXITY_SLACK: f64 = 1e-9;

/// Checks `f((x₁+x₂)/2) ≤ (f(x₁)+f(x₂))/2` per output on random pairs drawn
/// uniformly from `[−3, 3]^D`.
pub fn check_output_convexity(net: &Network, n_pairs: usize, seed: u64) -> Result<ConvexityReport> {
    let mut g = rng::seeded(seed);
    let d = net.input_dim();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_pairs {
        let x1 = rng::uniform_vec(&mut g, d, -3.0, 3.0);
        let x2 = rng::uniform_vec(&mut g, d, -3.0, 3.0);
        let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (y1, y2, ym) = (net.logits(&x1)?, net.logits(&x2)?, net.logits(&mid)?);
        for k in 0..ym.len() {
            let excess = ym[k] - 0.5 * (y1[k] + y2[k]);
            worst = worst.max(excess);
            if excess > CONVEXITY_SLACK {
                violations += 1;
            }
        }
    }
    Ok(ConvexityReport {
        pairs: n_pairs,
        violations,
        worst_excess: worst,
    })
}
