//! Globally optimal template matching by exhaustive enumeration.

use num_bigint::BigUint;

use crate::error::{MasoError, Result};
use crate::linalg::dot;
use crate::maso::MasoParams;

use super::{MasoStack, Network};

/// Largest number of joint region configurations enumerated.
pub const BRUTE_FORCE_BUDGET: u64 = 1 << 20;

/// Number of joint configurations `Π_ℓ R_ℓ^{K_ℓ}`.
pub(crate) fn configuration_count(stack: &MasoStack) -> BigUint {
    stack
        .levels
        .iter()
        .fold(BigUint::from(1u32), |acc, q| acc * BigUint::from(q.regions()).pow(q.units() as u32))
}

/// For every output unit, the maximum over all joint per-unit region choices
/// of the fully expanded affine value. A forward pass picks one such
/// configuration greedily, so the result is never below the logits.
pub fn brute_force_match(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let stack = net.layer_masos()?;
    let count = configuration_count(&stack);
    if count > BigUint::from(BRUTE_FORCE_BUDGET) {
        return Err(MasoError::BudgetExceeded {
            needed: count.to_string(),
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    crate::error::check_dim("network input", stack.input_dim(), x.len())?;
    let mut best = vec![f64::NEG_INFINITY; stack.w_final.rows()];
    enumerate(&stack, 0, x, &mut best)?;
    Ok(best)
}

fn responses(q: &MasoParams, z: &[f64]) -> Vec<Vec<f64>> {
    (0..q.units())
        .map(|k| (0..q.regions()).map(|r| dot(q.slope(k, r), z) + q.offset(k, r)).collect())
        .collect()
}

fn enumerate(stack: &MasoStack, level: usize, z: &[f64], best: &mut [f64]) -> Result<()> {
    if level == stack.levels.len() {
        let y = stack.w_final.gemv(z)?;
        for ((b, y), c) in best.iter_mut().zip(&y).zip(&stack.b_final) {
            *b = b.max(y + c);
        }
        return Ok(());
    }
    let q = &stack.levels[level];
    let resp = responses(q, z);
    let mut code = vec![0usize; q.units()];
    let mut next: Vec<f64> = resp.iter().map(|r| r[0]).collect();
    loop {
        enumerate(stack, level + 1, &next, best)?;
        // odometer increment
        let mut k = 0;
        loop {
            if k == code.len() {
                return Ok(());
            }
            code[k] += 1;
            if code[k] < q.regions() {
                next[k] = resp[k][code[k]];
                break;
            }
            code[k] = 0;
            next[k] = resp[k][0];
            k += 1;
        }
    }
}
