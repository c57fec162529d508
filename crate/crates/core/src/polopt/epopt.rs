//! Worst-case trajectory selection for CVaR training.

use crate::error::{Error, Result};

/// Number of trajectories kept out of `n` for level `epsilon`: ⌈εn⌉.
pub fn cvar_count(n: usize, epsilon: f64) -> usize {
    // Guards against products like 0.2 * 10 landing just above an integer.
    let k = (epsilon * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Indices of the ⌈εN⌉ lowest returns, ties broken by lower index, in
/// ascending index order.
pub fn epopt_filter(returns: &[f64], epsilon: f64) -> Result<Vec<usize>> {
    if returns.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "CVaR epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if returns.iter().any(|r| r.is_nan()) {
        return Err(Error::NonFinite("trajectory return"));
    }
    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]).then(a.cmp(&b)));
    order.truncate(cvar_count(returns.len(), epsilon));
    order.sort_unstable();
    Ok(order)
}
