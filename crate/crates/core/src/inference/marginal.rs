use crate::data::Dataset;
use crate::error::{usage, Result};
use crate::partition::{cell_measures, TreePartition};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln ∫ Π_i φ(r_i − β; 1) φ(β; v) dβ` for the residuals of one leaf.
pub fn leaf_log_marginal(resid: &[f64], v: f64) -> f64 {
    let n = resid.len() as f64;
    let s: f64 = resid.iter().sum();
    let ss: f64 = resid.iter().map(|r| r * r).sum();
    -0.5 * n * LN_2PI - 0.5 * (n * v + 1.0).ln() - 0.5 * ss + v * s * s / (2.0 * (n * v + 1.0))
}

/// The part of [`leaf_log_marginal`] that changes when points move between
/// leaves; the `−½Σr²` and `2π` terms cancel in any ratio over one dataset.
#[inline]
pub(crate) fn leaf_log_marginal_reduced(count: usize, sum: f64, v: f64) -> f64 {
    let nv1 = count as f64 * v + 1.0;
    -0.5 * nv1.ln() + v * sum * sum / (2.0 * nv1)
}

/// Integrated likelihood of `resid` under `tree` with iid `N(0, v)` steps.
pub fn log_marginal_likelihood_tree(tree: &TreePartition, data: &Dataset, resid: &[f64], v: f64) -> Result<f64> {
    if resid.len() != data.n() {
        return usage(format!("{} residuals for n = {}", resid.len(), data.n()));
    }
    let stats = cell_measures(tree, data);
    if let Some(k) = stats.counts.iter().position(|&c| c == 0) {
        return usage(format!("leaf {k} is empty"));
    }
    Ok(stats
        .members
        .iter()
        .map(|m| {
            let r: Vec<f64> = m.iter().map(|&i| resid[i]).collect();
            leaf_log_marginal(&r, v)
        })
        .sum())
}

/// Mean and variance of the Gaussian conditional of one leaf's step.
#[inline]
pub(crate) fn step_conditional(count: usize, sum: f64, v: f64) -> (f64, f64) {
    let nv1 = count as f64 * v + 1.0;
    (v * sum / nv1, v / nv1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_at_zero() {
        let v = leaf_log_marginal(&[0.0], 1.0);
        assert!((v - (-0.5 * LN_2PI - 0.5 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn reduced_differences_match_full() {
        let r = [0.3, -1.2, 2.0, 0.7];
        let full = leaf_log_marginal(&r, 0.5) - leaf_log_marginal(&r[..2], 0.5) - leaf_log_marginal(&r[2..], 0.5);
        let red = leaf_log_marginal_reduced(4, r.iter().sum(), 0.5)
            - leaf_log_marginal_reduced(2, r[0] + r[1], 0.5)
            - leaf_log_marginal_reduced(2, r[2] + r[3], 0.5);
        assert!((full - red).abs() < 1e-12);
    }
}
