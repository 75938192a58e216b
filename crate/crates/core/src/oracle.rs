//! Independent reference computations used to check the fast paths:
//! numeric quadrature of leaf integrals and goodness-of-fit of sampled
//! state frequencies against an exact posterior.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{usage, Result};
use crate::inference::{ExactPosterior, TraceRecord};

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `ln ∫ Π_i φ(r_i − β; 1) φ(β; v) dβ` by quadrature around the mode.
pub fn leaf_marginal_quadrature(resid: &[f64], v: f64) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_3;
    let n = resid.len() as f64;
    let s: f64 = resid.iter().sum();
    let log_g = |b: f64| -> f64 {
        let lik: f64 = resid.iter().map(|r| -0.5 * LN_2PI - 0.5 * (r - b) * (r - b)).sum();
        lik - 0.5 * (LN_2PI + v.ln()) - b * b / (2.0 * v)
    };
    // the integrand is Gaussian in β; integrate ±14 sd around its mode
    let mode = v * s / (n * v + 1.0);
    let sd = (v / (n * v + 1.0)).sqrt();
    let peak = log_g(mode);
    let g = |b: f64| (log_g(b) - peak).exp();
    let area = adaptive_simpson(&g, mode - 14.0 * sd, mode + 14.0 * sd, 1e-13 * sd, 50);
    peak + area.ln()
}

/// Pearson goodness-of-fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub samples: usize,
    /// Bins after merging sparse ones.
    pub bins: usize,
}

/// Pearson χ² test of `counts` against `probs`. Bins are taken in order of
/// decreasing probability and merged until each has expected count at least
/// `min_expected`; a leftover sparse tail joins the last bin.
pub fn chi_square_gof(counts: &[usize], probs: &[f64], min_expected: f64) -> Result<ChiSquareTest> {
    if counts.len() != probs.len() || counts.is_empty() {
        return usage("counts and probabilities must be nonempty and the same length");
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return usage("no samples");
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut e, mut o) = (0.0, 0.0);
    for i in order {
        e += probs[i] * total as f64;
        o += counts[i] as f64;
        if e >= min_expected {
            bins.push((o, e));
            e = 0.0;
            o = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    if bins.len() < 2 {
        return Ok(ChiSquareTest { statistic: 0.0, dof: 0, p_value: 1.0, samples: total, bins: bins.len() });
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| crate::Error::Check(e.to_string()))?;
    Ok(ChiSquareTest { statistic, dof, p_value: dist.sf(statistic), samples: total, bins: bins.len() })
}

/// Compares single-tree trace records (with partitions) to an exact
/// posterior, using every `thin`-th record. A sampled state missing from the
/// enumeration is an error: it means the chain left the support.
pub fn state_frequency_test(records: &[TraceRecord], exact: &ExactPosterior, thin: usize) -> Result<ChiSquareTest> {
    let mut counts = vec![0usize; exact.states.len()];
    for r in records.iter().step_by(thin.max(1)) {
        let cells = r.partition.as_ref().ok_or_else(|| crate::Error::Usage("records lack partitions".into()))?;
        let i = exact
            .find(&r.subset, cells)
            .ok_or_else(|| crate::Error::Check(format!("sampled state S = {:?}, cells {:?} is not in the enumeration", r.subset, cells)))?;
        counts[i] += 1;
    }
    let probs: Vec<f64> = exact.states.iter().map(|s| s.probability).collect();
    chi_square_gof(&counts, &probs, 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::leaf_log_marginal;

    #[test]
    fn simpson_integrates_polynomials_and_gaussians() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12, 30);
        assert!((v - 4.0).abs() < 1e-12);
        let g = adaptive_simpson(&|x: f64| (-0.5 * x * x).exp(), -12.0, 12.0, 1e-14, 50);
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-11);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for (r, v) in [(vec![0.0], 1.0), (vec![0.3, -1.2, 2.0], 0.5), (vec![5.0; 7], 0.1)] {
            assert!((leaf_marginal_quadrature(&r, v) - leaf_log_marginal(&r, v)).abs() < 1e-9);
        }
    }

    #[test]
    fn chi_square_merges_sparse_bins() {
        let t = chi_square_gof(&[50, 30, 19, 1], &[0.5, 0.3, 0.19, 0.01], 5.0).unwrap();
        assert_eq!(t.bins, 3);
        assert!(t.statistic < 1e-12 && (t.p_value - 1.0).abs() < 1e-9);
        let bad = chi_square_gof(&[90, 5, 5, 0], &[0.5, 0.3, 0.19, 0.01], 5.0).unwrap();
        assert!(bad.p_value < 1e-6);
    }
}
