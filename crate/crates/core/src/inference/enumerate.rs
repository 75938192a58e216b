//! Exact single-tree posterior on tiny instances, the ground truth the
//! samplers are tested against.
//!
//! States are `(S, data partition)`. A partition's prior weight is its number
//! of valid split sequences over `S` times `π(q) π(S|q) π(K) / Δ(n, q, K)`,
//! the same sequence-weighted measure the chains target.

use serde::{Deserialize, Serialize};

use super::marginal::log_marginal_likelihood_tree;
use crate::data::Dataset;
use crate::error::{usage, Result};
use crate::partition::{enumerate_valid_trees, log_partitioning_number, TreePartition};
use crate::priors::{PriorConfig, PriorModel};

/// Limits guarding exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumerationCaps {
    pub max_n: usize,
    pub max_p: usize,
    pub max_k: usize,
    /// Split sequences visited per `(S, K)`.
    pub max_sequences: u64,
}

impl Default for EnumerationCaps {
    fn default() -> Self {
        Self { max_n: 12, max_p: 3, max_k: 5, max_sequences: 1_000_000 }
    }
}

/// One posterior state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactState {
    pub subset: Vec<usize>,
    pub cells: Vec<Vec<usize>>,
    /// A tree inducing the partition.
    pub tree: TreePartition,
    pub multiplicity: u64,
    /// Unnormalized log posterior.
    pub log_weight: f64,
    pub probability: f64,
}

impl ExactState {
    pub fn leaves(&self) -> usize {
        self.cells.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPosterior {
    pub p: usize,
    /// Sorted by `(subset, cells)`.
    pub states: Vec<ExactState>,
}

impl ExactPosterior {
    /// `Π(K = k | Y)` for `k = 0..=K_max` (index 0 is always 0).
    pub fn k_marginal(&self) -> Vec<f64> {
        let k_max = self.states.iter().map(ExactState::leaves).max().unwrap_or(1);
        let mut out = vec![0.0; k_max + 1];
        for s in &self.states {
            out[s.leaves()] += s.probability;
        }
        out
    }

    /// `Π(j ∈ S | Y)` per variable.
    pub fn inclusion(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for s in &self.states {
            for &j in &s.subset {
                out[j] += s.probability;
            }
        }
        out
    }

    /// Highest-probability state (first in order on ties).
    pub fn mode(&self) -> &ExactState {
        self.states.iter().fold(&self.states[0], |best, s| if s.log_weight > best.log_weight { s } else { best })
    }

    /// Index of the state `(subset, cells)`, if it has positive probability.
    pub fn find(&self, subset: &[usize], cells: &[Vec<usize>]) -> Option<usize> {
        self.states
            .binary_search_by(|s| (s.subset.as_slice(), s.cells.as_slice()).cmp(&(subset, cells)))
            .ok()
    }
}

/// Exact posterior over `(S, partition)` for a single tree with unit step variance.
pub fn exact_posterior_enumeration(data: &Dataset, prior: &PriorConfig, caps: EnumerationCaps) -> Result<ExactPosterior> {
    let (n, p) = (data.n(), data.p());
    let model = PriorModel::new(prior.clone(), n, p)?;
    if n > caps.max_n || p > caps.max_p || model.k_max > caps.max_k {
        return usage(format!(
            "instance too large to enumerate: n = {n}, p = {p}, K_max = {} (caps {}, {}, {})",
            model.k_max, caps.max_n, caps.max_p, caps.max_k
        ));
    }
    let v = model.step_variance(1);
    let mut states = Vec::new();
    for mask in 0u32..(1 << p) {
        let s: Vec<usize> = (0..p).filter(|&j| mask >> j & 1 == 1).collect();
        let q = s.len();
        let ks = if q == 0 { 1..=1 } else { (q + 1)..=model.k_max };
        for k in ks {
            let base = model.log_q(q) + model.log_subset(q) + model.log_k(k, 1) - log_partitioning_number(n, q, k);
            if base == f64::NEG_INFINITY {
                continue;
            }
            let en = enumerate_valid_trees(data, &s, k, model.cfg.cbar, caps.max_sequences)?;
            for part in en.partitions {
                let ml = log_marginal_likelihood_tree(&part.tree, data, data.y(), v)?;
                states.push(ExactState {
                    subset: s.clone(),
                    cells: part.cells,
                    tree: part.tree,
                    multiplicity: part.multiplicity,
                    log_weight: base + (part.multiplicity as f64).ln() + ml,
                    probability: 0.0,
                });
            }
        }
    }
    if states.is_empty() {
        return usage("no valid tree");
    }
    let m = states.iter().map(|s| s.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = states.iter().map(|s| (s.log_weight - m).exp()).sum();
    for s in &mut states {
        s.probability = (s.log_weight - m).exp() / z;
    }
    states.sort_by(|a, b| (&a.subset, &a.cells).cmp(&(&b.subset, &b.cells)));
    Ok(ExactPosterior { p, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_line_normalizes() {
        let d = Dataset::new(4, 1, vec![0.1, 0.4, 0.6, 0.9], vec![0.2, -0.3, 1.1, 0.8]).unwrap();
        let post = exact_posterior_enumeration(&d, &PriorConfig::default(), EnumerationCaps::default()).unwrap();
        let total: f64 = post.states.iter().map(|s| s.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // K_max = 4 on one axis: 1 + 3 + 3 + 1 partitions
        assert_eq!(post.states.len(), 8);
        assert_eq!(post.k_marginal().len(), 5);
    }

    #[test]
    fn flat_data_posterior_is_prior() {
        let d = Dataset::new(5, 1, vec![0.1, 0.3, 0.5, 0.7, 0.9], vec![0.0; 5]).unwrap();
        let cfg = PriorConfig::default();
        let post = exact_posterior_enumeration(&d, &cfg, EnumerationCaps::default()).unwrap();
        let model = PriorModel::new(cfg, 5, 1).unwrap();
        // at fixed K the likelihood depends only on leaf sizes; with y = 0 the
        // quadratic term vanishes and the ratio is the prior ratio times the
        // ratio of Π(n_k + 1)^{-1/2}
        for a in &post.states {
            for b in &post.states {
                if a.leaves() != b.leaves() {
                    continue;
                }
                let size_term = |s: &ExactState| -> f64 { s.cells.iter().map(|c| -0.5 * (c.len() as f64 + 1.0).ln()).sum() };
                let lhs = (a.probability / b.probability).ln();
                let rhs = (a.multiplicity as f64 / b.multiplicity as f64).ln() + size_term(a) - size_term(b);
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
        assert!(model.k_max >= 2);
    }
}
