//! Posterior summaries pooled over chains.

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use super::chain::{ChainTrace, MoveStats};
use super::config::MoveKind;
use crate::error::{usage, Result};

/// Quantiles of `‖f − f_0‖_n` over kept iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorQuantiles {
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRate {
    pub kind: MoveKind,
    pub proposed: usize,
    pub accepted: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub chains: usize,
    pub kept: usize,
    /// Fraction of kept states with `j ∈ S`.
    pub inclusion: Vec<f64>,
    /// `K` (single tree) or `ΣK^t` histogram as `(value, count)`.
    pub leaves_hist: Vec<(usize, usize)>,
    pub trees_hist: Vec<(usize, usize)>,
    pub mean_fit: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorQuantiles>,
    pub moves: Vec<MoveRate>,
}

impl PosteriorSummary {
    /// Posterior mass of `{K > threshold}` (or `ΣK^t` for forests).
    pub fn leaves_mass_above(&self, threshold: f64) -> f64 {
        let above: usize = self.leaves_hist.iter().filter(|&&(k, _)| k as f64 > threshold).map(|&(_, c)| c).sum();
        above as f64 / self.kept as f64
    }
}

fn merge_hist(into: &mut Vec<(usize, usize)>, from: &[(usize, usize)]) {
    for &(k, c) in from {
        match into.binary_search_by_key(&k, |&(x, _)| x) {
            Ok(i) => into[i].1 += c,
            Err(i) => into.insert(i, (k, c)),
        }
    }
}

/// Pools the kept iterations of all `traces`.
pub fn posterior_summaries(traces: &[ChainTrace]) -> Result<PosteriorSummary> {
    let kept: usize = traces.iter().map(|t| t.kept).sum();
    if kept == 0 {
        return usage("no kept iterations to summarize");
    }
    let p = traces[0].inclusion_counts.len();
    let n = traces[0].fit_sum.len();
    let mut incl = vec![0usize; p];
    let mut fit = vec![0.0; n];
    let mut leaves_hist = Vec::new();
    let mut trees_hist = Vec::new();
    let mut moves: Vec<MoveStats> = traces[0].moves.iter().map(|m| MoveStats { proposed: 0, accepted: 0, ..*m }).collect();
    let mut errors = Vec::new();
    for t in traces {
        if t.inclusion_counts.len() != p || t.fit_sum.len() != n {
            return usage("traces come from different datasets");
        }
        for (a, b) in incl.iter_mut().zip(&t.inclusion_counts) {
            *a += b;
        }
        for (a, b) in fit.iter_mut().zip(&t.fit_sum) {
            *a += b;
        }
        merge_hist(&mut leaves_hist, &t.leaves_hist);
        merge_hist(&mut trees_hist, &t.trees_hist);
        for (a, b) in moves.iter_mut().zip(&t.moves) {
            a.proposed += b.proposed;
            a.accepted += b.accepted;
        }
        errors.extend(t.records.iter().filter_map(|r| r.error));
    }
    let error = (!errors.is_empty()).then(|| {
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let mut d = Data::new(errors);
        ErrorQuantiles {
            q05: d.quantile(0.05),
            q25: d.quantile(0.25),
            median: d.median(),
            q75: d.quantile(0.75),
            q95: d.quantile(0.95),
            mean,
        }
    });
    Ok(PosteriorSummary {
        chains: traces.len(),
        kept,
        inclusion: incl.iter().map(|&c| c as f64 / kept as f64).collect(),
        leaves_hist,
        trees_hist,
        mean_fit: fit.iter().map(|s| s / kept as f64).collect(),
        error,
        moves: moves
            .into_iter()
            .map(|m| MoveRate {
                kind: m.kind,
                proposed: m.proposed,
                accepted: m.accepted,
                rate: if m.proposed == 0 { 0.0 } else { m.accepted as f64 / m.proposed as f64 },
            })
            .collect(),
    })
}
