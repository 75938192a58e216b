//! Single-tree and forest chains, their traces, and multi-chain runs.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ChainConfig, MoveKind, MoveProbs};
use super::kernel::{tree_step, TreeCtx};
use super::marginal::{leaf_log_marginal, step_conditional};
use super::worktree::WorkTree;
use crate::data::{empirical_norm, Dataset};
use crate::ensemble::Ensemble;
use crate::error::{usage, Error, Result};
use crate::partition::{canonical_cells, log_partitioning_number, min_leaf_size};
use crate::priors::{ModelMode, ModelState, PriorConfig, PriorModel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Summary of one kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Number of trees.
    pub t: usize,
    /// `|S|` (the union over trees in forest modes).
    pub q: usize,
    pub subset: Vec<usize>,
    /// Leaf count of every tree.
    pub leaves: Vec<usize>,
    pub total_leaves: usize,
    /// Unnormalized log posterior: integrated over the steps for a single
    /// tree, joint with the current steps for a forest.
    pub log_post: f64,
    /// `‖f − f_0‖_n` when the truth was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    /// Canonical data partition (the overlay of all trees), when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<Vec<usize>>>,
    /// Fitted values at the design points (when requested).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<Vec<f64>>,
}

/// Proposal and acceptance counts for one move type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub kind: MoveKind,
    pub proposed: usize,
    pub accepted: usize,
}

/// Output of one chain: kept records plus running accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub mode: ModelMode,
    pub seed: u64,
    pub stream: u64,
    pub records: Vec<TraceRecord>,
    /// Kept iterations with `j ∈ S`, per variable.
    pub inclusion_counts: Vec<usize>,
    /// Histogram of `K` (single tree) or `ΣK^t` (forest), as `(value, count)`.
    pub leaves_hist: Vec<(usize, usize)>,
    /// Histogram of the number of trees.
    pub trees_hist: Vec<(usize, usize)>,
    /// Sum of kept fits at the design points.
    pub fit_sum: Vec<f64>,
    pub kept: usize,
    pub moves: Vec<MoveStats>,
    pub final_state: ModelState,
}

impl ChainTrace {
    fn new(mode: ModelMode, seed: u64, stream: u64, n: usize, p: usize, final_state: ModelState) -> Self {
        Self {
            mode,
            seed,
            stream,
            records: Vec::new(),
            inclusion_counts: vec![0; p],
            leaves_hist: Vec::new(),
            trees_hist: Vec::new(),
            fit_sum: vec![0.0; n],
            kept: 0,
            moves: MoveKind::ALL.iter().map(|&kind| MoveStats { kind, proposed: 0, accepted: 0 }).collect(),
            final_state,
        }
    }

    fn count_move(&mut self, kind: MoveKind, accepted: bool) {
        let m = &mut self.moves[MoveKind::ALL.iter().position(|&k| k == kind).expect("listed")];
        m.proposed += 1;
        m.accepted += accepted as usize;
    }

    fn keep(&mut self, rec: TraceRecord, fit: &[f64]) {
        for &j in &rec.subset {
            self.inclusion_counts[j] += 1;
        }
        bump(&mut self.leaves_hist, rec.total_leaves);
        bump(&mut self.trees_hist, rec.t);
        for (s, f) in self.fit_sum.iter_mut().zip(fit) {
            *s += f;
        }
        self.kept += 1;
        self.records.push(rec);
    }

    /// Posterior mean of `f` at the design points.
    pub fn mean_fit(&self) -> Vec<f64> {
        self.fit_sum.iter().map(|s| s / self.kept.max(1) as f64).collect()
    }

    /// One JSON object per kept iteration.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn bump(hist: &mut Vec<(usize, usize)>, key: usize) {
    match hist.binary_search_by_key(&key, |&(k, _)| k) {
        Ok(i) => hist[i].1 += 1,
        Err(i) => hist.insert(i, (key, 1)),
    }
}

#[inline]
fn ln_phi(b: f64, v: f64) -> f64 {
    -0.5 * (LN_2PI + v.ln()) - b * b / (2.0 * v)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

/// Draws every leaf step of `wt` from its conditional given `resid`.
fn sample_betas<R: Rng + ?Sized>(wt: &mut WorkTree, resid: &[f64], v: f64, rng: &mut R) {
    for u in wt.leaves() {
        let m = &wt.members[u];
        let s: f64 = m.iter().map(|&i| resid[i as usize]).sum();
        let (mean, var) = step_conditional(m.len(), s, v);
        wt.beta[u] = mean + var.sqrt() * normal(rng);
    }
}

/// Runs one chain; `truth` enables error tracking. The chain uses stream 0 of
/// the seeded generator.
pub fn run_chain(data: &Dataset, prior: &PriorConfig, cfg: &ChainConfig, truth: Option<&[f64]>) -> Result<ChainTrace> {
    run_stream(data, prior, cfg, truth, 0)
}

/// [`run_chain`] for `ModelMode::Cart`.
pub fn run_cart_chain(data: &Dataset, prior: &PriorConfig, cfg: &ChainConfig, truth: Option<&[f64]>) -> Result<ChainTrace> {
    if cfg.mode.is_forest() {
        return usage("run_cart_chain needs mode = cart");
    }
    run_chain(data, prior, cfg, truth)
}

/// [`run_chain`] for the forest modes.
pub fn run_forest_chain(data: &Dataset, prior: &PriorConfig, cfg: &ChainConfig, truth: Option<&[f64]>) -> Result<ChainTrace> {
    if !cfg.mode.is_forest() {
        return usage("run_forest_chain needs a forest mode");
    }
    run_chain(data, prior, cfg, truth)
}

/// Runs `chains` independent chains in parallel; chain `i` uses stream `i`
/// of the generator seeded with `cfg.seed`, so results do not depend on the
/// number of threads.
pub fn run_chains(
    data: &Dataset,
    prior: &PriorConfig,
    cfg: &ChainConfig,
    truth: Option<&[f64]>,
    chains: usize,
) -> Result<Vec<ChainTrace>> {
    (0..chains as u64).into_par_iter().map(|i| run_stream(data, prior, cfg, truth, i)).collect()
}

fn run_stream(data: &Dataset, prior: &PriorConfig, cfg: &ChainConfig, truth: Option<&[f64]>, stream: u64) -> Result<ChainTrace> {
    cfg.validate()?;
    if data.n() == 0 {
        return usage("empty dataset");
    }
    if let Some(t) = truth {
        if t.len() != data.n() {
            return usage(format!("truth has {} values for n = {}", t.len(), data.n()));
        }
    }
    let model = PriorModel::new(prior.clone(), data.n(), data.p())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    if cfg.mode.is_forest() {
        forest(data, &model, cfg, truth, stream, &mut rng)
    } else {
        cart(data, &model, cfg, truth, stream, &mut rng)
    }
}

fn cart(
    data: &Dataset,
    model: &PriorModel,
    cfg: &ChainConfig,
    truth: Option<&[f64]>,
    stream: u64,
    rng: &mut ChaCha8Rng,
) -> Result<ChainTrace> {
    let (n, p) = (data.n(), data.p());
    let moves = cfg.moves();
    let zeros = vec![0; p];
    let v = model.step_variance(1);
    let ctx = TreeCtx {
        data,
        model,
        moves: &moves,
        shared: false,
        t: 1,
        other_counts: &zeros,
        other_ks: &[],
        v,
        min_size: min_leaf_size(model.cfg.cbar),
    };
    let y = data.y();
    let mut wt = WorkTree::stump(n);
    let placeholder = ModelState { mode: cfg.mode, ensemble: Ensemble::from_trees(vec![wt.to_partition()])? };
    let mut trace = ChainTrace::new(cfg.mode, cfg.seed, stream, n, p, placeholder);
    let mut fit = vec![0.0; n];
    for it in 0..cfg.iterations {
        let (kind, ok) = tree_step(&mut wt, y, &ctx, rng);
        trace.count_move(kind, ok);
        if cfg.keeps(it) {
            sample_betas(&mut wt, y, v, rng);
            fit.iter_mut().for_each(|f| *f = 0.0);
            wt.add_fit(&mut fit, 1.0);
            let leaves = wt.leaves();
            let ml: f64 = leaves
                .iter()
                .map(|&u| {
                    let r: Vec<f64> = wt.members[u].iter().map(|&i| y[i as usize]).collect();
                    leaf_log_marginal(&r, v)
                })
                .sum();
            let counts = wt.axis_counts(p);
            let subset: Vec<usize> = (0..p).filter(|&j| counts[j] > 0).collect();
            let k = leaves.len();
            let rec = TraceRecord {
                iter: it,
                t: 1,
                q: subset.len(),
                subset,
                leaves: vec![k],
                total_leaves: k,
                log_post: ctx.log_struct(&wt) + ml,
                error: truth.map(|t| empirical_norm(&fit, t)).transpose()?,
                partition: cfg.record_partitions.then(|| wt.canonical_cells()),
                fit: cfg.record_fits.then(|| fit.clone()),
            };
            trace.keep(rec, &fit);
        }
    }
    sample_betas(&mut wt, y, v, rng);
    trace.final_state =
        ModelState { mode: cfg.mode, ensemble: Ensemble::new(vec![wt.to_partition()], vec![wt.leaf_betas()])? };
    Ok(trace)
}

/// The current forest as seen by the birth/death moves.
#[derive(Debug, Clone, Copy)]
pub struct ForestView<'a> {
    pub mode: ModelMode,
    /// Leaf count of every tree.
    pub leaf_counts: &'a [usize],
    /// Leaf steps of every tree.
    pub betas: &'a [Vec<f64>],
    /// `y − F` for the current total fit `F`.
    pub resid: &'a [f64],
}

impl ForestView<'_> {
    fn stumps(&self) -> usize {
        self.leaf_counts.iter().filter(|&&k| k == 1).count()
    }
}

/// Log acceptance ratio of inserting a stump with step `beta_new`. Its step
/// is drawn from its prior, so that density is the proposal density.
pub fn birth_log_ratio(model: &PriorModel, moves: &MoveProbs, view: ForestView<'_>, beta_new: f64) -> f64 {
    let t = view.leaf_counts.len();
    let t1 = t + 1;
    if t1 > model.t_max {
        return f64::NEG_INFINITY;
    }
    let (v0, v1) = (model.step_variance(t), model.step_variance(t1));
    let mut d = model.log_t(t1) - model.log_t(t);
    for &k in view.leaf_counts {
        d += model.log_k(k, t1) - model.log_k(k, t);
    }
    d += model.log_k(1, t1);
    if view.mode == ModelMode::ForestPerTreeS {
        d += model.log_q(0) + model.log_subset(0);
    }
    for &b in view.betas.iter().flatten() {
        d += ln_phi(b, v1) - ln_phi(b, v0);
    }
    d += ln_phi(beta_new, v1);
    let sum_r: f64 = view.resid.iter().sum();
    let lik = beta_new * sum_r - 0.5 * view.resid.len() as f64 * beta_new * beta_new;
    let stumps_after = view.stumps() + 1;
    d + lik + (moves.death / stumps_after as f64).ln() - (moves.birth / t1 as f64).ln() - ln_phi(beta_new, v1)
}

/// Log acceptance ratio of deleting tree `dead`, which must be a stump.
pub fn death_log_ratio(model: &PriorModel, moves: &MoveProbs, view: ForestView<'_>, dead: usize) -> f64 {
    let t = view.leaf_counts.len();
    if t <= 1 || view.leaf_counts[dead] != 1 {
        return f64::NEG_INFINITY;
    }
    let t0 = t - 1;
    let (v, v0) = (model.step_variance(t), model.step_variance(t0));
    let bd = view.betas[dead][0];
    let mut d = model.log_t(t0) - model.log_t(t);
    for (s, &k) in view.leaf_counts.iter().enumerate() {
        if s != dead {
            d += model.log_k(k, t0) - model.log_k(k, t);
        }
    }
    d -= model.log_k(1, t);
    if view.mode == ModelMode::ForestPerTreeS {
        d -= model.log_q(0) + model.log_subset(0);
    }
    for (s, b) in view.betas.iter().enumerate() {
        if s != dead {
            for &b in b {
                d += ln_phi(b, v0) - ln_phi(b, v);
            }
        }
    }
    d -= ln_phi(bd, v);
    let sum_r: f64 = view.resid.iter().sum();
    let lik = -bd * sum_r - 0.5 * view.resid.len() as f64 * bd * bd;
    d + lik + (moves.birth / t as f64).ln() + ln_phi(bd, v) - (moves.death / view.stumps() as f64).ln()
}

fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

struct Forest {
    trees: Vec<WorkTree>,
    counts: Vec<Vec<usize>>,
    ks: Vec<usize>,
}

impl Forest {
    fn betas(&self) -> Vec<Vec<f64>> {
        self.trees.iter().map(WorkTree::leaf_betas).collect()
    }

    /// Canonical cells of the overlay of all trees.
    fn global_cells(&self, n: usize) -> Vec<Vec<usize>> {
        let mut label = vec![Vec::with_capacity(self.trees.len()); n];
        for wt in &self.trees {
            for (ord, u) in wt.leaves().into_iter().enumerate() {
                for &i in &wt.members[u] {
                    label[i as usize].push(ord);
                }
            }
        }
        let mut ids = std::collections::HashMap::new();
        let dense: Vec<usize> = label.into_iter().map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        }).collect();
        canonical_cells(&dense)
    }

    fn union(&self, p: usize) -> Vec<usize> {
        (0..p).filter(|&j| self.counts.iter().any(|c| c[j] > 0)).collect()
    }

    /// Structural log prior plus the step prior.
    fn log_prior(&self, model: &PriorModel, mode: ModelMode) -> f64 {
        let t = self.trees.len();
        let n = model.n;
        let mut lp = model.log_t(t);
        let shared_q = self.union(model.p).len();
        if mode == ModelMode::ForestSharedS {
            lp += model.log_q(shared_q) + model.log_subset(shared_q);
        }
        for (wt, (c, &k)) in self.trees.iter().zip(self.counts.iter().zip(&self.ks)) {
            let q = if mode == ModelMode::ForestSharedS {
                shared_q
            } else {
                let q = c.iter().filter(|&&x| x > 0).count();
                lp += model.log_q(q) + model.log_subset(q);
                q
            };
            lp += model.log_k(k, t) + wt.log_ext() - log_partitioning_number(n, q, k);
        }
        let v = model.step_variance(t);
        lp + self.trees.iter().flat_map(|wt| wt.leaf_betas()).map(|b| ln_phi(b, v)).sum::<f64>()
    }
}

fn forest(
    data: &Dataset,
    model: &PriorModel,
    cfg: &ChainConfig,
    truth: Option<&[f64]>,
    stream: u64,
    rng: &mut ChaCha8Rng,
) -> Result<ChainTrace> {
    let (n, p) = (data.n(), data.p());
    let moves = cfg.moves();
    let shared = cfg.mode == ModelMode::ForestSharedS;
    let min_size = min_leaf_size(model.cfg.cbar);
    let y = data.y();
    let t0 = cfg.initial_trees.min(model.t_max);
    let mut f = Forest { trees: vec![WorkTree::stump(n); t0], counts: vec![vec![0; p]; t0], ks: vec![1; t0] };
    let mut fit = vec![0.0; n];
    let placeholder = ModelState { mode: cfg.mode, ensemble: Ensemble::from_trees(vec![f.trees[0].to_partition()])? };
    let mut trace = ChainTrace::new(cfg.mode, cfg.seed, stream, n, p, placeholder);
    let mut resid = vec![0.0; n];
    let bd_prob = moves.birth + moves.death;
    for it in 0..cfg.iterations {
        let t = f.trees.len();
        let v = model.step_variance(t);
        for s in 0..t {
            let other_counts: Vec<usize> = if shared {
                (0..p).map(|j| f.counts.iter().enumerate().filter(|&(o, _)| o != s).map(|(_, c)| c[j]).sum()).collect()
            } else {
                vec![0; p]
            };
            let other_ks: Vec<usize> =
                if shared { f.ks.iter().enumerate().filter(|&(o, _)| o != s).map(|(_, &k)| k).collect() } else { Vec::new() };
            for i in 0..n {
                resid[i] = y[i] - fit[i];
            }
            f.trees[s].add_fit(&mut resid, 1.0);
            let ctx = TreeCtx {
                data,
                model,
                moves: &moves,
                shared,
                t,
                other_counts: &other_counts,
                other_ks: &other_ks,
                v,
                min_size,
            };
            let wt = &mut f.trees[s];
            let (kind, ok) = tree_step(wt, &resid, &ctx, rng);
            trace.count_move(kind, ok);
            sample_betas(wt, &resid, v, rng);
            for i in 0..n {
                fit[i] = y[i] - resid[i];
            }
            wt.add_fit(&mut fit, 1.0);
            f.counts[s] = wt.axis_counts(p);
            f.ks[s] = wt.leaf_count();
        }
        if bd_prob > 0.0 && rng.random::<f64>() < bd_prob {
            for i in 0..n {
                resid[i] = y[i] - fit[i];
            }
            let betas = f.betas();
            let view = ForestView { mode: cfg.mode, leaf_counts: &f.ks, betas: &betas, resid: &resid };
            if rng.random::<f64>() < moves.birth / bd_prob {
                let beta_new = model.step_variance(t + 1).sqrt() * normal(rng);
                let pos = rng.random_range(0..=t);
                let ok = accept(birth_log_ratio(model, &moves, view, beta_new), rng);
                if ok {
                    let mut stump = WorkTree::stump(n);
                    stump.beta[0] = beta_new;
                    f.trees.insert(pos, stump);
                    f.counts.insert(pos, vec![0; p]);
                    f.ks.insert(pos, 1);
                    fit.iter_mut().for_each(|x| *x += beta_new);
                }
                trace.count_move(MoveKind::Birth, ok);
            } else {
                let stumps: Vec<usize> = (0..t).filter(|&s| f.ks[s] == 1).collect();
                let ok = !stumps.is_empty() && {
                    let dead = stumps[rng.random_range(0..stumps.len())];
                    let ok = accept(death_log_ratio(model, &moves, view, dead), rng);
                    if ok {
                        let bd = f.trees[dead].beta[0];
                        f.trees.remove(dead);
                        f.counts.remove(dead);
                        f.ks.remove(dead);
                        fit.iter_mut().for_each(|x| *x -= bd);
                    }
                    ok
                };
                trace.count_move(MoveKind::Death, ok);
            }
        }
        if cfg.check_residuals {
            let mut full = vec![0.0; n];
            for wt in &f.trees {
                wt.add_fit(&mut full, 1.0);
            }
            let drift = full.iter().zip(&fit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if drift > 1e-10 {
                return Err(Error::Check(format!("running fit drifted by {drift:e} at sweep {it}")));
            }
        }
        if cfg.keeps(it) {
            let subset = f.union(p);
            let total_leaves = f.ks.iter().sum();
            let ss: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum();
            let log_post = f.log_prior(model, cfg.mode) - 0.5 * n as f64 * LN_2PI - 0.5 * ss;
            let rec = TraceRecord {
                iter: it,
                t: f.trees.len(),
                q: subset.len(),
                subset,
                leaves: f.ks.clone(),
                total_leaves,
                log_post,
                error: truth.map(|t| empirical_norm(&fit, t)).transpose()?,
                partition: cfg.record_partitions.then(|| f.global_cells(n)),
                fit: cfg.record_fits.then(|| fit.clone()),
            };
            trace.keep(rec, &fit);
        }
    }
    let trees = f.trees.iter().map(WorkTree::to_partition).collect();
    trace.final_state = ModelState { mode: cfg.mode, ensemble: Ensemble::new(trees, f.betas())? };
    Ok(trace)
}
