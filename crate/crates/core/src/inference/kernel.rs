//! One reversible-jump update of a single tree with its steps integrated out.
//!
//! Every proposal's Hastings ratio uses exact counts: leaves, axes in the
//! pool, candidate thresholds, and reverse-move choices. A proposal that is
//! impossible (no candidates, leaf too small, axis set would change when it
//! must not) is a rejection.

use rand::Rng;

use super::config::{MoveKind, MoveProbs};
use super::marginal::leaf_log_marginal_reduced;
use super::worktree::{candidates, WorkTree};
use crate::data::Dataset;
use crate::partition::{log_partitioning_number, SplitRule};
use crate::priors::PriorModel;

/// What the rest of the model looks like while one tree is updated.
pub(crate) struct TreeCtx<'a> {
    pub data: &'a Dataset,
    pub model: &'a PriorModel,
    pub moves: &'a MoveProbs,
    /// Subset shared by all trees (its size enters every tree's `Δ`).
    pub shared: bool,
    /// Number of trees, for the `λ/T` leaf prior.
    pub t: usize,
    /// Axis usage by the other trees (all zero unless `shared`).
    pub other_counts: &'a [usize],
    /// Leaf counts of the other trees (used only when `shared`).
    pub other_ks: &'a [usize],
    /// Step prior variance.
    pub v: f64,
    pub min_size: usize,
}

impl TreeCtx<'_> {
    fn total_counts(&self, wt: &WorkTree) -> Vec<usize> {
        let mut c = self.other_counts.to_vec();
        wt.add_axis_counts(&mut c);
        c
    }

    /// Log prior terms that can change when this tree changes.
    pub(crate) fn log_struct(&self, wt: &WorkTree) -> f64 {
        let m = self.model;
        let q = self.total_counts(wt).iter().filter(|&&c| c > 0).count();
        let k = wt.leaf_count();
        let mut lp = m.log_q(q) + m.log_subset(q) + m.log_k(k, self.t) + wt.log_ext()
            - log_partitioning_number(self.data.n(), q, k);
        if self.shared {
            for &ko in self.other_ks {
                lp -= log_partitioning_number(self.data.n(), q, ko);
            }
        }
        lp
    }

    fn ml(&self, members: &[u32], resid: &[f64]) -> f64 {
        let s: f64 = members.iter().map(|&i| resid[i as usize]).sum();
        leaf_log_marginal_reduced(members.len(), s, self.v)
    }

    fn ml_leaves(&self, wt: &WorkTree, leaves: &[usize], resid: &[f64]) -> f64 {
        leaves.iter().map(|&u| self.ml(&wt.members[u], resid)).sum()
    }
}

fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

fn pick<T: Copy, R: Rng + ?Sized>(xs: &[T], rng: &mut R) -> T {
    xs[rng.random_range(0..xs.len())]
}

/// Draws a move type and attempts it; returns the type and whether it was accepted.
pub(crate) fn tree_step<R: Rng + ?Sized>(
    wt: &mut WorkTree,
    resid: &[f64],
    ctx: &TreeCtx<'_>,
    rng: &mut R,
) -> (MoveKind, bool) {
    let kind = ctx.moves.draw_tree_move(rng);
    let ok = match kind {
        MoveKind::Grow => grow(wt, resid, ctx, rng, false),
        MoveKind::VarAdd => grow(wt, resid, ctx, rng, true),
        MoveKind::Prune => prune(wt, resid, ctx, rng, false),
        MoveKind::VarRemove => prune(wt, resid, ctx, rng, true),
        MoveKind::Change => change(wt, resid, ctx, rng),
        MoveKind::Swap => swap(wt, resid, ctx, rng),
        MoveKind::VarSwap => var_swap(wt, resid, ctx, rng),
        MoveKind::Birth | MoveKind::Death => false,
    };
    (kind, ok)
}

/// Grow (axis in `S`) or var-add (axis outside `S`).
fn grow<R: Rng + ?Sized>(wt: &mut WorkTree, resid: &[f64], ctx: &TreeCtx<'_>, rng: &mut R, var: bool) -> bool {
    let data = ctx.data;
    let k = wt.leaf_count();
    if k >= ctx.model.k_max {
        return false;
    }
    let total = ctx.total_counts(wt);
    let pool: Vec<usize> = (0..data.p()).filter(|&j| (total[j] > 0) != var).collect();
    if pool.is_empty() {
        return false;
    }
    let u = pick(&wt.leaves(), rng);
    let axis = pick(&pool, rng);
    let cands = candidates(data, &wt.members[u], axis);
    if cands.is_empty() {
        return false;
    }
    let tau = pick(&cands, rng);
    let (l, r): (Vec<u32>, Vec<u32>) = wt.members[u].iter().partition(|&&i| data.x(i as usize, axis) <= tau);
    if l.len() < ctx.min_size || r.len() < ctx.min_size {
        return false;
    }
    let before = ctx.log_struct(wt);
    let ml_old = ctx.ml(&wt.members[u], resid);
    let ml_new = ctx.ml(&l, resid) + ctx.ml(&r, resid);
    wt.grow(u, SplitRule::new(axis, tau), l, r);
    let after = ctx.log_struct(wt);
    let total2 = ctx.total_counts(wt);
    let n_rev = wt
        .prunable()
        .iter()
        .filter(|&&w| {
            let c = total2[wt.nodes[w].rule.expect("internal").axis];
            if var {
                c == 1
            } else {
                c >= 2
            }
        })
        .count();
    let (fwd, rev) = if var { (MoveKind::VarAdd, MoveKind::VarRemove) } else { (MoveKind::Grow, MoveKind::Prune) };
    let log_q_fwd = ctx.moves.tree_prob(fwd).ln() - ((k * pool.len() * cands.len()) as f64).ln();
    let log_q_rev = ctx.moves.tree_prob(rev).ln() - (n_rev as f64).ln();
    let log_alpha = after - before + ml_new - ml_old + log_q_rev - log_q_fwd;
    if accept(log_alpha, rng) {
        true
    } else {
        wt.prune(u);
        false
    }
}

/// Prune (axis stays in `S`) or var-remove (the last split on its axis).
fn prune<R: Rng + ?Sized>(wt: &mut WorkTree, resid: &[f64], ctx: &TreeCtx<'_>, rng: &mut R, var: bool) -> bool {
    let data = ctx.data;
    let total = ctx.total_counts(wt);
    let nodes: Vec<usize> = wt
        .prunable()
        .into_iter()
        .filter(|&w| {
            let c = total[wt.nodes[w].rule.expect("internal").axis];
            if var {
                c == 1
            } else {
                c >= 2
            }
        })
        .collect();
    if nodes.is_empty() {
        return false;
    }
    let w = pick(&nodes, rng);
    let k = wt.leaf_count();
    let (l, r) = (wt.nodes[w].left, wt.nodes[w].right);
    let before = ctx.log_struct(wt);
    let ml_old = ctx.ml(&wt.members[l], resid) + ctx.ml(&wt.members[r], resid);
    let (rule, lm, rm) = wt.prune(w);
    let ml_new = ctx.ml(&wt.members[w], resid);
    let after = ctx.log_struct(wt);
    let total2 = ctx.total_counts(wt);
    let pool = (0..data.p()).filter(|&j| (total2[j] > 0) != var).count();
    let c = candidates(data, &wt.members[w], rule.axis).len();
    let (fwd, rev) = if var { (MoveKind::VarRemove, MoveKind::VarAdd) } else { (MoveKind::Prune, MoveKind::Grow) };
    let log_q_fwd = ctx.moves.tree_prob(fwd).ln() - (nodes.len() as f64).ln();
    let log_q_rev = ctx.moves.tree_prob(rev).ln() - (((k - 1) * pool * c) as f64).ln();
    let log_alpha = after - before + ml_new - ml_old + log_q_rev - log_q_fwd;
    if accept(log_alpha, rng) {
        true
    } else {
        wt.grow(w, rule, lm, rm);
        false
    }
}

/// New axis (within `S`) and threshold for one internal node.
fn change<R: Rng + ?Sized>(wt: &mut WorkTree, resid: &[f64], ctx: &TreeCtx<'_>, rng: &mut R) -> bool {
    let data = ctx.data;
    let internals = wt.internals();
    if internals.is_empty() {
        return false;
    }
    let u = pick(&internals, rng);
    let old = wt.nodes[u].rule.expect("internal");
    let total = ctx.total_counts(wt);
    let s_in: Vec<usize> = (0..data.p()).filter(|&j| total[j] > 0).collect();
    let axis = pick(&s_in, rng);
    if axis != old.axis && total[old.axis] == 1 {
        return false;
    }
    let mem = wt.subtree_members(u);
    let c_new = candidates(data, &mem, axis);
    if c_new.is_empty() {
        return false;
    }
    let tau = pick(&c_new, rng);
    let c_old = candidates(data, &mem, old.axis).len();
    let mut nw = wt.clone();
    nw.nodes[u].rule = Some(SplitRule::new(axis, tau));
    if !nw.reroute(u, mem, data, ctx.min_size) {
        return false;
    }
    let ml_old = ctx.ml_leaves(wt, &wt.subtree_leaves(u), resid);
    let ml_new = ctx.ml_leaves(&nw, &nw.subtree_leaves(u), resid);
    let log_alpha = ml_new - ml_old + (c_new.len() as f64).ln() - (c_old as f64).ln();
    if accept(log_alpha, rng) {
        *wt = nw;
        true
    } else {
        false
    }
}

/// Exchanges the rules of an internal parent and internal child.
fn swap<R: Rng + ?Sized>(wt: &mut WorkTree, resid: &[f64], ctx: &TreeCtx<'_>, rng: &mut R) -> bool {
    let pairs = wt.internal_pairs();
    if pairs.is_empty() {
        return false;
    }
    let (u, c) = pick(&pairs, rng);
    let mut nw = wt.clone();
    let (ru, rc) = (nw.nodes[u].rule, nw.nodes[c].rule);
    nw.nodes[u].rule = rc;
    nw.nodes[c].rule = ru;
    let mem = nw.subtree_members(u);
    if !nw.reroute(u, mem, ctx.data, ctx.min_size) {
        return false;
    }
    let ml_old = ctx.ml_leaves(wt, &wt.subtree_leaves(u), resid);
    let ml_new = ctx.ml_leaves(&nw, &nw.subtree_leaves(u), resid);
    if accept(ml_new - ml_old, rng) {
        *wt = nw;
        true
    } else {
        false
    }
}

/// Replaces axis `j ∈ S` by `j' ∉ S` at every node splitting on `j`,
/// drawing the new thresholds top-down.
fn var_swap<R: Rng + ?Sized>(wt: &mut WorkTree, resid: &[f64], ctx: &TreeCtx<'_>, rng: &mut R) -> bool {
    let data = ctx.data;
    let total = ctx.total_counts(wt);
    let s_in: Vec<usize> = (0..data.p()).filter(|&j| total[j] > 0).collect();
    let s_out: Vec<usize> = (0..data.p()).filter(|&j| total[j] == 0).collect();
    if s_in.is_empty() || s_out.is_empty() {
        return false;
    }
    let j = pick(&s_in, rng);
    let j2 = pick(&s_out, rng);
    if ctx.other_counts[j] > 0 {
        return false;
    }
    let nodes: Vec<usize> = wt.internals().into_iter().filter(|&u| wt.nodes[u].rule.expect("internal").axis == j).collect();
    let log_c_old: f64 = nodes.iter().map(|&u| (candidates(data, &wt.subtree_members(u), j).len() as f64).ln()).sum();
    let mut nw = wt.clone();
    let mut log_c_new = 0.0;
    for &u in &nodes {
        let mem = nw.subtree_members(u);
        let c = candidates(data, &mem, j2);
        if c.is_empty() {
            return false;
        }
        log_c_new += (c.len() as f64).ln();
        nw.nodes[u].rule = Some(SplitRule::new(j2, pick(&c, rng)));
        nw.reroute(u, mem, data, ctx.min_size);
    }
    let all = nw.subtree_members(0);
    if !nw.reroute(0, all, data, ctx.min_size) {
        return false;
    }
    let ml_old = ctx.ml_leaves(wt, &wt.leaves(), resid);
    let ml_new = ctx.ml_leaves(&nw, &nw.leaves(), resid);
    if accept(ml_new - ml_old + log_c_new - log_c_old, rng) {
        *wt = nw;
        true
    } else {
        false
    }
}
