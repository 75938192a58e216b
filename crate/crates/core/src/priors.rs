//! Spike-and-tree and spike-and-forest priors.
//!
//! The hierarchy is: subset size `q`, subset `S` of size `q`, leaf count `K`
//! (per tree in a forest, with the number of trees `T` above it), the tree
//! itself given `(S, K)`, and Gaussian step heights. Every density is exposed
//! in log form and is `−∞` exactly off its support.
//!
//! Trees are weighted uniformly over *split sequences*: a tree reachable by
//! `m` different split orders carries `m / Δ(n, q, K)` prior mass, matching the
//! sequence count `Δ` used as normalizer. See [`PriorModel::log_tree_term`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::ensemble::Ensemble;
use crate::error::{usage, Error, Result};
use crate::partition::{enumerate_valid_trees, log_partitioning_number, min_leaf_size, SplitRule, TreePartition};

/// Variance of the Gaussian step prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepVariance {
    /// Always 1.
    Unit,
    /// `1/T`; equals 1 for a single tree.
    #[default]
    OneOverT,
}

/// Hyperparameters. Every field has a default, so a config file only needs
/// the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Subset-size decay exponent `a` in `π(q) ∝ c^{-q} p^{-aq}`.
    pub a: f64,
    pub c: f64,
    /// Poisson intensity for the leaf count (divided by `T` in forests).
    pub lambda: f64,
    /// Tree-count decay `C_T` in `π(T) ∝ e^{-C_T T}`; must exceed `ln 2`.
    pub c_t: f64,
    /// Validity constant: every leaf needs at least `cbar²` points.
    pub cbar: u32,
    pub step_variance: StepVariance,
    /// Largest leaf count; defaults to `⌊n / cbar²⌋`.
    pub k_max: Option<usize>,
    /// Renormalize the leaf-count prior over `1..=K_max`.
    pub truncate_k: bool,
    /// Use the Galton-Watson leaf-count prior with this split probability.
    pub gw_gamma: Option<f64>,
    /// Largest number of trees; defaults to `n`.
    pub t_max: Option<usize>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a: 2.5,
            c: std::f64::consts::E,
            lambda: 10.0,
            c_t: 1.0,
            cbar: 1,
            step_variance: StepVariance::OneOverT,
            k_max: None,
            truncate_k: true,
            gw_gamma: None,
            t_max: None,
        }
    }
}

impl PriorConfig {
    /// Checks ranges; with `n` also checks `K_max ≤ ⌊n/cbar²⌋`.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("a", self.a)?;
        pos("c", self.c)?;
        pos("lambda", self.lambda)?;
        if !self.c_t.is_finite() || self.c_t <= std::f64::consts::LN_2 {
            return Err(Error::Config(format!("c_t must exceed ln 2, got {}", self.c_t)));
        }
        if self.cbar == 0 {
            return Err(Error::Config("cbar must be at least 1".into()));
        }
        if let Some(g) = self.gw_gamma {
            if !(g > 0.0 && g <= 0.5) {
                return Err(Error::Config(format!("gw_gamma must lie in (0, 1/2], got {g}")));
            }
        }
        if self.k_max == Some(0) || self.t_max == Some(0) {
            return Err(Error::Config("k_max and t_max must be at least 1".into()));
        }
        if let (Some(n), Some(k)) = (n, self.k_max) {
            let cap = n / min_leaf_size(self.cbar);
            if k > cap {
                return Err(Error::Config(format!("k_max = {k} exceeds floor(n / cbar^2) = {cap}")));
            }
        }
        Ok(())
    }

    /// Effective `K_max` for `n` points.
    pub fn k_max_for(&self, n: usize) -> usize {
        let cap = (n / min_leaf_size(self.cbar)).max(1);
        self.k_max.map_or(cap, |k| k.min(cap))
    }

    pub fn t_max_for(&self, n: usize) -> usize {
        self.t_max.unwrap_or(n).max(1)
    }

    /// Step prior variance for a forest of `t` trees.
    pub fn step_variance_for(&self, t: usize) -> f64 {
        match self.step_variance {
            StepVariance::Unit => 1.0,
            StepVariance::OneOverT => 1.0 / t as f64,
        }
    }
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln C(p, q)`.
pub fn log_binomial(p: usize, q: usize) -> f64 {
    if q > p {
        return f64::NEG_INFINITY;
    }
    ln_gamma((p + 1) as f64) - ln_gamma((q + 1) as f64) - ln_gamma((p - q + 1) as f64)
}

/// `log π(q)` with `π(q) ∝ c^{-q} p^{-aq}` normalized over `0..=p`.
pub fn log_prior_q(q: usize, p: usize, cfg: &PriorConfig) -> Result<f64> {
    if q > p {
        return usage(format!("q = {q} outside 0..={p}"));
    }
    let w = |j: usize| -(j as f64) * (cfg.c.ln() + cfg.a * (p as f64).ln());
    Ok(w(q) - log_sum_exp((0..=p).map(w)))
}

/// `−ln C(p, q)`: all subsets of a given size are equally likely.
pub fn log_prior_subset(s: &[usize], q: usize, p: usize) -> Result<f64> {
    if s.len() != q {
        return usage(format!("|S| = {} but q = {q}", s.len()));
    }
    if s.iter().any(|&j| j >= p) {
        return usage(format!("S = {s:?} has an axis outside 0..{p}"));
    }
    Ok(-log_binomial(p, q))
}

/// Zero-truncated Poisson `ln[μ^K / ((e^μ − 1) K!)]`, renormalized over
/// `1..=k_max` when `truncate` is set and `−∞` above `k_max`.
pub fn log_poisson_leaves(k: usize, mu: f64, k_max: usize, truncate: bool) -> f64 {
    if k == 0 || k > k_max {
        return f64::NEG_INFINITY;
    }
    let kernel = |j: usize| j as f64 * mu.ln() - ln_gamma((j + 1) as f64);
    let log_norm = if truncate {
        truncated_poisson_log_norm(mu, k_max)
    } else {
        mu.exp_m1().ln()
    };
    kernel(k) - log_norm
}

/// `ln Σ_{j=1}^{k_max} μ^j / j!`, summing until the terms are negligible.
fn truncated_poisson_log_norm(mu: f64, k_max: usize) -> f64 {
    let mut terms = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for j in 1..=k_max {
        let t = j as f64 * mu.ln() - ln_gamma((j + 1) as f64);
        best = best.max(t);
        terms.push(t);
        if j as f64 > mu && t < best - 60.0 {
            break;
        }
    }
    log_sum_exp(terms)
}

/// Leaf-count probabilities `P(1..=k_max)` of a Galton-Watson tree in which
/// every node splits independently with probability `gamma`. Index 0 is
/// unused. The masses are not renormalized, so their sum falls short of one
/// by the tail beyond `k_max`.
pub fn galton_watson_log_masses(gamma: f64, k_max: usize) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return usage(format!("gw_gamma must lie in (0, 1/2], got {gamma}"));
    }
    // P(k) = r^k Q(k) with r = 4γ(1−γ) keeps Q polynomially bounded.
    let r = 4.0 * gamma * (1.0 - gamma);
    let mut qv = vec![0.0; k_max + 1];
    if k_max >= 1 {
        qv[1] = (1.0 - gamma) / r;
    }
    for k in 2..=k_max {
        let s: f64 = (1..k).map(|i| qv[i] * qv[k - i]).sum();
        qv[k] = gamma * s;
    }
    let mut out = vec![f64::NEG_INFINITY; k_max + 1];
    for k in 1..=k_max {
        out[k] = qv[k].ln() + k as f64 * r.ln();
    }
    Ok(out)
}

/// `P(K > k)` under the Galton-Watson prior, summed forward to `K = 400`.
pub fn galton_watson_tail(gamma: f64, k: usize) -> Result<f64> {
    let horizon = 400.max(k + 1);
    Ok(galton_watson_log_masses(gamma, horizon)?[k + 1..].iter().map(|m| m.exp()).sum())
}

/// `log P(K = k)` under the Galton-Watson prior, `−∞` above `k_max`.
pub fn log_prior_k_galton_watson(k: usize, gamma: f64, k_max: usize) -> Result<f64> {
    if k == 0 {
        return usage("K must be at least 1");
    }
    if k > k_max {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(galton_watson_log_masses(gamma, k)?[k])
}

/// Single-tree leaf-count prior for `n` points.
pub fn log_prior_k(k: usize, cfg: &PriorConfig, n: usize) -> Result<f64> {
    if k == 0 {
        return usage("K must be at least 1");
    }
    let k_max = cfg.k_max_for(n);
    match cfg.gw_gamma {
        Some(g) => log_prior_k_galton_watson(k, g, k_max),
        None => Ok(log_poisson_leaves(k, cfg.lambda, k_max, cfg.truncate_k)),
    }
}

/// `−ln Δ(n, q, K)` if `tree` is valid and splits on every axis of `s`
/// (and only those), else `−∞`.
pub fn log_prior_tree(tree: &TreePartition, s: &[usize], data: &Dataset, cfg: &PriorConfig) -> f64 {
    let mut s = s.to_vec();
    s.sort_unstable();
    s.dedup();
    if tree.used_axes() != s || !crate::partition::is_valid(tree, data, cfg.cbar) {
        return f64::NEG_INFINITY;
    }
    -log_partitioning_number(data.n(), s.len(), tree.leaf_count())
}

/// `Σ ln φ(β_k; variance)`.
pub fn log_prior_steps(beta: &[f64], variance: f64) -> f64 {
    let c = -0.5 * (2.0 * std::f64::consts::PI * variance).ln();
    beta.iter().map(|b| c - b * b / (2.0 * variance)).sum()
}

/// `log π(T)` with `π(T) ∝ e^{-C_T T}` on `1..=t_max`.
pub fn log_prior_t(t: usize, c_t: f64, t_max: usize) -> f64 {
    if t == 0 || t > t_max {
        return f64::NEG_INFINITY;
    }
    // Σ_{t=1}^{m} e^{-ct} = e^{-c} (1 − e^{-cm}) / (1 − e^{-c})
    let log_norm = -c_t + (-(-c_t * t_max as f64).exp_m1()).ln() - (-(-c_t).exp_m1()).ln();
    -c_t * t as f64 - log_norm
}

/// Subset sizes in a forest: one shared `q`, or one per tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubsetSizes<'a> {
    Shared(usize),
    PerTree(&'a [usize]),
}

/// `log π(T) + Σ_t log π(K^t | T) + subset terms` for a forest on `n` points
/// and `p` covariates. The leaf prior uses intensity `λ/T`.
pub fn log_prior_forest_shape(ks: &[usize], sizes: SubsetSizes<'_>, cfg: &PriorConfig, n: usize, p: usize) -> Result<f64> {
    let t = ks.len();
    if t == 0 {
        return usage("a forest has at least one tree");
    }
    let model = PriorModel::new(cfg.clone(), n, p)?;
    let mut lp = model.log_t(t);
    for &k in ks {
        if k == 0 {
            return usage("every tree has at least one leaf");
        }
        lp += model.log_k(k, t);
    }
    match sizes {
        SubsetSizes::Shared(q) => lp += model.log_q(q) + model.log_subset(q),
        SubsetSizes::PerTree(qs) => {
            if qs.len() != t {
                return usage(format!("{} subset sizes for {t} trees", qs.len()));
            }
            for &q in qs {
                lp += model.log_q(q) + model.log_subset(q);
            }
        }
    }
    Ok(lp)
}

/// How subsets are attached to trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    /// A single tree; `S` is the set of axes it splits on.
    #[default]
    Cart,
    /// A forest with one subset `S`, the union of the axes its trees use.
    ForestSharedS,
    /// A forest where every tree carries its own subset.
    ForestPerTreeS,
}

impl ModelMode {
    pub fn is_forest(self) -> bool {
        !matches!(self, ModelMode::Cart)
    }
}

/// A point in the model space. Subsets are not stored: they are the axes
/// the trees actually split on (per tree, or their union).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub mode: ModelMode,
    pub ensemble: Ensemble,
}

impl ModelState {
    pub fn trees(&self) -> &[TreePartition] {
        self.ensemble.trees()
    }

    /// `S` in single-tree and shared modes; the union of per-tree subsets otherwise.
    pub fn subset(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.trees().iter().flat_map(|t| t.used_axes()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn tree_subsets(&self) -> Vec<Vec<usize>> {
        self.trees().iter().map(TreePartition::used_axes).collect()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.ensemble.leaf_counts()
    }
}

/// Prior densities for fixed `(n, p)` with the expensive tables cached.
#[derive(Debug, Clone)]
pub struct PriorModel {
    pub cfg: PriorConfig,
    pub n: usize,
    pub p: usize,
    pub k_max: usize,
    pub t_max: usize,
    log_q: Vec<f64>,
    gw: Option<Vec<f64>>,
}

impl PriorModel {
    pub fn new(cfg: PriorConfig, n: usize, p: usize) -> Result<Self> {
        cfg.validate(Some(n))?;
        let k_max = cfg.k_max_for(n);
        let t_max = cfg.t_max_for(n);
        let log_q = (0..=p).map(|q| log_prior_q(q, p, &cfg)).collect::<Result<_>>()?;
        let gw = cfg.gw_gamma.map(|g| galton_watson_log_masses(g, k_max)).transpose()?;
        Ok(Self { cfg, n, p, k_max, t_max, log_q, gw })
    }

    pub fn log_q(&self, q: usize) -> f64 {
        self.log_q.get(q).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn log_subset(&self, q: usize) -> f64 {
        -log_binomial(self.p, q)
    }

    /// Leaf-count prior of one tree in a forest of `t` trees.
    pub fn log_k(&self, k: usize, t: usize) -> f64 {
        if k == 0 || k > self.k_max {
            return f64::NEG_INFINITY;
        }
        match &self.gw {
            Some(table) => table[k],
            None => log_poisson_leaves(k, self.cfg.lambda / t as f64, self.k_max, self.cfg.truncate_k),
        }
    }

    pub fn log_t(&self, t: usize) -> f64 {
        log_prior_t(t, self.cfg.c_t, self.t_max)
    }

    /// Tree term given `q` axes: `ln m(τ) − ln Δ(n, q, K)` with `m(τ)` the
    /// number of split orders producing `τ`. Validity is the caller's job.
    pub fn log_tree_term(&self, tree: &TreePartition, q: usize) -> f64 {
        tree.log_sequence_multiplicity() - log_partitioning_number(self.n, q, tree.leaf_count())
    }

    pub fn step_variance(&self, t: usize) -> f64 {
        self.cfg.step_variance_for(t)
    }

    /// Structural log prior of a whole state (no steps), `−∞` if a tree is
    /// invalid for `data`.
    pub fn log_structure(&self, state: &ModelState, data: &Dataset) -> f64 {
        let trees = state.trees();
        let t = trees.len();
        if trees.iter().any(|tr| !crate::partition::is_valid(tr, data, self.cfg.cbar)) {
            return f64::NEG_INFINITY;
        }
        match state.mode {
            ModelMode::Cart => {
                if t != 1 {
                    return f64::NEG_INFINITY;
                }
                let q = trees[0].used_axes().len();
                self.log_q(q) + self.log_subset(q) + self.log_k(trees[0].leaf_count(), 1) + self.log_tree_term(&trees[0], q)
            }
            ModelMode::ForestSharedS => {
                let q = state.subset().len();
                let mut lp = self.log_t(t) + self.log_q(q) + self.log_subset(q);
                for tr in trees {
                    lp += self.log_k(tr.leaf_count(), t) + self.log_tree_term(tr, q);
                }
                lp
            }
            ModelMode::ForestPerTreeS => {
                let mut lp = self.log_t(t);
                for tr in trees {
                    let q = tr.used_axes().len();
                    lp += self.log_q(q) + self.log_subset(q) + self.log_k(tr.leaf_count(), t) + self.log_tree_term(tr, q);
                }
                lp
            }
        }
    }

    /// Structure plus Gaussian steps.
    pub fn log_joint(&self, state: &ModelState, data: &Dataset) -> f64 {
        let v = self.step_variance(state.trees().len());
        self.log_structure(state, data) + state.ensemble.betas().iter().map(|b| log_prior_steps(b, v)).sum::<f64>()
    }
}

/// Retry budget for rejection sampling of trees.
pub const DEFAULT_TREE_ATTEMPTS: usize = 200_000;

/// Draws a tree with `k` leaves uniformly over valid split sequences on the
/// axes in `s`, by rejection.
///
/// Each step proposes an (axis, row) pair uniformly from the fixed `|S|·n`
/// grid; the row picks the leaf and threshold. The step is legal when the row
/// is the first in its leaf with that value and the value is not the leaf
/// maximum, so every legal sequence has the same proposal probability. A
/// sequence is discarded on an illegal step, a leaf below `cbar²` points, or
/// (with `cover`) an unused axis. When `attempts` are exhausted the draw
/// falls back to enumeration if that is small enough; the fallback is exact
/// over data partitions and returns one representative tree per partition.
pub fn sample_tree_uniform<R: Rng + ?Sized>(
    data: &Dataset,
    s: &[usize],
    k: usize,
    cbar: u32,
    cover: bool,
    attempts: usize,
    rng: &mut R,
) -> Result<TreePartition> {
    if k == 1 {
        return Ok(TreePartition::leaf());
    }
    if s.is_empty() {
        return usage("a tree with more than one leaf needs a nonempty axis set");
    }
    if let Some(&a) = s.iter().find(|&&a| a >= data.p()) {
        return usage(format!("axis {a} outside p = {}", data.p()));
    }
    if cover {
        if let Some(&a) = s.iter().find(|&&a| {
            let first = data.x(0, a);
            data.column(a).all(|v| v == first)
        }) {
            return Err(Error::Sampling(format!("axis {a} is constant and cannot be split on")));
        }
    }
    let n = data.n();
    let min_size = min_leaf_size(cbar);
    let mut reasons = [0usize; 3];
    'attempt: for _ in 0..attempts {
        let mut tree = TreePartition::leaf();
        let mut leaves: Vec<Vec<usize>> = vec![(0..n).collect()];
        let mut leaf_of = vec![0usize; n];
        let mut used = vec![false; s.len()];
        for _ in 1..k {
            let ai = rng.random_range(0..s.len());
            let axis = s[ai];
            let i = rng.random_range(0..n);
            let l = leaf_of[i];
            let v = data.x(i, axis);
            let members = &leaves[l];
            let first = members.iter().copied().find(|&m| data.x(m, axis) == v);
            let max = members.iter().map(|&m| data.x(m, axis)).fold(f64::NEG_INFINITY, f64::max);
            if first != Some(i) || v >= max {
                reasons[0] += 1;
                continue 'attempt;
            }
            let (left, right): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| data.x(m, axis) <= v);
            if left.len() < min_size || right.len() < min_size {
                reasons[1] += 1;
                continue 'attempt;
            }
            tree = tree.grow(l, SplitRule::new(axis, v))?;
            for lo in leaf_of.iter_mut() {
                if *lo > l {
                    *lo += 1;
                }
            }
            for &m in &right {
                leaf_of[m] = l + 1;
            }
            leaves[l] = left;
            leaves.insert(l + 1, right);
            used[ai] = true;
        }
        if cover && used.iter().any(|u| !u) {
            reasons[2] += 1;
            continue;
        }
        return Ok(tree);
    }
    // fallback: exact enumeration over partitions, weighted by multiplicity
    if cover {
        if let Ok(e) = enumerate_valid_trees(data, s, k, cbar, 100_000) {
            if e.sequences > 0 {
                let mut r = rng.random_range(0..e.sequences);
                for part in e.partitions {
                    if r < part.multiplicity {
                        return Ok(part.tree);
                    }
                    r -= part.multiplicity;
                }
            }
        }
    }
    Err(Error::Sampling(format!(
        "no valid {k}-leaf tree on axes {s:?} after {attempts} attempts \
         (illegal steps {}, small leaves {}, uncovered axes {})",
        reasons[0], reasons[1], reasons[2]
    )))
}

/// Draws an index with probability proportional to `exp(logw[i])`.
fn sample_log_weights<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return Some(i);
        }
        u -= wi;
    }
    w.iter().rposition(|&x| x > 0.0)
}

/// Uniform random `q`-subset of `0..p`, sorted.
fn sample_subset<R: Rng + ?Sized>(p: usize, q: usize, rng: &mut R) -> Vec<usize> {
    let mut s = rand::seq::index::sample(rng, p, q).into_vec();
    s.sort_unstable();
    s
}

fn sample_steps<R: Rng + ?Sized>(k: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| variance.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

/// Ancestral draw `q → S → (T) → K → tree → β`.
///
/// `q` is drawn from `π(q)` restricted to sizes a tree with at most `K_max`
/// leaves can use (`q ≤ K_max − 1`), and `K` from its prior restricted to
/// `K ≥ q + 1` (with `K = 1` iff `q = 0`). Trees are uniform over valid split
/// sequences. In shared-subset forests the trees jointly cover `S`, and
/// `q = 0` forces every tree to a single leaf.
pub fn sample_from_prior<R: Rng + ?Sized>(
    cfg: &PriorConfig,
    data: &Dataset,
    mode: ModelMode,
    rng: &mut R,
) -> Result<ModelState> {
    let model = PriorModel::new(cfg.clone(), data.n(), data.p())?;
    let p = data.p();
    let q_max = p.min(model.k_max.saturating_sub(1));
    let draw_q = |rng: &mut R| -> usize {
        let lw: Vec<f64> = (0..=q_max).map(|q| model.log_q(q)).collect();
        sample_log_weights(&lw, rng).expect("q = 0 always has mass")
    };
    let draw_k = |q: usize, t: usize, rng: &mut R| -> Result<usize> {
        if q == 0 {
            return Ok(1);
        }
        let lw: Vec<f64> = (0..=model.k_max).map(|k| if k > q { model.log_k(k, t) } else { f64::NEG_INFINITY }).collect();
        sample_log_weights(&lw, rng)
            .ok_or_else(|| Error::Sampling(format!("no leaf count in {}..={} has prior mass", q + 1, model.k_max)))
    };
    let ensemble = match mode {
        ModelMode::Cart => {
            let q = draw_q(rng);
            let s = sample_subset(p, q, rng);
            let k = draw_k(q, 1, rng)?;
            let tree = sample_tree_uniform(data, &s, k, cfg.cbar, true, DEFAULT_TREE_ATTEMPTS, rng)?;
            let beta = sample_steps(k, model.step_variance(1), rng);
            Ensemble::new(vec![tree], vec![beta])?
        }
        ModelMode::ForestPerTreeS => {
            let t = sample_t(&model, rng);
            let mut trees = Vec::with_capacity(t);
            for _ in 0..t {
                let q = draw_q(rng);
                let s = sample_subset(p, q, rng);
                let k = draw_k(q, t, rng)?;
                trees.push(sample_tree_uniform(data, &s, k, cfg.cbar, true, DEFAULT_TREE_ATTEMPTS, rng)?);
            }
            let v = model.step_variance(t);
            let betas = trees.iter().map(|tr| sample_steps(tr.leaf_count(), v, rng)).collect();
            Ensemble::new(trees, betas)?
        }
        ModelMode::ForestSharedS => {
            let t = sample_t(&model, rng);
            let q = draw_q(rng);
            let s = sample_subset(p, q, rng);
            let lw: Vec<f64> = (0..=model.k_max).map(|k| model.log_k(k, t)).collect();
            let mut found = None;
            for _ in 0..DEFAULT_TREE_ATTEMPTS / 100 {
                let ks: Vec<usize> = if q == 0 {
                    vec![1; t]
                } else {
                    (0..t).map(|_| sample_log_weights(&lw, rng).expect("K = 1 has mass")).collect()
                };
                if ks.iter().map(|k| k - 1).sum::<usize>() < q {
                    continue;
                }
                let trees = ks
                    .iter()
                    .map(|&k| sample_tree_uniform(data, &s, k, cfg.cbar, false, DEFAULT_TREE_ATTEMPTS, rng))
                    .collect::<Result<Vec<_>>>()?;
                let mut used: Vec<usize> = trees.iter().flat_map(|tr| tr.used_axes()).collect();
                used.sort_unstable();
                used.dedup();
                if used == s {
                    found = Some(trees);
                    break;
                }
            }
            let trees = found.ok_or_else(|| Error::Sampling(format!("could not cover S = {s:?} with {t} trees")))?;
            let v = model.step_variance(t);
            let betas = trees.iter().map(|tr| sample_steps(tr.leaf_count(), v, rng)).collect();
            Ensemble::new(trees, betas)?
        }
    };
    Ok(ModelState { mode, ensemble })
}

fn sample_t<R: Rng + ?Sized>(model: &PriorModel, rng: &mut R) -> usize {
    // geometric on 1..=t_max by inversion
    let c = model.cfg.c_t;
    let m = model.t_max as f64;
    let u: f64 = rng.random();
    // P(T ≤ t) = (1 − e^{-ct}) / (1 − e^{-cm})
    let x = u * (-(-c * m).exp_m1());
    let t = (-(-x).ln_1p() / c).ceil();
    (t as usize).clamp(1, model.t_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_prior_geometric_example() {
        let cfg = PriorConfig { a: 1.0, c: 1.0, ..Default::default() };
        let p0 = log_prior_q(0, 10, &cfg).unwrap().exp();
        let expect = 1.0 / (0..=10).map(|j| 10f64.powi(-j)).sum::<f64>();
        assert!((p0 - expect).abs() < 1e-14);
        assert!((p0 - 0.9).abs() < 1e-3);
        let total: f64 = (0..=10).map(|q| log_prior_q(q, 10, &cfg).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(log_prior_q(11, 10, &cfg).is_err());
    }

    #[test]
    fn q_prior_ratio() {
        let cfg = PriorConfig::default();
        for q in 0..7 {
            let r = log_prior_q(q, 7, &cfg).unwrap() - log_prior_q(q + 1, 7, &cfg).unwrap();
            assert!((r - (cfg.c * 7f64.powf(cfg.a)).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_prior() {
        assert_eq!(log_prior_subset(&[], 0, 10).unwrap(), 0.0);
        assert!((log_prior_subset(&[1, 4], 2, 10).unwrap() + 45f64.ln()).abs() < 1e-12);
        assert!(log_prior_subset(&[1], 2, 10).is_err());
        // sums to one over all subsets of {0..4}
        let total: f64 = (0u32..32)
            .map(|mask| {
                let s: Vec<usize> = (0..5).filter(|j| mask >> j & 1 == 1).collect();
                let q = s.len();
                (log_prior_q(q, 5, &PriorConfig::default()).unwrap() + log_prior_subset(&s, q, 5).unwrap()).exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_leaf_prior() {
        let cfg = PriorConfig { lambda: 1.0, truncate_k: false, ..Default::default() };
        let p1 = log_prior_k(1, &cfg, 1000).unwrap().exp();
        assert!((p1 - 1.0 / (1f64.exp() - 1.0)).abs() < 1e-14);
        assert!((p1 - 0.5820).abs() < 1e-4);
        let cfg = PriorConfig { lambda: 3.0, k_max: Some(6), ..Default::default() };
        for k in 1..6 {
            let r = log_prior_k(k + 1, &cfg, 100).unwrap() - log_prior_k(k, &cfg, 100).unwrap();
            assert!((r - (3.0 / (k + 1) as f64).ln()).abs() < 1e-12);
        }
        let total: f64 = (1..=6).map(|k| log_prior_k(k, &cfg, 100).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(log_prior_k(7, &cfg, 100).unwrap(), f64::NEG_INFINITY);
        assert!(log_prior_k(0, &cfg, 100).is_err());
    }

    #[test]
    fn galton_watson_small_values() {
        let g = 0.1;
        assert!((log_prior_k_galton_watson(1, g, 10).unwrap().exp() - 0.9).abs() < 1e-15);
        assert!((log_prior_k_galton_watson(2, g, 10).unwrap().exp() - g * 0.81).abs() < 1e-15);
        // closed form: Catalan(k-1) γ^{k-1} (1-γ)^k
        let masses = galton_watson_log_masses(g, 30).unwrap();
        let mut catalan = 1.0f64;
        for (k, mass) in masses.iter().enumerate().skip(1) {
            let exact = catalan * g.powi(k as i32 - 1) * (1.0 - g).powi(k as i32);
            assert!((mass.exp() - exact).abs() <= 1e-12 * exact);
            let m = (k - 1) as f64;
            catalan *= 2.0 * (2.0 * m + 1.0) / (m + 2.0);
        }
        assert!(galton_watson_log_masses(0.6, 5).is_err());
    }

    #[test]
    fn galton_watson_tail_bounds() {
        let g = 0.1;
        let r = 4.0 * g * (1.0 - g);
        for k in 1..=20 {
            let tail = galton_watson_tail(g, k).unwrap();
            // Catalan(m) <= 4^m gives a geometric majorant
            assert!(tail <= (1.0 - g) * r.powi(k as i32) / (1.0 - r));
            // the log-odds display (γ/(1-γ))^{k-1/2} only holds for k <= 2 here
            let display = (g / (1.0 - g)).powf(k as f64 - 0.5);
            assert_eq!(tail <= display, k <= 2, "k={k}: tail {tail}, display {display}");
        }
    }

    #[test]
    fn tree_prior_normalizer() {
        let d = Dataset::new(3, 1, vec![0.1, 0.5, 0.9], vec![0.0; 3]).unwrap();
        let cfg = PriorConfig::default();
        assert_eq!(log_prior_tree(&TreePartition::leaf(), &[], &d, &cfg), 0.0);
        let t = TreePartition::split(SplitRule::new(0, 0.1), TreePartition::leaf(), TreePartition::leaf());
        assert!((log_prior_tree(&t, &[0], &d, &cfg) + 3f64.ln()).abs() < 1e-12);
        let bad = TreePartition::split(SplitRule::new(0, 0.9), TreePartition::leaf(), TreePartition::leaf());
        assert_eq!(log_prior_tree(&bad, &[0], &d, &cfg), f64::NEG_INFINITY);
    }

    #[test]
    fn step_prior() {
        let v = log_prior_steps(&[0.0; 3], 1.0);
        assert!((v + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn tree_count_prior() {
        let total: f64 = (1..=30).map(|t| log_prior_t(t, 1.0, 30).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((log_prior_t(4, 1.3, 50) - log_prior_t(3, 1.3, 50) + 1.3).abs() < 1e-12);
        assert_eq!(log_prior_t(31, 1.0, 30), f64::NEG_INFINITY);
    }

    #[test]
    fn forest_leaf_prior_uses_lambda_over_t() {
        let cfg = PriorConfig { lambda: 2.0, truncate_k: false, ..Default::default() };
        let one = log_prior_forest_shape(&[1, 1], SubsetSizes::Shared(0), &cfg, 1000, 3).unwrap();
        let rest = log_prior_t(2, cfg.c_t, 1000) + log_prior_q(0, 3, &cfg).unwrap();
        let per_tree = ((one - rest) / 2.0).exp();
        assert!((per_tree - 1.0 / (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PriorConfig { c_t: 0.5, ..Default::default() }.validate(None).is_err());
        assert!(PriorConfig { k_max: Some(11), ..Default::default() }.validate(Some(10)).is_err());
        assert!(PriorConfig { cbar: 2, k_max: Some(3), ..Default::default() }.validate(Some(12)).is_ok());
        let text = toml::to_string(&PriorConfig::default()).unwrap();
        let back: PriorConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, PriorConfig::default());
    }

    #[test]
    fn prior_draws_have_finite_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|i| vec![i as f64 / 19.0, ((i * 7) % 20) as f64 / 19.0, ((i * 3) % 20) as f64 / 19.0]).collect();
        let d = Dataset::from_rows(&rows, vec![0.0; 20]).unwrap();
        let cfg = PriorConfig { a: 0.2, c: 1.0, lambda: 4.0, ..Default::default() };
        let model = PriorModel::new(cfg.clone(), 20, 3).unwrap();
        for mode in [ModelMode::Cart, ModelMode::ForestSharedS, ModelMode::ForestPerTreeS] {
            for _ in 0..50 {
                let st = sample_from_prior(&cfg, &d, mode, &mut rng).unwrap();
                assert!(model.log_joint(&st, &d).is_finite(), "{mode:?}: {st:?}");
            }
        }
    }

    #[test]
    fn constant_axis_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dataset::from_rows(&[vec![0.1, 0.5], vec![0.7, 0.5], vec![0.9, 0.5]], vec![0.0; 3]).unwrap();
        let err = sample_tree_uniform(&d, &[1], 2, 1, true, 10, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn k_max_one_forces_single_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Dataset::new(5, 2, (0..10).map(|i| i as f64 / 9.0).collect(), vec![0.0; 5]).unwrap();
        let cfg = PriorConfig { k_max: Some(1), a: 0.1, c: 1.0, ..Default::default() };
        for _ in 0..100 {
            let st = sample_from_prior(&cfg, &d, ModelMode::Cart, &mut rng).unwrap();
            assert_eq!(st.leaf_counts(), vec![1]);
        }
    }
}
