use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::ModelMode;

/// Proposal types of the reversible-jump sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
    VarAdd,
    VarRemove,
    VarSwap,
    Birth,
    Death,
}

impl MoveKind {
    pub const ALL: [MoveKind; 9] = [
        MoveKind::Grow,
        MoveKind::Prune,
        MoveKind::Change,
        MoveKind::Swap,
        MoveKind::VarAdd,
        MoveKind::VarRemove,
        MoveKind::VarSwap,
        MoveKind::Birth,
        MoveKind::Death,
    ];
}

/// Move-type probabilities. Tree moves are drawn once per tree visit from
/// the first seven entries (renormalized); `birth + death` is the chance of
/// one tree birth/death attempt per forest sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
    pub var_add: f64,
    pub var_remove: f64,
    pub var_swap: f64,
    #[serde(default)]
    pub birth: f64,
    #[serde(default)]
    pub death: f64,
}

impl MoveProbs {
    pub fn default_for(mode: ModelMode) -> Self {
        let (birth, death) = if mode.is_forest() { (0.05, 0.05) } else { (0.0, 0.0) };
        let scale = 1.0 - birth - death;
        Self {
            grow: 0.25 * scale,
            prune: 0.25 * scale,
            change: 0.15 * scale,
            swap: 0.1 * scale,
            var_add: 0.1 * scale,
            var_remove: 0.1 * scale,
            var_swap: 0.05 * scale,
            birth,
            death,
        }
    }

    pub fn get(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change => self.change,
            MoveKind::Swap => self.swap,
            MoveKind::VarAdd => self.var_add,
            MoveKind::VarRemove => self.var_remove,
            MoveKind::VarSwap => self.var_swap,
            MoveKind::Birth => self.birth,
            MoveKind::Death => self.death,
        }
    }

    fn tree_total(&self) -> f64 {
        MoveKind::ALL[..7].iter().map(|&k| self.get(k)).sum()
    }

    /// Probability of `kind` among the tree moves.
    pub fn tree_prob(&self, kind: MoveKind) -> f64 {
        self.get(kind) / self.tree_total()
    }

    pub fn validate(&self, mode: ModelMode) -> Result<()> {
        let all: Vec<f64> = MoveKind::ALL.iter().map(|&k| self.get(k)).collect();
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("move probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = all.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("move probabilities sum to {total}, expected 1")));
        }
        for (a, b, name) in [
            (self.grow, self.prune, "grow/prune"),
            (self.var_add, self.var_remove, "var-add/var-remove"),
            (self.birth, self.death, "birth/death"),
        ] {
            if (a > 0.0) != (b > 0.0) {
                return Err(Error::Config(format!("{name} must be both zero or both positive")));
            }
        }
        if self.tree_total() <= 0.0 {
            return Err(Error::Config("at least one tree move needs positive probability".into()));
        }
        if !mode.is_forest() && self.birth + self.death > 0.0 {
            return Err(Error::Config("birth/death moves need a forest mode".into()));
        }
        Ok(())
    }

    pub(crate) fn draw_tree_move<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let mut u = rng.random::<f64>() * self.tree_total();
        for &k in &MoveKind::ALL[..7] {
            let p = self.get(k);
            if u < p {
                return k;
            }
            u -= p;
        }
        *MoveKind::ALL[..7].iter().rev().find(|&&k| self.get(k) > 0.0).expect("validated")
    }
}

/// Settings of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Iterations (single tree) or sweeps over all trees (forest).
    pub iterations: usize,
    /// Discarded leading iterations; defaults to 20% of `iterations`.
    pub burn_in: Option<usize>,
    pub thinning: usize,
    pub seed: u64,
    pub mode: ModelMode,
    /// Defaults to [`MoveProbs::default_for`] the mode.
    pub moves: Option<MoveProbs>,
    /// Number of stumps a forest chain starts from.
    pub initial_trees: usize,
    /// Store the canonical data partition in every record (single tree).
    pub record_partitions: bool,
    /// Store fitted values at the design points in every record.
    pub record_fits: bool,
    /// Recompute the forest fit from scratch after every sweep and fail if
    /// the running fit drifted by more than 1e-10.
    pub check_residuals: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: None,
            thinning: 1,
            seed: 0,
            mode: ModelMode::Cart,
            moves: None,
            initial_trees: 1,
            record_partitions: false,
            record_fits: false,
            check_residuals: false,
        }
    }
}

impl ChainConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 5)
    }

    pub fn moves(&self) -> MoveProbs {
        self.moves.clone().unwrap_or_else(|| MoveProbs::default_for(self.mode))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thinning == 0 {
            return Err(Error::Config("iterations and thinning must be positive".into()));
        }
        if self.burn_in() >= self.iterations {
            return Err(Error::Config("burn-in leaves no kept iterations".into()));
        }
        if self.mode.is_forest() && self.initial_trees == 0 {
            return Err(Error::Config("a forest starts with at least one tree".into()));
        }
        self.moves().validate(self.mode)
    }

    /// Whether iteration `it` (0-based) is recorded.
    pub fn keeps(&self, it: usize) -> bool {
        it >= self.burn_in() && (it - self.burn_in()).is_multiple_of(self.thinning)
    }
}
