//! Posterior computation.
//!
//! Steps are Gaussian and the noise variance is one, so a tree's steps can
//! be integrated out in closed form ([`log_marginal_likelihood_tree`]). The
//! single-tree chain moves over `(S, K, tree)` with the steps integrated out
//! and draws them from their Gaussian conditional only when a fit is
//! recorded. Forest chains backfit: each tree is updated against the
//! residual of the others, then its steps are redrawn; birth/death moves add
//! and remove single-leaf trees.
//!
//! The prior on a tree weights it by the number of split orders that build
//! it, so [`exact_posterior_enumeration`] weights every data partition by its
//! count of valid split sequences. Chains and enumeration target the same
//! measure, which is what the sampler tests check.

mod chain;
mod config;
mod enumerate;
mod kernel;
mod marginal;
mod summary;
mod worktree;

pub use chain::{
    birth_log_ratio, death_log_ratio, run_cart_chain, run_chain, run_chains, run_forest_chain, ChainTrace, ForestView,
    MoveStats, TraceRecord,
};
pub use config::{ChainConfig, MoveKind, MoveProbs};
pub use enumerate::{exact_posterior_enumeration, EnumerationCaps, ExactPosterior, ExactState};
pub use marginal::{leaf_log_marginal, log_marginal_likelihood_tree};
pub use summary::{posterior_summaries, ErrorQuantiles, MoveRate, PosteriorSummary};
