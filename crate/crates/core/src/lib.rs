//! Bayesian regression trees and forests with spike-and-slab variable
//! selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`] and [`testfn`]: fixed designs, the empirical norm and Hölder
//!   test functions;
//! - [`partition`]: tree partitions, validity, diameters, k-d trees and
//!   partition counts;
//! - [`ensemble`]: forests, global partitions and stretching matrices;
//! - [`priors`]: spike-and-tree / spike-and-forest prior densities and
//!   ancestral sampling;
//! - [`inference`]: integrated likelihoods, reversible-jump chains for trees
//!   and forests, exact enumeration and posterior summaries;
//! - [`oracle`]: quadrature and goodness-of-fit references;
//! - [`experiment`], [`verify`] and [`config`]: the desk-scale studies, the
//!   invariant suite and the configuration file behind the command line.
//!
//! All randomness is driven by explicit `u64` seeds so every run is
//! reproducible.

pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod oracle;
pub mod partition;
pub mod priors;
pub mod testfn;
pub mod verify;

pub use error::{Error, Result};

/// The guide's snippets, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/partitions.md")]
    mod partitions {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
