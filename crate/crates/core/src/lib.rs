//! Pairwise maximum-entropy (autologistic) models of binary market orientations.
//!
//! The crate turns price panels into ±1 orientation panels ([`ingest`]),
//! evaluates the pairwise model and its conditional flip probabilities
//! ([`model`]), fits parameters by regularized pseudo-likelihood and a set of
//! baselines ([`infer`]), generates synthetic data ([`sample`]) and scores
//! reversal predictions ([`eval`]). The [`cli`] module wires everything into
//! the `maxent-reversal` binary.

pub mod cli;
pub mod error;
pub mod eval;
pub mod infer;
pub mod ingest;
pub mod model;
pub mod optim;
pub mod sample;

pub use error::{Error, Result};
pub use ingest::{PricePanel, ReversalPanel, SignPanel, ZeroPolicy};
pub use model::{CouplingSet, ReversalCouplingSet};
