//! Combines previously computed posterior distributions ("observed beliefs")
//! under an exchangeable hierarchical model: a consensus posterior for the
//! global parameter and shrinkage-updated posteriors for the study-specific
//! effects, with exact grid oracles, a joint MCMC + importance-resampling
//! scheme, a rejection-sampling ABC harness and classical meta-analysis
//! baselines.
//!
//! All randomness enters through caller-supplied seeds; every operation is
//! deterministic given its inputs and seed.

pub mod abc;
pub mod baselines;
pub mod belief;
pub mod error;
pub mod meta_model;
pub mod sampler;
pub mod stats;
pub mod updater;

pub use belief::{Belief, BandwidthRule, GridPmf, SampleSet};
pub use error::{Error, Result};
pub use meta_model::{GlobalParam, HierarchicalSpec, McBudget};
