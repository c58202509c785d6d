//! Active learning with acquisition functions built from strictly proper
//! scoring rules, over finite Bayesian model families.
//!
//! The crate is organized bottom-up:
//!
//! - [`model_space`]: model families, exact posteriors and predictives.
//! - [`scoring_rules`]: proper scoring rules in Savage form.
//! - [`acquisition`]: expected score gains and the baseline strategies.
//! - [`batch_diversity`]: top-fraction filtering and k-means batch selection.
//! - [`simulator`]: seeded active learning runs against a simulated oracle.
//! - [`evaluation`]: test metrics and the pairwise comparison matrix.
//! - [`verification`]: built-in property suites.

pub mod acquisition;
pub mod batch_diversity;
pub mod evaluation;
pub mod model_space;
pub mod scoring_rules;
pub mod simulator;
pub mod verification;

/// Engine version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
