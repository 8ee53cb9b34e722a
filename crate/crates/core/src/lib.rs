//! Counterexample-guided refinement of tabular gridworld policies.
//!
//! The pipeline alternates two phases over a parameterized family of
//! environments: a Bayesian-optimization falsifier searches the continuous
//! configuration box for environments where the current policy violates a
//! quantitative reach-avoid specification, and a refiner learns state
//! penalties from the counterexamples' violating behavior and replans with
//! entropy-regularized value iteration. The loop terminates when a dense
//! sampling sweep certifies non-negative robustness. A diagnostics module
//! quantifies the bound-style properties of a finished run (robustness lower
//! bound, Rademacher estimate, improvement trace, dynamics mismatch) against
//! independent oracles.

pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod falsifier;
pub mod gp;
pub mod grid;
pub mod policy;
pub mod refiner;
pub mod robustness;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod sobol;

pub use error::{Error, Result};
