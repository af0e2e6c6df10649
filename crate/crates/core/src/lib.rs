//! N-output mechanisms for locally differentially private collection of
//! bounded numerical data.
//!
//! Each client holds a value `x` in `[-1, 1]` and reports one of `N`
//! fixed outputs. The output probabilities are linear interpolations of a
//! probability table anchored at `2n + 1` endpoints, which keeps every
//! report unbiased while satisfying epsilon-LDP. Designs come from two
//! sources:
//!
//! * [`analytical`]: closed-form recurrences that pick the output count
//!   and grid for a given budget.
//! * [`numerical`]: a constrained nonlinear program that minimizes the
//!   worst-case or average variance for a fixed `N`.
//!
//! The aggregator side lives in [`estimation`] (mean, EM-based histogram
//! and variance estimation), with [`baselines`] providing Duchi, the
//! Piecewise Mechanism and categorical frequency oracles for comparison.
//! [`harness`] runs repeatable benchmark suites over these pieces.

pub mod analytical;
pub mod baselines;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod mechanism;
pub mod metrics;
pub mod numerical;

pub use error::{Error, Result};
pub use mechanism::{MechanismDesign, PrivacyBudget, ProbabilityTable, Variant};
