//! Synthetic control estimation for school-level outcome panels.
//!
//! The crate is organized as a pipeline:
//!
//! * [`panel`] — ingestion of unit-by-year outcome panels from delimited files,
//!   plus the small algebra of panel reshaping (joins, period drops, covariate
//!   collapsing). Missing cells are explicit, never NaN.
//! * [`pool`] — donor pool construction from typed attribute predicates, with
//!   great-circle distance available as a derived feature.
//! * [`solver`] — deterministic constrained least-squares kernels: simplex- and
//!   l1-ball-constrained projected gradient, and rank-revealing OLS.
//! * [`estimators`] — the synthetic control estimator family built on the
//!   solvers: the nested covariate-weighted form, the outcome-only simplex
//!   form, the demeaned form, the OLS form, and the l1-constrained form.
//! * [`inference`] — placebo permutation inference on the ratio of
//!   post-treatment to pre-treatment mean squared prediction error.
//! * [`analysis`] — effect summaries over reporting windows, leave-one-out
//!   donor robustness, estimator sensitivity sweeps, and percentile tables.
//! * [`simgen`] — a factor-model simulator with known counterfactuals, used
//!   both for the bundled fixture and for estimator validation.
//! * [`report`] — weight, balance, p-value, and robustness tables plus
//!   self-contained SVG figures, all rendered from serialized fit reports.
//!
//! Every routine is deterministic: fixed solver schedules, seeded generators,
//! and order-preserving parallel reductions. Running the same configuration
//! twice — at any worker count — produces byte-identical output.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod panel;
pub mod parallel;
pub mod pool;
pub mod report;
pub mod simgen;
pub mod solver;

pub use error::{Error, Result};
