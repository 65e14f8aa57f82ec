//! Momentum stochastic conditional gradient (SCG) over layered, norm-constrained
//! parameter spaces, together with the batch-size / sequence-length / token-budget
//! scaling calculators and the estimators for the problem constants they consume.
//!
//! Module map:
//!
//! - [`geometry`]: per-block norms, composite primal/dual norms, linear
//!   minimization oracles and polar factors.
//! - [`optimizer`]: the SCG and unconstrained SCG loops, stepsize schedules,
//!   staged restarts and run logs.
//! - [`scaling`]: closed-form parameter prescriptions, the three-term error law,
//!   critical batch scale and hyperparameter transfer rules.
//! - [`estimation`]: smoothness, KL, norm-equivalence and variance estimators
//!   plus shifted power-law fitting.
//! - [`problems`]: synthetic stochastic objectives with controllable constants.
//! - [`harness`]: configuration files, sweeps, CSV/JSON emission and the
//!   command implementations used by the `bst` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod optimizer;
pub mod par;
pub mod problems;
pub mod scaling;

pub use error::{Error, Result};
pub use geometry::{BlockGeometry, Geometry, LayeredPoint, NormKind, NormReport, Shape};
pub use optimizer::{BetaSchedule, RunLog, ScgConfig, StagePlan, Variant};
pub use problems::{ProblemSpec, StochasticObjective};
pub use scaling::{ErrorLaw, ErrorLawMode, ModelConstants, ProblemConstants, TunedConfig};
