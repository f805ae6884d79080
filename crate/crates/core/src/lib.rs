//! Doubly regularized entropic Wasserstein barycenters.
//!
//! Given discrete measures `ν¹, …, νᵏ` with weights `w`, an inner entropic
//! strength `λ` and an outer strength `τ`, the `(λ, τ)`-barycenter minimizes
//!
//! ```text
//! Σ_j w_j T_λ(μ, νʲ) + τ KL(μ ‖ π_ref)
//! ```
//!
//! This crate solves the concave dual of that problem in two settings:
//!
//! | Setting | Entry point | Notes |
//! |---------|-------------|-------|
//! | fixed support (`π_ref` discrete) | [`sinkhorn::run`] | damped Sinkhorn, `η = min(1, τ/λ)` |
//! | free support (`π_ref` Lebesgue on a ball/box) | [`free_support::run_free_support`] | Monte-Carlo marginals + Langevin sampling |
//!
//! Every iterate carries a computable [`dual::Certificate`] bounding the dual
//! suboptimality gap, which is also the stopping rule.
//!
//! All kernel arithmetic is carried out in log scale. The crate is `no_std`
//! (with `alloc`); IO, file formats and the CLI live in the `drb` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dual;
pub mod entropic;
pub mod error;
pub mod free_support;
pub mod langevin;
pub mod math;
pub mod measures;
pub mod oracle;
pub mod reference;
pub mod rng;
pub mod sinkhorn;

pub use dual::{Certificate, DualState};
pub use entropic::PotentialVector;
pub use error::{Error, Result};
pub use measures::{
    CostOracle, DiscreteMeasure, Domain, FixedSupportProblem, Mode, PointCloud, SolverConfig,
};
pub use sinkhorn::{ConvergenceTrace, SolveOutcome, TraceRecord};
