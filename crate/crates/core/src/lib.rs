//! Constrained multi-slot ranking optimization.
//!
//! The crate has three layers:
//!
//! - the ranking problem itself: a large structured QP solved through its
//!   nonnegative dual, with the primal recovered per user by a cheap
//!   projection and turned into a deterministic serving plan,
//! - an interaction-aware formulation where click/revenue vectors depend
//!   linearly on the slate, giving a convex QCQP with one ellipsoidal
//!   constraint,
//! - a QCQP-to-QP approximation that replaces the ellipsoid with tangent
//!   planes at low-discrepancy boundary points, plus exact small-scale
//!   oracles and a benchmark harness.

pub mod asqp;
pub mod bench;
pub mod dual;
pub mod error;
pub mod interaction;
pub mod io;
pub mod linalg;
pub mod lowdisc;
pub mod nonneg;
pub mod oracle;
pub mod primal;
pub mod problem;
pub mod qcqp;
pub mod sparse;

pub use error::{MooError, Result};
pub use problem::{
    assemble_stacked, build_local_polytope, build_problem, LocalPolytope, ProblemFile,
    RankingProblem, StackedSystem,
};
pub use sparse::sparsity_ratio;
