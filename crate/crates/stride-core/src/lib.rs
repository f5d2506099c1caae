//! Compiler and solver for dense second-order moment relaxations of
//! polynomial optimization problems.
//!
//! The pipeline has three stages:
//!
//! 1. [`relax`] compiles a polynomial problem (a built-in univariate quartic,
//!    binary quadratic programs, or quartic minimization over the sphere)
//!    into standard-form SDP data `(A, b, C)` over one PSD cone.
//! 2. [`stride`] drives the solve: an inexact projected-gradient backbone
//!    ([`ipgm`]) whose projection subproblems are handled by a two-phase
//!    first-order/quasi-Newton method ([`projsolve`]), accelerated by
//!    rounding candidate solutions off the iterate, refining them with local
//!    search ([`localsearch`]), and lifting them back to rank-one matrices
//!    that are accepted only under a strict-descent policy. An ADMM pass
//!    ([`admm`]) provides the warm start.
//! 3. The final iterate is certified: KKT residues plus a global-optimality
//!    gap derived from a dual lower bound with a trace cap.
//!
//! [`symcore`] (packed symmetric matrices, eigendecomposition, PSD
//! projection) and [`linmap`] (the constraint operator and its normal
//! equations) are the shared numerical kernels; [`symstore`] holds trace
//! plumbing used for iteration logs.

pub mod admm;
pub mod ipgm;
pub mod linmap;
pub mod localsearch;
pub mod projsolve;
pub mod relax;
pub mod stride;
pub mod symcore;
pub mod symstore;

use thiserror::Error;

/// Failure modes shared by the numerical drivers.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Sym(#[from] symcore::SymError),
    #[error(transparent)]
    LinMap(#[from] linmap::LinMapError),
    /// A candidate point handed to certification violates its constraint set.
    #[error("candidate point violates its constraint set")]
    InfeasibleHypothesis,
}
