//! Dense linear matrix inequality (LMI) problems and a primal-dual
//! interior-point solver for them.
//!
//! A problem is stated in the form
//!
//! ```text
//! minimize    c^T x
//! subject to  F0_b + sum_i x_i F_ib  <=  0     for every block b
//!             E x = g
//! ```
//!
//! where every `F` is symmetric and `<=` is the negative-semidefinite order.
//! [`LmiBuilder`] assembles such problems from matrix-valued decision
//! variables; [`solve`] runs a Nesterov-Todd scaled Mehrotra
//! predictor-corrector method on them; [`verify`] re-checks a returned point
//! by direct eigenvalue computation.

mod builder;
mod error;
mod problem;
mod solver;
mod verify;

pub use builder::{Affine, LmiBuilder, MatVar, Scalar, SymVar};
pub use error::SdpError;
pub use problem::{Block, BlockDump, CoeffDump, LmiProblem, ProblemDump, VarEntry, VarKind};
pub use solver::{solve, SdpOptions, SdpSolution, SolveStatus};
pub use verify::{residuals, verify, VerifyReport};
