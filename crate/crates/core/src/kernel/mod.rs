//! Canonical QP + second-order-cone programs and their primal–dual solution.
//!
//! The interior-point iteration itself is delegated to `clarabel`; program
//! assembly, the multiplier sign convention and the KKT audit live here.

mod kkt;
mod program;
mod solve;

pub use kkt::{dual_objective, kkt_residuals, stationarity, Residuals};
pub use program::{ConeBlock, ConvexProgram, LinExpr, LinRow};
pub use solve::{price_from_dual, solve, ConicSolution, SolveStatus, Tolerances};
