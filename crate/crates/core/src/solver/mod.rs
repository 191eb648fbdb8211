//! First-order operator-splitting solver for conic programs over products of
//! zero, nonnegative and PSD cones, with a convex quadratic objective.

mod admm;
pub mod cones;
pub mod sparse;

pub use admm::{
    solve, warm_start_compatible, AdmmSolver, ConicProblem, IterationLog, SolveResult, SolveStatus,
    SolverSettings,
};
pub use cones::{project_cone, project_psd, ConeSpec};
