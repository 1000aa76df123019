//! Conic programs over real and complex matrix variables.
//!
//! A [`ConicProgram`] collects variable blocks, a linear objective, linear
//! equalities, Hermitian PSD constraints assembled from block placements and
//! at most one ellipsoid constraint. [`solve`] lowers the program to real
//! standard form and runs the built-in interior-point backend.

mod dump;
mod embed;
mod error;
mod ipm;
mod lower;
mod program;
mod solution;

pub use dump::ProgramDump;
pub use embed::hermitian_embed;
pub use error::ConicError;
pub use ipm::{Backend, InteriorPoint, SolverSettings};
pub use program::{Affine, BlockId, BlockKind, ConicProgram, Ellipsoid, EllipsoidRadius, Placement, PsdBuilder, ScalarVar, VariableBlock};
pub use solution::{Solution, SolveStats, Status};

pub use num_complex::Complex64;

/// Solves `program` with the default interior-point backend.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<Solution, ConicError> {
    InteriorPoint.solve(program, settings)
}
