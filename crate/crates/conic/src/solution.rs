use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::program::{Affine, BlockKind, ScalarVar, VariableBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    /// Stopped short of the requested tolerances with residuals and gap
    /// below `1e-5`.
    NearOptimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl Status {
    /// True for `Optimal` and `NearOptimal`.
    pub fn has_solution(self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::NearOptimal => "near-optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// relative primal residual of the returned point
    pub primal_residual: f64,
    /// relative dual residual of the returned point
    pub dual_residual: f64,
    /// absolute gap between primal and dual objectives
    pub gap: f64,
    pub seconds: f64,
    /// smallest eigenvalue over the PSD slacks
    pub min_slack_eigenvalue: f64,
    /// summary of the infeasibility certificate, when one was found
    pub certificate: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Solution {
    pub status: Status,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// values of all real unknowns
    pub x: Vec<f64>,
    /// sensitivity of the optimum to each equality right-hand side, in
    /// declaration order
    pub equality_duals: Vec<f64>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn value(&self, expr: &Affine) -> Complex64 {
        expr.evaluate(&self.x)
    }

    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.x[v.index()]
    }

    /// Matrix value of a block. `Vector` blocks come back as a column.
    pub fn matrix(&self, block: &VariableBlock) -> DMatrix<Complex64> {
        let n = block.dim;
        if block.kind == BlockKind::Vector {
            return DMatrix::from_fn(n, 1, |p, _| self.value(&block.entry(p, 0)));
        }
        DMatrix::from_fn(n, n, |p, q| self.value(&block.entry(p, q)))
    }

    /// Real matrix value of a real block, taking real parts otherwise.
    pub fn real_matrix(&self, block: &VariableBlock) -> DMatrix<f64> {
        self.matrix(block).map(|z| z.re)
    }

    pub fn vector(&self, block: &VariableBlock) -> DVector<f64> {
        let n = block.dim;
        DVector::from_fn(n, |p, _| self.value(&block.entry(p, 0)).re)
    }
}
