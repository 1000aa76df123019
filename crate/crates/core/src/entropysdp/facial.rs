//! Strict feasibility and restriction to the support of the feasible states.

use conic::{solve, Affine, BlockKind, ConicProgram, Placement, PsdBuilder};
use serde::Serialize;

use super::problem::{check_isometry, EntropyProblem};
use super::protocol::ProtocolInstance;
use crate::config::Tolerances;
use crate::error::{QkdError, Result};
use crate::qcore::{eigh, CMatrix};

#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityReport {
    /// largest achievable minimum eigenvalue of a compatible state
    pub lambda: f64,
    pub strictly_feasible: bool,
    /// dimension of the support of the maximizer
    pub support_dim: usize,
    /// columns spanning the support, when not strictly feasible
    #[serde(skip)]
    pub isometry: Option<CMatrix>,
}

/// Maximizes the minimum eigenvalue of a state reproducing the frequencies.
pub fn strict_feasibility_check(protocol: &ProtocolInstance, tol: &Tolerances) -> Result<FeasibilityReport> {
    let freqs = protocol.freqs.as_ref().ok_or_else(|| QkdError::InvalidInput("strict feasibility needs frequencies".into()))?;
    let dim = protocol.joint_dim();
    let real = protocol.constraint_ops.iter().all(|e| e.is_real(tol.real));
    let mut program = ConicProgram::new();
    let sigma = program.add_block("sigma", if real { BlockKind::Symmetric } else { BlockKind::Hermitian }, dim)?;
    let lam = program.add_block("lambda", BlockKind::Vector, 1)?;
    program.add_equality("trace", &program.trace(sigma), 1.0)?;
    for (k, e) in protocol.constraint_ops.iter().enumerate() {
        program.add_equality(format!("E{k}"), &program.trace_product(sigma, e.matrix()).re(), freqs[k])?;
    }
    let lam_expr = Affine::scalar(program.scalar(lam, 0));
    let mut psd = PsdBuilder::new("support", dim);
    psd.place(&program.block(sigma).clone(), 0, 0, Placement::Direct);
    psd.add_diagonal(0, dim, &lam_expr, -1.0);
    program.add_psd(psd)?;
    program.add_objective(&lam_expr, -1.0);

    let sol = solve(&program, &tol.solver)?;
    if sol.status == conic::Status::Infeasible {
        return Err(QkdError::InfeasibleStatistics("no quantum state reproduces the frequencies".into()));
    }
    if !sol.status.has_solution() {
        return Err(QkdError::Solver { status: sol.status, context: "strict feasibility check".into() });
    }
    let lambda = sol.scalar(program.scalar(lam, 0));
    if lambda < -tol.rank {
        return Err(QkdError::InfeasibleStatistics(format!("frequencies need a state with minimum eigenvalue {lambda:.3e}")));
    }
    if lambda > tol.rank {
        return Ok(FeasibilityReport { lambda, strictly_feasible: true, support_dim: dim, isometry: None });
    }
    let s = sol.matrix(program.block(sigma));
    let s = (&s + s.adjoint()) * crate::qcore::c(0.5);
    let (vals, vecs) = eigh(&s);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..dim).filter(|&j| vals[j] > tol.rank * top).collect();
    // most significant direction first
    let cols: Vec<_> = keep.iter().rev().map(|&j| vecs.column(j).into_owned()).collect();
    let v = CMatrix::from_columns(&cols);
    Ok(FeasibilityReport { lambda, strictly_feasible: false, support_dim: keep.len(), isometry: Some(v) })
}

/// Restricts the program to the range of `v`.
pub fn facial_reduce(prob: &EntropyProblem, v: &CMatrix) -> Result<EntropyProblem> {
    if v.nrows() != prob.protocol.joint_dim() {
        return Err(QkdError::Dimension(format!("isometry has {} rows, expected {}", v.nrows(), prob.protocol.joint_dim())));
    }
    check_isometry(v)?;
    if prob.reduction.is_some() {
        return Err(QkdError::Unsupported("the problem is already reduced".into()));
    }
    let mut out = prob.clone();
    out.reduction = Some(v.clone());
    Ok(out)
}
