//! Gauss-Radau rules on `[0, 1]` with the last node pinned at 1.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QkdError, Result};

pub const MAX_ORDER: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub m: usize,
    /// nodes, strictly increasing, `t[m-1] == 1`
    pub t: Vec<f64>,
    pub w: Vec<f64>,
}

/// Builds the rule from the shifted Legendre Jacobi matrix, with the last
/// diagonal entry modified so that 1 is an eigenvalue.
pub fn gauss_radau(m: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&m) {
        return Err(QkdError::InvalidInput(format!("quadrature order {m} outside 1..={MAX_ORDER}")));
    }
    if m == 1 {
        return Ok(QuadratureRule { m, t: vec![1.0], w: vec![1.0] });
    }
    // off-diagonal of the monic shifted Legendre recurrence
    let beta: Vec<f64> = (1..m)
        .map(|j| {
            let j = j as f64;
            j / (2.0 * (4.0 * j * j - 1.0).sqrt())
        })
        .collect();
    // (J_{m-1} - I) δ = β²_{m-1} e_{m-1}, tridiagonal with constant diagonal -1/2
    let n = m - 1;
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = beta[n - 1] * beta[n - 1];
    let delta = solve_tridiagonal(&vec![-0.5; n], &beta[..n - 1], &rhs);
    let last = 1.0 + delta[n - 1];

    let mut j = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = if i == m - 1 { last } else { 0.5 };
    }
    for i in 0..m - 1 {
        j[(i, i + 1)] = beta[i];
        j[(i + 1, i)] = beta[i];
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    t[m - 1] = 1.0;
    Ok(QuadratureRule { m, t, w })
}

/// Symmetric tridiagonal solve (Thomas algorithm).
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// `c_m = Σ w_i / (t_i ln 2)`.
pub fn c_constant(rule: &QuadratureRule) -> f64 {
    rule.t.iter().zip(&rule.w).map(|(t, w)| w / t).sum::<f64>() / std::f64::consts::LN_2
}
