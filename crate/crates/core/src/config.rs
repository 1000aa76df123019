//! Tolerances shared by every module.

use conic::SolverSettings;
use serde::{Deserialize, Serialize};

use crate::error::{QkdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// equality-type checks (normalization, isometry, unitarity)
    pub equality: f64,
    /// elementwise Hermiticity check
    pub hermitian: f64,
    /// entrywise imaginary part below which an operator counts as real
    pub real: f64,
    /// symmetry condition on the constraint operators
    pub symmetry: f64,
    /// minimum eigenvalue below which a state is not full rank, and the
    /// relative eigenvalue cutoff for its support
    pub rank: f64,
    /// residual for the quantum-compatibility feasibility problem
    pub compatibility: f64,
    pub solver: SolverSettings,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            equality: 1e-9,
            hermitian: 1e-12,
            real: 1e-12,
            symmetry: 1e-10,
            rank: 1e-7,
            compatibility: 1e-7,
            solver: SolverSettings::default(),
        }
    }
}

/// Variables read by [`Tolerances::from_env`].
pub const ENV_FEAS_TOL: &str = "QKDRATE_FEAS_TOL";
pub const ENV_GAP_TOL: &str = "QKDRATE_GAP_TOL";
pub const ENV_PSD_FLOOR: &str = "QKDRATE_PSD_FLOOR";
pub const ENV_MAX_ITER: &str = "QKDRATE_MAX_ITER";

impl Tolerances {
    /// Defaults with solver overrides taken from the environment.
    pub fn from_env() -> Result<Self> {
        let mut t = Tolerances::default();
        if let Some(v) = read_env::<f64>(ENV_FEAS_TOL)? {
            t.solver.feas_tol = positive(ENV_FEAS_TOL, v)?;
        }
        if let Some(v) = read_env::<f64>(ENV_GAP_TOL)? {
            t.solver.gap_tol = positive(ENV_GAP_TOL, v)?;
        }
        if let Some(v) = read_env::<f64>(ENV_PSD_FLOOR)? {
            t.solver.psd_floor = positive(ENV_PSD_FLOOR, v)?;
        }
        if let Some(v) = read_env::<usize>(ENV_MAX_ITER)? {
            t.solver.max_iter = v;
        }
        Ok(t)
    }
}

fn read_env<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
    match std::env::var(name) {
        Ok(s) => s.trim().parse::<T>().map(Some).map_err(|_| QkdError::InvalidInput(format!("{name}={s} is not a valid number"))),
        Err(_) => Ok(None),
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(QkdError::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}
