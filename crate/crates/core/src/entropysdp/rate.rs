//! Key rates from the entropy bound.

use std::time::Instant;

use conic::{solve, Solution, Status};
use rayon::prelude::*;
use serde::Serialize;

use super::facial::{facial_reduce, strict_feasibility_check};
use super::problem::{build_entropy_sdp, build_with_nodes, EntropyProblem, EntropySdp};
use crate::error::{QkdError, Result};
use crate::qcore::{conditional_entropy_ab, JointDistribution};

pub const CSV_HEADER: &str = "protocol,d,k,v,m,H_AE,H_AB,rate,status,seconds";

#[derive(Clone, Debug, Default, Serialize)]
pub struct RateDiagnostics {
    /// side of `σ` before any reduction
    pub dim: usize,
    /// side of `σ` after facial reduction
    pub reduced_dim: Option<usize>,
    /// optimal minimum eigenvalue from the strict-feasibility check
    pub min_eigenvalue: Option<f64>,
    pub strictly_feasible: Option<bool>,
    pub real_variables: bool,
    /// (representative, orbit size) under the permutation symmetry
    pub orbits: Option<Vec<(usize, usize)>>,
    pub equalities: usize,
    pub psd_blocks: usize,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub split: bool,
    /// per-node minima when split
    pub node_values: Vec<f64>,
    /// factor applied to both entropies
    pub rate_scale: f64,
    pub chi: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateResult {
    pub protocol: String,
    pub d: usize,
    pub k: usize,
    pub v: Option<f64>,
    pub m: usize,
    /// lower bound on H(A|E), bits
    pub h_ae: f64,
    pub h_ab: f64,
    /// `h_ae − h_ab`
    pub rate: f64,
    pub status: Status,
    pub seconds: f64,
    pub diagnostics: RateDiagnostics,
}

impl RateResult {
    /// One CSV row in [`CSV_HEADER`] order; the rate is clamped at zero.
    pub fn csv_row(&self) -> String {
        let v = self.v.map(|v| format!("{v:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{},{:.3}",
            self.protocol,
            self.d,
            self.k,
            v,
            self.m,
            self.h_ae,
            self.h_ab,
            self.rate.max(0.0),
            self.status,
            self.seconds
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rate result serializes")
    }
}

/// Builds and solves the full program.
pub fn solve_entropy(prob: &EntropyProblem) -> Result<(EntropySdp, Solution)> {
    let sdp = build_entropy_sdp(prob)?;
    let sol = solve(&sdp.program, &prob.options.tolerances.solver)?;
    check_status(prob, sol.status, "entropy program")?;
    Ok((sdp, sol))
}

fn check_status(prob: &EntropyProblem, status: Status, context: &str) -> Result<()> {
    if status == Status::Infeasible {
        let msg = if prob.region.is_some() {
            "the credible region contains no quantum-compatible probabilities".to_string()
        } else {
            "no quantum state reproduces the frequencies".to_string()
        };
        return Err(QkdError::InfeasibleStatistics(msg));
    }
    if !status.has_solution() {
        return Err(QkdError::Solver { status, context: context.to_string() });
    }
    Ok(())
}

/// Sum over quadrature nodes of separately minimized terms, plus `c_m`.
/// Never exceeds the joint optimum.
pub fn split_lower_bound(prob: &EntropyProblem) -> Result<f64> {
    Ok(split_solve(prob)?.0)
}

fn split_solve(prob: &EntropyProblem) -> Result<(f64, Vec<f64>, Vec<Solution>)> {
    let runs: Vec<Result<(f64, Solution)>> = (0..prob.rule.m)
        .into_par_iter()
        .map(|i| {
            let sdp = build_with_nodes(prob, &[i])?;
            let sol = solve(&sdp.program, &prob.options.tolerances.solver)?;
            check_status(prob, sol.status, &format!("quadrature node {i}"))?;
            Ok((sol.primal_objective.min(sol.dual_objective), sol))
        })
        .collect();
    let mut values = Vec::with_capacity(runs.len());
    let mut sols = Vec::with_capacity(runs.len());
    for r in runs {
        let (v, s) = r?;
        values.push(v);
        sols.push(s);
    }
    let total = crate::quadrature::c_constant(&prob.rule) + values.iter().sum::<f64>();
    Ok((total, values, sols))
}

/// Key-basis statistics entering H(A|B): from the generating state when
/// known, else from the frequencies or the region center.
fn key_joint(prob: &EntropyProblem) -> Result<JointDistribution> {
    if let Some(region) = &prob.region {
        let f: Vec<f64> = region.f.iter().cloned().collect();
        return prob.protocol.key_joint_from_frequencies(&region.operators, &f);
    }
    if let Some(j) = &prob.protocol.key_joint {
        return Ok(j.clone());
    }
    let freqs = prob.protocol.freqs.as_ref().ok_or_else(|| QkdError::InvalidInput("no frequencies".into()))?;
    let ops: Vec<usize> = (0..freqs.len()).collect();
    prob.protocol.key_joint_from_frequencies(&ops, freqs)
}

/// Prepares the problem (strict-feasibility check and facial reduction as
/// configured) and returns it with the diagnostics filled so far.
pub fn prepare(prob: &EntropyProblem) -> Result<(EntropyProblem, RateDiagnostics)> {
    let mut diag = RateDiagnostics { dim: prob.protocol.joint_dim(), rate_scale: prob.protocol.rate_scale, ..Default::default() };
    let mut working = prob.clone();
    if prob.region.is_none() && prob.reduction.is_none() {
        let report = strict_feasibility_check(&prob.protocol, &prob.options.tolerances)?;
        diag.min_eigenvalue = Some(report.lambda);
        diag.strictly_feasible = Some(report.strictly_feasible);
        if let Some(v) = &report.isometry {
            if prob.options.facial_reduction && prob.options.symmetry.is_none() {
                working = facial_reduce(prob, v)?;
                diag.reduced_dim = Some(report.support_dim);
            } else {
                diag.warnings.push(format!(
                    "no full-rank state matches the frequencies (support dimension {}); the unreduced program may be numerically unreliable",
                    report.support_dim
                ));
            }
        }
    }
    if let Some(r) = &prob.reduction {
        diag.reduced_dim = Some(r.ncols());
    }
    if let Some(region) = &prob.region {
        diag.chi = Some(region.chi);
    }
    diag.orbits = prob.options.symmetry.as_ref().map(|s| s.orbits());
    Ok((working, diag))
}

pub fn compute_rate(prob: &EntropyProblem) -> Result<RateResult> {
    let start = Instant::now();
    let (working, mut diag) = prepare(prob)?;
    let (bound, status) = if working.options.split {
        let (total, values, sols) = split_solve(&working)?;
        diag.split = true;
        diag.node_values = values;
        diag.iterations = sols.iter().map(|s| s.stats.iterations).sum();
        diag.primal_residual = sols.iter().map(|s| s.stats.primal_residual).fold(0.0, f64::max);
        diag.dual_residual = sols.iter().map(|s| s.stats.dual_residual).fold(0.0, f64::max);
        diag.gap = sols.iter().map(|s| s.stats.gap).sum();
        let status = if sols.iter().all(|s| s.status == Status::Optimal) { Status::Optimal } else { Status::NearOptimal };
        let sdp = build_with_nodes(&working, &[0])?;
        diag.real_variables = sdp.real;
        (total, status)
    } else {
        let (sdp, sol) = solve_entropy(&working)?;
        diag.real_variables = sdp.real;
        diag.equalities = sdp.program.equality_count();
        diag.psd_blocks = sdp.program.psd_count();
        diag.iterations = sol.stats.iterations;
        diag.primal_objective = sdp.constant + sol.primal_objective;
        diag.dual_objective = sdp.constant + sol.dual_objective;
        diag.gap = sol.stats.gap;
        diag.primal_residual = sol.stats.primal_residual;
        diag.dual_residual = sol.stats.dual_residual;
        (sdp.constant + sol.primal_objective.min(sol.dual_objective), sol.status)
    };
    let h_ab = conditional_entropy_ab(&key_joint(prob)?);
    let scale = prob.protocol.rate_scale;
    let h_ae = scale * bound;
    let h_ab = scale * h_ab;
    Ok(RateResult {
        protocol: prob.protocol.label.clone(),
        d: prob.protocol.system_d,
        k: prob.protocol.d,
        v: prob.protocol.visibility,
        m: prob.rule.m,
        h_ae,
        h_ab,
        rate: h_ae - h_ab,
        status,
        seconds: start.elapsed().as_secs_f64(),
        diagnostics: diag,
    })
}
