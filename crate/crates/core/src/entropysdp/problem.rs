//! Assembly of the block moment-matrix program for the conditional entropy.

use std::f64::consts::LN_2;

use conic::{Affine, BlockId, BlockKind, ConicProgram, Ellipsoid, EllipsoidRadius, Placement, PsdBuilder};
use serde::Serialize;

use super::protocol::ProtocolInstance;
use super::symmetry::{verify_symmetry, PermutationSymmetry};
use crate::bayes::CredibleRegion;
use crate::config::Tolerances;
use crate::error::{QkdError, Result};
use crate::qcore::{c, kron_matrix, max_abs, CMatrix};
use crate::quadrature::{c_constant, QuadratureRule};

#[derive(Clone, Debug)]
pub struct SdpOptions {
    /// use real variables when every operator is real
    pub real_symmetry: bool,
    /// run the strict-feasibility check and restrict to the support when needed
    pub facial_reduction: bool,
    pub symmetry: Option<PermutationSymmetry>,
    /// solve one program per quadrature node and sum the minima
    pub split: bool,
    pub tolerances: Tolerances,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { real_symmetry: true, facial_reduction: true, symmetry: None, split: false, tolerances: Tolerances::default() }
    }
}

#[derive(Clone, Debug)]
pub struct EntropyProblem {
    pub protocol: ProtocolInstance,
    pub rule: QuadratureRule,
    pub options: SdpOptions,
    pub region: Option<CredibleRegion>,
    /// isometry onto the support of the feasible states, set by facial reduction
    pub reduction: Option<CMatrix>,
}

impl EntropyProblem {
    pub fn new(protocol: ProtocolInstance, rule: QuadratureRule) -> Self {
        EntropyProblem { protocol, rule, options: SdpOptions::default(), region: None, reduction: None }
    }

    pub fn with_options(mut self, options: SdpOptions) -> Self {
        self.options = options;
        self
    }

    /// Replaces the fixed frequencies by a credible region over the listed
    /// constraint operators.
    pub fn with_region(mut self, region: CredibleRegion) -> Result<Self> {
        if let Some(&k) = region.operators.iter().find(|&&k| k >= self.protocol.constraint_ops.len()) {
            return Err(QkdError::InvalidInput(format!(
                "region refers to constraint {k}, protocol has {}",
                self.protocol.constraint_ops.len()
            )));
        }
        if region.operators.len() != region.f.len() {
            return Err(QkdError::Dimension(format!("region has {} coordinates and {} operators", region.f.len(), region.operators.len())));
        }
        self.region = Some(region);
        Ok(self)
    }

    /// Dimension of the program's `σ`.
    pub fn dim(&self) -> usize {
        self.reduction.as_ref().map(|v| v.ncols()).unwrap_or_else(|| self.protocol.joint_dim())
    }

    /// `K_a = A^a ⊗ I` in the program's coordinates.
    pub fn objective_ops(&self) -> Vec<CMatrix> {
        let id = CMatrix::identity(self.protocol.d_b, self.protocol.d_b);
        self.protocol.key_ops.iter().map(|a| self.reduce(&kron_matrix(a.matrix(), &id))).collect()
    }

    /// `E_k` in the program's coordinates.
    pub fn constraint_matrices(&self) -> Vec<CMatrix> {
        self.protocol.constraint_ops.iter().map(|e| self.reduce(e.matrix())).collect()
    }

    fn reduce(&self, m: &CMatrix) -> CMatrix {
        match &self.reduction {
            Some(v) => v.adjoint() * m * v,
            None => m.clone(),
        }
    }
}

/// True when every key and constraint operator (in program coordinates) is
/// real, so that all variables may be taken real without changing the optimum.
pub fn apply_real_symmetry(prob: &EntropyProblem) -> bool {
    let tol = prob.options.tolerances.real;
    let real = |m: &CMatrix| m.iter().all(|z| z.im.abs() < tol);
    prob.objective_ops().iter().all(real) && prob.constraint_matrices().iter().all(real)
}

/// Variables of one `(a, i)` term.
#[derive(Clone, Debug, Serialize)]
pub struct NodeBlocks {
    pub a: usize,
    pub i: usize,
    /// orbit size of `a` under the symmetry (1 without symmetry)
    pub weight: usize,
    pub zeta: BlockId,
    pub eta: BlockId,
    pub theta: BlockId,
}

#[derive(Clone, Debug)]
pub struct EntropySdp {
    pub program: ConicProgram,
    pub sigma: BlockId,
    pub nodes: Vec<NodeBlocks>,
    /// probability vector in credible-region mode
    pub p: Option<BlockId>,
    /// `c_m`, not part of the program objective
    pub constant: f64,
    pub dim: usize,
    pub real: bool,
    /// quadrature nodes included (all of them unless split)
    pub node_indices: Vec<usize>,
    pub key_ops: Vec<CMatrix>,
}

pub fn build_entropy_sdp(prob: &EntropyProblem) -> Result<EntropySdp> {
    let all: Vec<usize> = (0..prob.rule.m).collect();
    build_with_nodes(prob, &all)
}

/// Program restricted to the listed quadrature nodes; the objective keeps the
/// per-node factors `w_i / (t_i ln 2)`.
pub(crate) fn build_with_nodes(prob: &EntropyProblem, node_indices: &[usize]) -> Result<EntropySdp> {
    let rule = &prob.rule;
    let dim = prob.dim();
    let key_ops = prob.objective_ops();
    let constraints = prob.constraint_matrices();
    let freqs = match (&prob.region, &prob.protocol.freqs) {
        (Some(_), _) => None,
        (None, Some(f)) => Some(f.clone()),
        (None, None) => {
            return Err(QkdError::InvalidInput(format!("protocol {} has neither frequencies nor a credible region", prob.protocol.label)))
        }
    };
    let orbits = match &prob.options.symmetry {
        Some(sym) => {
            if prob.reduction.is_some() {
                return Err(QkdError::Unsupported("permutation symmetry on a facially reduced program".into()));
            }
            verify_symmetry(&prob.protocol, sym, prob.options.tolerances.symmetry)?;
            sym.orbits()
        }
        None => (0..key_ops.len()).map(|a| (a, 1)).collect(),
    };
    let real = prob.options.real_symmetry && apply_real_symmetry(prob) && prob.options.symmetry.as_ref().is_none_or(|s| s.is_real());
    let (herm, gen) = if real { (BlockKind::Symmetric, BlockKind::Real) } else { (BlockKind::Hermitian, BlockKind::Complex) };

    let mut program = ConicProgram::new();
    let sigma = program.add_block("sigma", herm, dim)?;
    program.add_equality("trace", &program.trace(sigma), 1.0)?;
    let mut p_block = None;
    match (&prob.region, freqs) {
        (Some(region), _) => {
            let kappa = region.f.len();
            let p = program.add_block("p", BlockKind::Vector, kappa)?;
            for (j, &k) in region.operators.iter().enumerate() {
                let mut expr = program.trace_product(sigma, &constraints[k]).re();
                expr.add_scaled(&Affine::scalar(program.scalar(p, j)), -1.0);
                program.add_equality(format!("p{j}"), &expr, 0.0)?;
            }
            let ell = Ellipsoid::new(region.f.clone(), region.sigma.clone(), EllipsoidRadius::Fixed(region.chi))?;
            program.set_ellipsoid(p, ell)?;
            p_block = Some(p);
        }
        (None, Some(f)) => {
            for (k, e) in constraints.iter().enumerate() {
                program.add_equality(format!("E{k}"), &program.trace_product(sigma, e).re(), f[k])?;
            }
        }
        (None, None) => unreachable!(),
    }
    if let Some(sym) = &prob.options.symmetry {
        add_invariance(&mut program, sigma, &sym.joint_unitary(prob.protocol.d_b), dim)?;
    }

    let mut nodes = Vec::new();
    for &i in node_indices {
        if i >= rule.m {
            return Err(QkdError::InvalidInput(format!("quadrature node {i} out of range")));
        }
        let (t, w) = (rule.t[i], rule.w[i]);
        let scale = w / (t * LN_2);
        for &(a, weight) in &orbits {
            let zeta = program.add_block(format!("zeta[{a},{i}]"), gen, dim)?;
            let eta = program.add_block(format!("eta[{a},{i}]"), herm, dim)?;
            let theta = program.add_block(format!("theta[{a},{i}]"), herm, dim)?;
            let coef = weight as f64 * scale;
            program.add_objective(&program.trace_product(zeta, &key_ops[a]).re(), 2.0 * coef);
            program.add_objective(&program.trace_product(eta, &key_ops[a]).re(), (1.0 - t) * coef);
            program.add_objective(&program.trace(theta), t * coef);

            let (bs, bz, be, bt) =
                (program.block(sigma).clone(), program.block(zeta).clone(), program.block(eta).clone(), program.block(theta).clone());
            let mut g1 = PsdBuilder::new(format!("gamma1[{a},{i}]"), 2 * dim);
            g1.place(&bs, 0, 0, Placement::Direct);
            g1.place(&bz, 0, dim, Placement::Direct);
            g1.place(&bz, dim, 0, Placement::Adjoint);
            g1.place(&be, dim, dim, Placement::Direct);
            program.add_psd(g1)?;
            let mut g2 = PsdBuilder::new(format!("gamma2[{a},{i}]"), 2 * dim);
            g2.place(&bs, 0, 0, Placement::Direct);
            g2.place(&bz, 0, dim, Placement::Adjoint);
            g2.place(&bz, dim, 0, Placement::Direct);
            g2.place(&bt, dim, dim, Placement::Direct);
            program.add_psd(g2)?;
            nodes.push(NodeBlocks { a, i, weight, zeta, eta, theta });
        }
    }
    Ok(EntropySdp {
        program,
        sigma,
        nodes,
        p: p_block,
        constant: c_constant(rule),
        dim,
        real,
        node_indices: node_indices.to_vec(),
        key_ops,
    })
}

/// `σ = T† σ T`, entry by entry on the upper triangle.
fn add_invariance(program: &mut ConicProgram, sigma: BlockId, t: &CMatrix, dim: usize) -> Result<()> {
    let block = program.block(sigma).clone();
    for p in 0..dim {
        for q in p..dim {
            let mut expr = block.entry(p, q);
            for r in 0..dim {
                let trp = t[(r, p)].conj();
                if trp.norm() == 0.0 {
                    continue;
                }
                for s in 0..dim {
                    let tsq = t[(s, q)];
                    if tsq.norm() == 0.0 {
                        continue;
                    }
                    expr.add_scaled(&block.entry(r, s), -(trp * tsq));
                }
            }
            expr.normalize();
            program.add_complex_equality(&format!("sym[{p},{q}]"), &expr, c(0.0))?;
        }
    }
    Ok(())
}

/// Checks that `v` has orthonormal columns within `1e-10`.
pub(crate) fn check_isometry(v: &CMatrix) -> Result<()> {
    let err = max_abs(&(v.adjoint() * v - CMatrix::identity(v.ncols(), v.ncols())));
    if err > 1e-10 {
        return Err(QkdError::InvalidInput(format!("reduction map is not an isometry (error {err:e})")));
    }
    Ok(())
}
