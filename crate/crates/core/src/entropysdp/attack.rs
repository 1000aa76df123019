//! Explicit attack recovered from an optimal solution: a purification of
//! `σ` held with Eve and her operators for every `(a, i)` term.

use std::f64::consts::LN_2;

use conic::Solution;
use serde::Serialize;

use super::problem::{EntropyProblem, EntropySdp};
use crate::error::{QkdError, Result};
use crate::qcore::{c, eigh, max_abs, von_neumann_entropy, CMatrix, CVector, HermitianOperator, C0};

/// Eigenvalues of `R_η − R_ζ†R_ζ` below this are an error; above it they are clipped.
const CLIP: f64 = 1e-6;
/// `σ` eigenvalues at or below this are treated as outside the support.
const SUPPORT: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct AttackReconstruction {
    /// side of `σ` (the program's coordinates)
    pub dim: usize,
    /// `|ψ⟩` on `AB ⊗ E` with `dim(E) = 2·dim`, AB index major
    #[serde(skip)]
    pub state: CVector,
    /// `W`, with `|ψ⟩` the vectorization of `W` (rows AB, columns E)
    #[serde(skip)]
    pub w: CMatrix,
    /// Eve's operators, in node order of the program
    #[serde(skip)]
    pub z: Vec<CMatrix>,
    /// largest deviation between the program variables and the moments of the attack
    pub residual: f64,
    /// variational objective evaluated directly on the state and operators
    pub objective: f64,
    /// exact H(A|E) of the classical-quantum state of the attack, bits
    pub entropy: f64,
    pub sigma_rank: usize,
}

fn psd_sqrt_clipped(m: &CMatrix, what: &str) -> Result<CMatrix> {
    let h = (m + m.adjoint()) * c(0.5);
    let (vals, vecs) = eigh(&h);
    if let Some(&l) = vals.iter().find(|&&l| l < -CLIP) {
        return Err(QkdError::Reconstruction(format!("{what} has eigenvalue {l:.3e}")));
    }
    let d = CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|&l| c(l.max(0.0).sqrt()))));
    Ok(&vecs * d * vecs.adjoint())
}

/// Builds the attack and checks it against the solution.
pub fn reconstruct_attack(prob: &EntropyProblem, sdp: &EntropySdp, solution: &Solution) -> Result<AttackReconstruction> {
    if !solution.status.has_solution() {
        return Err(QkdError::Reconstruction(format!("solution status is {}", solution.status)));
    }
    if prob.options.symmetry.is_some() || sdp.nodes.iter().any(|n| n.weight != 1) {
        return Err(QkdError::Unsupported("attack reconstruction of a symmetrized program".into()));
    }
    let n = sdp.dim;
    let block = |id| solution.matrix(sdp.program.block(id));
    let sigma = block(sdp.sigma);
    let sigma = (&sigma + sigma.adjoint()) * c(0.5);
    let (vals, vecs) = eigh(&sigma);

    // W = [V √Λ, 0] and the top-left part of W⁺ = Λ^{-1/2} V†
    let mut w = CMatrix::zeros(n, 2 * n);
    let mut winv = CMatrix::zeros(n, n);
    let mut rank = 0;
    for j in 0..n {
        let l = vals[j].max(0.0);
        for r in 0..n {
            w[(r, j)] = vecs[(r, j)] * l.sqrt();
        }
        if l > SUPPORT {
            rank += 1;
            for r in 0..n {
                winv[(j, r)] = vecs[(r, j)].conj() / l.sqrt();
            }
        }
    }
    let conj = |m: &CMatrix| &winv * m * winv.adjoint();

    let mut residual = max_abs(&(&sigma - &w * w.adjoint()));
    let mut zs = Vec::with_capacity(sdp.nodes.len());
    for node in &sdp.nodes {
        let zeta = block(node.zeta);
        let eta = block(node.eta);
        let theta = block(node.theta);
        let rz = conj(&zeta);
        let re = conj(&eta);
        let rt = conj(&theta);
        let lower = psd_sqrt_clipped(&(&re - rz.adjoint() * &rz), "R_eta - R_zeta'R_zeta")?;
        let upper = psd_sqrt_clipped(&(&rt - &rz * rz.adjoint()), "R_theta - R_zeta R_zeta'")?;
        let mut z = CMatrix::zeros(2 * n, 2 * n);
        z.view_mut((0, 0), (n, n)).copy_from(&rz);
        z.view_mut((0, n), (n, n)).copy_from(&upper);
        z.view_mut((n, 0), (n, n)).copy_from(&lower);
        let xi = |m: &CMatrix| &w * m * w.adjoint();
        residual = residual
            .max(max_abs(&(&zeta - xi(&z))))
            .max(max_abs(&(&eta - xi(&(z.adjoint() * &z)))))
            .max(max_abs(&(&theta - xi(&(&z * z.adjoint())))));
        zs.push(z);
    }

    // ⟨ψ|K ⊗ M|ψ⟩ = tr(W† K W Mᵀ); Eve's physical operator is conj(Z)
    let expect = |k: &CMatrix, m: &CMatrix| (w.adjoint() * k * &w * m.transpose()).trace();
    let id_ab = CMatrix::identity(n, n);
    let mut objective = sdp.constant;
    for (node, z) in sdp.nodes.iter().zip(&zs) {
        let (t, wt) = (prob.rule.t[node.i], prob.rule.w[node.i]);
        let zp = z.map(|x| x.conj());
        let k = &sdp.key_ops[node.a];
        let term = expect(k, &(&zp + zp.adjoint() + zp.adjoint() * &zp * c(1.0 - t))) + expect(&id_ab, &(&zp * zp.adjoint())) * c(t);
        objective += wt / (t * LN_2) * term.re;
    }

    // ρ_E(a) = (W† K_a W)ᵀ; transposition does not change the spectrum
    let mut total = CMatrix::zeros(2 * n, 2 * n);
    let mut joint = 0.0;
    for k in &sdp.key_ops {
        let rho = w.adjoint() * k * &w;
        joint += von_neumann_entropy(&HermitianOperator::hermitian_part(&rho));
        total += rho;
    }
    let entropy = joint - von_neumann_entropy(&HermitianOperator::hermitian_part(&total));

    let mut state = CVector::from_element(n * 2 * n, C0);
    for r in 0..n {
        for e in 0..2 * n {
            state[r * 2 * n + e] = w[(r, e)];
        }
    }
    Ok(AttackReconstruction { dim: n, state, w, z: zs, residual, objective, entropy, sigma_rank: rank })
}
