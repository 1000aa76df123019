//! Permutation symmetry of the key alphabet.

use serde::Serialize;

use super::problem::EntropyProblem;
use super::protocol::ProtocolInstance;
use crate::error::{QkdError, Result};
use crate::qcore::{kron_matrix, max_abs, CMatrix, C1};

/// A permutation `π` of the key symbols together with the unitary `V`
/// applied on Bob's side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationSymmetry {
    pub perm: Vec<usize>,
    #[serde(skip)]
    pub bob: CMatrix,
}

impl PermutationSymmetry {
    pub fn new(perm: Vec<usize>, bob: CMatrix) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(QkdError::Symmetry(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        if bob.nrows() != bob.ncols() || max_abs(&(bob.adjoint() * &bob - CMatrix::identity(bob.nrows(), bob.nrows()))) > 1e-10 {
            return Err(QkdError::Symmetry("Bob's transformation is not unitary".into()));
        }
        Ok(PermutationSymmetry { perm, bob })
    }

    /// `π(a) = a + 1 mod d` with `V = U_π`.
    pub fn cyclic(d: usize) -> Self {
        let perm: Vec<usize> = (0..d).map(|a| (a + 1) % d).collect();
        let u = permutation_matrix(&perm);
        PermutationSymmetry { perm, bob: u }
    }

    /// `π(a) = d − 1 − a` with `V = U_π`.
    pub fn reversal(d: usize) -> Self {
        let perm: Vec<usize> = (0..d).map(|a| d - 1 - a).collect();
        let u = permutation_matrix(&perm);
        PermutationSymmetry { perm, bob: u }
    }

    /// `U_π`, with `U_π|a⟩ = |π(a)⟩`.
    pub fn alice_unitary(&self) -> CMatrix {
        permutation_matrix(&self.perm)
    }

    /// `U_π ⊗ V`.
    pub fn joint_unitary(&self, d_b: usize) -> CMatrix {
        assert_eq!(self.bob.nrows(), d_b, "Bob's transformation has the wrong dimension");
        kron_matrix(&self.alice_unitary(), &self.bob)
    }

    pub fn is_real(&self) -> bool {
        self.bob.iter().all(|z| z.im == 0.0)
    }

    /// Orbit representatives (lowest symbol of each orbit) and orbit sizes.
    pub fn orbits(&self) -> Vec<(usize, usize)> {
        let n = self.perm.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for a in 0..n {
            if seen[a] {
                continue;
            }
            let mut size = 0;
            let mut b = a;
            while !seen[b] {
                seen[b] = true;
                size += 1;
                b = self.perm[b];
            }
            out.push((a, size));
        }
        out
    }
}

fn permutation_matrix(perm: &[usize]) -> CMatrix {
    let n = perm.len();
    let mut u = CMatrix::zeros(n, n);
    for (a, &p) in perm.iter().enumerate() {
        u[(p, a)] = C1;
    }
    u
}

/// Checks that the key basis is computational and that every constraint
/// operator commutes with `U_π ⊗ V` up to `tol`.
pub(crate) fn verify_symmetry(protocol: &ProtocolInstance, sym: &PermutationSymmetry, tol: f64) -> Result<()> {
    let d = protocol.d;
    if sym.perm.len() != d || protocol.key_ops.len() != d {
        return Err(QkdError::Symmetry(format!("permutation of {} symbols for a {d}-outcome key", sym.perm.len())));
    }
    if sym.bob.nrows() != protocol.d_b {
        return Err(QkdError::Symmetry(format!("Bob's transformation has dimension {}, expected {}", sym.bob.nrows(), protocol.d_b)));
    }
    for (a, op) in protocol.key_ops.iter().enumerate() {
        let mut want = CMatrix::zeros(d, d);
        want[(a, a)] = C1;
        if max_abs(&(op.matrix() - want)) > tol {
            return Err(QkdError::Symmetry("the key basis is not the computational basis".into()));
        }
    }
    let t = sym.joint_unitary(protocol.d_b);
    for (k, e) in protocol.constraint_ops.iter().enumerate() {
        let err = max_abs(&(&t * e.matrix() * t.adjoint() - e.matrix()));
        if err > tol {
            return Err(QkdError::Symmetry(format!("constraint {k} is not invariant (deviation {err:.3e})")));
        }
    }
    Ok(())
}

/// Verifies the symmetry and returns the problem with it enabled.
pub fn apply_permutation_symmetry(prob: &EntropyProblem, sym: PermutationSymmetry) -> Result<EntropyProblem> {
    verify_symmetry(&prob.protocol, &sym, prob.options.tolerances.symmetry)?;
    let mut out = prob.clone();
    out.options.symmetry = Some(sym);
    out.options.facial_reduction = false;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_structure() {
        assert_eq!(PermutationSymmetry::cyclic(5).orbits(), vec![(0, 5)]);
        assert_eq!(PermutationSymmetry::reversal(4).orbits(), vec![(0, 2), (1, 2)]);
        let p = PermutationSymmetry::new(vec![2, 1, 0], CMatrix::identity(3, 3)).unwrap();
        assert_eq!(p.orbits(), vec![(0, 2), (1, 1)]);
        assert!(PermutationSymmetry::new(vec![0, 0, 1], CMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn permutation_matrix_maps_basis_states() {
        let u = PermutationSymmetry::cyclic(3).alice_unitary();
        assert_eq!(u[(1, 0)], C1);
        assert_eq!(u[(0, 2)], C1);
    }
}
