//! Measurement bases: exact and approximate MUBs, nearest-neighbour
//! overlap bases, and linear-independence selection of operators.

mod approx;
mod galois;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use approx::{approximate_mubs, haar_unitary, ApproxMubs, DescentOptions};
pub use galois::{is_prime, GaloisField};

use crate::error::{QkdError, Result};
use crate::qcore::{c, max_abs, CMatrix, CVector, HermitianOperator, C1};

/// A list of `d × d` unitaries whose columns are basis vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    d: usize,
    unitaries: Vec<CMatrix>,
}

impl BasisSet {
    /// Validates shapes and unitarity within `1e-9`.
    pub fn new(unitaries: Vec<CMatrix>) -> Result<Self> {
        let d = unitaries.first().map(|u| u.nrows()).unwrap_or(0);
        if d == 0 {
            return Err(QkdError::InvalidInput("empty basis set".into()));
        }
        for (k, u) in unitaries.iter().enumerate() {
            if u.nrows() != d || u.ncols() != d {
                return Err(QkdError::Dimension(format!("basis {k} is {}x{}, expected {d}x{d}", u.nrows(), u.ncols())));
            }
            let err = max_abs(&(u.adjoint() * u - CMatrix::identity(d, d)));
            if err > 1e-9 {
                return Err(QkdError::InvalidInput(format!("basis {k} is not unitary (error {err:e})")));
            }
        }
        Ok(BasisSet { d, unitaries })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.unitaries.len()
    }

    pub fn unitaries(&self) -> &[CMatrix] {
        &self.unitaries
    }

    pub fn unitary(&self, k: usize) -> &CMatrix {
        &self.unitaries[k]
    }

    pub fn vector(&self, k: usize, i: usize) -> CVector {
        self.unitaries[k].column(i).into_owned()
    }

    /// `|v_k^i⟩⟨v_k^i|`.
    pub fn projector(&self, k: usize, i: usize) -> HermitianOperator {
        HermitianOperator::projector(&self.vector(k, i))
    }

    /// Keeps the listed bases, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Result<BasisSet> {
        if let Some(&k) = keep.iter().find(|&&k| k >= self.n()) {
            return Err(QkdError::InvalidInput(format!("basis index {k} out of range")));
        }
        BasisSet::new(keep.iter().map(|&k| self.unitaries[k].clone()).collect())
    }

    pub fn to_json(&self) -> String {
        let doc = BasisDoc {
            d: self.d,
            n: self.n(),
            bases: self
                .unitaries
                .iter()
                .map(|u| {
                    // vector by vector: all entries of column 0, then column 1, ...
                    let mut flat = Vec::with_capacity(self.d * self.d);
                    for col in 0..self.d {
                        for row in 0..self.d {
                            let z = u[(row, col)];
                            flat.push([z.re, z.im]);
                        }
                    }
                    flat
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("basis serializes")
    }

    pub fn from_json(s: &str) -> Result<BasisSet> {
        let doc: BasisDoc = serde_json::from_str(s).map_err(|e| QkdError::Parse(format!("basis file: {e}")))?;
        if doc.bases.len() != doc.n {
            return Err(QkdError::Parse(format!("basis file declares n={} but has {} bases", doc.n, doc.bases.len())));
        }
        let d = doc.d;
        let mut us = Vec::with_capacity(doc.n);
        for (k, flat) in doc.bases.iter().enumerate() {
            if flat.len() != d * d {
                return Err(QkdError::Parse(format!("basis {k} has {} entries, expected {}", flat.len(), d * d)));
            }
            us.push(CMatrix::from_fn(d, d, |row, col| {
                let [re, im] = flat[col * d + row];
                Complex64::new(re, im)
            }));
        }
        BasisSet::new(us)
    }
}

#[derive(Serialize, Deserialize)]
struct BasisDoc {
    d: usize,
    n: usize,
    bases: Vec<Vec<[f64; 2]>>,
}

/// Rotates each column so that its first nonzero entry is real and positive.
pub(crate) fn fix_phases(u: &mut CMatrix) {
    for mut col in u.column_iter_mut() {
        if let Some(z) = col.iter().find(|z| z.norm() > 1e-12).cloned() {
            let phase = z.conj() / z.norm();
            col *= phase;
        }
    }
}

/// Computational basis followed by the `d` field bases; `d` must be a prime
/// or one of 4, 8, 9.
pub fn mub_set(d: usize) -> Result<BasisSet> {
    let mut us = vec![CMatrix::identity(d, d)];
    for mut u in galois::field_bases(d)? {
        fix_phases(&mut u);
        us.push(u);
    }
    BasisSet::new(us)
}

/// Mean squared deviation of all cross-basis squared overlaps from `1/d`,
/// normalized so that two copies of one basis give 1.
pub fn mub_objective(bases: &BasisSet) -> f64 {
    objective_of(bases.unitaries(), bases.d())
}

pub(crate) fn objective_of(us: &[CMatrix], d: usize) -> f64 {
    let n = us.len();
    if n < 2 || d < 2 {
        return 0.0;
    }
    let inv = 1.0 / d as f64;
    let mut acc = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            let g = us[k].adjoint() * &us[l];
            acc += g.iter().map(|z| (z.norm_sqr() - inv).powi(2)).sum::<f64>();
        }
    }
    acc / objective_norm(n, d)
}

pub(crate) fn objective_norm(n: usize, d: usize) -> f64 {
    (d - 1) as f64 * (n * (n - 1) / 2) as f64
}

/// The five nearest-neighbour bases for even `d ≥ 4`: computational; `±`
/// and `±i` superpositions on the pairs (0,1), (2,3), ...; and `±`, `±i`
/// on the shifted pairs (1,2), (3,4), ... with `|0⟩` and `|d−1⟩` kept.
pub fn overlap_bases(d: usize) -> Result<BasisSet> {
    if d < 4 || !d.is_multiple_of(2) {
        return Err(QkdError::InvalidInput(format!("overlap bases need even d >= 4, got {d}")));
    }
    let s = 1.0 / 2f64.sqrt();
    let i = Complex64::new(0.0, 1.0);
    let paired = |phase: Complex64, shifted: bool| {
        let mut u = CMatrix::zeros(d, d);
        let start = if shifted {
            u[(0, 0)] = C1;
            u[(d - 1, d - 1)] = C1;
            1
        } else {
            0
        };
        let end = if shifted { d - 1 } else { d };
        let mut a = start;
        while a + 1 < end {
            u[(a, a)] = c(s);
            u[(a + 1, a)] = phase * s;
            u[(a, a + 1)] = c(s);
            u[(a + 1, a + 1)] = -phase * s;
            a += 2;
        }
        u
    };
    let us = vec![CMatrix::identity(d, d), paired(C1, false), paired(i, false), paired(C1, true), paired(i, true)];
    BasisSet::new(us)
}

/// Greedy maximal linearly independent subset under the trace inner
/// product, in input order. A candidate is rejected when its component
/// orthogonal to the kept span has norm at most `1e-8` of its own.
pub fn select_independent(operators: &[HermitianOperator]) -> Vec<usize> {
    select_independent_tol(operators, 1e-8)
}

pub fn select_independent_tol(operators: &[HermitianOperator], tol: f64) -> Vec<usize> {
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut kept = Vec::new();
    for (idx, op) in operators.iter().enumerate() {
        let mut r: Vec<Complex64> = op.matrix().iter().cloned().collect();
        let n0 = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let proj: Complex64 = q.iter().zip(&r).map(|(a, b)| a.conj() * b).sum();
                for (x, y) in r.iter_mut().zip(q) {
                    *x -= proj * y;
                }
            }
        }
        let nr = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nr > tol * n0 {
            for x in r.iter_mut() {
                *x /= nr;
            }
            basis.push(r);
            kept.push(idx);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::C0;

    #[test]
    fn qubit_mubs_are_pauli_eigenbases() {
        let b = mub_set(2).unwrap();
        assert_eq!(b.n(), 3);
        for k in 1..3 {
            for i in 0..2 {
                for j in 0..2 {
                    let o = (b.vector(0, i).adjoint() * b.vector(k, j))[0].norm_sqr();
                    assert!((o - 0.5).abs() < 1e-12);
                }
            }
        }
        assert!(mub_set(6).is_err());
    }

    #[test]
    fn identity_pair_objective_is_one() {
        for d in [2, 3, 5] {
            let b = BasisSet::new(vec![CMatrix::identity(d, d), CMatrix::identity(d, d)]).unwrap();
            assert!((mub_objective(&b) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn overlap_layout() {
        let b = overlap_bases(4).unwrap();
        assert_eq!(b.vector(3, 0), crate::qcore::basis_vector(4, 0));
        assert_eq!(b.vector(3, 3), crate::qcore::basis_vector(4, 3));
        let b6 = overlap_bases(6).unwrap();
        let v = b6.vector(1, 0);
        let s = 1.0 / 2f64.sqrt();
        assert!((v[0] - c(s)).norm() < 1e-15 && (v[1] - c(s)).norm() < 1e-15);
        assert!(overlap_bases(5).is_err());
        assert!(overlap_bases(2).is_err());
    }

    #[test]
    fn independent_selection() {
        let i2 = HermitianOperator::identity(2);
        assert_eq!(select_independent(&[i2.clone(), i2.clone()]), vec![0]);
        let z = HermitianOperator::diagonal(&[1.0, -1.0]);
        let x = HermitianOperator::new(CMatrix::from_row_slice(2, 2, &[C0, C1, C1, C0])).unwrap();
        assert_eq!(select_independent(&[z.clone(), x.clone(), z.add(&x)]), vec![0, 1]);
    }

    #[test]
    fn json_round_trip() {
        let b = mub_set(3).unwrap();
        let back = BasisSet::from_json(&b.to_json()).unwrap();
        for k in 0..b.n() {
            assert!(max_abs(&(b.unitary(k) - back.unitary(k))) < 1e-15);
        }
        let bad = r#"{"d":2,"n":1,"bases":[[[1,0],[1,0],[0,0],[1,0]]]}"#;
        assert!(BasisSet::from_json(bad).is_err());
    }
}
