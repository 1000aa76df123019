//! Dense complex operators, states and the entropies built from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{QkdError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) const C0: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const C1: Complex64 = Complex64::new(1.0, 0.0);

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Largest elementwise deviation of `m` from its adjoint.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..m.nrows() {
        for q in p..m.ncols() {
            worst = worst.max((m[(p, q)] - m[(q, p)].conj()).norm());
        }
    }
    worst
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, j| eig.eigenvectors[(r, order[j])]);
    (values, vectors)
}

/// `f` applied to the spectrum of a Hermitian matrix.
pub fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|&x| c(f(x)))));
    &vecs * d * vecs.adjoint()
}

/// Kronecker product of dense matrices.
pub fn kron_matrix(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Dense Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    entries: CMatrix,
}

impl HermitianOperator {
    /// Checks squareness and Hermiticity (elementwise `1e-12`), then
    /// stores the exact Hermitian part.
    pub fn new(entries: CMatrix) -> Result<Self> {
        Self::with_tolerance(entries, 1e-12)
    }

    pub fn with_tolerance(entries: CMatrix, tol: f64) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(QkdError::Dimension(format!("operator must be square and nonempty, got {}x{}", entries.nrows(), entries.ncols())));
        }
        let err = hermiticity_error(&entries);
        if err > tol {
            return Err(QkdError::NotHermitian(err));
        }
        Ok(Self::hermitian_part(&entries))
    }

    /// `(m + m†)/2` without any check.
    pub fn hermitian_part(m: &CMatrix) -> Self {
        HermitianOperator { entries: (m + m.adjoint()) * c(0.5) }
    }

    pub fn identity(d: usize) -> Self {
        HermitianOperator { entries: CMatrix::identity(d, d) }
    }

    pub fn zeros(d: usize) -> Self {
        HermitianOperator { entries: CMatrix::zeros(d, d) }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = CVector::from_iterator(diag.len(), diag.iter().map(|&x| c(x)));
        HermitianOperator { entries: CMatrix::from_diagonal(&d) }
    }

    /// `|v⟩⟨v|`, unnormalized.
    pub fn projector(v: &CVector) -> Self {
        HermitianOperator::hermitian_part(&(v * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// `tr(self · other)`, real for Hermitian factors.
    pub fn inner(&self, other: &HermitianOperator) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for p in 0..n {
            for q in 0..n {
                acc += (self.entries[(p, q)] * other.entries[(q, p)]).re;
            }
        }
        acc
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(&self.entries).0
    }

    pub fn eigh(&self) -> (Vec<f64>, CMatrix) {
        eigh(&self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// True when every entry has imaginary part below `tol`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.entries.iter().all(|z| z.im.abs() < tol)
    }

    pub fn transpose(&self) -> Self {
        HermitianOperator { entries: self.entries.transpose() }
    }

    pub fn conj(&self) -> Self {
        HermitianOperator { entries: self.entries.map(|z| z.conj()) }
    }

    /// `u† · self · u` for any (possibly rectangular) `u`.
    pub fn congruence(&self, u: &CMatrix) -> Self {
        HermitianOperator::hermitian_part(&(u.adjoint() * &self.entries * u))
    }

    pub fn scaled(&self, s: f64) -> Self {
        HermitianOperator { entries: &self.entries * c(s) }
    }

    pub fn add(&self, other: &HermitianOperator) -> Self {
        HermitianOperator { entries: &self.entries + &other.entries }
    }

    /// Positive square root after clipping negative eigenvalues.
    pub fn sqrt_psd(&self) -> Self {
        HermitianOperator::hermitian_part(&hermitian_function(&self.entries, |x| x.max(0.0).sqrt()))
    }
}

pub fn kron(a: &HermitianOperator, b: &HermitianOperator) -> HermitianOperator {
    HermitianOperator { entries: kron_matrix(&a.entries, &b.entries) }
}

/// Partial trace of a dense (not necessarily Hermitian) matrix over the
/// factors not listed in `keep`. Kept factors stay in their original order.
pub fn partial_trace_matrix(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let total: usize = dims.iter().product();
    if m.nrows() != total || m.ncols() != total {
        return Err(QkdError::Dimension(format!("matrix is {}x{} but factors {:?} multiply to {total}", m.nrows(), m.ncols(), dims)));
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.iter().any(|&k| k >= dims.len()) {
        return Err(QkdError::Dimension(format!("keep index out of range for {} factors", dims.len())));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !kept.contains(i)).collect();
    let dk: usize = kept.iter().map(|&i| dims[i]).product();
    let dt: usize = traced.iter().map(|&i| dims[i]).product();
    // stride of each factor in the full row-major index
    let mut stride = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        stride[i] = stride[i + 1] * dims[i + 1];
    }
    let offsets = |factors: &[usize], count: usize| -> Vec<usize> {
        (0..count)
            .map(|mut idx| {
                let mut off = 0;
                for &f in factors.iter().rev() {
                    off += (idx % dims[f]) * stride[f];
                    idx /= dims[f];
                }
                off
            })
            .collect()
    };
    let ko = offsets(&kept, dk);
    let to = offsets(&traced, dt);
    let mut out = CMatrix::zeros(dk, dk);
    for (r, &kr) in ko.iter().enumerate() {
        for (s, &ks) in ko.iter().enumerate() {
            let mut acc = C0;
            for &t in &to {
                acc += m[(kr + t, ks + t)];
            }
            out[(r, s)] = acc;
        }
    }
    Ok(out)
}

pub fn partial_trace(op: &HermitianOperator, dims: &[usize], keep: &[usize]) -> Result<HermitianOperator> {
    partial_trace_matrix(&op.entries, dims, keep).map(|m| HermitianOperator::hermitian_part(&m))
}

/// Unit-trace positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    base: HermitianOperator,
}

impl DensityMatrix {
    pub fn new(base: HermitianOperator) -> Result<Self> {
        let tr = base.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(QkdError::InvalidInput(format!("density matrix has trace {tr}")));
        }
        let lo = base.min_eigenvalue();
        if lo < -1e-10 {
            return Err(QkdError::InvalidInput(format!("density matrix has eigenvalue {lo:e}")));
        }
        Ok(DensityMatrix { base })
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `tr(ρ E)`.
    pub fn expectation(&self, e: &HermitianOperator) -> f64 {
        self.base.inner(e)
    }

    pub fn entropy(&self) -> f64 {
        von_neumann_entropy(&self.base)
    }
}

/// Classical joint distribution `p(a, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    probs: DMatrix<f64>,
}

impl JointDistribution {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= -1e-12)) {
            return Err(QkdError::InvalidInput("joint distribution has a negative entry".into()));
        }
        let s = probs.sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(QkdError::InvalidInput(format!("joint distribution sums to {s}")));
        }
        Ok(JointDistribution { probs: probs.map(|p| p.max(0.0)) })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.probs.nrows(), self.probs.ncols())
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn shannon_entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter().filter(|&x| x > 0.0).map(|x| -x * x.log2()).sum()
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QkdError::InvalidInput(format!("binary entropy needs p in [0,1], got {p}")));
    }
    Ok(shannon_entropy([p, 1.0 - p]))
}

/// Von Neumann entropy in bits; negative eigenvalues from rounding are dropped.
pub fn von_neumann_entropy(op: &HermitianOperator) -> f64 {
    shannon_entropy(op.eigenvalues())
}

/// `H(A|B) = H(AB) − H(B)` in bits.
pub fn conditional_entropy_ab(joint: &JointDistribution) -> f64 {
    let p = joint.probs();
    let h_ab = shannon_entropy(p.iter().cloned());
    let h_b = shannon_entropy(p.row_sum().iter().cloned());
    (h_ab - h_b).max(0.0)
}

pub fn basis_vector(d: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[i] = C1;
    v
}

/// `Σ_i |ii⟩ / √d`.
pub fn max_entangled(d: usize) -> CVector {
    let mut v = CVector::zeros(d * d);
    let s = 1.0 / (d as f64).sqrt();
    for i in 0..d {
        v[i * d + i] = c(s);
    }
    v
}

pub fn isotropic_state(v: f64, d: usize) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&v) {
        return Err(QkdError::InvalidInput(format!("visibility {v} outside [0,1]")));
    }
    if d < 2 {
        return Err(QkdError::InvalidInput(format!("dimension {d} < 2")));
    }
    let phi = HermitianOperator::projector(&max_entangled(d));
    let noise = HermitianOperator::identity(d * d).scaled((1.0 - v) / (d * d) as f64);
    DensityMatrix::new(phi.scaled(v).add(&noise))
}

/// Rate of the full tomographic protocol on an isotropic state.
pub fn tomographic_rate(v: f64, d: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(QkdError::InvalidInput(format!("visibility {v} outside [0,1]")));
    }
    if d < 2 {
        return Err(QkdError::InvalidInput(format!("dimension {d} < 2")));
    }
    let df = d as f64;
    let d2 = df * df;
    Ok(df.log2() - (1.0 - 1.0 / d2) * (1.0 - v) * (d2 - 1.0).log2() - binary_entropy(v + (1.0 - v) / d2)?)
}

/// Probability that both outcomes land in the same `k`-dimensional block.
pub fn subspace_probability(v: f64, k: usize, d: usize) -> f64 {
    v + (k as f64 / d as f64) * (1.0 - v)
}

pub fn subspace_rate(v: f64, k: usize, d: usize) -> Result<f64> {
    if k < 2 || !d.is_multiple_of(k) {
        return Err(QkdError::InvalidInput(format!("subspace dimension {k} must divide {d}")));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(QkdError::InvalidInput(format!("visibility {v} outside [0,1]")));
    }
    let p = subspace_probability(v, k, d);
    Ok(p * tomographic_rate((v / p).min(1.0), k)?)
}

/// Key-basis joint distribution of the isotropic state.
pub fn isotropic_joint(v: f64, d: usize) -> Result<JointDistribution> {
    let df = d as f64;
    let diag = v / df + (1.0 - v) / (df * df);
    let off = (1.0 - v) / (df * df);
    JointDistribution::new(DMatrix::from_fn(d, d, |a, b| if a == b { diag } else { off }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn kron_of_identities() {
        let k = kron(&HermitianOperator::identity(2), &HermitianOperator::identity(2));
        assert_eq!(k, HermitianOperator::identity(4));
        let p = kron(&HermitianOperator::diagonal(&[1.0, 0.0]), &HermitianOperator::diagonal(&[0.0, 1.0]));
        assert_eq!(p, HermitianOperator::diagonal(&[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn pauli_x_squared_spectrum() {
        let x = HermitianOperator::new(CMatrix::from_row_slice(2, 2, &[C0, C1, C1, C0])).unwrap();
        let e = kron(&x, &x).eigenvalues();
        for (got, want) in e.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            close(*got, want, 1e-12);
        }
    }

    #[test]
    fn bell_marginal_is_mixed() {
        let rho = isotropic_state(1.0, 2).unwrap();
        let m = partial_trace(rho.operator(), &[2, 2], &[0]).unwrap();
        assert!(max_abs(&(m.matrix() - CMatrix::identity(2, 2) * c(0.5))) < 1e-14);
    }

    #[test]
    fn partial_trace_keeps_middle_factor() {
        let a = HermitianOperator::diagonal(&[1.0, 2.0]);
        let b = HermitianOperator::diagonal(&[3.0, 5.0, 7.0]);
        let cc = HermitianOperator::diagonal(&[0.5, 0.25]);
        let abc = kron(&kron(&a, &b), &cc);
        let m = partial_trace(&abc, &[2, 3, 2], &[1]).unwrap();
        assert!(max_abs(&(m.matrix() - b.matrix() * c(3.0 * 0.75))) < 1e-12);
        assert!(partial_trace(&abc, &[2, 2], &[0]).is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMatrix::from_row_slice(2, 2, &[C0, C1, C0, C0]);
        assert!(matches!(HermitianOperator::new(m), Err(QkdError::NotHermitian(_))));
    }

    #[test]
    fn entropies() {
        close(binary_entropy(0.5).unwrap(), 1.0, 1e-15);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        close(binary_entropy(0.925).unwrap(), 0.38431, 5e-6);
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn isotropic_overlaps() {
        let rho = isotropic_state(0.8, 4).unwrap();
        let p = HermitianOperator::projector(&kron_vec(&basis_vector(4, 2), &basis_vector(4, 2)));
        close(rho.expectation(&p), 0.2125, 1e-12);
        assert!(isotropic_state(1.2, 2).is_err());
        let white = isotropic_state(0.0, 3).unwrap();
        assert!(max_abs(&(white.operator().matrix() - CMatrix::identity(9, 9) * c(1.0 / 9.0))) < 1e-15);
    }

    fn kron_vec(a: &CVector, b: &CVector) -> CVector {
        a.kronecker(b)
    }

    #[test]
    fn key_basis_entropy() {
        close(conditional_entropy_ab(&isotropic_joint(0.9, 2).unwrap()), 0.28640, 5e-6);
        close(conditional_entropy_ab(&isotropic_joint(1.0, 3).unwrap()), 0.0, 1e-15);
        close(conditional_entropy_ab(&isotropic_joint(0.0, 4).unwrap()), 2.0, 1e-12);
        assert!(JointDistribution::new(DMatrix::from_element(2, 2, 0.3)).is_err());
    }

    #[test]
    fn closed_form_rates() {
        close(tomographic_rate(0.9, 2).unwrap(), 0.49682, 5e-6);
        for d in [2, 4, 8] {
            assert_eq!(tomographic_rate(1.0, d).unwrap(), (d as f64).log2());
            close(subspace_rate(1.0, 2, d).unwrap(), 1.0, 1e-15);
        }
        close(subspace_rate(0.9, 4, 4).unwrap(), tomographic_rate(0.9, 4).unwrap(), 1e-15);
        close(subspace_probability(0.9, 2, 8), 0.925, 1e-15);
        assert!(subspace_rate(0.9, 3, 8).is_err());
    }
}
