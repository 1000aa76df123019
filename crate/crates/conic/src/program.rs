use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::ConicError;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Handle to a declared variable block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BlockId(pub(crate) usize);

/// Handle to one real scalar unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ScalarVar(pub(crate) usize);

impl ScalarVar {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shape of a variable block.
///
/// Matrix kinds are square of side `dim`. `Vector` is a column of `dim`
/// real unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BlockKind {
    Hermitian,
    Symmetric,
    Complex,
    Real,
    Vector,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariableBlock {
    pub name: String,
    pub kind: BlockKind,
    pub dim: usize,
    pub(crate) id: BlockId,
    pub(crate) offset: usize,
}

impl VariableBlock {
    pub fn id(&self) -> BlockId {
        self.id
    }

    pub fn scalar_count(&self) -> usize {
        scalar_count(self.kind, self.dim)
    }

    /// Range of scalar unknowns owned by the block.
    pub fn scalar_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.scalar_count()
    }

    pub fn is_real(&self) -> bool {
        !matches!(self.kind, BlockKind::Hermitian | BlockKind::Complex)
    }

    /// Entry `(p, q)` of the block as an affine expression of the unknowns.
    /// For `Vector` blocks only `q = 0` is valid.
    pub fn entry(&self, p: usize, q: usize) -> Affine {
        let n = self.dim;
        let o = self.offset;
        match self.kind {
            BlockKind::Vector => {
                assert!(p < n && q == 0, "vector entry out of range");
                Affine::var(o + p, ONE)
            }
            BlockKind::Real => {
                assert!(p < n && q < n, "entry out of range");
                Affine::var(o + p * n + q, ONE)
            }
            BlockKind::Complex => {
                assert!(p < n && q < n, "entry out of range");
                let k = o + 2 * (p * n + q);
                Affine::from_terms(vec![(k, ONE), (k + 1, I)], ZERO)
            }
            BlockKind::Symmetric => {
                assert!(p < n && q < n, "entry out of range");
                let (a, b) = if p <= q { (p, q) } else { (q, p) };
                Affine::var(o + upper_index(n, a, b), ONE)
            }
            BlockKind::Hermitian => {
                assert!(p < n && q < n, "entry out of range");
                if p == q {
                    return Affine::var(o + p, ONE);
                }
                let (a, b, sign) = if p < q { (p, q, 1.0) } else { (q, p, -1.0) };
                let k = o + n + 2 * strict_upper_index(n, a, b);
                Affine::from_terms(vec![(k, ONE), (k + 1, Complex64::new(0.0, sign))], ZERO)
            }
        }
    }
}

fn scalar_count(kind: BlockKind, n: usize) -> usize {
    match kind {
        BlockKind::Hermitian => n * n,
        BlockKind::Symmetric => n * (n + 1) / 2,
        BlockKind::Complex => 2 * n * n,
        BlockKind::Real => n * n,
        BlockKind::Vector => n,
    }
}

// row-major index of (a, b), a <= b, in the upper triangle including the diagonal
fn upper_index(n: usize, a: usize, b: usize) -> usize {
    a * n + b - a - a * a.saturating_sub(1) / 2
}

// row-major index of (a, b), a < b, in the strict upper triangle
fn strict_upper_index(n: usize, a: usize, b: usize) -> usize {
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// Complex affine expression `constant + Σ coef_j · x_j` in real unknowns.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Affine {
    pub(crate) terms: Vec<(usize, Complex64)>,
    pub(crate) constant: Complex64,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: impl Into<Complex64>) -> Self {
        Affine { terms: Vec::new(), constant: c.into() }
    }

    pub fn scalar(v: ScalarVar) -> Self {
        Self::var(v.0, ONE)
    }

    pub(crate) fn var(index: usize, coef: Complex64) -> Self {
        Affine { terms: vec![(index, coef)], constant: ZERO }
    }

    pub(crate) fn from_terms(terms: Vec<(usize, Complex64)>, constant: Complex64) -> Self {
        Affine { terms, constant }
    }

    pub fn constant_part(&self) -> Complex64 {
        self.constant
    }

    pub fn terms(&self) -> &[(usize, Complex64)] {
        &self.terms
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Affine, scale: impl Into<Complex64>) {
        let s = scale.into();
        if s == ZERO {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(k, c)| (k, c * s)));
        self.constant += other.constant * s;
    }

    pub fn add_constant(&mut self, c: impl Into<Complex64>) {
        self.constant += c.into();
    }

    pub fn scaled(&self, s: impl Into<Complex64>) -> Affine {
        let mut out = Affine::zero();
        out.add_scaled(self, s);
        out
    }

    pub fn conj(&self) -> Affine {
        Affine { terms: self.terms.iter().map(|&(k, c)| (k, c.conj())).collect(), constant: self.constant.conj() }
    }

    /// Real part as a function of the real unknowns.
    pub fn re(&self) -> Affine {
        let mut out = Affine {
            terms: self.terms.iter().map(|&(k, c)| (k, Complex64::new(c.re, 0.0))).collect(),
            constant: Complex64::new(self.constant.re, 0.0),
        };
        out.normalize();
        out
    }

    /// Imaginary part as a function of the real unknowns.
    pub fn im(&self) -> Affine {
        let mut out = Affine {
            terms: self.terms.iter().map(|&(k, c)| (k, Complex64::new(c.im, 0.0))).collect(),
            constant: Complex64::new(self.constant.im, 0.0),
        };
        out.normalize();
        out
    }

    /// Sorts terms, merges duplicates and drops exact zeros.
    pub fn normalize(&mut self) {
        if self.terms.is_empty() {
            return;
        }
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, Complex64)> = Vec::with_capacity(self.terms.len());
        for &(k, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += c,
                _ => out.push((k, c)),
            }
        }
        out.retain(|t| t.1 != ZERO);
        self.terms = out;
    }

    pub fn is_real(&self) -> bool {
        self.constant.im == 0.0 && self.terms.iter().all(|t| t.1.im == 0.0)
    }

    pub fn evaluate(&self, x: &[f64]) -> Complex64 {
        self.terms.iter().fold(self.constant, |acc, &(k, c)| acc + c * x[k])
    }
}

/// How a block is written into a PSD constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Direct,
    Adjoint,
}

/// Assembles a Hermitian matrix whose entries are affine in the unknowns.
#[derive(Clone, Debug)]
pub struct PsdBuilder {
    pub(crate) name: String,
    pub(crate) dim: usize,
    pub(crate) cells: BTreeMap<(usize, usize), Affine>,
}

impl PsdBuilder {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        PsdBuilder { name: name.into(), dim, cells: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_entry(&mut self, row: usize, col: usize, value: &Affine, scale: impl Into<Complex64>) {
        assert!(row < self.dim && col < self.dim, "cell outside constraint matrix");
        self.cells.entry((row, col)).or_default().add_scaled(value, scale);
    }

    /// Writes `block` (or its adjoint) with its top-left corner at `(row, col)`.
    pub fn place(&mut self, block: &VariableBlock, row: usize, col: usize, placement: Placement) {
        assert!(block.kind != BlockKind::Vector, "vector blocks cannot be placed");
        let n = block.dim;
        for p in 0..n {
            for q in 0..n {
                let value = match placement {
                    Placement::Direct => block.entry(p, q),
                    Placement::Adjoint => block.entry(q, p).conj(),
                };
                self.add_entry(row + p, col + q, &value, ONE);
            }
        }
    }

    /// Adds a constant matrix with its top-left corner at `(row, col)`.
    pub fn add_constant(&mut self, m: &DMatrix<Complex64>, row: usize, col: usize, scale: f64) {
        for p in 0..m.nrows() {
            for q in 0..m.ncols() {
                let c = m[(p, q)] * scale;
                if c != ZERO {
                    self.add_entry(row + p, col + q, &Affine::constant(c), ONE);
                }
            }
        }
    }

    /// Adds `value · I` on the diagonal range `start..start+len`.
    pub fn add_diagonal(&mut self, start: usize, len: usize, value: &Affine, scale: f64) {
        for p in start..start + len {
            self.add_entry(p, p, value, scale);
        }
    }
}

/// Radius of the ellipsoid constraint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EllipsoidRadius {
    Fixed(f64),
    /// The radius is itself an unknown (useful for minimum-distance projections).
    Variable(ScalarVar),
}

/// `‖L⁻¹(p − center)‖ ≤ radius` with `L Lᵀ = covariance`.
///
/// The factor comes from the eigendecomposition of the covariance; directions
/// whose eigenvalue is below `1e-14 · max` are pinned to the center.
#[derive(Clone, Debug)]
pub struct Ellipsoid {
    pub(crate) center: DVector<f64>,
    pub(crate) covariance: DMatrix<f64>,
    pub(crate) radius: EllipsoidRadius,
    /// (unit direction u, 1/√s) for kept directions
    pub(crate) whitened: Vec<(DVector<f64>, f64)>,
    pub(crate) pinned: Vec<DVector<f64>>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, covariance: DMatrix<f64>, radius: EllipsoidRadius) -> Result<Self, ConicError> {
        let k = center.len();
        if covariance.nrows() != k || covariance.ncols() != k {
            return Err(ConicError::Dimension(format!(
                "covariance is {}x{} but center has length {k}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if let EllipsoidRadius::Fixed(r) = radius {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(ConicError::InvalidEllipsoid(format!("radius {r} must be finite and nonnegative")));
            }
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * (1.0 + covariance.amax()) {
            return Err(ConicError::InvalidEllipsoid("covariance is not symmetric".into()));
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let smax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let smin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin < -1e-12 * smax.max(1e-300) && smin < -1e-14 {
            return Err(ConicError::InvalidEllipsoid(format!("covariance has negative eigenvalue {smin:e}")));
        }
        let cutoff = 1e-14 * smax;
        let mut whitened = Vec::new();
        let mut pinned = Vec::new();
        let zero_radius = matches!(radius, EllipsoidRadius::Fixed(r) if r == 0.0);
        for i in 0..k {
            let s = eig.eigenvalues[i];
            let u = eig.eigenvectors.column(i).into_owned();
            if s > cutoff && smax > 0.0 && !zero_radius {
                whitened.push((u, 1.0 / s.sqrt()));
            } else {
                pinned.push(u);
            }
        }
        Ok(Ellipsoid { center, covariance: sym, radius, whitened, pinned })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn radius(&self) -> EllipsoidRadius {
        self.radius
    }

    pub fn pinned_directions(&self) -> usize {
        self.pinned.len()
    }

    /// Whitened distance of `p` from the center over the kept directions, or
    /// infinity when a pinned direction deviates by more than `tol`.
    pub fn distance(&self, p: &DVector<f64>, tol: f64) -> f64 {
        let diff = p - &self.center;
        if self.pinned.iter().any(|u| u.dot(&diff).abs() > tol) {
            return f64::INFINITY;
        }
        self.whitened.iter().map(|(u, w)| (u.dot(&diff) * w).powi(2)).sum::<f64>().sqrt()
    }

    /// Membership test for a fixed radius.
    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        match self.radius {
            EllipsoidRadius::Fixed(r) => self.distance(p, tol) <= r + tol,
            EllipsoidRadius::Variable(_) => true,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Equality {
    pub(crate) lhs: Affine,
    pub(crate) rhs: f64,
    pub(crate) label: String,
}

/// Solver-agnostic conic program: minimize a real linear objective subject to
/// linear equalities, Hermitian PSD constraints and an optional ellipsoid.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub(crate) blocks: Vec<VariableBlock>,
    pub(crate) n_scalars: usize,
    pub(crate) objective: Affine,
    pub(crate) equalities: Vec<Equality>,
    pub(crate) psd: Vec<PsdBuilder>,
    pub(crate) ellipsoid: Option<(BlockId, Ellipsoid)>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: impl Into<String>, kind: BlockKind, dim: usize) -> Result<BlockId, ConicError> {
        let name = name.into();
        if dim == 0 {
            return Err(ConicError::Dimension(format!("block {name} has dimension 0")));
        }
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(ConicError::DuplicateBlock(name));
        }
        let id = BlockId(self.blocks.len());
        let block = VariableBlock { name, kind, dim, id, offset: self.n_scalars };
        self.n_scalars += block.scalar_count();
        self.blocks.push(block);
        Ok(id)
    }

    pub fn block(&self, id: BlockId) -> &VariableBlock {
        &self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[VariableBlock] {
        &self.blocks
    }

    pub fn block_by_name(&self, name: &str) -> Option<&VariableBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.n_scalars
    }

    /// The `i`-th scalar of a `Vector` block.
    pub fn scalar(&self, id: BlockId, i: usize) -> ScalarVar {
        let b = &self.blocks[id.0];
        assert!(b.kind == BlockKind::Vector && i < b.dim, "not a vector entry");
        ScalarVar(b.offset + i)
    }

    /// `tr(K · X)` for a constant `K` and matrix block `X`.
    pub fn trace_product(&self, id: BlockId, k: &DMatrix<Complex64>) -> Affine {
        let b = &self.blocks[id.0];
        assert!(k.nrows() == b.dim && k.ncols() == b.dim, "trace_product dimension mismatch");
        let mut out = Affine::zero();
        for p in 0..b.dim {
            for q in 0..b.dim {
                let c = k[(q, p)];
                if c != ZERO {
                    out.add_scaled(&b.entry(p, q), c);
                }
            }
        }
        out.normalize();
        out
    }

    pub fn trace(&self, id: BlockId) -> Affine {
        let b = &self.blocks[id.0];
        let mut out = Affine::zero();
        for p in 0..b.dim {
            out.add_scaled(&b.entry(p, p), ONE);
        }
        out.normalize();
        out
    }

    /// Adds `scale · expr` to the objective. Only the real part is minimized;
    /// a non-real objective is reported at solve time.
    pub fn add_objective(&mut self, expr: &Affine, scale: f64) {
        self.objective.add_scaled(expr, scale);
    }

    pub fn objective(&self) -> &Affine {
        &self.objective
    }

    /// Adds the real equality `expr = rhs`; `expr` must be real-valued.
    pub fn add_equality(&mut self, label: impl Into<String>, expr: &Affine, rhs: f64) -> Result<usize, ConicError> {
        let mut lhs = expr.clone();
        lhs.normalize();
        let label = label.into();
        if lhs.terms.iter().any(|t| t.1.im.abs() > 1e-12) || lhs.constant.im.abs() > 1e-12 {
            return Err(ConicError::NotReal(label));
        }
        for t in lhs.terms.iter_mut() {
            t.1.im = 0.0;
        }
        lhs.constant.im = 0.0;
        self.check_terms(&lhs)?;
        self.equalities.push(Equality { lhs, rhs, label });
        Ok(self.equalities.len() - 1)
    }

    /// Adds `expr = rhs` for complex `expr`, as separate real and imaginary
    /// equalities. Parts with no unknowns are checked and skipped.
    pub fn add_complex_equality(&mut self, label: &str, expr: &Affine, rhs: Complex64) -> Result<(), ConicError> {
        for (part, value, tag) in [(expr.re(), rhs.re, "re"), (expr.im(), rhs.im, "im")] {
            if part.terms.is_empty() {
                if (part.constant.re - value).abs() > 1e-12 {
                    return Err(ConicError::Inconsistent(format!("{label}.{tag}")));
                }
                continue;
            }
            self.add_equality(format!("{label}.{tag}"), &part, value)?;
        }
        Ok(())
    }

    pub fn equality_count(&self) -> usize {
        self.equalities.len()
    }

    pub fn add_psd(&mut self, builder: PsdBuilder) -> Result<usize, ConicError> {
        for aff in builder.cells.values() {
            self.check_terms(aff)?;
        }
        self.psd.push(builder);
        Ok(self.psd.len() - 1)
    }

    pub fn psd_count(&self) -> usize {
        self.psd.len()
    }

    pub fn psd_dims(&self) -> Vec<usize> {
        self.psd.iter().map(|b| b.dim).collect()
    }

    /// Attaches the ellipsoid to a `Vector` block of matching length.
    pub fn set_ellipsoid(&mut self, id: BlockId, ellipsoid: Ellipsoid) -> Result<(), ConicError> {
        if self.ellipsoid.is_some() {
            return Err(ConicError::InvalidEllipsoid("program already has an ellipsoid".into()));
        }
        let b = self.blocks.get(id.0).ok_or_else(|| ConicError::UnknownBlock(format!("{id:?}")))?;
        if b.kind != BlockKind::Vector || b.dim != ellipsoid.dim() {
            return Err(ConicError::Dimension(format!(
                "ellipsoid of dimension {} needs a vector block of that length, got {}",
                ellipsoid.dim(),
                b.name
            )));
        }
        if let EllipsoidRadius::Variable(v) = ellipsoid.radius {
            if v.0 >= self.n_scalars {
                return Err(ConicError::UnknownBlock("radius variable".into()));
            }
        }
        self.ellipsoid = Some((id, ellipsoid));
        Ok(())
    }

    pub fn ellipsoid(&self) -> Option<(BlockId, &Ellipsoid)> {
        self.ellipsoid.as_ref().map(|(b, e)| (*b, e))
    }

    fn check_terms(&self, aff: &Affine) -> Result<(), ConicError> {
        match aff.terms.iter().find(|t| t.0 >= self.n_scalars) {
            Some(t) => Err(ConicError::UnknownBlock(format!("scalar index {}", t.0))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_helpers_enumerate_triangles() {
        let n = 5;
        let mut k = 0;
        for a in 0..n {
            for b in a..n {
                assert_eq!(upper_index(n, a, b), k);
                k += 1;
            }
        }
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                assert_eq!(strict_upper_index(n, a, b), k);
                k += 1;
            }
        }
    }

    #[test]
    fn hermitian_entries_are_conjugate() {
        let mut p = ConicProgram::new();
        let id = p.add_block("h", BlockKind::Hermitian, 3).unwrap();
        let b = p.block(id).clone();
        let x: Vec<f64> = (0..p.scalar_count()).map(|i| 0.3 * i as f64 - 1.0).collect();
        for i in 0..3 {
            for j in 0..3 {
                let a = b.entry(i, j).evaluate(&x);
                let c = b.entry(j, i).evaluate(&x);
                assert!((a - c.conj()).norm() < 1e-15);
            }
        }
        assert_eq!(p.scalar_count(), 9);
    }

    #[test]
    fn trace_product_matches_dense() {
        let mut p = ConicProgram::new();
        let id = p.add_block("z", BlockKind::Complex, 2).unwrap();
        let k = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(1.0, 0.5), Complex64::new(0.0, 2.0), Complex64::new(-1.0, 0.0), Complex64::new(0.25, -1.0)],
        );
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let b = p.block(id).clone();
        let z = DMatrix::from_fn(2, 2, |i, j| b.entry(i, j).evaluate(&x));
        let expect = (&k * &z).trace();
        let got = p.trace_product(id, &k).evaluate(&x);
        assert!((expect - got).norm() < 1e-14);
    }

    #[test]
    fn one_dimensional_ellipsoid_interval() {
        let e = Ellipsoid::new(DVector::from_element(1, 0.5), DMatrix::from_element(1, 1, 4.0), EllipsoidRadius::Fixed(1.0)).unwrap();
        assert!(e.contains(&DVector::from_element(1, -1.5), 1e-12));
        assert!(e.contains(&DVector::from_element(1, 2.5), 1e-12));
        assert!(!e.contains(&DVector::from_element(1, 2.51), 1e-12));
        assert!(!e.contains(&DVector::from_element(1, -1.51), 1e-12));
    }

    #[test]
    fn negative_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(Ellipsoid::new(DVector::zeros(2), cov, EllipsoidRadius::Fixed(1.0)).is_err());
    }

    #[test]
    fn zero_radius_pins_everything() {
        let e = Ellipsoid::new(DVector::zeros(3), DMatrix::identity(3, 3), EllipsoidRadius::Fixed(0.0)).unwrap();
        assert_eq!(e.pinned_directions(), 3);
    }
}
