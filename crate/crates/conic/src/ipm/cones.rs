//! Cone vectors, Jordan algebra and Nesterov-Todd scalings.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

/// One element of the product cone: a symmetric matrix per PSD cone and a
/// vector per second-order cone.
#[derive(Clone, Debug)]
pub(crate) struct ConeVec {
    pub psd: Vec<DMatrix<f64>>,
    pub soc: Vec<DVector<f64>>,
}

impl ConeVec {
    pub fn zeros(psd_dims: &[usize], soc_dims: &[usize]) -> Self {
        ConeVec {
            psd: psd_dims.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
            soc: soc_dims.iter().map(|&m| DVector::zeros(m)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConeVec {
            psd: self.psd.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            soc: self.soc.iter().map(|v| DVector::zeros(v.len())).collect(),
        }
    }

    pub fn dot(&self, o: &ConeVec) -> f64 {
        let a: f64 = self.psd.iter().zip(&o.psd).map(|(x, y)| x.dot(y)).sum();
        let b: f64 = self.soc.iter().zip(&o.soc).map(|(x, y)| x.dot(y)).sum();
        a + b
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, o: &ConeVec) {
        for (x, y) in self.psd.iter_mut().zip(&o.psd) {
            *x += y * alpha;
        }
        for (x, y) in self.soc.iter_mut().zip(&o.soc) {
            *x += y * alpha;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in self.psd.iter_mut() {
            *x *= alpha;
        }
        for x in self.soc.iter_mut() {
            *x *= alpha;
        }
    }

    /// Barrier degree of the cone.
    pub fn degree(&self) -> usize {
        self.psd.iter().map(|m| m.nrows()).sum::<usize>() + self.soc.len()
    }

    /// Smallest value of `t` with `self + t·e` on the cone boundary, negated:
    /// positive means outside the interior.
    pub fn max_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for m in &self.psd {
            worst = worst.max(-min_eigenvalue(m));
        }
        for v in &self.soc {
            worst = worst.max(v.rows(1, v.len() - 1).norm() - v[0]);
        }
        worst
    }

    pub fn add_identity(&mut self, t: f64) {
        for m in self.psd.iter_mut() {
            for i in 0..m.nrows() {
                m[(i, i)] += t;
            }
        }
        for v in self.soc.iter_mut() {
            v[0] += t;
        }
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Scaling of one PSD cone: `W(S) = R⁻¹ S R⁻ᵀ`, `W⁻ᵀ(Z) = Rᵀ Z R`, both
/// equal to `diag(λ)` at the current point.
#[derive(Clone, Debug)]
pub(crate) struct PsdScaling {
    pub r: DMatrix<f64>,
    pub rinv: DMatrix<f64>,
    pub lambda: DVector<f64>,
    /// `(R Rᵀ)⁻¹`, the metric of `Φ⁻¹ = WᵀW`
    pub q: DMatrix<f64>,
    /// `R Rᵀ`
    pub p: DMatrix<f64>,
}

impl PsdScaling {
    pub fn identity(n: usize) -> Self {
        PsdScaling {
            r: DMatrix::identity(n, n),
            rinv: DMatrix::identity(n, n),
            lambda: DVector::from_element(n, 1.0),
            q: DMatrix::identity(n, n),
            p: DMatrix::identity(n, n),
        }
    }

    /// NT scaling of `(S, Z)` relative to an existing scaling: `s_t` and
    /// `z_t` are the points expressed in the old scaled coordinates.
    fn compose(r_old: &DMatrix<f64>, rinv_old: &DMatrix<f64>, s_t: &DMatrix<f64>, z_t: &DMatrix<f64>) -> Option<Self> {
        let l1 = Cholesky::new(s_t.clone())?.l();
        let l2 = Cholesky::new(z_t.clone())?.l();
        let svd = SVD::new(l2.transpose() * &l1, false, true);
        let v = svd.v_t?.transpose();
        let sv = svd.singular_values;
        if sv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return None;
        }
        let n = sv.len();
        let mut vs = v.clone();
        for j in 0..n {
            let f = 1.0 / sv[j].sqrt();
            for i in 0..n {
                vs[(i, j)] *= f;
            }
        }
        let r = r_old * &l1 * vs;
        let l1_inv_rinv = l1.solve_lower_triangular(rinv_old)?;
        let mut rinv = v.transpose() * l1_inv_rinv;
        for i in 0..n {
            let f = sv[i].sqrt();
            for j in 0..n {
                rinv[(i, j)] *= f;
            }
        }
        let q = rinv.transpose() * &rinv;
        let p = &r * r.transpose();
        Some(PsdScaling { r, rinv, lambda: sv, q, p })
    }

    pub fn from_points(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let n = s.nrows();
        let id = DMatrix::identity(n, n);
        let mut s = s.clone();
        let mut z = z.clone();
        symmetrize(&mut s);
        symmetrize(&mut z);
        Self::compose(&id, &id, &s, &z)
    }

    /// Scaling after a step of length `alpha` along scaled directions.
    pub fn updated(&self, alpha: f64, ds_t: &DMatrix<f64>, dz_t: &DMatrix<f64>) -> Option<Self> {
        let mut s_t = ds_t * alpha;
        let mut z_t = dz_t * alpha;
        for i in 0..self.lambda.len() {
            s_t[(i, i)] += self.lambda[i];
            z_t[(i, i)] += self.lambda[i];
        }
        symmetrize(&mut s_t);
        symmetrize(&mut z_t);
        Self::compose(&self.r, &self.rinv, &s_t, &z_t)
    }

    #[cfg(test)]
    pub fn w(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.rinv * s * self.rinv.transpose();
        symmetrize(&mut out);
        out
    }

    /// `S` with `W(S) = diag(λ)`
    pub fn s_point(&self) -> DMatrix<f64> {
        let mut out = &self.r * DMatrix::from_diagonal(&self.lambda) * self.r.transpose();
        symmetrize(&mut out);
        out
    }

    /// `Z` with `W⁻ᵀ(Z) = diag(λ)`
    pub fn z_point(&self) -> DMatrix<f64> {
        let mut out = self.rinv.transpose() * DMatrix::from_diagonal(&self.lambda) * &self.rinv;
        symmetrize(&mut out);
        out
    }

    pub fn w_inv_t(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.r.transpose() * z * &self.r;
        symmetrize(&mut out);
        out
    }

    pub fn w_inv(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.r * u * self.r.transpose();
        symmetrize(&mut out);
        out
    }

    /// `Φ(U) = W⁻¹ W⁻ᵀ U`
    pub fn phi(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.p * u * &self.p;
        symmetrize(&mut out);
        out
    }

    /// `Φ⁻¹(U) = Wᵀ W U`
    pub fn phi_inv(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.q * u * &self.q;
        symmetrize(&mut out);
        out
    }

    /// `λ ∘ λ`
    pub fn lambda_sq(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.lambda.map(|x| x * x))
    }

    /// Solves `λ ∘ X = Y`.
    pub fn lambda_div(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.lambda.len();
        DMatrix::from_fn(n, n, |i, j| 2.0 * y[(i, j)] / (self.lambda[i] + self.lambda[j]))
    }

    /// Largest step with `λ + α Δ ⪰ 0`.
    pub fn max_step(&self, d: &DMatrix<f64>) -> f64 {
        let n = self.lambda.len();
        let inv_sqrt = self.lambda.map(|x| 1.0 / x.sqrt());
        let m = DMatrix::from_fn(n, n, |i, j| d[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        let beta = min_eigenvalue(&m);
        if beta < 0.0 {
            -1.0 / beta
        } else {
            f64::INFINITY
        }
    }
}

pub(crate) fn jordan_psd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = (a * b + b * a) * 0.5;
    symmetrize(&mut out);
    out
}

/// NT scaling of one second-order cone: `W` symmetric with `W s = W⁻¹ z = λ`.
#[derive(Clone, Debug)]
pub(crate) struct SocScaling {
    pub w: DMatrix<f64>,
    pub winv: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

fn soc_residual(v: &DVector<f64>) -> f64 {
    let t = v.rows(1, v.len() - 1).norm();
    (v[0] - t) * (v[0] + t)
}

impl SocScaling {
    pub fn identity(m: usize) -> Self {
        let mut lambda = DVector::zeros(m);
        lambda[0] = 1.0;
        SocScaling { w: DMatrix::identity(m, m), winv: DMatrix::identity(m, m), lambda }
    }

    pub fn from_points(s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let m = s.len();
        let sr = soc_residual(s);
        let zr = soc_residual(z);
        if !(sr > 0.0 && zr > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
            return None;
        }
        let sn = sr.sqrt();
        let zn = zr.sqrt();
        let sb = s / sn;
        let zb = z / zn;
        let gamma = ((1.0 + sb.dot(&zb)) / 2.0).sqrt();
        let mut w = zb.clone();
        w[0] += sb[0];
        for i in 1..m {
            w[i] -= sb[i];
        }
        w /= 2.0 * gamma;
        let eta = (zn / sn).sqrt();
        let w0 = w[0];
        let w1 = w.rows(1, m - 1).into_owned();
        let mut wb = DMatrix::zeros(m, m);
        wb[(0, 0)] = w0;
        for i in 1..m {
            wb[(0, i)] = w1[i - 1];
            wb[(i, 0)] = w1[i - 1];
            for j in 1..m {
                wb[(i, j)] = w1[i - 1] * w1[j - 1] / (1.0 + w0) + if i == j { 1.0 } else { 0.0 };
            }
        }
        // J Wb J flips the sign of the first row and column off the corner
        let mut wbinv = wb.clone();
        for i in 1..m {
            wbinv[(0, i)] = -wbinv[(0, i)];
            wbinv[(i, 0)] = -wbinv[(i, 0)];
        }
        let wmat = wb * eta;
        let winv = wbinv / eta;
        let lambda = &wmat * s;
        Some(SocScaling { w: wmat, winv, lambda })
    }

    pub fn lambda_sq(&self) -> DVector<f64> {
        jordan_soc(&self.lambda, &self.lambda)
    }

    /// Solves `λ ∘ x = r`.
    pub fn lambda_div(&self, r: &DVector<f64>) -> DVector<f64> {
        let l = &self.lambda;
        let m = l.len();
        let l0 = l[0];
        let l1 = l.rows(1, m - 1);
        let r1 = r.rows(1, m - 1);
        let det = soc_residual(l);
        let u = l1.dot(&r1);
        let mut x = DVector::zeros(m);
        x[0] = (l0 * r[0] - u) / det;
        for i in 1..m {
            x[i] = -l[i] * r[0] / det + r[i] / l0 + l[i] * u / (l0 * det);
        }
        x
    }

    pub fn max_step(&self, d: &DVector<f64>) -> f64 {
        soc_max_step(&self.lambda, d)
    }
}

pub(crate) fn jordan_soc(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let m = u.len();
    let mut out = DVector::zeros(m);
    out[0] = u.dot(v);
    for i in 1..m {
        out[i] = u[0] * v[i] + v[0] * u[i];
    }
    out
}

/// Largest `α ≥ 0` keeping `x + α d` in the second-order cone.
pub(crate) fn soc_max_step(x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let m = x.len();
    let x1 = x.rows(1, m - 1);
    let d1 = d.rows(1, m - 1);
    let a = d[0] * d[0] - d1.norm_squared();
    let b = 2.0 * (x[0] * d[0] - x1.dot(&d1));
    let c = soc_residual(x).max(0.0);
    let mut alpha = f64::INFINITY;
    if a.abs() < 1e-300 {
        if b < 0.0 {
            alpha = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if a < 0.0 {
            let sq = disc.max(0.0).sqrt();
            alpha = (-b - sq) / (2.0 * a);
        } else if disc >= 0.0 && b < 0.0 {
            let sq = disc.sqrt();
            // smaller positive root, in the cancellation-free form
            alpha = 2.0 * c / (-b + sq);
        }
    }
    if d[0] < 0.0 {
        alpha = alpha.min(-x[0] / d[0]);
    }
    alpha.max(0.0)
}
