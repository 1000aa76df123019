//! Riemannian gradient descent for approximately unbiased bases.

use nalgebra::QR;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{fix_phases, objective_norm, objective_of, BasisSet};
use crate::error::{QkdError, Result};
#[cfg(test)]
use crate::qcore::max_abs;
use crate::qcore::{c, eigh, CMatrix, CVector};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { max_iter: 5000, grad_tol: 1e-10, armijo: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Clone, Debug)]
pub struct ApproxMubs {
    pub bases: BasisSet,
    pub objective: f64,
    /// restart that produced the returned set
    pub restart: usize,
    pub iterations: usize,
    /// final objective of every restart, in restart order
    pub restart_objectives: Vec<f64>,
}

/// Haar-random unitary from the QR decomposition of a complex Gaussian matrix.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let z = CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let qr = QR::new(z);
    let (q, r) = (qr.q(), qr.r());
    let mut u = q;
    for j in 0..d {
        let rjj = r[(j, j)];
        let ph = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { c(1.0) };
        for i in 0..d {
            u[(i, j)] *= ph;
        }
    }
    u
}

/// Best of `restarts` independent descents on `n` bases of dimension `d`.
/// Restart `r` draws its initial unitaries from stream `r` of a ChaCha
/// generator seeded with `seed`; the first basis stays the identity.
pub fn approximate_mubs(d: usize, n: usize, restarts: usize, seed: u64) -> Result<ApproxMubs> {
    approximate_mubs_with(d, n, restarts, seed, &DescentOptions::default())
}

pub fn approximate_mubs_with(d: usize, n: usize, restarts: usize, seed: u64, opts: &DescentOptions) -> Result<ApproxMubs> {
    if d < 2 || n < 2 {
        return Err(QkdError::InvalidInput(format!("approximate MUBs need d >= 2 and n >= 2, got d={d}, n={n}")));
    }
    if restarts == 0 {
        return Err(QkdError::InvalidInput("at least one restart is required".into()));
    }
    let runs: Vec<(Vec<CMatrix>, f64, usize)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut us = vec![CMatrix::identity(d, d)];
            for _ in 1..n {
                us.push(haar_unitary(d, &mut rng));
            }
            let (f, it) = descend(&mut us, d, opts, |_| {});
            (us, f, it)
        })
        .collect();
    // lowest objective, lowest restart index on ties
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.1 < runs[best].1 {
            best = r;
        }
    }
    let restart_objectives = runs.iter().map(|r| r.1).collect();
    let (mut us, objective, iterations) = runs.into_iter().nth(best).expect("nonempty");
    for u in us.iter_mut() {
        fix_phases(u);
    }
    Ok(ApproxMubs { bases: BasisSet::new(us)?, objective, restart: best, iterations, restart_objectives })
}

/// Euclidean gradient of the objective with respect to each unitary.
fn euclidean_gradient(us: &[CMatrix], d: usize) -> Vec<CMatrix> {
    let n = us.len();
    let inv = 1.0 / d as f64;
    let scale = 4.0 / objective_norm(n, d);
    let mut grads = vec![CMatrix::zeros(d, d); n];
    for k in 0..n {
        for l in k + 1..n {
            let g = us[k].adjoint() * &us[l];
            let e = g.map(|z| z * c(scale * (z.norm_sqr() - inv)));
            grads[l] += &us[k] * &e;
            grads[k] += &us[l] * e.adjoint();
        }
    }
    grads
}

/// `exp(-i η G)` for Hermitian `G` given its eigendecomposition.
fn unitary_step(vals: &[f64], vecs: &CMatrix, eta: f64) -> CMatrix {
    let phases = CVector::from_iterator(vals.len(), vals.iter().map(|&l| Complex64::from_polar(1.0, -eta * l)));
    vecs * CMatrix::from_diagonal(&phases) * vecs.adjoint()
}

/// Runs the descent in place and returns the final objective and the
/// number of iterations. `observe` sees the objective after each accepted step.
pub(crate) fn descend(us: &mut [CMatrix], d: usize, opts: &DescentOptions, mut observe: impl FnMut(f64)) -> (f64, usize) {
    let n = us.len();
    let mut f = objective_of(us, d);
    let mut eta = 1.0;
    for it in 0..opts.max_iter {
        let grads = euclidean_gradient(us, d);
        let mut dirs = Vec::with_capacity(n - 1);
        let mut gnorm2 = 0.0;
        for l in 1..n {
            let x = us[l].adjoint() * &grads[l];
            // Riemannian gradient as a Hermitian generator
            let h = (&x - x.adjoint()) * Complex64::new(0.0, -0.5);
            gnorm2 += h.iter().map(|z| z.norm_sqr()).sum::<f64>();
            dirs.push(eigh(&h));
        }
        if gnorm2.sqrt() < opts.grad_tol {
            return (f, it);
        }
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<CMatrix> =
                std::iter::once(us[0].clone()).chain((1..n).map(|l| &us[l] * unitary_step(&dirs[l - 1].0, &dirs[l - 1].1, eta))).collect();
            let ft = objective_of(&trial, d);
            if ft <= f - opts.armijo * eta * gnorm2 {
                us.clone_from_slice(&trial);
                f = ft;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            return (f, it);
        }
        observe(f);
        eta = (eta * 2.0).min(1e3);
    }
    (f, opts.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_sample_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_unitary(5, &mut rng);
        assert!(max_abs(&(u.adjoint() * &u - CMatrix::identity(5, 5))) < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let us: Vec<CMatrix> = (0..3).map(|_| haar_unitary(d, &mut rng)).collect();
        let grads = euclidean_gradient(&us, d);
        let dir = CMatrix::from_fn(d, d, |i, j| Complex64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.05));
        let h = 1e-6;
        let mut plus = us.clone();
        plus[1] += &dir * c(h);
        let mut minus = us.clone();
        minus[1] -= &dir * c(h);
        let fd = (objective_of(&plus, d) - objective_of(&minus, d)) / (2.0 * h);
        let analytic: f64 = grads[1].iter().zip(dir.iter()).map(|(g, v)| (g.conj() * v).re).sum();
        assert!((fd - analytic).abs() < 1e-7 * (1.0 + fd.abs()), "{fd} vs {analytic}");
    }

    #[test]
    fn descent_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut us = vec![CMatrix::identity(4, 4)];
        for _ in 0..3 {
            us.push(haar_unitary(4, &mut rng));
        }
        let mut last = objective_of(&us, 4);
        let opts = DescentOptions { max_iter: 300, ..Default::default() };
        descend(&mut us, 4, &opts, |f| {
            assert!(f <= last);
            last = f;
        });
        assert_eq!(us[0], CMatrix::identity(4, 4));
        for u in &us {
            assert!(max_abs(&(u.adjoint() * u - CMatrix::identity(4, 4))) < 1e-10);
        }
    }
}
