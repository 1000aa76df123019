//! Lowering of a [`ConicProgram`] to real standard form
//! `min cᵀx + c₀  s.t.  Ax = b,  s = h + 𝓕x ∈ K`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::ConicError;
use crate::program::{Affine, ConicProgram, EllipsoidRadius};

/// Real symmetric cone `C + Σ x_j F_j ⪰ 0`.
#[derive(Clone, Debug)]
pub(crate) struct PsdCone {
    pub name: String,
    pub n: usize,
    pub complex: bool,
    pub constant: DMatrix<f64>,
    /// sorted global indices of the unknowns appearing in the cone
    pub vars: Vec<usize>,
    /// per local unknown, entries `(row, col, value)` of `F_j` (both triangles)
    pub entries: Vec<Vec<(u32, u32, f64)>>,
}

/// Second-order cone `s₀ ≥ ‖s₁..‖` with `s = h + M x`.
#[derive(Clone, Debug)]
pub(crate) struct SocCone {
    pub h: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug)]
pub(crate) struct StandardForm {
    pub n: usize,
    pub c: Vec<f64>,
    pub c0: f64,
    pub a: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    /// the first `n_user_eq` rows come from the program's equalities
    pub n_user_eq: usize,
    pub psd: Vec<PsdCone>,
    pub soc: Vec<SocCone>,
    /// scalar ranges of the declared blocks
    pub block_ranges: Vec<(usize, usize)>,
}

fn real_row(aff: &Affine) -> Vec<(usize, f64)> {
    aff.terms.iter().filter(|t| t.1.re != 0.0).map(|t| (t.0, t.1.re)).collect()
}

pub(crate) fn lower(p: &ConicProgram) -> Result<StandardForm, ConicError> {
    let n = p.n_scalars;
    let mut obj = p.objective.clone();
    obj.normalize();
    let scale = 1.0 + obj.terms.iter().map(|t| t.1.norm()).fold(0.0, f64::max);
    if obj.terms.iter().any(|t| t.1.im.abs() > 1e-10 * scale) || obj.constant.im.abs() > 1e-10 * scale {
        return Err(ConicError::ComplexObjective);
    }
    let mut c = vec![0.0; n];
    for &(k, v) in &obj.terms {
        c[k] = v.re;
    }

    let mut a = Vec::new();
    let mut b = Vec::new();
    for eq in &p.equalities {
        a.push(real_row(&eq.lhs));
        b.push(eq.rhs - eq.lhs.constant.re);
    }
    let n_user_eq = a.len();

    let mut psd = Vec::with_capacity(p.psd.len());
    for builder in &p.psd {
        psd.push(lower_psd(builder)?);
    }

    let mut soc = Vec::new();
    if let Some((block, e)) = &p.ellipsoid {
        let off = p.block(*block).offset;
        for u in &e.pinned {
            let row: Vec<(usize, f64)> = u.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (off + k, *v)).collect();
            a.push(row);
            b.push(u.dot(&e.center));
        }
        if !e.whitened.is_empty() {
            let mut h = Vec::with_capacity(e.whitened.len() + 1);
            let mut rows = Vec::with_capacity(e.whitened.len() + 1);
            match e.radius {
                EllipsoidRadius::Fixed(r) => {
                    h.push(r);
                    rows.push(Vec::new());
                }
                EllipsoidRadius::Variable(v) => {
                    h.push(0.0);
                    rows.push(vec![(v.0, 1.0)]);
                }
            }
            for (u, w) in &e.whitened {
                h.push(-w * u.dot(&e.center));
                rows.push(u.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (off + k, w * v)).collect());
            }
            soc.push(SocCone { h, rows });
        } else if let EllipsoidRadius::Variable(v) = e.radius {
            // every direction pinned: the radius only needs to be nonnegative
            soc.push(SocCone { h: vec![0.0], rows: vec![vec![(v.0, 1.0)]] });
        }
    }

    let block_ranges = p.blocks.iter().map(|bl| (bl.offset, bl.offset + bl.scalar_count())).collect();
    Ok(StandardForm { n, c, c0: obj.constant.re, a, b, n_user_eq, psd, soc, block_ranges })
}

fn lower_psd(builder: &crate::program::PsdBuilder) -> Result<PsdCone, ConicError> {
    let dim = builder.dim;
    let mut cells: BTreeMap<(usize, usize), Affine> = BTreeMap::new();
    for (&k, v) in &builder.cells {
        let mut v = v.clone();
        v.normalize();
        cells.insert(k, v);
    }
    let zero = Affine::zero();
    let mut scale: f64 = 1.0;
    for v in cells.values() {
        scale = scale.max(v.constant.norm());
        for t in &v.terms {
            scale = scale.max(t.1.norm());
        }
    }
    let tol = 1e-12 * scale;
    for (&(r, col), v) in &cells {
        if r > col {
            continue;
        }
        let w = cells.get(&(col, r)).unwrap_or(&zero).conj();
        if !affine_close(v, &w, tol) {
            return Err(ConicError::NonHermitianConstraint(builder.name.clone()));
        }
        if r == col && (v.constant.im.abs() > tol || v.terms.iter().any(|t| t.1.im.abs() > tol)) {
            return Err(ConicError::NonHermitianConstraint(builder.name.clone()));
        }
    }
    for (&(r, col), v) in &cells {
        if r > col && !cells.contains_key(&(col, r)) && !v.terms.is_empty() {
            return Err(ConicError::NonHermitianConstraint(builder.name.clone()));
        }
    }
    let complex = cells.values().any(|v| !v.is_real());
    let n = if complex { 2 * dim } else { dim };
    let mut constant = DMatrix::zeros(n, n);
    let mut per_var: BTreeMap<usize, Vec<(u32, u32, f64)>> = BTreeMap::new();
    let mut push = |k: usize, r: usize, col: usize, v: f64| {
        if v != 0.0 {
            per_var.entry(k).or_default().push((r as u32, col as u32, v));
        }
    };
    for (&(r, col), v) in &cells {
        let k0: Complex64 = v.constant;
        if complex {
            constant[(r, col)] += k0.re;
            constant[(r + dim, col + dim)] += k0.re;
            constant[(r + dim, col)] += k0.im;
            constant[(r, col + dim)] -= k0.im;
            for &(k, cf) in &v.terms {
                push(k, r, col, cf.re);
                push(k, r + dim, col + dim, cf.re);
                push(k, r + dim, col, cf.im);
                push(k, r, col + dim, -cf.im);
            }
        } else {
            constant[(r, col)] += k0.re;
            for &(k, cf) in &v.terms {
                push(k, r, col, cf.re);
            }
        }
    }
    // exact symmetry of the constant part
    let constant = (&constant + constant.transpose()) * 0.5;
    let vars: Vec<usize> = per_var.keys().cloned().collect();
    let entries: Vec<Vec<(u32, u32, f64)>> = per_var.into_values().collect();
    Ok(PsdCone { name: builder.name.clone(), n, complex, constant, vars, entries })
}

fn affine_close(a: &Affine, b: &Affine, tol: f64) -> bool {
    if (a.constant - b.constant).norm() > tol {
        return false;
    }
    let mut i = 0;
    let mut j = 0;
    let (x, y) = (&a.terms, &b.terms);
    while i < x.len() || j < y.len() {
        if j >= y.len() || (i < x.len() && x[i].0 < y[j].0) {
            if x[i].1.norm() > tol {
                return false;
            }
            i += 1;
        } else if i >= x.len() || y[j].0 < x[i].0 {
            if y[j].1.norm() > tol {
                return false;
            }
            j += 1;
        } else {
            if (x[i].1 - y[j].1).norm() > tol {
                return false;
            }
            i += 1;
            j += 1;
        }
    }
    true
}
