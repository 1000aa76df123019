//! Normal equations of the scaled KKT system.
//!
//! Unknowns split into a small "hub" (blocks shared by many cones or touched
//! by equalities and second-order cones) and independent groups that only
//! couple to the hub. The normal matrix is then block arrowhead and is
//! factored group by group with a dense Schur complement on the hub.

use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Accum, Mat, Par, Side};

use super::cones::{ConeVec, PsdScaling, SocScaling};
use crate::lower::StandardForm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Role {
    Hub(usize),
    Group(usize, usize),
}

#[derive(Clone, Debug)]
pub(crate) struct Structure {
    pub roles: Vec<Role>,
    pub hub: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    /// group owning the non-hub unknowns of each PSD cone
    pub cone_group: Vec<Option<usize>>,
    /// unknowns appearing in no cone at all
    pub inert: Vec<usize>,
    /// add `ρ AᵀA` to the hub so that unknowns fixed only by equalities
    /// keep the normal matrix definite
    pub augment: bool,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub(crate) fn analyze(sf: &StandardForm, a_rows: &[Vec<(usize, f64)>]) -> Structure {
    let nb = sf.block_ranges.len();
    let mut block_of = vec![usize::MAX; sf.n];
    for (bi, &(lo, hi)) in sf.block_ranges.iter().enumerate() {
        for v in lo..hi {
            block_of[v] = bi;
        }
    }
    let mut cones_of_block: Vec<Vec<usize>> = vec![Vec::new(); nb];
    let mut in_cone = vec![false; sf.n];
    for (l, cone) in sf.psd.iter().enumerate() {
        for &v in &cone.vars {
            in_cone[v] = true;
            let b = block_of[v];
            if cones_of_block[b].last() != Some(&l) {
                cones_of_block[b].push(l);
            }
        }
    }
    let mut hub_block = vec![false; nb];
    for b in 0..nb {
        hub_block[b] = cones_of_block[b].len() > 2;
    }
    for row in a_rows {
        for &(v, _) in row {
            hub_block[block_of[v]] = true;
        }
    }
    for soc in &sf.soc {
        for row in &soc.rows {
            for &(v, _) in row {
                in_cone[v] = true;
                hub_block[block_of[v]] = true;
            }
        }
    }
    // union non-hub blocks sharing a cone
    let mut parent: Vec<usize> = (0..nb).collect();
    for cone in &sf.psd {
        let mut first: Option<usize> = None;
        for &v in &cone.vars {
            let b = block_of[v];
            if hub_block[b] {
                continue;
            }
            match first {
                None => first = Some(b),
                Some(f) => {
                    let (ra, rb) = (find(&mut parent, f), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut roles = vec![Role::Hub(0); sf.n];
    let mut hub = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of_root = vec![usize::MAX; nb];
    let mut inert = Vec::new();
    for v in 0..sf.n {
        let b = block_of[v];
        if hub_block[b] || !in_cone[v] {
            if !in_cone[v] {
                inert.push(v);
            }
            roles[v] = Role::Hub(hub.len());
            hub.push(v);
        } else {
            let r = find(&mut parent, b);
            if group_of_root[r] == usize::MAX {
                group_of_root[r] = groups.len();
                groups.push(Vec::new());
            }
            let g = group_of_root[r];
            roles[v] = Role::Group(g, groups[g].len());
            groups[g].push(v);
        }
    }
    let cone_group = sf
        .psd
        .iter()
        .map(|cone| {
            cone.vars.iter().find_map(|&v| match roles[v] {
                Role::Group(g, _) => Some(g),
                Role::Hub(_) => None,
            })
        })
        .collect();
    Structure { roles, hub, groups, cone_group, inert, augment: false }
}

pub(crate) struct Scalings {
    pub psd: Vec<PsdScaling>,
    pub soc: Vec<SocScaling>,
}

impl Scalings {
    pub fn identity(sf: &StandardForm) -> Self {
        Scalings {
            psd: sf.psd.iter().map(|c| PsdScaling::identity(c.n)).collect(),
            soc: sf.soc.iter().map(|c| SocScaling::identity(c.h.len())).collect(),
        }
    }

    pub fn from_points(s: &ConeVec, z: &ConeVec) -> Option<Self> {
        let mut psd = Vec::with_capacity(s.psd.len());
        for (a, b) in s.psd.iter().zip(&z.psd) {
            psd.push(PsdScaling::from_points(a, b)?);
        }
        let mut soc = Vec::with_capacity(s.soc.len());
        for (a, b) in s.soc.iter().zip(&z.soc) {
            soc.push(SocScaling::from_points(a, b)?);
        }
        Some(Scalings { psd, soc })
    }

    /// `W⁻ᵀ(u)`
    pub fn w_inv_t(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().zip(&u.psd).map(|(s, m)| s.w_inv_t(m)).collect(),
            soc: self.soc.iter().zip(&u.soc).map(|(s, v)| &s.winv * v).collect(),
        }
    }

    /// `W⁻¹(u)`
    pub fn w_inv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().zip(&u.psd).map(|(s, m)| s.w_inv(m)).collect(),
            soc: self.soc.iter().zip(&u.soc).map(|(s, v)| &s.winv * v).collect(),
        }
    }

    pub fn phi(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().zip(&u.psd).map(|(s, m)| s.phi(m)).collect(),
            soc: self.soc.iter().zip(&u.soc).map(|(s, v)| &s.winv * (&s.winv * v)).collect(),
        }
    }

    pub fn phi_inv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().zip(&u.psd).map(|(s, m)| s.phi_inv(m)).collect(),
            soc: self.soc.iter().zip(&u.soc).map(|(s, v)| &s.w * (&s.w * v)).collect(),
        }
    }

    pub fn lambda(&self) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().map(|s| nalgebra::DMatrix::from_diagonal(&s.lambda)).collect(),
            soc: self.soc.iter().map(|s| s.lambda.clone()).collect(),
        }
    }

    pub fn lambda_sq(&self) -> ConeVec {
        ConeVec { psd: self.psd.iter().map(|s| s.lambda_sq()).collect(), soc: self.soc.iter().map(|s| s.lambda_sq()).collect() }
    }

    pub fn lambda_div(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            psd: self.psd.iter().zip(&u.psd).map(|(s, m)| s.lambda_div(m)).collect(),
            soc: self.soc.iter().zip(&u.soc).map(|(s, v)| s.lambda_div(v)).collect(),
        }
    }

    pub fn max_step(&self, d: &ConeVec) -> f64 {
        let a = self.psd.iter().zip(&d.psd).map(|(s, m)| s.max_step(m)).fold(f64::INFINITY, f64::min);
        let b = self.soc.iter().zip(&d.soc).map(|(s, v)| s.max_step(v)).fold(f64::INFINITY, f64::min);
        a.min(b)
    }
}

struct GroupFactor {
    l: Mat<f64>,
    x: Mat<f64>,
}

/// Factorization of `[H Aᵀ; A 0]` with `H = 𝓕ᵀ Φ⁻¹ 𝓕`.
pub(crate) struct NormalFactor {
    groups: Vec<GroupFactor>,
    hub_l: Mat<f64>,
    /// `L_S⁻¹ Aᵀ`
    b: Mat<f64>,
    m_l: Mat<f64>,
    n_eq: usize,
    /// augmentation weight and `A` on the hub, when augmenting
    rho: f64,
    a_hub: Option<Mat<f64>>,
}

#[derive(Debug)]
pub(crate) struct FactorError;

fn llt_lower(mut m: Mat<f64>, reg: f64) -> Result<Mat<f64>, FactorError> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m);
    }
    let mut maxd: f64 = 0.0;
    for i in 0..n {
        maxd = maxd.max(m[(i, i)].abs());
    }
    let mut delta = reg * maxd.max(1e-300);
    for _ in 0..8 {
        let mut t = m.clone();
        for i in 0..n {
            t[(i, i)] += delta;
        }
        if let Ok(f) = t.llt(Side::Lower) {
            return Ok(f.L().to_owned());
        }
        delta = (delta * 100.0).max(1e-14 * maxd.max(1.0));
    }
    for i in 0..n {
        m[(i, i)] += delta;
    }
    m.llt(Side::Lower).map(|f| f.L().to_owned()).map_err(|_| FactorError)
}

pub(crate) fn factor(sf: &StandardForm, st: &Structure, a_hub: &Mat<f64>, sc: &Scalings, reg: f64) -> Result<NormalFactor, FactorError> {
    let nh = st.hub.len();
    let mut hub = Mat::<f64>::zeros(nh, nh);
    // cones grouped by owner so each group matrix is built and factored in turn
    let mut cones_by_group: Vec<Vec<usize>> = vec![Vec::new(); st.groups.len()];
    let mut hub_only = Vec::new();
    for (l, g) in st.cone_group.iter().enumerate() {
        match g {
            Some(g) => cones_by_group[*g].push(l),
            None => hub_only.push(l),
        }
    }
    let mut ybuf: Vec<f64> = Vec::new();
    for &l in &hub_only {
        accumulate_cone(sf, st, sc, l, &mut hub, None, &mut ybuf);
    }
    let mut groups = Vec::with_capacity(st.groups.len());
    for (g, cones) in cones_by_group.iter().enumerate() {
        let ng = st.groups[g].len();
        let mut gg = Mat::<f64>::zeros(ng, ng);
        let mut gh = Mat::<f64>::zeros(ng, nh);
        for &l in cones {
            accumulate_cone(sf, st, sc, l, &mut hub, Some((&mut gg, &mut gh)), &mut ybuf);
        }
        let lg = llt_lower(gg, reg)?;
        solve_lower_triangular_in_place(lg.as_ref(), gh.as_mut(), Par::Seq);
        matmul(hub.as_mut(), Accum::Add, gh.transpose(), gh.as_ref(), -1.0, Par::Seq);
        groups.push(GroupFactor { l: lg, x: gh });
    }
    // second-order cones: Mᵀ W² M on the hub
    for (q, cone) in sf.soc.iter().enumerate() {
        let w2 = &sc.soc[q].w * &sc.soc[q].w;
        let m = cone.rows.len();
        let mut mh = Mat::<f64>::zeros(m, nh);
        for (r, row) in cone.rows.iter().enumerate() {
            for &(v, c) in row {
                if let Role::Hub(h) = st.roles[v] {
                    mh[(r, h)] += c;
                }
            }
        }
        let w2f = Mat::<f64>::from_fn(m, m, |i, j| w2[(i, j)]);
        let t = &w2f * &mh;
        matmul(hub.as_mut(), Accum::Add, mh.transpose(), t.as_ref(), 1.0, Par::Seq);
    }
    for &v in &st.inert {
        if let Role::Hub(h) = st.roles[v] {
            hub[(h, h)] += 1.0;
        }
    }
    let mut rho = 0.0;
    if st.augment && a_hub.nrows() > 0 {
        let mut ata = Mat::<f64>::zeros(nh, nh);
        matmul(ata.as_mut(), Accum::Replace, a_hub.transpose(), a_hub.as_ref(), 1.0, Par::Seq);
        let (mut dh, mut da): (f64, f64) = (0.0, 0.0);
        for i in 0..nh {
            dh = dh.max(hub[(i, i)]);
            da = da.max(ata[(i, i)]);
        }
        rho = dh.max(1.0) / da.max(1e-300);
        for j in 0..nh {
            for i in 0..nh {
                hub[(i, j)] += rho * ata[(i, j)];
            }
        }
    }
    let hub_l = llt_lower(hub, reg)?;
    let n_eq = a_hub.nrows();
    let (b, m_l) = if n_eq > 0 {
        let mut b = a_hub.transpose().to_owned();
        solve_lower_triangular_in_place(hub_l.as_ref(), b.as_mut(), Par::Seq);
        let mut m = Mat::<f64>::zeros(n_eq, n_eq);
        matmul(m.as_mut(), Accum::Replace, b.transpose(), b.as_ref(), 1.0, Par::Seq);
        (b, llt_lower(m, reg)?)
    } else {
        (Mat::zeros(nh, 0), Mat::zeros(0, 0))
    };
    let a_aug = if rho > 0.0 { Some(a_hub.clone()) } else { None };
    Ok(NormalFactor { groups, hub_l, b, m_l, n_eq, rho, a_hub: a_aug })
}

/// Adds the contribution `tr(F_j Q F_k Q)` of PSD cone `l`.
fn accumulate_cone(
    sf: &StandardForm,
    st: &Structure,
    sc: &Scalings,
    l: usize,
    hub: &mut Mat<f64>,
    mut group: Option<(&mut Mat<f64>, &mut Mat<f64>)>,
    ybuf: &mut Vec<f64>,
) {
    let cone = &sf.psd[l];
    let n = cone.n;
    let q = &sc.psd[l].q;
    let qs = q.as_slice();
    ybuf.resize(n * n, 0.0);
    let nv = cone.vars.len();
    for k in 0..nv {
        let y = &mut ybuf[..];
        y.iter_mut().for_each(|t| *t = 0.0);
        // Y = Q F_k Q, column-major: Y[:, col] += g Q[b, col] Q[:, a]
        for &(a, b, g) in &cone.entries[k] {
            let (a, b) = (a as usize, b as usize);
            let qa = &qs[a * n..a * n + n];
            for col in 0..n {
                let f = g * qs[col * n + b];
                if f == 0.0 {
                    continue;
                }
                let ycol = &mut y[col * n..col * n + n];
                for (yt, qt) in ycol.iter_mut().zip(qa) {
                    *yt += f * qt;
                }
            }
        }
        let rk = st.roles[cone.vars[k]];
        for j in k..nv {
            let mut h = 0.0;
            for &(a, b, f) in &cone.entries[j] {
                h += f * y[b as usize * n + a as usize];
            }
            if h == 0.0 {
                continue;
            }
            let rj = st.roles[cone.vars[j]];
            match (rj, rk) {
                (Role::Hub(hj), Role::Hub(hk)) => {
                    hub[(hj, hk)] += h;
                    if j != k {
                        hub[(hk, hj)] += h;
                    }
                }
                (Role::Group(_, lj), Role::Group(_, lk)) => {
                    let (gg, _) = group.as_mut().expect("group cone without group matrix");
                    let (r, c) = if lj >= lk { (lj, lk) } else { (lk, lj) };
                    gg[(r, c)] += h;
                }
                (Role::Group(_, lj), Role::Hub(hk)) => {
                    let (_, gh) = group.as_mut().expect("group cone without group matrix");
                    gh[(lj, hk)] += h;
                }
                (Role::Hub(hj), Role::Group(_, lk)) => {
                    let (_, gh) = group.as_mut().expect("group cone without group matrix");
                    gh[(lk, hj)] += h;
                }
            }
        }
    }
}

impl NormalFactor {
    /// Solves `[H Aᵀ; A 0][dx; dy] = [t; ry]`.
    pub fn solve(&self, st: &Structure, t: &[f64], ry: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nh = st.hub.len();
        let mut rh = Mat::<f64>::from_fn(nh, 1, |i, _| t[st.hub[i]]);
        if let Some(a) = &self.a_hub {
            let ry_m = Mat::<f64>::from_fn(ry.len(), 1, |i, _| ry[i]);
            matmul(rh.as_mut(), Accum::Add, a.transpose(), ry_m.as_ref(), self.rho, Par::Seq);
        }
        let mut us = Vec::with_capacity(self.groups.len());
        for (g, gf) in self.groups.iter().enumerate() {
            let vars = &st.groups[g];
            let mut u = Mat::<f64>::from_fn(vars.len(), 1, |i, _| t[vars[i]]);
            solve_lower_triangular_in_place(gf.l.as_ref(), u.as_mut(), Par::Seq);
            matmul(rh.as_mut(), Accum::Add, gf.x.transpose(), u.as_ref(), -1.0, Par::Seq);
            us.push(u);
        }
        let mut dy = vec![0.0; self.n_eq];
        let mut v = rh;
        solve_lower_triangular_in_place(self.hub_l.as_ref(), v.as_mut(), Par::Seq);
        if self.n_eq > 0 {
            let mut w = Mat::<f64>::zeros(self.n_eq, 1);
            matmul(w.as_mut(), Accum::Replace, self.b.transpose(), v.as_ref(), 1.0, Par::Seq);
            for i in 0..self.n_eq {
                w[(i, 0)] -= ry[i];
            }
            solve_lower_triangular_in_place(self.m_l.as_ref(), w.as_mut(), Par::Seq);
            solve_upper_triangular_in_place(self.m_l.transpose(), w.as_mut(), Par::Seq);
            matmul(v.as_mut(), Accum::Add, self.b.as_ref(), w.as_ref(), -1.0, Par::Seq);
            for i in 0..self.n_eq {
                dy[i] = w[(i, 0)];
            }
        }
        solve_upper_triangular_in_place(self.hub_l.transpose(), v.as_mut(), Par::Seq);
        let mut dx = vec![0.0; t.len()];
        for i in 0..nh {
            dx[st.hub[i]] = v[(i, 0)];
        }
        for (g, gf) in self.groups.iter().enumerate() {
            let mut u = us[g].clone();
            matmul(u.as_mut(), Accum::Add, gf.x.as_ref(), v.as_ref(), -1.0, Par::Seq);
            solve_upper_triangular_in_place(gf.l.transpose(), u.as_mut(), Par::Seq);
            for (i, &var) in st.groups[g].iter().enumerate() {
                dx[var] = u[(i, 0)];
            }
        }
        (dx, dy)
    }
}
