//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling
//! for products of PSD and second-order cones.

mod cones;
mod kkt;
mod presolve;

use std::time::Instant;

use faer::Mat;
use log::debug;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::ConicError;
use crate::lower::{lower, StandardForm};
use crate::program::ConicProgram;
use crate::solution::{Solution, SolveStats, Status};
use cones::{jordan_psd, jordan_soc, min_eigenvalue, ConeVec};
use kkt::{NormalFactor, Role, Scalings, Structure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// relative primal and dual residual tolerance
    pub feas_tol: f64,
    /// relative duality gap tolerance
    pub gap_tol: f64,
    /// smallest slack eigenvalue considered strictly inside the PSD cone
    pub psd_floor: f64,
    pub max_iter: usize,
    /// iterative refinement steps per linear solve
    pub refine_steps: usize,
    /// relative diagonal regularization of the normal matrix
    pub static_reg: f64,
    /// log per-iteration progress at debug level
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { feas_tol: 1e-8, gap_tol: 1e-8, psd_floor: 1e-9, max_iter: 150, refine_steps: 3, static_reg: 1e-13, verbose: false }
    }
}

/// A solver for [`ConicProgram`]s.
pub trait Backend {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<Solution, ConicError>;
}

/// The built-in primal-dual interior-point backend.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPoint;

impl Backend for InteriorPoint {
    fn name(&self) -> &'static str {
        "hsde-ipm"
    }

    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<Solution, ConicError> {
        let start = Instant::now();
        let sf = lower(program)?;
        let mut sol = Solver::new(&sf, settings)?.run();
        sol.stats.seconds = start.elapsed().as_secs_f64();
        Ok(sol)
    }
}

const NEAR_TOL: f64 = 1e-5;

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    s: ConeVec,
    z: ConeVec,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: ConeVec,
    rtau: f64,
    pcost: f64,
    dcost: f64,
    pres: f64,
    dres: f64,
    gap: f64,
    /// `bᵀy + hᵀz`
    by_hz: f64,
    cx: f64,
}

impl Residuals {
    fn merit(&self) -> f64 {
        self.pres.max(self.dres).max(self.gap / self.pcost.abs().min(self.dcost.abs()).max(1.0))
    }
}

struct Solver<'a> {
    sf: &'a StandardForm,
    set: &'a SolverSettings,
    st: Structure,
    /// kept equality rows (global indices)
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    /// position of each kept row among all rows
    kept: Vec<usize>,
    a_hub: Mat<f64>,
    h: ConeVec,
    nb: f64,
    nh: f64,
    nc: f64,
    psd_dims: Vec<usize>,
    soc_dims: Vec<usize>,
    early: Option<(Status, String)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl<'a> Solver<'a> {
    fn new(sf: &'a StandardForm, set: &'a SolverSettings) -> Result<Self, ConicError> {
        let st = kkt::analyze(sf, &sf.a);
        let mut early = None;
        let mut in_eq = vec![false; sf.n];
        for row in &sf.a {
            for &(u, c) in row {
                if c != 0.0 {
                    in_eq[u] = true;
                }
            }
        }
        let mut st = st;
        // unknowns fixed only by equalities are handled by augmenting the
        // normal matrix; the rest are truly free
        st.augment = st.inert.iter().any(|&v| in_eq[v]);
        st.inert.retain(|&v| !in_eq[v]);
        for &v in &st.inert {
            if sf.c[v] != 0.0 && early.is_none() {
                early = Some((Status::Unbounded, format!("unknown {v} is free with nonzero cost")));
            }
        }
        let nhub = st.hub.len();
        let dense: Vec<Vec<f64>> =
            sf.a.iter()
                .map(|row| {
                    let mut d = vec![0.0; nhub];
                    for &(v, c) in row {
                        if let Role::Hub(k) = st.roles[v] {
                            d[k] += c;
                        }
                    }
                    d
                })
                .collect();
        let sel = presolve::select_rows(&dense, &sf.b, 1e-10);
        if sel.worst_inconsistency > 1e-8 && early.is_none() {
            early = Some((Status::Infeasible, format!("dependent equalities disagree by {:.3e}", sel.worst_inconsistency)));
        }
        let rows: Vec<Vec<(usize, f64)>> = sel.kept.iter().map(|&i| sf.a[i].clone()).collect();
        let b: Vec<f64> = sel.kept.iter().map(|&i| sf.b[i]).collect();
        let a_hub = Mat::from_fn(sel.kept.len(), nhub, |i, j| dense[sel.kept[i]][j]);
        let h = ConeVec {
            psd: sf.psd.iter().map(|c| c.constant.clone()).collect(),
            soc: sf.soc.iter().map(|c| DVector::from_vec(c.h.clone())).collect(),
        };
        let nb = norm(&b);
        let nh = h.norm();
        let nc = norm(&sf.c);
        let psd_dims = sf.psd.iter().map(|c| c.n).collect();
        let soc_dims = sf.soc.iter().map(|c| c.h.len()).collect();
        Ok(Solver { sf, set, st, rows, b, kept: sel.kept, a_hub, h, nb, nh, nc, psd_dims, soc_dims, early })
    }

    fn f_mul(&self, x: &[f64]) -> ConeVec {
        let mut out = ConeVec::zeros(&self.psd_dims, &self.soc_dims);
        for (l, cone) in self.sf.psd.iter().enumerate() {
            let m = &mut out.psd[l];
            for (k, &v) in cone.vars.iter().enumerate() {
                let xv = x[v];
                if xv == 0.0 {
                    continue;
                }
                for &(a, b, f) in &cone.entries[k] {
                    m[(a as usize, b as usize)] += f * xv;
                }
            }
        }
        for (q, cone) in self.sf.soc.iter().enumerate() {
            for (r, row) in cone.rows.iter().enumerate() {
                out.soc[q][r] = row.iter().map(|&(v, c)| c * x[v]).sum();
            }
        }
        out
    }

    fn ft_mul(&self, z: &ConeVec) -> Vec<f64> {
        let mut out = vec![0.0; self.sf.n];
        for (l, cone) in self.sf.psd.iter().enumerate() {
            let m = &z.psd[l];
            for (k, &v) in cone.vars.iter().enumerate() {
                out[v] += cone.entries[k].iter().map(|&(a, b, f)| f * m[(a as usize, b as usize)]).sum::<f64>();
            }
        }
        for (q, cone) in self.sf.soc.iter().enumerate() {
            for (r, row) in cone.rows.iter().enumerate() {
                for &(v, c) in row {
                    out[v] += c * z.soc[q][r];
                }
            }
        }
        out
    }

    fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(v, c)| c * x[v]).sum()).collect()
    }

    fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sf.n];
        for (row, &yi) in self.rows.iter().zip(y) {
            for &(v, c) in row {
                out[v] += c * yi;
            }
        }
        out
    }

    /// Solves `[0 Aᵀ -𝓕ᵀ; A 0 0; -𝓕 0 -Φ][dx; dy; dz] = [rx; ry; rz]`.
    fn kkt_solve(&self, fac: &NormalFactor, sc: &Scalings, rx: &[f64], ry: &[f64], rz: &ConeVec) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let once = |rx: &[f64], ry: &[f64], rz: &ConeVec| {
            let pz = sc.phi_inv(rz);
            let fpz = self.ft_mul(&pz);
            let t: Vec<f64> = rx.iter().zip(&fpz).map(|(a, b)| a - b).collect();
            let (dx, dy) = fac.solve(&self.st, &t, ry);
            let mut u = self.f_mul(&dx);
            u.axpy(1.0, rz);
            let mut dz = sc.phi_inv(&u);
            dz.scale(-1.0);
            (dx, dy, dz)
        };
        let (mut dx, mut dy, mut dz) = once(rx, ry, rz);
        let rnorm = norm(rx).max(norm(ry)).max(rz.norm()).max(1e-300);
        for _ in 0..self.set.refine_steps {
            let aty = self.at_mul(&dy);
            let ftz = self.ft_mul(&dz);
            let ex: Vec<f64> = (0..rx.len()).map(|i| rx[i] - aty[i] + ftz[i]).collect();
            let adx = self.a_mul(&dx);
            let ey: Vec<f64> = ry.iter().zip(&adx).map(|(a, b)| a - b).collect();
            let mut ez = self.f_mul(&dx);
            ez.axpy(1.0, rz);
            ez.axpy(1.0, &sc.phi(&dz));
            let err = norm(&ex).max(norm(&ey)).max(ez.norm());
            if err <= 1e-14 * rnorm {
                break;
            }
            let (cx, cy, cz) = once(&ex, &ey, &ez);
            for (a, b) in dx.iter_mut().zip(&cx) {
                *a += b;
            }
            for (a, b) in dy.iter_mut().zip(&cy) {
                *a += b;
            }
            dz.axpy(1.0, &cz);
        }
        (dx, dy, dz)
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let c = &self.sf.c;
        let aty = self.at_mul(&it.y);
        let ftz = self.ft_mul(&it.z);
        let dres_vec: Vec<f64> = (0..c.len()).map(|i| aty[i] - ftz[i]).collect();
        let rx: Vec<f64> = (0..c.len()).map(|i| dres_vec[i] + c[i] * it.tau).collect();
        let ax = self.a_mul(&it.x);
        let ry: Vec<f64> = ax.iter().zip(&self.b).map(|(a, b)| a - b * it.tau).collect();
        let fx = self.f_mul(&it.x);
        let mut rz = it.s.clone();
        rz.axpy(-1.0, &fx);
        rz.axpy(-it.tau, &self.h);
        let cx = dot(c, &it.x);
        let by_hz = dot(&self.b, &it.y) + self.h.dot(&it.z);
        let rtau = it.kappa + cx + by_hz;
        let c0 = self.sf.c0;
        let pcost = cx / it.tau + c0;
        let dcost = -by_hz / it.tau + c0;
        let pres = (norm(&ry) / (it.tau * (1.0 + self.nb))).max(rz.norm() / (it.tau * (1.0 + self.nh)));
        let dres = norm(&rx) / (it.tau * (1.0 + self.nc));
        Residuals { rx, ry, rz, rtau, pcost, dcost, pres, dres, gap: (pcost - dcost).abs(), by_hz, cx }
    }

    fn initial_point(&self, sc: &Scalings) -> Result<Iterate, ()> {
        let n = self.sf.n;
        let m = self.b.len();
        let fac = kkt::factor(self.sf, &self.st, &self.a_hub, sc, self.set.static_reg).map_err(|_| ())?;
        let (x, _, zt) = self.kkt_solve(&fac, sc, &vec![0.0; n], &self.b, &self.h);
        let mut s = zt;
        s.scale(-1.0);
        let alpha = s.max_violation();
        if alpha >= -1e-8 {
            s.add_identity(1.0 + alpha);
        }
        let negc: Vec<f64> = self.sf.c.iter().map(|v| -v).collect();
        let (_, y, mut z) = self.kkt_solve(&fac, sc, &negc, &vec![0.0; m], &self.h.zeros_like());
        let alpha = z.max_violation();
        if alpha >= -1e-8 {
            z.add_identity(1.0 + alpha);
        }
        Ok(Iterate { x, y, s, z, tau: 1.0, kappa: 1.0 })
    }

    fn finish(&self, it: &Iterate, r: &Residuals, status: Status, iters: usize, cert: Option<String>) -> Solution {
        let tau = if status.has_solution() { it.tau } else { 1.0 };
        let x: Vec<f64> = it.x.iter().map(|v| v / tau).collect();
        let mut duals = vec![0.0; self.sf.n_user_eq];
        for (k, &row) in self.kept.iter().enumerate() {
            if row < self.sf.n_user_eq {
                duals[row] = -it.y[k] / tau;
            }
        }
        let min_eig = it.s.psd.iter().map(|m| min_eigenvalue(m) / it.tau).fold(f64::INFINITY, f64::min);
        let (pobj, dobj) = if status.has_solution() { (r.pcost, r.dcost) } else { (f64::NAN, f64::NAN) };
        Solution {
            status,
            primal_objective: pobj,
            dual_objective: dobj,
            x,
            equality_duals: duals,
            stats: SolveStats {
                iterations: iters,
                primal_residual: r.pres,
                dual_residual: r.dres,
                gap: r.gap,
                seconds: 0.0,
                min_slack_eigenvalue: min_eig,
                certificate: cert,
            },
        }
    }

    fn failed(&self, status: Status, cert: String) -> Solution {
        Solution {
            status,
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            x: vec![0.0; self.sf.n],
            equality_duals: vec![0.0; self.sf.n_user_eq],
            stats: SolveStats { certificate: Some(cert), ..SolveStats::default() },
        }
    }

    fn converged(&self, it: &Iterate, r: &Residuals, feas: f64, gap: f64) -> bool {
        r.pres <= feas
            && r.dres <= feas
            && r.gap <= gap * r.pcost.abs().min(r.dcost.abs()).max(1.0)
            && self.inside(&it.s, it.tau)
            && self.inside(&it.z, it.tau)
    }

    /// Whether `v / tau` lies in the cone up to the eigenvalue floor.
    fn inside(&self, v: &ConeVec, tau: f64) -> bool {
        let floor = self.set.psd_floor;
        let psd_ok = v.psd.iter().all(|m| min_eigenvalue(m) / tau >= -floor * (1.0 + m.amax() / tau));
        let soc_ok = v.soc.iter().all(|u| (u[0] - u.rows(1, u.len() - 1).norm()) / tau >= -floor * (1.0 + u.amax() / tau));
        psd_ok && soc_ok
    }

    fn run(&self) -> Solution {
        if let Some((status, cert)) = &self.early {
            return self.failed(*status, cert.clone());
        }
        let set = self.set;
        let nu = (self.h.degree() + 1) as f64;
        if set.verbose {
            for cone in &self.sf.psd {
                debug!("cone {}: side {} complex {} unknowns {}", cone.name, cone.n, cone.complex, cone.vars.len());
            }
            debug!("hub {} groups {}", self.st.hub.len(), self.st.groups.len());
        }
        let mut sc = Scalings::identity(self.sf);
        let mut it = match self.initial_point(&sc) {
            Ok(it) => it,
            Err(()) => return self.failed(Status::NumericalFailure, "initial factorization failed".into()),
        };
        sc = match Scalings::from_points(&it.s, &it.z) {
            Some(s) => s,
            None => return self.failed(Status::NumericalFailure, "initial point outside the cone".into()),
        };
        // latest near-optimal iterate, else the one with the smallest merit
        let mut best: Option<(bool, f64, Iterate)> = None;
        let negc: Vec<f64> = self.sf.c.iter().map(|v| -v).collect();
        let mut iter = 0;
        loop {
            let r = self.residuals(&it);
            if set.verbose {
                debug!(
                    "iter {iter:3} pcost {:+.9e} dcost {:+.9e} pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e} kappa {:.2e}",
                    r.pcost, r.dcost, r.pres, r.dres, r.gap, it.tau, it.kappa
                );
            }
            if !(r.pres.is_finite() && r.dres.is_finite() && r.pcost.is_finite()) {
                return self.give_up(best, iter, "non-finite iterate");
            }
            if self.converged(&it, &r, set.feas_tol, set.gap_tol) {
                return self.finish(&it, &r, Status::Optimal, iter, None);
            }
            let merit = r.merit();
            let near = self.converged(&it, &r, NEAR_TOL, NEAR_TOL);
            if near || best.as_ref().is_none_or(|(n, m, _)| !n && merit < *m) {
                best = Some((near, merit, it.clone()));
            }
            // infeasibility certificates on the unnormalized iterate
            if r.by_hz < 0.0 {
                let aty = self.at_mul(&it.y);
                let ftz = self.ft_mul(&it.z);
                let res: Vec<f64> = aty.iter().zip(&ftz).map(|(a, b)| a - b).collect();
                if norm(&res) <= set.feas_tol * (-r.by_hz) {
                    let cert = format!("dual ray with bᵀy + hᵀz = {:.3e}", r.by_hz / it.tau.max(it.kappa));
                    return self.finish(&it, &r, Status::Infeasible, iter, Some(cert));
                }
            }
            if r.cx < 0.0 {
                let ax = self.a_mul(&it.x);
                let mut sfx = self.f_mul(&it.x);
                sfx.scale(-1.0);
                sfx.axpy(1.0, &it.s);
                if norm(&ax).max(sfx.norm()) <= set.feas_tol * (-r.cx) {
                    let cert = format!("primal ray with cᵀx = {:.3e}", r.cx / it.tau.max(it.kappa));
                    return self.finish(&it, &r, Status::Unbounded, iter, Some(cert));
                }
            }
            if it.tau.max(it.kappa) < 1e-13 {
                return self.give_up(best, iter, "tau and kappa both vanish: the program is ill-posed");
            }
            if iter >= set.max_iter {
                return self.give_up(best, iter, "iteration limit");
            }
            iter += 1;

            let fac = match kkt::factor(self.sf, &self.st, &self.a_hub, &sc, set.static_reg) {
                Ok(f) => f,
                Err(_) => return self.give_up(best, iter, "normal matrix factorization failed"),
            };
            let (x1, y1, z1) = self.kkt_solve(&fac, &sc, &negc, &self.b, &self.h);
            let denom_base = -dot(&self.sf.c, &x1) - dot(&self.b, &y1) - self.h.dot(&z1);
            let lam = sc.lambda();
            let lam_sq = sc.lambda_sq();
            let mu = (lam.dot(&lam) + it.tau * it.kappa) / nu;

            let direction = |ds: &ConeVec, dk: f64, eta: f64| {
                let w_div = sc.w_inv(&sc.lambda_div(ds));
                let rx2: Vec<f64> = r.rx.iter().map(|v| -eta * v).collect();
                let ry2: Vec<f64> = r.ry.iter().map(|v| -eta * v).collect();
                let mut rz2 = r.rz.clone();
                rz2.scale(-eta);
                rz2.axpy(-1.0, &w_div);
                let (x2, y2, z2) = self.kkt_solve(&fac, &sc, &rx2, &ry2, &rz2);
                let num = eta * r.rtau + dk / it.tau + dot(&self.sf.c, &x2) + dot(&self.b, &y2) + self.h.dot(&z2);
                let dtau = num / (it.kappa / it.tau + denom_base);
                let dx: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a + dtau * b).collect();
                let dy: Vec<f64> = y2.iter().zip(&y1).map(|(a, b)| a + dtau * b).collect();
                let mut dz = z2;
                dz.axpy(dtau, &z1);
                let dzt = sc.w_inv_t(&dz);
                let mut dst = sc.lambda_div(ds);
                dst.axpy(-1.0, &dzt);
                let dsv = sc.w_inv(&dst);
                let dkappa = (dk - it.kappa * dtau) / it.tau;
                Step { dx, dy, dz, ds: dsv, dst, dzt, dtau, dkappa }
            };
            let max_step = |st: &Step| {
                let mut a = sc.max_step(&st.dst).min(sc.max_step(&st.dzt));
                if st.dtau < 0.0 {
                    a = a.min(-it.tau / st.dtau);
                }
                if st.dkappa < 0.0 {
                    a = a.min(-it.kappa / st.dkappa);
                }
                a
            };

            // predictor
            let mut ds_a = lam_sq.clone();
            ds_a.scale(-1.0);
            let aff = direction(&ds_a, -it.tau * it.kappa, 1.0);
            let alpha_a = max_step(&aff).min(1.0);
            let sigma = (1.0 - alpha_a).powi(3).clamp(0.0, 1.0);

            // combined direction
            let mut ds_c = ds_a;
            let cross = ConeVec {
                psd: aff.dst.psd.iter().zip(&aff.dzt.psd).map(|(a, b)| jordan_psd(a, b)).collect(),
                soc: aff.dst.soc.iter().zip(&aff.dzt.soc).map(|(a, b)| jordan_soc(a, b)).collect(),
            };
            ds_c.axpy(-1.0, &cross);
            ds_c.add_identity(sigma * mu);
            let dk_c = -it.tau * it.kappa - aff.dtau * aff.dkappa + sigma * mu;
            let step = direction(&ds_c, dk_c, 1.0 - sigma);
            let alpha_max = max_step(&step);
            let alpha = (0.99 * alpha_max).min(1.0);
            if !(alpha > 1e-10) {
                return self.give_up(best, iter, "step length collapsed");
            }

            for (a, b) in it.x.iter_mut().zip(&step.dx) {
                *a += alpha * b;
            }
            for (a, b) in it.y.iter_mut().zip(&step.dy) {
                *a += alpha * b;
            }
            it.s.axpy(alpha, &step.ds);
            it.z.axpy(alpha, &step.dz);
            it.tau += alpha * step.dtau;
            it.kappa += alpha * step.dkappa;

            let mut psd = Vec::with_capacity(sc.psd.len());
            for (l, old) in sc.psd.iter().enumerate() {
                let next = old
                    .updated(alpha, &step.dst.psd[l], &step.dzt.psd[l])
                    .or_else(|| cones::PsdScaling::from_points(&it.s.psd[l], &it.z.psd[l]));
                match next {
                    Some(p) => {
                        // keep the iterates exactly on their scaling so rounding cannot push them out of the cone
                        it.s.psd[l] = p.s_point();
                        it.z.psd[l] = p.z_point();
                        psd.push(p)
                    }
                    None => return self.give_up(best, iter, "scaling update failed"),
                }
            }
            let mut soc = Vec::with_capacity(sc.soc.len());
            for q in 0..sc.soc.len() {
                match cones::SocScaling::from_points(&it.s.soc[q], &it.z.soc[q]) {
                    Some(p) => soc.push(p),
                    None => return self.give_up(best, iter, "scaling update failed"),
                }
            }
            sc = Scalings { psd, soc };
        }
    }

    fn give_up(&self, best: Option<(bool, f64, Iterate)>, iters: usize, why: &str) -> Solution {
        match best {
            Some((_, _, it)) => {
                let r = self.residuals(&it);
                if self.converged(&it, &r, NEAR_TOL, NEAR_TOL) {
                    self.finish(&it, &r, Status::NearOptimal, iters, None)
                } else {
                    let mut sol = self.finish(&it, &r, Status::NumericalFailure, iters, Some(why.to_string()));
                    sol.primal_objective = r.pcost;
                    sol.dual_objective = r.dcost;
                    sol
                }
            }
            None => self.failed(Status::NumericalFailure, why.to_string()),
        }
    }
}

struct Step {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: ConeVec,
    ds: ConeVec,
    dst: ConeVec,
    dzt: ConeVec,
    dtau: f64,
    dkappa: f64,
}
