//! Credible regions from measured counts: Gaussian approximation of the
//! likelihood, sampling of the posterior restricted to quantum-compatible
//! probabilities and calibration of the ellipsoid radius.

use conic::{solve, Affine, BlockKind, ConicProgram, Ellipsoid, EllipsoidRadius, Placement, PsdBuilder};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::Tolerances;
use crate::entropysdp::ProtocolInstance;
use crate::error::{QkdError, Result};
use crate::qcore::{CMatrix, HermitianOperator};

/// Frequencies closer than this to a compatible point count as compatible.
pub const COMPATIBILITY_TOL: f64 = 1e-7;
const PILOT: usize = 200;
const PILOT_ACCEPTANCE: f64 = 0.02;
const CHUNK: usize = 256;
const BURN_IN: usize = 1000;
const THINNING: usize = 10;
const MAX_BISECTIONS: usize = 40;
const START_RESTARTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsSetting {
    pub label: String,
    /// constraint-operator index of each outcome
    pub operators: Vec<usize>,
    pub counts: Vec<u64>,
}

impl CountsSetting {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsDataset {
    pub settings: Vec<CountsSetting>,
}

impl CountsDataset {
    pub fn new(settings: Vec<CountsSetting>) -> Result<Self> {
        let data = CountsDataset { settings };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(QkdError::InvalidInput("counts dataset has no settings".into()));
        }
        for s in &self.settings {
            if s.counts.len() < 2 {
                return Err(QkdError::InvalidInput(format!("setting {} has fewer than two outcomes", s.label)));
            }
            if s.operators.len() != s.counts.len() {
                return Err(QkdError::InvalidInput(format!(
                    "setting {} lists {} operators for {} counts",
                    s.label,
                    s.operators.len(),
                    s.counts.len()
                )));
            }
            if s.total() == 0 {
                return Err(QkdError::InvalidInput(format!("setting {} has no counts", s.label)));
            }
        }
        Ok(())
    }

    /// Checks that every operator index exists in the protocol.
    pub fn check_against(&self, protocol: &ProtocolInstance) -> Result<()> {
        let n = protocol.constraint_ops.len();
        for s in &self.settings {
            if let Some(&k) = s.operators.iter().find(|&&k| k >= n) {
                return Err(QkdError::InvalidInput(format!("setting {} refers to operator {k}, protocol has {n}", s.label)));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let data: CountsDataset = serde_json::from_str(s).map_err(|e| QkdError::Parse(format!("counts file: {e}")))?;
        data.validate()?;
        Ok(data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("counts serialize")
    }

    /// Region coordinates: first `k_i − 1` outcomes of every setting.
    pub fn kappa(&self) -> usize {
        self.settings.iter().map(|s| s.counts.len() - 1).sum()
    }

    /// Operator index of every region coordinate.
    pub fn region_operators(&self) -> Vec<usize> {
        self.settings.iter().flat_map(|s| s.operators[..s.operators.len() - 1].iter().cloned()).collect()
    }

    /// Every operator index with the frequency implied by region coordinates
    /// `p`, the dropped outcome of each setting being `1 − Σ`.
    pub fn expand(&self, p: &DVector<f64>) -> (Vec<usize>, Vec<f64>) {
        let mut ops = Vec::new();
        let mut vals = Vec::new();
        let mut j = 0;
        for s in &self.settings {
            let k = s.counts.len();
            let mut acc = 0.0;
            for o in 0..k - 1 {
                ops.push(s.operators[o]);
                vals.push(p[j]);
                acc += p[j];
                j += 1;
            }
            ops.push(s.operators[k - 1]);
            vals.push(1.0 - acc);
        }
        (ops, vals)
    }
}

/// Outcome counts of `n_per_setting` rounds per setting, drawn from the
/// probabilities `protocol.freqs` (which must index the setting outcomes).
pub fn simulate_counts(protocol: &ProtocolInstance, n_per_setting: u64, seed: u64) -> Result<CountsDataset> {
    let freqs = protocol.freqs.as_ref().ok_or_else(|| QkdError::InvalidInput("simulation needs frequencies".into()))?;
    let offsets = protocol.setting_offsets();
    if protocol.settings.is_empty() || offsets.last().map(|o| o + protocol.settings.last().unwrap().outcomes.len()) != Some(freqs.len()) {
        return Err(QkdError::InvalidInput("simulation needs an expanded protocol with one operator per setting outcome".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut settings = Vec::with_capacity(protocol.settings.len());
    for (s, &off) in protocol.settings.iter().zip(&offsets) {
        let k = s.outcomes.len();
        let p: Vec<f64> = freqs[off..off + k].iter().map(|x| x.max(0.0)).collect();
        // multinomial via successive conditional binomials
        let mut left = n_per_setting;
        let mut mass: f64 = p.iter().sum();
        let mut counts = Vec::with_capacity(k);
        for (o, &po) in p.iter().enumerate() {
            let c = if o + 1 == k || left == 0 {
                left
            } else {
                let q = if mass > 0.0 { (po / mass).clamp(0.0, 1.0) } else { 0.0 };
                Binomial::new(left, q).map_err(|e| QkdError::Sampler(e.to_string()))?.sample(&mut rng)
            };
            counts.push(c);
            left -= c;
            mass -= po;
        }
        settings.push(CountsSetting { label: s.label.clone(), operators: (off..off + k).collect(), counts });
    }
    CountsDataset::new(settings)
}

/// Mean of the region coordinates and block-diagonal multinomial covariance.
/// Zero counts are replaced by one in the covariance only.
pub fn gaussian_from_counts(data: &CountsDataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
    data.validate()?;
    let kappa = data.kappa();
    let mut f = DVector::zeros(kappa);
    let mut sigma = DMatrix::zeros(kappa, kappa);
    let mut j = 0;
    for s in &data.settings {
        let k = s.counts.len();
        let n = s.total() as f64;
        let fixed: Vec<f64> = s.counts.iter().map(|&c| c.max(1) as f64).collect();
        let nf: f64 = fixed.iter().sum();
        for o in 0..k - 1 {
            f[j + o] = s.counts[o] as f64 / n;
        }
        for a in 0..k - 1 {
            let ma = fixed[a] / nf;
            for b in 0..k - 1 {
                let mb = fixed[b] / nf;
                let diag = if a == b { ma } else { 0.0 };
                sigma[(j + a, j + b)] = (diag - ma * mb) / nf;
            }
        }
        j += k - 1;
    }
    Ok((f, sigma))
}

/// `χ₀` with `χ₀²` the `1 − α` quantile of the chi-square distribution with
/// `κ` degrees of freedom.
pub fn initial_chi(kappa: usize, alpha: f64) -> Result<f64> {
    if kappa < 1 {
        return Err(QkdError::InvalidInput("the region needs at least one coordinate".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QkdError::InvalidInput(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let dist = ChiSquared::new(kappa as f64).map_err(|e| QkdError::InvalidInput(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha).max(0.0).sqrt())
}

/// Decides whether probabilities for a list of constraint operators come
/// from some state.
#[derive(Clone, Debug)]
pub struct CompatibilityOracle {
    ops: Vec<HermitianOperator>,
    dim: usize,
    real: bool,
    /// maps target values (plus the unit trace) to the minimum-norm
    /// solution in the operator span
    lift: Vec<CMatrix>,
    tol: Tolerances,
}

impl CompatibilityOracle {
    pub fn new(protocol: &ProtocolInstance, ops: &[usize], tol: &Tolerances) -> Result<Self> {
        let n = protocol.constraint_ops.len();
        if let Some(&k) = ops.iter().find(|&&k| k >= n) {
            return Err(QkdError::InvalidInput(format!("operator {k} out of range ({n} constraints)")));
        }
        let dim = protocol.joint_dim();
        let mut basis: Vec<HermitianOperator> = ops.iter().map(|&k| protocol.constraint_ops[k].clone()).collect();
        basis.push(HermitianOperator::identity(dim));
        let g = DMatrix::from_fn(basis.len(), basis.len(), |a, b| basis[a].inner(&basis[b]));
        let ginv = g.pseudo_inverse(1e-10).map_err(|e| QkdError::InvalidInput(e.to_string()))?;
        // σ₀(v) = Σ_a (G⁺ v)_a B_a
        let lift = (0..basis.len())
            .map(|col| (0..basis.len()).fold(CMatrix::zeros(dim, dim), |acc, a| acc + basis[a].matrix() * crate::qcore::c(ginv[(a, col)])))
            .collect();
        let real = basis.iter().all(|b| b.is_real(tol.real));
        basis.pop();
        Ok(CompatibilityOracle { ops: basis, dim, real, lift, tol: tol.clone() })
    }

    /// Compatibility of target values `p` (one per operator).
    pub fn check(&self, p: &[f64]) -> Result<bool> {
        if p.len() != self.ops.len() {
            return Err(QkdError::Dimension(format!("{} values for {} operators", p.len(), self.ops.len())));
        }
        if p.iter().any(|&x| !(-COMPATIBILITY_TOL..=1.0 + COMPATIBILITY_TOL).contains(&x)) {
            return Ok(false);
        }
        // sufficient: the minimum-norm solution is itself a state reproducing p
        let mut sigma0 = self.lift[self.ops.len()].clone();
        for (j, &x) in p.iter().enumerate() {
            sigma0 += &self.lift[j] * crate::qcore::c(x);
        }
        let s0 = HermitianOperator::hermitian_part(&sigma0);
        let reproduces =
            self.ops.iter().zip(p).all(|(e, &x)| (e.inner(&s0) - x).abs() <= COMPATIBILITY_TOL) && (s0.trace() - 1.0).abs() < 1e-9;
        if reproduces && s0.min_eigenvalue() >= 0.0 {
            return Ok(true);
        }
        Ok(self.distance(p)? <= COMPATIBILITY_TOL)
    }

    /// Euclidean distance from `p` to the set of compatible values.
    pub fn distance(&self, p: &[f64]) -> Result<f64> {
        let cov = DMatrix::identity(p.len(), p.len());
        let (t, _) = self.project(&DVector::from_column_slice(p), &cov)?;
        Ok(t)
    }

    /// Compatible values closest to `center` in the metric of `cov`, and the distance.
    pub fn project(&self, center: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
        let k = self.ops.len();
        let mut program = ConicProgram::new();
        let sigma = program.add_block("sigma", if self.real { BlockKind::Symmetric } else { BlockKind::Hermitian }, self.dim)?;
        let q = program.add_block("q", BlockKind::Vector, k)?;
        let r = program.add_block("radius", BlockKind::Vector, 1)?;
        program.add_equality("trace", &program.trace(sigma), 1.0)?;
        for (j, e) in self.ops.iter().enumerate() {
            let mut expr = program.trace_product(sigma, e.matrix()).re();
            expr.add_scaled(&Affine::scalar(program.scalar(q, j)), -1.0);
            program.add_equality(format!("q{j}"), &expr, 0.0)?;
        }
        let mut psd = PsdBuilder::new("state", self.dim);
        psd.place(&program.block(sigma).clone(), 0, 0, Placement::Direct);
        program.add_psd(psd)?;
        let radius = program.scalar(r, 0);
        program.set_ellipsoid(q, Ellipsoid::new(center.clone(), cov.clone(), EllipsoidRadius::Variable(radius))?)?;
        program.add_objective(&Affine::scalar(radius), 1.0);
        let sol = solve(&program, &self.tol.solver)?;
        if !sol.status.has_solution() {
            return Err(QkdError::Solver { status: sol.status, context: "compatibility projection".into() });
        }
        Ok((sol.scalar(radius).max(0.0), sol.vector(program.block(q))))
    }
}

/// SDP feasibility of `p` (one value per listed operator).
pub fn is_quantum_compatible(p: &[f64], ops: &[usize], protocol: &ProtocolInstance) -> Result<bool> {
    if p.iter().any(|&x| x < 0.0) {
        return Ok(false);
    }
    CompatibilityOracle::new(protocol, ops, &Tolerances::default())?.check(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Rejection,
    Metropolis,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionDiagnostics {
    pub sampler: SamplerKind,
    pub samples: usize,
    /// compatibility decisions made, including the pilot
    pub proposals: usize,
    pub acceptance_rate: f64,
    pub pilot_acceptance: f64,
    /// samples whose compatibility could not be decided (rejected)
    pub indeterminate: usize,
    pub chi0: f64,
    pub bisection_steps: usize,
    /// fraction of samples inside the final ellipsoid
    pub coverage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CredibleRegion {
    #[serde(with = "vec_serde")]
    pub f: DVector<f64>,
    #[serde(skip)]
    pub sigma: DMatrix<f64>,
    pub chi: f64,
    pub alpha: f64,
    /// constraint-operator index of each coordinate
    pub operators: Vec<usize>,
    pub diagnostics: RegionDiagnostics,
}

mod vec_serde {
    use nalgebra::DVector;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }
}

/// Which posterior support to sample.
#[derive(Clone, Copy, Debug)]
pub enum Compatibility<'a> {
    Quantum(&'a ProtocolInstance),
    /// every probability vector is accepted (plain Gaussian)
    Unconstrained,
}

/// Calibrates the credible-region radius against the posterior restricted
/// to quantum-compatible probabilities.
pub fn calibrate_region(
    data: &CountsDataset,
    protocol: &ProtocolInstance,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CredibleRegion> {
    calibrate_region_with(data, Compatibility::Quantum(protocol), alpha, n_samples, seed, &Tolerances::default())
}

pub fn calibrate_region_with(
    data: &CountsDataset,
    compat: Compatibility<'_>,
    alpha: f64,
    n_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CredibleRegion> {
    if n_samples < 1000 {
        return Err(QkdError::InvalidInput(format!("at least 1000 samples are required, got {n_samples}")));
    }
    let (f, sigma) = gaussian_from_counts(data)?;
    let kappa = f.len();
    let chi0 = initial_chi(kappa, alpha)?;
    let operators = data.region_operators();
    let oracle = match compat {
        Compatibility::Quantum(p) => {
            data.check_against(p)?;
            let (all_ops, _) = data.expand(&f);
            Some(CompatibilityOracle::new(p, &all_ops, tol)?)
        }
        Compatibility::Unconstrained => None,
    };
    // only its whitened distance is used
    let ell = Ellipsoid::new(f.clone(), sigma.clone(), EllipsoidRadius::Fixed(1.0))?;
    let sqrt_cov = psd_sqrt(&sigma);

    // compatibility of one draw; undecidable draws are rejected and counted
    let decide = |x: &DVector<f64>| -> (bool, bool) {
        let oracle = match &oracle {
            None => return (true, false),
            Some(o) => o,
        };
        if !prefilter(data, x) {
            return (false, false);
        }
        let (_, vals) = data.expand(x);
        match oracle.check(&vals) {
            Ok(ok) => (ok, false),
            Err(_) => (false, true),
        }
    };
    let draw = |stream: u64, count: usize| -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..count).map(|_| gaussian(&f, &sqrt_cov, 1.0, &mut rng)).collect()
    };

    // pilot on stream 0
    let pilot = draw(0, PILOT);
    let pilot_results: Vec<(bool, bool)> = pilot.par_iter().map(&decide).collect();
    let pilot_acc = pilot_results.iter().filter(|r| r.0).count() as f64 / PILOT as f64;
    let mut indeterminate = pilot_results.iter().filter(|r| r.1).count();

    let (samples, proposals, sampler) = if pilot_acc > PILOT_ACCEPTANCE {
        let mut accepted: Vec<DVector<f64>> = pilot.iter().zip(&pilot_results).filter(|(_, r)| r.0).map(|(x, _)| x.clone()).collect();
        let mut proposals = PILOT;
        let mut chunk = 1u64;
        // enough chunks to finish with high probability, evaluated in parallel batches
        let max_proposals = ((n_samples as f64 / PILOT_ACCEPTANCE) * 4.0) as usize + PILOT;
        while accepted.len() < n_samples {
            if proposals > max_proposals {
                return Err(QkdError::Sampler(format!("rejection sampling accepted {} of {proposals} proposals", accepted.len())));
            }
            let need = n_samples - accepted.len();
            let batch = ((need as f64 / pilot_acc.max(PILOT_ACCEPTANCE) * 1.1) as usize / CHUNK + 1).min(64);
            let results: Vec<Vec<(DVector<f64>, (bool, bool))>> = (chunk..chunk + batch as u64)
                .into_par_iter()
                .map(|s| {
                    draw(s, CHUNK)
                        .into_iter()
                        .map(|x| {
                            let r = decide(&x);
                            (x, r)
                        })
                        .collect()
                })
                .collect();
            chunk += batch as u64;
            for part in results {
                for (x, (ok, ind)) in part {
                    if accepted.len() >= n_samples {
                        break;
                    }
                    proposals += 1;
                    indeterminate += ind as usize;
                    if ok {
                        accepted.push(x);
                    }
                }
            }
        }
        (accepted, proposals, SamplerKind::Rejection)
    } else {
        let oracle = oracle.as_ref().expect("unconstrained sampling always accepts");
        let start = metropolis_start(data, oracle, &f, &sigma, &decide, &draw)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let whitened = |x: &DVector<f64>| ell.distance(x, 1e-12);
        let mut x = start;
        let mut dx = whitened(&x);
        let mut out = Vec::with_capacity(n_samples);
        let mut proposals = PILOT;
        let total = BURN_IN + n_samples * THINNING;
        for step in 0..total {
            let y = gaussian(&x, &sqrt_cov, 0.5f64.sqrt(), &mut rng);
            let dy = whitened(&y);
            let log_ratio = 0.5 * (dx * dx - dy * dy);
            let u: f64 = rng.random();
            if log_ratio >= 0.0 || u.ln() < log_ratio {
                proposals += 1;
                let (ok, ind) = decide(&y);
                indeterminate += ind as usize;
                if ok {
                    x = y;
                    dx = dy;
                }
            }
            if step >= BURN_IN && (step - BURN_IN + 1).is_multiple_of(THINNING) {
                out.push(x.clone());
            }
        }
        (out, proposals, SamplerKind::Metropolis)
    };

    let dists: Vec<f64> = samples.iter().map(|x| ell.distance(x, 1e-12)).collect();
    let n = dists.len() as f64;
    let target = 1.0 - alpha;
    let stop = 2.0 * (alpha * (1.0 - alpha) / n).sqrt();
    let coverage = |chi: f64| dists.iter().filter(|&&d| d <= chi).count() as f64 / n;
    let (mut lo, mut hi) = (0.0, 10.0 * chi0);
    let mut chi = chi0;
    let mut steps = 0;
    let mut cov = coverage(chi);
    if (cov - target).abs() > stop {
        chi = 0.5 * (lo + hi);
        cov = coverage(chi);
        steps = 1;
        while (cov - target).abs() > stop && steps < MAX_BISECTIONS {
            if cov < target {
                lo = chi;
            } else {
                hi = chi;
            }
            chi = 0.5 * (lo + hi);
            cov = coverage(chi);
            steps += 1;
        }
    }
    let acceptance_rate = samples.len() as f64 / proposals.max(1) as f64;
    Ok(CredibleRegion {
        f,
        sigma,
        chi,
        alpha,
        operators,
        diagnostics: RegionDiagnostics {
            sampler,
            samples: samples.len(),
            proposals,
            acceptance_rate,
            pilot_acceptance: pilot_acc,
            indeterminate,
            chi0,
            bisection_steps: steps,
            coverage: cov,
        },
    })
}

/// Entries in `[0, 1]` and per-setting partial sums at most 1.
fn prefilter(data: &CountsDataset, x: &DVector<f64>) -> bool {
    let tol = COMPATIBILITY_TOL;
    if x.iter().any(|&v| !(-tol..=1.0 + tol).contains(&v)) {
        return false;
    }
    let mut j = 0;
    for s in &data.settings {
        let k = s.counts.len() - 1;
        if x.rows(j, k).sum() > 1.0 + tol {
            return false;
        }
        j += k;
    }
    true
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn gaussian(mean: &DVector<f64>, sqrt_cov: &DMatrix<f64>, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * z * scale
}

/// Compatible chain start: the projection of the center onto the compatible
/// set, else the first compatible draw among fresh Gaussian restarts.
fn metropolis_start(
    data: &CountsDataset,
    oracle: &CompatibilityOracle,
    f: &DVector<f64>,
    sigma: &DMatrix<f64>,
    decide: &(dyn Fn(&DVector<f64>) -> (bool, bool) + Sync),
    draw: &(dyn Fn(u64, usize) -> Vec<DVector<f64>> + Sync),
) -> Result<DVector<f64>> {
    if let Some(x) = project_center(data, oracle, f, sigma) {
        if decide(&x).0 {
            return Ok(x);
        }
    }
    let tries = draw(u64::MAX - 1, START_RESTARTS);
    tries
        .into_iter()
        .find(|x| decide(x).0)
        .ok_or_else(|| QkdError::Sampler(format!("no compatible starting point in the pilot or {START_RESTARTS} restarts")))
}

fn project_center(data: &CountsDataset, oracle: &CompatibilityOracle, f: &DVector<f64>, sigma: &DMatrix<f64>) -> Option<DVector<f64>> {
    // the oracle sees every outcome; dropped outcomes get a loose metric
    let (_, full) = data.expand(f);
    let n = full.len();
    let mut coords = Vec::with_capacity(f.len());
    let mut j = 0;
    for s in &data.settings {
        coords.extend(j..j + s.counts.len() - 1);
        j += s.counts.len();
    }
    let mut cov = DMatrix::identity(n, n) * (1e3 * sigma.diagonal().max().max(1e-12));
    for (a, &ia) in coords.iter().enumerate() {
        for (b, &ib) in coords.iter().enumerate() {
            cov[(ia, ib)] = sigma[(a, b)];
        }
    }
    let (_, q) = oracle.project(&DVector::from_vec(full), &cov).ok()?;
    Some(DVector::from_iterator(coords.len(), coords.iter().map(|&i| q[i])))
}
