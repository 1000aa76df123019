//! Protocol instances: key-basis operators, constraint operators and their
//! target probabilities.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bases::{overlap_bases, select_independent, BasisSet};
use crate::error::{QkdError, Result};
use crate::qcore::{isotropic_state, kron, subspace_probability, DensityMatrix, HermitianOperator, JointDistribution};

/// One measurement setting: a group of outcome operators summing to the identity.
#[derive(Clone, Debug)]
pub struct Setting {
    pub label: String,
    pub outcomes: Vec<HermitianOperator>,
}

#[derive(Clone, Debug)]
pub struct ProtocolInstance {
    pub label: String,
    /// Alice's local dimension
    pub d: usize,
    /// local dimension of the physical system (differs from `d` when the
    /// protocol runs inside a subspace)
    pub system_d: usize,
    /// Bob's local dimension
    pub d_b: usize,
    /// key-basis POVM `{A^a_0}` on Alice's space
    pub key_ops: Vec<HermitianOperator>,
    /// `E_k` on the joint space
    pub constraint_ops: Vec<HermitianOperator>,
    pub freqs: Option<Vec<f64>>,
    /// key-basis statistics of the generating state, when known
    pub key_joint: Option<JointDistribution>,
    /// generating state, when the frequencies came from one
    pub state: Option<DensityMatrix>,
    /// the physical measurement settings the constraints were drawn from
    pub settings: Vec<Setting>,
    /// factor applied to the entropies before reporting (the subspace
    /// success probability; 1 otherwise)
    pub rate_scale: f64,
    pub visibility: Option<f64>,
    /// number of candidate operators before independence selection
    pub candidates: usize,
}

impl ProtocolInstance {
    /// Validates key and constraint operators. Key operators must be PSD and
    /// sum to at most the identity; constraint operators must be PSD with
    /// norm at most 1 (tolerance `1e-9`).
    pub fn new(
        label: impl Into<String>,
        d: usize,
        d_b: usize,
        key_ops: Vec<HermitianOperator>,
        constraint_ops: Vec<HermitianOperator>,
    ) -> Result<Self> {
        let tol = 1e-9;
        if key_ops.is_empty() {
            return Err(QkdError::InvalidInput("no key operators".into()));
        }
        for (a, op) in key_ops.iter().enumerate() {
            if op.dim() != d {
                return Err(QkdError::Dimension(format!("key operator {a} has dimension {}, expected {d}", op.dim())));
            }
            if !op.is_psd(tol) {
                return Err(QkdError::InvalidInput(format!("key operator {a} is not PSD")));
            }
        }
        let sum = key_ops.iter().skip(1).fold(key_ops[0].clone(), |acc, op| acc.add(op));
        if !HermitianOperator::identity(d).add(&sum.scaled(-1.0)).is_psd(tol) {
            return Err(QkdError::InvalidInput("key operators sum to more than the identity".into()));
        }
        let dj = d * d_b;
        for (k, op) in constraint_ops.iter().enumerate() {
            if op.dim() != dj {
                return Err(QkdError::Dimension(format!("constraint {k} has dimension {}, expected {dj}", op.dim())));
            }
            let ev = op.eigenvalues();
            if ev[0] < -tol || ev[ev.len() - 1] > 1.0 + tol {
                return Err(QkdError::InvalidInput(format!("constraint {k} is not a POVM element")));
            }
        }
        let candidates = constraint_ops.len();
        Ok(ProtocolInstance {
            label: label.into(),
            d,
            system_d: d,
            d_b,
            key_ops,
            constraint_ops,
            freqs: None,
            key_joint: None,
            state: None,
            settings: Vec::new(),
            rate_scale: 1.0,
            visibility: None,
            candidates,
        })
    }

    pub fn joint_dim(&self) -> usize {
        self.d * self.d_b
    }

    pub fn with_freqs(mut self, freqs: Vec<f64>) -> Result<Self> {
        if freqs.len() != self.constraint_ops.len() {
            return Err(QkdError::Dimension(format!("{} frequencies for {} constraint operators", freqs.len(), self.constraint_ops.len())));
        }
        if let Some(f) = freqs.iter().find(|f| !(-1e-12..=1.0 + 1e-12).contains(*f)) {
            return Err(QkdError::InvalidInput(format!("frequency {f} outside [0,1]")));
        }
        self.freqs = Some(freqs.iter().map(|f| f.clamp(0.0, 1.0)).collect());
        Ok(self)
    }

    pub fn with_key_joint(mut self, joint: JointDistribution) -> Self {
        self.key_joint = Some(joint);
        self
    }

    /// Populates frequencies and key-basis statistics from a state.
    pub fn with_state(self, rho: &DensityMatrix) -> Result<Self> {
        if rho.dim() != self.joint_dim() {
            return Err(QkdError::Dimension(format!("state of dimension {} for a {}-dimensional protocol", rho.dim(), self.joint_dim())));
        }
        let freqs = self.constraint_ops.iter().map(|e| rho.expectation(e)).collect();
        let joint = self.joint_from(|op| rho.expectation(op))?;
        let mut out = self.with_freqs(freqs)?.with_key_joint(joint);
        out.state = Some(rho.clone());
        Ok(out)
    }

    /// Computational-basis projectors on Bob's side.
    fn bob_key_ops(&self) -> Vec<HermitianOperator> {
        (0..self.d_b)
            .map(|b| {
                let mut diag = vec![0.0; self.d_b];
                diag[b] = 1.0;
                HermitianOperator::diagonal(&diag)
            })
            .collect()
    }

    /// `A^a ⊗ B^b` in row-major `(a, b)` order.
    pub fn key_pair_ops(&self) -> Vec<HermitianOperator> {
        let bob = self.bob_key_ops();
        let mut out = Vec::with_capacity(self.key_ops.len() * bob.len());
        for a in &self.key_ops {
            for b in &bob {
                out.push(kron(a, b));
            }
        }
        out
    }

    fn joint_from(&self, prob: impl Fn(&HermitianOperator) -> f64) -> Result<JointDistribution> {
        let nb = self.d_b;
        let pairs = self.key_pair_ops();
        let p: Vec<f64> = pairs.iter().map(|op| prob(op).max(0.0)).collect();
        let s: f64 = p.iter().sum();
        if s <= 0.0 {
            return Err(QkdError::InvalidInput("key-basis statistics vanish".into()));
        }
        JointDistribution::new(DMatrix::from_fn(self.key_ops.len(), nb, |a, b| p[a * nb + b] / s))
    }

    /// Key-basis statistics implied by frequencies on a subset of the
    /// constraint operators, via least squares in their span (plus the
    /// identity). Fails when some key pair operator lies outside the span.
    pub fn key_joint_from_frequencies(&self, ops: &[usize], freqs: &[f64]) -> Result<JointDistribution> {
        let dj = self.joint_dim();
        let mut basis: Vec<&HermitianOperator> = ops.iter().map(|&k| &self.constraint_ops[k]).collect();
        let id = HermitianOperator::identity(dj);
        basis.push(&id);
        let mut values: Vec<f64> = freqs.to_vec();
        values.push(1.0);
        let cols = basis.len();
        // real least squares on vectorized operators (real and imaginary parts stacked)
        let rows = 2 * dj * dj;
        let vecop = |op: &HermitianOperator| -> DVector<f64> {
            let m = op.matrix();
            DVector::from_iterator(rows, m.iter().map(|z| z.re).chain(m.iter().map(|z| z.im)))
        };
        let a = DMatrix::from_columns(&basis.iter().map(|op| vecop(op)).collect::<Vec<_>>());
        let svd = a.clone().svd(true, true);
        let pairs = self.key_pair_ops();
        let mut p = Vec::with_capacity(pairs.len());
        for op in &pairs {
            let target = vecop(op);
            let coef = svd.solve(&target, 1e-10).map_err(|e| QkdError::InvalidInput(e.to_string()))?;
            let resid = (&a * &coef - &target).norm();
            if resid > 1e-8 * (1.0 + target.norm()) {
                return Err(QkdError::InvalidInput(
                    "key-basis statistics are not determined by the measured operators; include the key-basis setting".into(),
                ));
            }
            let val: f64 = (0..cols).map(|j| coef[j] * values[j]).sum();
            p.push(val.max(0.0));
        }
        let s: f64 = p.iter().sum();
        if s <= 0.0 {
            return Err(QkdError::InvalidInput("key-basis statistics vanish".into()));
        }
        let nb = self.d_b;
        JointDistribution::new(DMatrix::from_fn(self.key_ops.len(), nb, |a, b| p[a * nb + b] / s))
    }

    /// Same measurement, with every setting outcome as a separate constraint
    /// (no independence selection); indices follow setting order.
    pub fn expanded(&self) -> Result<ProtocolInstance> {
        if self.settings.is_empty() {
            return Err(QkdError::InvalidInput(format!("protocol {} has no settings to expand", self.label)));
        }
        let ops: Vec<HermitianOperator> = self.settings.iter().flat_map(|s| s.outcomes.iter().cloned()).collect();
        let mut p = ProtocolInstance::new(self.label.clone(), self.d, self.d_b, self.key_ops.clone(), ops)?;
        p.settings = self.settings.clone();
        p.rate_scale = self.rate_scale;
        p.system_d = self.system_d;
        p.visibility = self.visibility;
        p.key_joint = self.key_joint.clone();
        match &self.state {
            Some(rho) => p.with_state(rho),
            None => Ok(p),
        }
    }

    /// Offset of each setting's first outcome in the expanded operator list.
    pub fn setting_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.settings.len());
        let mut acc = 0;
        for s in &self.settings {
            out.push(acc);
            acc += s.outcomes.len();
        }
        out
    }
}

fn computational_key_ops(d: usize) -> Vec<HermitianOperator> {
    (0..d)
        .map(|a| {
            let mut diag = vec![0.0; d];
            diag[a] = 1.0;
            HermitianOperator::diagonal(&diag)
        })
        .collect()
}

/// `|v_k^i⟩⟨v_k^i| ⊗ (|v_k^j⟩⟨v_k^j|)ᵀ` for all `i, j`, as one setting per basis.
fn product_settings(bases: &BasisSet, which: &[usize]) -> Vec<Setting> {
    let d = bases.d();
    which
        .iter()
        .map(|&k| {
            let mut outcomes = Vec::with_capacity(d * d);
            for i in 0..d {
                for j in 0..d {
                    outcomes.push(kron(&bases.projector(k, i), &bases.projector(k, j).transpose()));
                }
            }
            Setting { label: format!("basis{k}"), outcomes }
        })
        .collect()
}

fn finish(mut p: ProtocolInstance, settings: Vec<Setting>, v: Option<f64>) -> Result<ProtocolInstance> {
    p.settings = settings;
    p.visibility = v;
    match v {
        Some(v) => {
            let rho = isotropic_state(v, p.d)?;
            p.with_state(&rho)
        }
        None => Ok(p),
    }
}

fn reduced(ops: Vec<HermitianOperator>) -> (Vec<HermitianOperator>, usize) {
    let n = ops.len();
    let keep = select_independent(&ops);
    (keep.into_iter().map(|k| ops[k].clone()).collect(), n)
}

/// MUB protocol: computational key basis; all product outcomes of every
/// basis (reduced to an independent subset) or the coarse-grained
/// agreement-offset operators `Σ_i Π^i_k ⊗ (Π^{i+l mod d}_k)ᵀ`, `l < d−1`.
pub fn build_mub_protocol(d: usize, v: Option<f64>, bases: &BasisSet, full_data: bool) -> Result<ProtocolInstance> {
    if bases.d() != d || bases.n() != d + 1 {
        return Err(QkdError::Dimension(format!(
            "MUB protocol in d={d} needs {} bases of dimension {d}, got {} of dimension {}",
            d + 1,
            bases.n(),
            bases.d()
        )));
    }
    let all: Vec<usize> = (0..=d).collect();
    let settings = product_settings(bases, &all);
    let (ops, n) = if full_data {
        reduced(settings.iter().flat_map(|s| s.outcomes.iter().cloned()).collect())
    } else {
        let mut ops = Vec::with_capacity((d + 1) * (d - 1));
        for k in 0..=d {
            for l in 0..d - 1 {
                let mut acc = HermitianOperator::zeros(d * d);
                for i in 0..d {
                    acc = acc.add(&kron(&bases.projector(k, i), &bases.projector(k, (i + l) % d).transpose()));
                }
                ops.push(acc);
            }
        }
        let n = ops.len();
        (ops, n)
    };
    let label = if full_data { "mub" } else { "mub-coarse" };
    let mut p = ProtocolInstance::new(label, d, d, computational_key_ops(d), ops)?;
    p.candidates = n;
    finish(p, settings, v)
}

/// MUB protocol run inside one `k`-dimensional block of a `d`-dimensional
/// system, with statistics of the isotropic state conditioned on both
/// outcomes landing in the same block. Reported entropies are scaled by the
/// block success probability.
pub fn build_subspace_protocol(d: usize, k: usize, v: Option<f64>, bases_for_k: &BasisSet) -> Result<ProtocolInstance> {
    if k < 2 || !d.is_multiple_of(k) {
        return Err(QkdError::InvalidInput(format!("subspace dimension {k} must divide {d}")));
    }
    let (scale, vk) = match v {
        Some(v) => {
            if !(0.0..=1.0).contains(&v) {
                return Err(QkdError::InvalidInput(format!("visibility {v} outside [0,1]")));
            }
            let p = subspace_probability(v, k, d);
            (p, Some((v / p).min(1.0)))
        }
        None => (1.0, None),
    };
    let mut p = build_mub_protocol(k, vk, bases_for_k, true)?;
    p.label = "subspace".into();
    p.system_d = d;
    p.rate_scale = scale;
    p.visibility = v;
    Ok(p)
}

/// Agreement probabilities only: one operator `Σ_i Π^i_k ⊗ (Π^i_k)ᵀ` per basis.
pub fn build_agreement_protocol(bases: &BasisSet, v: Option<f64>) -> Result<ProtocolInstance> {
    let d = bases.d();
    let all: Vec<usize> = (0..bases.n()).collect();
    let settings = product_settings(bases, &all);
    let ops = agreement_ops(&settings, d);
    let p = ProtocolInstance::new("agreement", d, d, computational_key_ops(d), ops)?;
    finish(p, settings, v)
}

fn agreement_ops(settings: &[Setting], d: usize) -> Vec<HermitianOperator> {
    settings.iter().map(|s| (0..d).fold(HermitianOperator::zeros(d * d), |acc, i| acc.add(&s.outcomes[i * d + i]))).collect()
}

/// Which outcomes of the overlap bases enter the constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OverlapVariant {
    /// every product outcome `(i, j)`
    Full,
    /// one operator per basis: the probability of equal outcomes
    EqualOutcomes,
}

pub fn build_overlap_protocol(d: usize, v: Option<f64>) -> Result<ProtocolInstance> {
    build_overlap_protocol_with(d, v, &[0, 1, 2, 3, 4], OverlapVariant::Full)
}

/// Overlap protocol restricted to the listed bases (indices 0..5).
pub fn build_overlap_protocol_with(d: usize, v: Option<f64>, which: &[usize], variant: OverlapVariant) -> Result<ProtocolInstance> {
    let bases = overlap_bases(d)?;
    if which.is_empty() || which.iter().any(|&k| k >= 5) {
        return Err(QkdError::InvalidInput(format!("overlap bases are indexed 0..5, got {which:?}")));
    }
    let settings = product_settings(&bases, which);
    let (ops, n) = match variant {
        OverlapVariant::Full => reduced(settings.iter().flat_map(|s| s.outcomes.iter().cloned()).collect()),
        OverlapVariant::EqualOutcomes => {
            let ops = agreement_ops(&settings, d);
            let n = ops.len();
            (ops, n)
        }
    };
    let label = match variant {
        OverlapVariant::Full => "overlap",
        OverlapVariant::EqualOutcomes => "overlap-equal",
    };
    let mut p = ProtocolInstance::new(label, d, d, computational_key_ops(d), ops)?;
    p.candidates = n;
    finish(p, settings, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::mub_set;

    #[test]
    fn noiseless_qubit_frequencies() {
        let p = build_mub_protocol(2, Some(1.0), &mub_set(2).unwrap(), true).unwrap();
        // every kept operator is a product outcome; equal outcomes have weight 1/2
        let all = p.expanded().unwrap().with_state(&isotropic_state(1.0, 2).unwrap()).unwrap();
        let f = all.freqs.unwrap();
        for k in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { 0.5 } else { 0.0 };
                    assert!((f[k * 4 + i * 2 + j] - want).abs() < 1e-12);
                }
            }
        }
        assert!(p.constraint_ops.len() < 12);
    }

    #[test]
    fn qutrit_agreement_probability() {
        let p = build_mub_protocol(3, Some(0.9), &mub_set(3).unwrap(), true).unwrap().expanded().unwrap();
        let p = p.with_state(&isotropic_state(0.9, 3).unwrap()).unwrap();
        let f = p.freqs.unwrap();
        for k in 0..4 {
            for i in 0..3 {
                assert!((f[k * 9 + i * 3 + i] - 0.311111111111).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coarse_grained_count() {
        let p = build_mub_protocol(3, Some(0.9), &mub_set(3).unwrap(), false).unwrap();
        assert_eq!(p.constraint_ops.len(), 8);
    }

    #[test]
    fn subspace_conditioning() {
        let p = build_subspace_protocol(8, 2, Some(0.9), &mub_set(2).unwrap()).unwrap();
        assert!((p.rate_scale - 0.925).abs() < 1e-12);
        let iso = build_mub_protocol(2, Some(0.9 / 0.925), &mub_set(2).unwrap(), true).unwrap();
        assert_eq!(p.freqs, iso.freqs);
        assert!(build_subspace_protocol(8, 3, Some(0.9), &mub_set(3).unwrap()).is_err());
    }

    #[test]
    fn overlap_counts() {
        let p = build_overlap_protocol(4, Some(1.0)).unwrap();
        assert_eq!(p.candidates, 80);
        let e = p.expanded().unwrap().with_state(&isotropic_state(1.0, 4).unwrap()).unwrap();
        let f = e.freqs.unwrap();
        for i in 0..4 {
            assert!((f[i * 4 + i] - 0.25).abs() < 1e-12);
        }
        assert!(build_overlap_protocol(5, None).is_err());
    }

    #[test]
    fn key_joint_from_span() {
        let p = build_mub_protocol(2, Some(0.9), &mub_set(2).unwrap(), true).unwrap();
        let ops: Vec<usize> = (0..p.constraint_ops.len()).collect();
        let j = p.key_joint_from_frequencies(&ops, p.freqs.as_ref().unwrap()).unwrap();
        assert!((j.probs() - p.key_joint.as_ref().unwrap().probs()).amax() < 1e-10);
        // coarse-grained data alone does not pin down the key-basis statistics... but
        // the agreement probabilities determine H(A|B) only through the state
        let c = build_mub_protocol(3, Some(0.9), &mub_set(3).unwrap(), false).unwrap();
        let ops: Vec<usize> = (0..c.constraint_ops.len()).collect();
        assert!(c.key_joint_from_frequencies(&ops, c.freqs.as_ref().unwrap()).is_err());
    }
}
