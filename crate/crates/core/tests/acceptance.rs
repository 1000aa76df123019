//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when a
//! criterion fails. The process fails if any criterion fails, except the ones
//! listed in `EXPECTED_RED`, which are reported as FAIL but do not abort.
//! External datasets are read from `$QKDRATE_DATA_DIR` when it is set.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use qkdrate::bases::{approximate_mubs, mub_set, BasisSet};
use qkdrate::bayes::*;
use qkdrate::entropysdp::*;
use qkdrate::quadrature::gauss_radau;
use qkdrate::Tolerances;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Criteria that cannot be met; see the project notes.
const EXPECTED_RED: &[&str] = &["10b"];

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn h2(p: f64) -> f64 {
    let t = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    t(p) + t(1.0 - p)
}

fn k_iso(v: f64, d: usize) -> f64 {
    let d = d as f64;
    d.log2() - (1.0 - 1.0 / (d * d)) * (1.0 - v) * (d * d - 1.0).log2() - h2(v + (1.0 - v) / (d * d))
}

fn mub(d: usize, v: f64, full: bool, m: usize) -> EntropyProblem {
    let p = build_mub_protocol(d, Some(v), &mub_set(d).unwrap(), full).unwrap();
    EntropyProblem::new(p, gauss_radau(m).unwrap())
}

fn rate(prob: &EntropyProblem) -> Result<RateResult, String> {
    compute_rate(prob).map_err(|e| e.to_string())
}

fn quadrature_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for m in 1..=20 {
        let r = gauss_radau(m).unwrap();
        for j in 0..=(2 * m - 2) {
            let q: f64 = r.t.iter().zip(&r.w).map(|(t, w)| w * t.powi(j as i32)).sum();
            worst = worst.max((q - 1.0 / (j as f64 + 1.0)).abs());
        }
        worst = worst.max((r.w[m - 1] - 1.0 / (m * m) as f64).abs());
        if r.t[m - 1] != 1.0 {
            return Fail(format!("m={m}: t_m = {}", r.t[m - 1]));
        }
    }
    check(worst <= 1e-10, format!("max error {worst:.2e}"))
}

fn mub_rates() -> Outcome {
    let points = [(2, 0.85), (2, 0.90), (2, 0.95), (2, 1.00), (4, 0.95), (4, 1.00)];
    let rows: Vec<_> = points.par_iter().map(|&(d, v)| (d, v, rate(&mub(d, v, true, 8)))).collect();
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for (d, v, r) in rows {
        let k = k_iso(v, d);
        match r {
            Ok(r) => {
                worst = worst.max(k - r.rate);
                if !(r.rate >= k - 5e-3 && r.rate <= k + 1e-4) {
                    bad.push(format!("d={d} v={v}: {:.6} vs {k:.6}", r.rate));
                }
            }
            Err(e) => bad.push(format!("d={d} v={v}: {e}")),
        }
    }
    check(bad.is_empty(), if bad.is_empty() { format!("6 points, largest shortfall {worst:.2e}") } else { bad.join("; ") })
}

fn subspace_rates() -> Outcome {
    let mut out = Vec::new();
    let mut ok = true;
    for v in [0.7, 0.9] {
        let p = build_subspace_protocol(4, 2, Some(v), &mub_set(2).unwrap()).unwrap();
        let pr = v + 0.5 * (1.0 - v);
        let want = pr * k_iso(v / pr, 2);
        match rate(&EntropyProblem::new(p, gauss_radau(8).unwrap())) {
            Ok(r) => {
                ok &= (r.rate - want).abs() <= 5e-3;
                out.push(format!("v={v}: {:.5} vs {want:.5}", r.rate));
            }
            Err(e) => {
                ok = false;
                out.push(format!("v={v}: {e}"));
            }
        }
    }
    check(ok, out.join("; "))
}

fn agreement(x: f64) -> EntropyProblem {
    let zx = mub_set(2).unwrap().subset(&[0, 1]).unwrap();
    let key = qkdrate::qcore::JointDistribution::new(DMatrix::from_diagonal_element(2, 2, 0.5)).unwrap();
    let p = build_agreement_protocol(&zx, None).unwrap().with_freqs(vec![1.0, x]).unwrap().with_key_joint(key);
    EntropyProblem::new(p, gauss_radau(8).unwrap())
}

fn facial_reduction_example() -> Outcome {
    let tol = Tolerances::default();
    let run = || -> Result<String, String> {
        let a = agreement(0.85);
        let rep = strict_feasibility_check(&a.protocol, &tol).map_err(|e| e.to_string())?;
        let reduced = rate(&a)?;
        let mut plain_opts = SdpOptions::default();
        plain_opts.facial_reduction = false;
        let plain = rate(&a.clone().with_options(plain_opts))?;
        let gap = (reduced.h_ae - plain.h_ae).abs();
        let b = agreement(1.0);
        let rep1 = strict_feasibility_check(&b.protocol, &tol).map_err(|e| e.to_string())?;
        let pure = rate(&b)?;
        let detail =
            format!("x=0.85: support {}, gap {gap:.2e}; x=1: support {}, rate {:.6}", rep.support_dim, rep1.support_dim, pure.rate);
        if rep.support_dim == 2 && gap <= 1e-5 && rep1.support_dim == 1 && (pure.rate - 1.0).abs() <= 1e-4 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    match run() {
        Ok(s) => Pass(s),
        Err(s) => Fail(s),
    }
}

fn symmetrization() -> Outcome {
    let run = || -> Result<(f64, f64), String> {
        let coarse = mub(3, 0.9, false, 4);
        let sym = apply_permutation_symmetry(&coarse, PermutationSymmetry::cyclic(3)).map_err(|e| e.to_string())?;
        let a = rate(&coarse)?.h_ae;
        let b = rate(&sym)?.h_ae;
        let zx = mub_set(2).unwrap().subset(&[0, 1]).unwrap();
        let real = EntropyProblem::new(build_agreement_protocol(&zx, Some(0.9)).unwrap(), gauss_radau(4).unwrap());
        let mut complex_opts = SdpOptions::default();
        complex_opts.real_symmetry = false;
        let r = rate(&real)?;
        let c = rate(&real.clone().with_options(complex_opts))?;
        if !r.diagnostics.real_variables || c.diagnostics.real_variables {
            return Err("real mode not selected as expected".into());
        }
        Ok(((a - b).abs(), (r.h_ae - c.h_ae).abs()))
    };
    match run() {
        Ok((p, r)) => check(p <= 1e-5 && r <= 1e-6, format!("permutation gap {p:.2e}, real/complex gap {r:.2e}")),
        Err(e) => Fail(e),
    }
}

fn attack_oracle() -> Outcome {
    let mut out = Vec::new();
    let mut ok = true;
    for v in [0.9, 1.0] {
        let res = (|| -> Result<(f64, f64, f64), String> {
            let (work, _) = prepare(&mub(2, v, true, 4)).map_err(|e| e.to_string())?;
            let (sdp, sol) = solve_entropy(&work).map_err(|e| e.to_string())?;
            let bound = sdp.constant + sol.primal_objective.min(sol.dual_objective);
            let a = reconstruct_attack(&work, &sdp, &sol).map_err(|e| e.to_string())?;
            Ok((a.residual, (a.objective - bound).abs(), a.entropy - bound))
        })();
        match res {
            Ok((res, obj, excess)) => {
                ok &= res <= 1e-7 && obj <= 1e-6 && excess >= -1e-6;
                out.push(format!("v={v}: residual {res:.1e}, objective gap {obj:.1e}, H excess {excess:.1e}"));
            }
            Err(e) => {
                ok = false;
                out.push(format!("v={v}: {e}"));
            }
        }
    }
    check(ok, out.join("; "))
}

fn split_bound() -> Outcome {
    let mut out = Vec::new();
    let mut ok = true;
    for m in [2, 4, 8] {
        let prob = mub(2, 0.8, true, m);
        let res = (|| -> Result<f64, String> {
            let joint = rate(&prob)?.h_ae;
            let (work, _) = prepare(&prob).map_err(|e| e.to_string())?;
            Ok(split_lower_bound(&work).map_err(|e| e.to_string())? - joint)
        })();
        match res {
            Ok(diff) => {
                ok &= diff <= 1e-6;
                out.push(format!("m={m}: split − joint = {diff:.1e}"));
            }
            Err(e) => {
                ok = false;
                out.push(format!("m={m}: {e}"));
            }
        }
    }
    check(ok, out.join("; "))
}

fn chi_square_stub() -> Outcome {
    let data = CountsDataset::new(vec![CountsSetting { label: "s".into(), operators: vec![0, 1, 2, 3], counts: vec![2500; 4] }]).unwrap();
    let n = 20_000;
    match calibrate_region_with(&data, Compatibility::Unconstrained, 0.05, n, 1, &Tolerances::default()) {
        Ok(r) => {
            let chi2 = r.chi * r.chi;
            let mass = ChiSquared::new(3.0).unwrap().cdf(chi2);
            let se = (0.05 * 0.95 / n as f64).sqrt();
            check((mass - 0.95).abs() <= 3.0 * se, format!("χ² = {chi2:.4} (target 7.8147), mass error {:.2} se", (mass - 0.95).abs() / se))
        }
        Err(e) => Fail(e.to_string()),
    }
}

fn coverage() -> Outcome {
    let p = build_mub_protocol(2, Some(0.9), &mub_set(2).unwrap(), true).unwrap().expanded().unwrap();
    let truth = p.freqs.clone().unwrap();
    let hits: Result<Vec<bool>, String> = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_counts(&p, 10_000, 1000 + rep).map_err(|e| e.to_string())?;
            let r = calibrate_region(&data, &p, 0.1, 1000, rep).map_err(|e| e.to_string())?;
            let t = DVector::from_iterator(r.operators.len(), r.operators.iter().map(|&k| truth[k]));
            let d = &t - &r.f;
            let inv = r.sigma.clone().try_inverse().ok_or("singular covariance")?;
            Ok((d.transpose() * inv * &d)[(0, 0)].sqrt() <= r.chi)
        })
        .collect();
    match hits {
        Ok(h) => {
            let n = h.iter().filter(|&&x| x).count();
            check(n >= 85, format!("{n}/100 regions contain the true frequencies"))
        }
        Err(e) => Fail(e),
    }
}

fn published_data() -> Outcome {
    let dir = match std::env::var_os("QKDRATE_DATA_DIR") {
        Some(d) => PathBuf::from(d),
        None => return Skip("QKDRATE_DATA_DIR not set".into()),
    };
    let cases = [
        ("overlap_d4.json", 0.4038, build_overlap_protocol(4, None)),
        ("mub_d3_full.json", 1.3310, build_mub_protocol(3, None, &mub_set(3).unwrap(), true)),
    ];
    let mut out = Vec::new();
    let mut ok = true;
    for (file, want, protocol) in cases {
        let path = dir.join(file);
        let res = (|| -> Result<f64, String> {
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let data = CountsDataset::from_json(&text).map_err(|e| e.to_string())?;
            let p = protocol.map_err(|e| e.to_string())?.expanded().map_err(|e| e.to_string())?;
            let region = calibrate_region(&data, &p, 0.05, 10_000, 1).map_err(|e| e.to_string())?;
            let prob = EntropyProblem::new(p, gauss_radau(8).unwrap()).with_region(region).map_err(|e| e.to_string())?;
            Ok(rate(&prob)?.rate)
        })();
        match res {
            Ok(r) => {
                ok &= (r - want).abs() <= 0.02;
                out.push(format!("{file}: {r:.4} vs {want}"));
            }
            Err(e) => {
                ok = false;
                out.push(e);
            }
        }
    }
    check(ok, out.join("; "))
}

fn max_overlap_error(b: &BasisSet) -> f64 {
    let d = b.d() as f64;
    let mut worst: f64 = 0.0;
    for k in 0..b.n() {
        for l in k + 1..b.n() {
            let g = b.unitary(k).adjoint() * b.unitary(l);
            worst = g.iter().fold(worst, |w, z| w.max((z.norm_sqr() - 1.0 / d).abs()));
        }
    }
    worst
}

fn exact_mubs() -> Outcome {
    let worst = [2, 3, 4, 5, 7, 8].iter().map(|&d| max_overlap_error(&mub_set(d).unwrap())).fold(0.0, f64::max);
    check(worst <= 1e-9, format!("d ∈ {{2,3,4,5,7,8}}: max overlap error {worst:.1e}"))
}

fn approximate_d6() -> Outcome {
    match approximate_mubs(6, 7, 20, 1) {
        Ok(r) => check(r.objective < 1e-3, format!("best objective {:.3e} (restart {})", r.objective, r.restart)),
        Err(e) => Fail(e.to_string()),
    }
}

fn main() {
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "quadrature exactness", quadrature_exactness),
        ("2", "MUB rates vs isotropic formula", mub_rates),
        ("3", "subspace rates vs formula", subspace_rates),
        ("4", "facial reduction on Z/X agreement data", facial_reduction_example),
        ("5", "symmetrization equivalence", symmetrization),
        ("6", "attack reconstruction", attack_oracle),
        ("7", "split bound below joint optimum", split_bound),
        ("8a", "chi-square calibration, stubbed compatibility", chi_square_stub),
        ("8b", "credible-region coverage", coverage),
        ("9", "published datasets", published_data),
        ("10a", "exact MUB overlaps", exact_mubs),
        ("10b", "approximate MUBs, d=6", approximate_d6),
    ];
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Pass(s) => ("PASS", s),
            Fail(s) => ("FAIL", s),
            Skip(s) => ("SKIP", s),
        };
        let note = if matches!(outcome, Fail(_)) && EXPECTED_RED.contains(&id) { " [expected]" } else { "" };
        println!("{tag} {id:>3} {name}: {detail} ({secs:.1}s){note}");
        if matches!(outcome, Fail(_)) && note.is_empty() {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
