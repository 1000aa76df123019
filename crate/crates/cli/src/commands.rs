use std::fs;
use std::io::Write;
use std::path::Path;

use qkdrate::bases::{approximate_mubs, mub_set, BasisSet};
use qkdrate::bayes::{calibrate_region_with, simulate_counts, Compatibility, CountsDataset, CredibleRegion};
use qkdrate::entropysdp::*;
use qkdrate::qcore::{subspace_rate, tomographic_rate};
use qkdrate::quadrature::gauss_radau;
use qkdrate::{QkdError, Tolerances};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::grid::parse_grid;
use crate::{Cli, Command, Format, Protocol, RunArgs, SymmetryArg};

pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, kind: "config", message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure { code: 2, kind: "io", message: format!("{}: {e}", path.display()) }
    }
}

/// Solver failures exit with 3, everything else with 2.
impl From<QkdError> for Failure {
    fn from(e: QkdError) -> Self {
        let code = if matches!(e, QkdError::Solver { .. } | QkdError::Conic(_)) { 3 } else { 2 };
        Failure { code, kind: e.kind(), message: e.to_string() }
    }
}

type Res<T> = Result<T, Failure>;

pub fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Rate { protocol, run, v, analytic } => {
            let grid = parse_grid(v.as_deref().ok_or_else(|| Failure::config("--v is required"))?).map_err(Failure::config)?;
            cmd_rate(&protocol, &run, &grid, analytic)
        }
        Command::Data { protocol, run, counts, alpha, samples, seed } => {
            let path = counts.ok_or_else(|| Failure::config("--counts is required"))?;
            cmd_data(&protocol, &run, &path, alpha, samples, seed)
        }
        Command::Simulate { protocol, v, n, seed, output } => {
            let v = v.ok_or_else(|| Failure::config("--v is required"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Failure::config(format!("visibility {v} outside [0,1]")));
            }
            if n == 0 {
                return Err(Failure::config("--n must be positive"));
            }
            let p = build_protocol(&protocol, Some(v))?.expanded()?;
            let data = simulate_counts(&p, n, seed)?;
            emit(output.as_deref(), &(data.to_json() + "\n"))
        }
        Command::Quadrature { m } => {
            let rule = gauss_radau(m)?;
            let s = serde_json::to_string_pretty(&rule).expect("rule serializes");
            emit(None, &(s + "\n"))
        }
        Command::Mubgen { d, n, restarts, seed, output } => {
            let r = approximate_mubs(d, n, restarts, seed)?;
            let bases: Value = serde_json::from_str(&r.bases.to_json()).expect("basis JSON");
            let doc = json!({
                "d": d,
                "n": n,
                "objective": r.objective,
                "restart": r.restart,
                "restart_objectives": r.restart_objectives,
                "bases": bases,
            });
            emit(output.as_deref(), &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Res<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Failure::io(Path::new("stdout"), e))
        }
    }
}

/// Reads a basis set written by `mubgen` or by the library.
fn read_bases(path: &Path) -> Res<BasisSet> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| QkdError::Parse(format!("{}: {e}", path.display())))?;
    let inner = match v.get("bases") {
        Some(b) if b.get("bases").is_some() => b.to_string(),
        _ => text,
    };
    Ok(BasisSet::from_json(&inner)?)
}

fn build_protocol(protocol: &Protocol, v: Option<f64>) -> Res<ProtocolInstance> {
    Ok(match protocol {
        Protocol::Mub { d, coarse, bases } => {
            let set = match bases {
                Some(path) => read_bases(path)?,
                None => mub_set(*d)?,
            };
            build_mub_protocol(*d, v, &set, !coarse)?
        }
        Protocol::Subspace { d, k } => {
            let set = mub_set(*k)?;
            build_subspace_protocol(*d, *k, v, &set)?
        }
        Protocol::Overlap { d, which, equal_outcomes } => {
            let variant = if *equal_outcomes { OverlapVariant::EqualOutcomes } else { OverlapVariant::Full };
            build_overlap_protocol_with(*d, v, which, variant)?
        }
    })
}

fn analytic_rate(protocol: &Protocol, v: f64) -> Option<f64> {
    match protocol {
        Protocol::Mub { d, .. } => tomographic_rate(v, *d).ok(),
        Protocol::Subspace { d, k } => subspace_rate(v, *k, *d).ok(),
        Protocol::Overlap { .. } => None,
    }
}

fn problem(protocol: ProtocolInstance, run: &RunArgs, tol: &Tolerances) -> Res<EntropyProblem> {
    if !(1..=64).contains(&run.m) {
        return Err(Failure::config(format!("--m must lie in 1..=64, got {}", run.m)));
    }
    let d = protocol.d;
    let opts = SdpOptions {
        real_symmetry: !run.no_real,
        facial_reduction: !run.no_facial_reduction,
        symmetry: None,
        split: run.split,
        tolerances: tol.clone(),
    };
    let prob = EntropyProblem::new(protocol, gauss_radau(run.m)?).with_options(opts);
    Ok(match run.symmetry {
        SymmetryArg::None => prob,
        SymmetryArg::Cyclic => apply_permutation_symmetry(&prob, PermutationSymmetry::cyclic(d))?,
        SymmetryArg::Reversal => apply_permutation_symmetry(&prob, PermutationSymmetry::reversal(d))?,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|x| format!("{:.6}", x.max(0.0))).unwrap_or_default()
}

fn cmd_rate(protocol: &Protocol, run: &RunArgs, grid: &[f64], analytic: bool) -> Res<()> {
    let tol = Tolerances::from_env()?;
    // build every point up front so configuration errors surface before any solve
    let problems: Vec<EntropyProblem> = grid.iter().map(|&v| problem(build_protocol(protocol, Some(v))?, run, &tol)).collect::<Res<_>>()?;
    let results: Vec<Result<RateResult, QkdError>> = problems.par_iter().map(compute_rate).collect();
    let mut rows = Vec::with_capacity(results.len());
    for (&v, r) in grid.iter().zip(results) {
        match r {
            Ok(r) => rows.push((r, analytic_rate(protocol, v))),
            Err(e) => {
                let mut f = Failure::from(e);
                f.message = format!("at v={v}: {}", f.message);
                return Err(f);
            }
        }
    }
    let text = match run.format {
        Format::Csv => {
            let mut s = String::from(CSV_HEADER);
            if analytic {
                s.push_str(",analytic");
            }
            s.push('\n');
            for (r, a) in &rows {
                s.push_str(&r.csv_row());
                if analytic {
                    s.push(',');
                    s.push_str(&fmt_opt(*a));
                }
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let docs: Vec<Value> = rows
                .iter()
                .map(|(r, a)| {
                    let mut doc = serde_json::to_value(r).expect("rate serializes");
                    doc["analytic"] = json!(a);
                    doc
                })
                .collect();
            serde_json::to_string_pretty(&docs).expect("json") + "\n"
        }
    };
    emit(run.output.as_deref(), &text)
}

fn cmd_data(protocol: &Protocol, run: &RunArgs, path: &Path, alpha: f64, samples: usize, seed: u64) -> Res<()> {
    let tol = Tolerances::from_env()?;
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let data = CountsDataset::from_json(&text)?;
    let p = build_protocol(protocol, None)?.expanded()?;
    let region = calibrate_region_with(&data, Compatibility::Quantum(&p), alpha, samples, seed, &tol)?;
    let prob = problem(p, run, &tol)?.with_region(region.clone())?;
    let r = compute_rate(&prob)?;
    let text = match run.format {
        Format::Csv => data_report(&r, &region),
        Format::Json => {
            let doc = json!({ "result": r, "region": region });
            serde_json::to_string_pretty(&doc).expect("json") + "\n"
        }
    };
    emit(run.output.as_deref(), &text)
}

fn data_report(r: &RateResult, region: &CredibleRegion) -> String {
    let d = &region.diagnostics;
    let sampler = serde_json::to_value(d.sampler).expect("sampler").as_str().unwrap_or_default().to_string();
    let mut s = format!("{CSV_HEADER}\n{}\n", r.csv_row());
    s.push_str(&format!("rate: {:.6} (raw {:.6})\n", r.rate.max(0.0), r.rate));
    s.push_str(&format!("chi: {:.6} (initial {:.6}, {} bisection steps)\n", region.chi, d.chi0, d.bisection_steps));
    s.push_str(&format!("alpha: {}\n", region.alpha));
    s.push_str(&format!(
        "sampler: {sampler}, {} samples, {} proposals, acceptance {:.4}, pilot acceptance {:.4}, {} undecided, coverage {:.4}\n",
        d.samples, d.proposals, d.acceptance_rate, d.pilot_acceptance, d.indeterminate, d.coverage
    ));
    s
}
