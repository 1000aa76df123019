use nalgebra::DMatrix;
use num_complex::Complex64;
use qkdrate::bases::mub_set;
use qkdrate::entropysdp::*;
use qkdrate::error::QkdError;
use qkdrate::qcore::{max_abs, max_entangled, CMatrix, CVector, JointDistribution};
use qkdrate::quadrature::{c_constant, gauss_radau};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
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

fn options(f: impl FnOnce(&mut SdpOptions)) -> SdpOptions {
    let mut o = SdpOptions::default();
    f(&mut o);
    o
}

/// Z- and X-basis agreement data with a perfectly correlated key basis.
fn agreement(x: f64, m: usize) -> EntropyProblem {
    let zx = mub_set(2).unwrap().subset(&[0, 1]).unwrap();
    let key = JointDistribution::new(DMatrix::from_diagonal_element(2, 2, 0.5)).unwrap();
    let p = build_agreement_protocol(&zx, None).unwrap().with_freqs(vec![1.0, x]).unwrap().with_key_joint(key);
    EntropyProblem::new(p, gauss_radau(m).unwrap())
}

fn bell(sign: f64) -> CVector {
    let s = 0.5f64.sqrt();
    CVector::from_vec(vec![c(s), c(0.0), c(0.0), c(sign * s)])
}

#[test]
fn program_structure() {
    let prob = mub(2, 0.9, true, 8);
    let sdp = build_entropy_sdp(&prob).unwrap();
    assert_eq!(sdp.program.psd_count(), 32);
    assert!(sdp.program.psd_dims().iter().all(|&n| n == 8));
    assert_eq!(sdp.nodes.len(), 16);
    assert!((sdp.constant - c_constant(&prob.rule)).abs() < 1e-15);
    assert_eq!(sdp.dim, 4);
}

#[test]
fn missing_frequencies_rejected() {
    let p = build_mub_protocol(2, None, &mub_set(2).unwrap(), true).unwrap();
    let prob = EntropyProblem::new(p, gauss_radau(4).unwrap());
    assert!(matches!(build_entropy_sdp(&prob), Err(QkdError::InvalidInput(_))));
    assert!(compute_rate(&prob).is_err());
}

#[test]
fn single_node_value_is_constant_plus_term() {
    let prob = mub(2, 0.9, true, 1);
    let (work, _) = prepare(&prob).unwrap();
    let (sdp, sol) = solve_entropy(&work).unwrap();
    let r = compute_rate(&prob).unwrap();
    assert!((sdp.constant - 1.0 / std::f64::consts::LN_2).abs() < 1e-15);
    assert!((r.h_ae - (sdp.constant + sol.primal_objective.min(sol.dual_objective))).abs() < 1e-9);
    // one node cannot exceed the exact rate
    assert!(r.h_ae <= 1.0 - h2(0.95) + 1e-6);
}

#[test]
fn noiseless_qubit_rate_is_one() {
    let r = compute_rate(&mub(2, 1.0, true, 8)).unwrap();
    assert!((r.rate - 1.0).abs() <= 2e-4, "{}", r.rate);
    assert_eq!(r.rate, r.h_ae - r.h_ab);
    assert_eq!(r.diagnostics.reduced_dim, Some(1));
}

#[test]
fn qubit_rate_close_to_tomographic() {
    let k = k_iso(0.9, 2);
    assert!((k - 0.49682).abs() < 1e-5);
    let r = compute_rate(&mub(2, 0.9, true, 8)).unwrap();
    assert!(r.rate >= k - 5e-3 && r.rate <= k + 1e-4, "{} vs {k}", r.rate);
    assert!(r.status.has_solution());
    assert_eq!(r.diagnostics.strictly_feasible, Some(true));
    assert_eq!(r.diagnostics.reduced_dim, None);
}

#[test]
fn rates_never_exceed_tomographic() {
    for v in [0.8, 0.85, 0.95] {
        let r = compute_rate(&mub(2, v, true, 4)).unwrap();
        assert!(r.rate <= k_iso(v, 2) + 1e-4, "v={v}");
    }
}

#[test]
fn negative_rates_reported_as_is() {
    let r = compute_rate(&mub(2, 0.7, true, 4)).unwrap();
    assert!(r.rate < 0.0);
    let row = r.csv_row();
    assert_eq!(row.split(',').nth(7), Some("0.000000"));
    assert!(r.to_json().contains("\"rate\": -"));
}

#[test]
fn more_data_never_lowers_the_bound() {
    let coarse = compute_rate(&mub(2, 0.9, false, 4)).unwrap();
    let full = compute_rate(&mub(2, 0.9, true, 4)).unwrap();
    assert!(full.h_ae >= coarse.h_ae - 1e-6);
}

#[test]
fn refinement_in_m() {
    let m2 = compute_rate(&mub(2, 0.9, true, 2)).unwrap();
    let m8 = compute_rate(&mub(2, 0.9, true, 8)).unwrap();
    assert!(m8.h_ae >= m2.h_ae - 1e-6);
}

#[test]
fn isotropic_state_is_strictly_feasible() {
    let prob = mub(2, 0.9, true, 4);
    let rep = strict_feasibility_check(&prob.protocol, &Default::default()).unwrap();
    assert!(rep.strictly_feasible && rep.lambda > 1e-7);
    assert!((rep.lambda - 0.025).abs() < 1e-6);
    assert!(rep.isometry.is_none());
}

#[test]
fn agreement_supports() {
    for (x, dim) in [(0.85, 2), (1.0, 1)] {
        let prob = agreement(x, 4);
        let rep = strict_feasibility_check(&prob.protocol, &Default::default()).unwrap();
        assert!(!rep.strictly_feasible);
        assert!(rep.lambda.abs() <= 1e-7);
        assert_eq!(rep.support_dim, dim, "x={x}");
        let v = rep.isometry.unwrap();
        let proj = &v * v.adjoint();
        let plus = &bell(1.0) * bell(1.0).adjoint();
        let want = if dim == 2 { &plus + &bell(-1.0) * bell(-1.0).adjoint() } else { plus };
        assert!(max_abs(&(proj - want)) < 1e-6, "x={x}");
    }
}

#[test]
fn reduced_and_unreduced_agree() {
    let prob = agreement(0.85, 8);
    let reduced = compute_rate(&prob).unwrap();
    assert_eq!(reduced.diagnostics.reduced_dim, Some(2));
    let plain = compute_rate(&prob.clone().with_options(options(|o| o.facial_reduction = false))).unwrap();
    assert!((reduced.h_ae - plain.h_ae).abs() <= 1e-5);
    assert!(!plain.diagnostics.warnings.is_empty());
}

#[test]
fn forced_pure_state_gives_full_rate() {
    let r = compute_rate(&agreement(1.0, 8)).unwrap();
    assert_eq!(r.diagnostics.reduced_dim, Some(1));
    assert!((r.rate - 1.0).abs() <= 1e-4);
}

#[test]
fn identity_reduction_changes_nothing() {
    let prob = mub(2, 0.85, true, 4);
    let reduced = facial_reduce(&prob, &CMatrix::identity(4, 4)).unwrap();
    let a = compute_rate(&prob).unwrap();
    let b = compute_rate(&reduced).unwrap();
    assert!((a.h_ae - b.h_ae).abs() <= 1e-6);
    let mut bad = CMatrix::identity(4, 2);
    bad[(0, 1)] = c(0.5);
    assert!(facial_reduce(&prob, &bad).is_err());
    assert!(facial_reduce(&reduced, &CMatrix::identity(4, 4)).is_err());
}

#[test]
fn incompatible_frequencies_are_reported() {
    // perfect Z and X agreement force |φ⁺⟩, which also agrees in Y
    let p = build_agreement_protocol(&mub_set(2).unwrap(), None).unwrap().with_freqs(vec![1.0, 1.0, 0.0]).unwrap();
    let prob = EntropyProblem::new(p, gauss_radau(2).unwrap());
    let err = compute_rate(&prob).unwrap_err();
    assert!(matches!(err, QkdError::InfeasibleStatistics(_)), "{err}");
    assert_eq!(err.kind(), "infeasible-statistics");
}

#[test]
fn real_mode_detection() {
    let real = build_overlap_protocol_with(4, Some(0.9), &[0, 1, 3], OverlapVariant::Full).unwrap();
    assert!(apply_real_symmetry(&EntropyProblem::new(real, gauss_radau(2).unwrap())));
    assert!(!apply_real_symmetry(&mub(3, 0.9, true, 2)));
}

#[test]
fn real_and_complex_modes_agree() {
    let zx = mub_set(2).unwrap().subset(&[0, 1]).unwrap();
    let prob = EntropyProblem::new(build_agreement_protocol(&zx, Some(0.9)).unwrap(), gauss_radau(4).unwrap());
    let real = compute_rate(&prob).unwrap();
    let complex = compute_rate(&prob.clone().with_options(options(|o| o.real_symmetry = false))).unwrap();
    assert!(real.diagnostics.real_variables && !complex.diagnostics.real_variables);
    assert!((real.h_ae - complex.h_ae).abs() <= 1e-6);
}

#[test]
fn cyclic_symmetry_of_coarse_protocol() {
    let prob = mub(2, 0.9, false, 4);
    let sym = apply_permutation_symmetry(&prob, PermutationSymmetry::cyclic(2)).unwrap();
    let sdp = build_entropy_sdp(&sym).unwrap();
    assert_eq!(sdp.nodes.len(), 4);
    assert!(sdp.nodes.iter().all(|n| n.a == 0 && n.weight == 2));
    let plain = compute_rate(&prob).unwrap();
    let reduced = compute_rate(&sym).unwrap();
    assert!((plain.h_ae - reduced.h_ae).abs() <= 1e-5);
    assert_eq!(reduced.diagnostics.orbits, Some(vec![(0, 2)]));
}

#[test]
fn symmetry_orbits_of_examples() {
    let coarse = mub(3, 0.9, false, 2);
    assert!(apply_permutation_symmetry(&coarse, PermutationSymmetry::cyclic(3)).is_ok());
    assert_eq!(PermutationSymmetry::cyclic(3).orbits(), vec![(0, 3)]);
    let eq = build_overlap_protocol_with(4, Some(0.9), &[0, 1, 2, 3, 4], OverlapVariant::EqualOutcomes).unwrap();
    let eq = EntropyProblem::new(eq, gauss_radau(2).unwrap());
    let sym = apply_permutation_symmetry(&eq, PermutationSymmetry::reversal(4)).unwrap();
    assert!(sym.options.symmetry.as_ref().unwrap().orbits().iter().all(|&(_, n)| n == 2));
}

#[test]
fn symmetry_violations_rejected() {
    // individual product outcomes are permuted, not fixed
    let full = mub(3, 0.9, true, 2);
    assert!(matches!(apply_permutation_symmetry(&full, PermutationSymmetry::cyclic(3)), Err(QkdError::Symmetry(_))));
    let coarse = mub(3, 0.9, false, 2);
    assert!(apply_permutation_symmetry(&coarse, PermutationSymmetry::cyclic(2)).is_err());
}

#[test]
fn split_bound_single_node_is_exact() {
    let prob = mub(2, 0.9, true, 1);
    let (work, _) = prepare(&prob).unwrap();
    let joint = compute_rate(&prob).unwrap().h_ae;
    assert!((split_lower_bound(&work).unwrap() - joint).abs() <= 1e-7);
}

#[test]
fn split_bound_below_joint() {
    let prob = mub(2, 0.9, true, 4);
    let (work, _) = prepare(&prob).unwrap();
    let joint = compute_rate(&prob).unwrap().h_ae;
    assert!(split_lower_bound(&work).unwrap() <= joint + 1e-6);
    let split = compute_rate(&prob.clone().with_options(options(|o| o.split = true))).unwrap();
    assert!(split.diagnostics.split && split.diagnostics.node_values.len() == 4);
    assert!(split.h_ae <= joint + 1e-6);
}

#[test]
fn split_gap_regression() {
    // frozen from one solve: on this instance the per-node minima share a common state
    let prob = mub(2, 0.8, true, 8);
    let (work, _) = prepare(&prob).unwrap();
    let joint = compute_rate(&prob).unwrap().h_ae;
    let split = split_lower_bound(&work).unwrap();
    assert!((joint - 0.621403).abs() < 1e-5, "{joint}");
    assert!((joint - split).abs() < 1e-6, "{}", joint - split);
}

#[test]
fn attack_for_noisy_state() {
    let (work, _) = prepare(&mub(2, 0.9, true, 4)).unwrap();
    let (sdp, sol) = solve_entropy(&work).unwrap();
    let bound = sdp.constant + sol.primal_objective.min(sol.dual_objective);
    let a = reconstruct_attack(&work, &sdp, &sol).unwrap();
    assert!(a.residual <= 1e-7, "{}", a.residual);
    assert!((a.objective - bound).abs() <= 1e-6);
    assert!(a.entropy >= bound - 1e-6);
    assert!((a.state.norm() - 1.0).abs() < 1e-7);
    assert_eq!(a.state.len(), 4 * 8);
    assert_eq!(a.z.len(), 8);
}

#[test]
fn attack_for_pure_state() {
    let (work, _) = prepare(&mub(2, 1.0, true, 4)).unwrap();
    let v = work.reduction.clone().unwrap();
    let (sdp, sol) = solve_entropy(&work).unwrap();
    let a = reconstruct_attack(&work, &sdp, &sol).unwrap();
    assert_eq!(a.sigma_rank, 1);
    assert!(a.residual <= 1e-7, "{}", a.residual);
    assert!((a.entropy - 1.0).abs() < 1e-6);
    // lifted back, σ is the projector onto |φ⁺⟩
    let sigma = &v * sol.matrix(sdp.program.block(sdp.sigma)) * v.adjoint();
    let phi = max_entangled(2);
    assert!(max_abs(&(sigma - &phi * phi.adjoint())) < 1e-6);
}

#[test]
fn attack_rejects_symmetrized_programs() {
    let sym = apply_permutation_symmetry(&mub(2, 0.9, false, 2), PermutationSymmetry::cyclic(2)).unwrap();
    let (sdp, sol) = solve_entropy(&sym).unwrap();
    assert!(matches!(reconstruct_attack(&sym, &sdp, &sol), Err(QkdError::Unsupported(_))));
}

#[test]
fn subspace_rate_close_to_formula() {
    let (d, k, v) = (8, 2, 0.9);
    let p = build_subspace_protocol(d, k, Some(v), &mub_set(k).unwrap()).unwrap();
    assert!((p.rate_scale - 0.925).abs() < 1e-12);
    let r = compute_rate(&EntropyProblem::new(p, gauss_radau(8).unwrap())).unwrap();
    let pr = v + (k as f64 / d as f64) * (1.0 - v);
    let want = pr * k_iso(v / pr, k);
    assert!((r.rate - want).abs() <= 5e-3, "{} vs {want}", r.rate);
    assert_eq!((r.d, r.k), (8, 2));
}

#[test]
fn rate_result_serializes() {
    let r = compute_rate(&mub(2, 0.9, true, 2)).unwrap();
    let row = r.csv_row();
    assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    assert!(row.starts_with("mub,2,2,0.9000,2,"));
    let j: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(j["m"], 2);
    assert!(j["diagnostics"]["iterations"].as_u64().unwrap() > 0);
}
