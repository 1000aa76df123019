use nalgebra::DMatrix;
use proptest::prelude::*;
use qkdrate::bases::{approximate_mubs, haar_unitary, mub_objective, mub_set, overlap_bases, select_independent, BasisSet};
use qkdrate::qcore::{kron, max_abs, CMatrix, HermitianOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_overlap_error(b: &BasisSet) -> f64 {
    let d = b.d();
    let mut worst: f64 = 0.0;
    for k in 0..b.n() {
        for l in k + 1..b.n() {
            let g = b.unitary(k).adjoint() * b.unitary(l);
            for z in g.iter() {
                worst = worst.max((z.norm_sqr() - 1.0 / d as f64).abs());
            }
        }
    }
    worst
}

#[test]
fn complete_sets_are_unbiased() {
    for d in [2, 3, 4, 5, 7, 8, 9] {
        let b = mub_set(d).unwrap();
        assert_eq!(b.n(), d + 1);
        assert_eq!(b.unitary(0), &CMatrix::identity(d, d));
        assert!(max_overlap_error(&b) < 1e-9, "d={d}");
        assert!(mub_objective(&b) < 1e-18, "d={d}: {}", mub_objective(&b));
        // first nonzero entry of each vector is real and positive
        for k in 0..b.n() {
            for i in 0..d {
                let v = b.vector(k, i);
                let z = v.iter().find(|z| z.norm() > 1e-12).unwrap();
                assert!(z.im.abs() < 1e-14 && z.re > 0.0);
            }
        }
    }
    for d in [6, 10, 12] {
        assert!(mub_set(d).is_err());
    }
}

#[test]
fn objective_invariant_under_common_rotation() {
    let b = mub_set(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = haar_unitary(3, &mut rng);
    let rotated = BasisSet::new(b.unitaries().iter().map(|u| &w * u).collect()).unwrap();
    assert!((mub_objective(&rotated) - mub_objective(&b)).abs() < 1e-14);
    let mixed = BasisSet::new(vec![CMatrix::identity(3, 3), haar_unitary(3, &mut rng), haar_unitary(3, &mut rng)]).unwrap();
    let mixed_rot = BasisSet::new(mixed.unitaries().iter().map(|u| &w * u).collect()).unwrap();
    assert!((mub_objective(&mixed_rot) - mub_objective(&mixed)).abs() < 1e-13);
}

#[test]
fn descent_recovers_exact_sets() {
    let r = approximate_mubs(3, 4, 4, 7).unwrap();
    assert!(r.objective < 1e-8, "{}", r.objective);
    let a = approximate_mubs(2, 3, 2, 1).unwrap();
    let b = approximate_mubs(2, 3, 2, 2).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-6);
    for u in r.bases.unitaries() {
        assert!(max_abs(&(u.adjoint() * u - CMatrix::identity(3, 3))) < 1e-9);
    }
}

#[test]
fn descent_is_deterministic() {
    let a = approximate_mubs(4, 3, 3, 42).unwrap();
    let b = approximate_mubs(4, 3, 3, 42).unwrap();
    assert_eq!(a.objective, b.objective);
    assert_eq!(a.bases, b.bases);
}

#[test]
fn overlap_bases_are_orthonormal() {
    for d in [4, 6, 8] {
        let b = overlap_bases(d).unwrap();
        assert_eq!(b.n(), 5);
        for k in 0..5 {
            let g = b.unitary(k).adjoint() * b.unitary(k);
            assert!(max_abs(&(g - CMatrix::identity(d, d))) < 1e-12);
        }
    }
}

#[test]
fn overlap_family_selection_matches_gram_rank() {
    let b = overlap_bases(4).unwrap();
    let mut ops = Vec::new();
    for k in 0..5 {
        for i in 0..4 {
            for j in 0..4 {
                ops.push(kron(&b.projector(k, i), &b.projector(k, j).transpose()));
            }
        }
    }
    assert_eq!(ops.len(), 80);
    let kept = select_independent(&ops);
    let gram = DMatrix::from_fn(80, 80, |a, c| ops[a].inner(&ops[c]));
    let sv = gram.singular_values();
    let rank = sv.iter().filter(|&&s| s > 1e-8 * sv[0]).count();
    assert_eq!(kept.len(), rank);
}

fn random_hermitian(d: usize, seed: &[f64]) -> HermitianOperator {
    let m = CMatrix::from_fn(d, d, |i, j| num_complex::Complex64::new(seed[(i * d + j) % seed.len()], seed[(j * d + i + 1) % seed.len()]));
    HermitianOperator::hermitian_part(&m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn selection_is_independent_and_maximal(
        seeds in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 5), 2..5),
        dup in 0usize..4,
    ) {
        let mut ops: Vec<HermitianOperator> = seeds.iter().map(|s| random_hermitian(2, s)).collect();
        // append a dependent combination and a duplicate
        let combo = ops[0].add(&ops[1].scaled(-0.5));
        ops.push(combo);
        ops.push(ops[dup % ops.len()].clone());
        let kept = select_independent(&ops);
        let rank = |idx: &[usize]| {
            let g = DMatrix::from_fn(idx.len(), idx.len(), |a, c| ops[idx[a]].inner(&ops[idx[c]]));
            let sv = g.singular_values();
            let top = sv.iter().cloned().fold(0.0, f64::max);
            sv.iter().filter(|&&s| s > 1e-10 * top.max(1e-300)).count()
        };
        prop_assert_eq!(rank(&kept), kept.len());
        for r in 0..ops.len() {
            if !kept.contains(&r) {
                let mut ext = kept.clone();
                ext.push(r);
                prop_assert!(rank(&ext) < ext.len());
            }
        }
    }
}
