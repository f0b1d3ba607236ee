use opforge::amalgam::extend_and_pair;
use opforge::derived::{build_l1, quotient_space};
use opforge::linalg::{c, ginibre};
use opforge::maps::{map_norm_bounds, random_map};
use opforge::metric::{compose_witnesses, distance_upper, fraisse_distance_bounds, line, BasedSpace};
use opforge::sdp::{solve_spectral_min, SpectralProgram};
use opforge::space::{check_ruan, random_space};
use opforge::{AmbientSignature, Budget, EvalCtx, Space, SpaceElement};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn ctx(seed: u64) -> EvalCtx {
    EvalCtx::with_seed(seed).with_budget(Budget::new(4, 60))
}

fn ambient() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn concrete_norms_satisfy_ruan(blocks in ambient(), dim in 1usize..=4, seed in any::<u64>()) {
        let amb = AmbientSignature(blocks);
        let dim = dim.min(amb.dim());
        let s = random_space(&amb, dim, seed).unwrap();
        prop_assert!(check_ruan(&s, 20, seed, 1e-8).max_violation() <= 1e-8);
    }

    #[test]
    fn level_norm_is_a_norm(blocks in ambient(), seed in any::<u64>(), level in 1usize..=3, t in -3.0f64..3.0) {
        let amb = AmbientSignature(blocks);
        let dim = amb.dim().min(3);
        let s = random_space(&amb, dim, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = SpaceElement::random(&mut rng, dim, level);
        let y = SpaceElement::random(&mut rng, dim, level);
        let nx = s.level_norm(&x);
        prop_assert!((s.level_norm(&x.scale(c(0.0, t))) - t.abs() * nx).abs() <= 1e-9 * (1.0 + nx));
        prop_assert!(s.level_norm(&x.add(&y)) <= nx + s.level_norm(&y) + 1e-9);
    }

    #[test]
    fn map_norm_intervals_are_ordered(a in ambient(), b in ambient(), seed in any::<u64>(), k in 1usize..=2) {
        let (a, b) = (AmbientSignature(a), AmbientSignature(b));
        let d = Arc::new(Space::Concrete(random_space(&a, a.dim().min(2), seed).unwrap()));
        let t = Arc::new(Space::Concrete(random_space(&b, b.dim().min(2), seed ^ 1).unwrap()));
        let f = random_map(d, t, seed);
        let bound = map_norm_bounds(&f, k, &ctx(seed)).unwrap();
        prop_assert!(bound.lower <= bound.upper * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn quotient_norm_at_most_parent(blocks in prop::collection::vec(1usize..=2, 2..=3), seed in any::<u64>()) {
        let amb = AmbientSignature(blocks);
        let d = amb.dim().min(3);
        let s = random_space(&amb, d, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = SpaceElement::random(&mut rng, d, 1);
        let x = SpaceElement::random(&mut rng, d, 1);
        let q = quotient_space(Space::Concrete(s.clone()), vec![k.clone()]).unwrap();
        let Space::Quotient { complement, .. } = &q else { unreachable!() };
        let w = complement.adjoint();
        let b = q.norm_bounds(&x.transform(&w), &ctx(seed)).unwrap();
        prop_assert!(b.lower <= b.upper + 1e-7);
        prop_assert!(b.upper <= s.level_norm(&x) + 1e-7);
        let kb = q.norm_bounds(&k.transform(&w), &ctx(seed)).unwrap();
        prop_assert!(kb.upper <= 1e-7);
    }

    #[test]
    fn l1_norm_between_max_and_sum(coords in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2..=3)) {
        let k = coords.len();
        let z: Vec<_> = coords.iter().map(|&(re, im)| c(re, im)).collect();
        let b = build_l1(k, 1).norm_bounds(&SpaceElement::scalar(&z), &ctx(0)).unwrap();
        let sum: f64 = z.iter().map(|w| w.norm()).sum();
        prop_assert!(b.lower <= sum + 1e-7 && sum <= b.upper * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn spectral_solution_is_certified(d in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SpectralProgram::new(d);
        p.add_block(ginibre(&mut rng, 2, 3), (0..d).map(|_| ginibre(&mut rng, 2, 3)).collect());
        p.add_block(ginibre(&mut rng, 2, 2), (0..d).map(|_| ginibre(&mut rng, 2, 2)).collect());
        let s = solve_spectral_min(&p);
        prop_assert!((p.objective(&s.primal) - s.value).abs() <= 1e-9 * (1.0 + s.value));
        prop_assert!(s.dual_bound <= s.value + 1e-9);
        prop_assert!(s.gap <= 1e-8);
    }

    #[test]
    fn inclusion_amalgamates_exactly(blocks in ambient(), seed in any::<u64>()) {
        let amb = AmbientSignature(blocks);
        let d = amb.dim().min(3);
        let s = random_space(&amb, d, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sub = ginibre(&mut rng, d, 1);
        let r = extend_and_pair(&s, &sub, &s, &sub, 0.0, &ctx(seed)).unwrap();
        prop_assert!(r.isometry_defect0 <= 1e-7 && r.isometry_defect1 <= 1e-7);
        prop_assert!(r.agreement_defect <= 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn distance_is_symmetric_and_ordered(r in 0.2f64..2.0, s in 0.2f64..2.0, seed in 0u64..1000) {
        let cx = ctx(seed);
        let a = line(r, &[1, 2], seed, &cx).unwrap();
        let b = line(s, &[2], seed + 1, &cx).unwrap();
        let ab = fraisse_distance_bounds(&a, &b, 1, &cx).unwrap();
        let ba = fraisse_distance_bounds(&b, &a, 1, &cx).unwrap();
        prop_assert!(ab.d_lower <= ab.d_upper + 1e-9);
        prop_assert!((ab.d_lower - ba.d_lower).abs() <= 1e-6);
        prop_assert!((ab.d_upper - ba.d_upper).abs() <= 1e-6);
        let aa = fraisse_distance_bounds(&a, &a, 1, &cx).unwrap();
        prop_assert!(aa.d_upper <= 1e-7);
    }

    #[test]
    fn composed_witness_obeys_triangle(r in 0.2f64..2.0, s in 0.2f64..2.0, t in 0.2f64..2.0, seed in 0u64..1000) {
        let cx = ctx(seed);
        let a = line(r, &[1], seed, &cx).unwrap();
        let b = line(s, &[1, 1], seed + 1, &cx).unwrap();
        let cc = line(t, &[2], seed + 2, &cx).unwrap();
        let ab = distance_upper(&a, &b, &cx).unwrap();
        let bc = distance_upper(&b, &cc, &cx).unwrap();
        let ac = compose_witnesses(&ab, &bc, &cx).unwrap();
        prop_assert!(ac.value() <= ab.value() + bc.value() + 1e-6);
    }
}

#[test]
fn canonical_basis_of_linfty_is_auerbach() {
    let b = BasedSpace::canonical(opforge::space::build_linfty(3), &ctx(0)).unwrap();
    assert!((b.auerbach_bound - 1.0).abs() <= 1e-6);
}
