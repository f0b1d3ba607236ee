use opforge::derived::{build_l1, min_quantization, quotient_space};
use opforge::linalg::{c, ginibre, trace_norm, CMat};
use opforge::maps::{cb_norm_bounds, map_norm_lower, transpose_map};
use opforge::space::{build_linfty, full_algebra};
use opforge::{Budget, EvalCtx, LinearMap, Space, SpaceElement};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn ctx() -> EvalCtx {
    EvalCtx::with_seed(11).with_budget(Budget::new(8, 150))
}

/// `sum_ij e_ij (x) e_ij` has norm `n` and its transpose-image has norm 1 after normalizing.
#[test]
fn transpose_level_n_equals_n() {
    for n in 2..=3 {
        let b = map_norm_lower(&transpose_map(n), n, &ctx()).unwrap();
        assert!(b.lower >= n as f64 - 1e-6, "n = {n}: {}", b.lower);
    }
}

#[test]
fn transpose_is_an_isometry_at_level_one() {
    let b = cb_norm_bounds(&transpose_map(2), &ctx()).unwrap();
    let lower1 = map_norm_lower(&transpose_map(2), 1, &ctx()).unwrap();
    assert!((lower1.lower - 1.0).abs() <= 1e-6);
    assert!(b.upper <= 2.0 + 1e-6);
}

/// A functional `x -> tr(a^T x)` on `M_m` has cb-norm equal to the trace norm of `a`.
#[test]
fn functional_cb_norm_is_trace_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in 2..=3 {
        let a = ginibre(&mut rng, m, m);
        let coeffs = CMat::from_fn(1, m * m, |_, k| a[(k / m, k % m)]);
        let f = LinearMap::new(
            Arc::new(Space::Concrete(full_algebra(m))),
            Arc::new(Space::Concrete(build_linfty(1))),
            coeffs,
        )
        .unwrap();
        let b = cb_norm_bounds(&f, &ctx()).unwrap();
        let t = trace_norm(&a);
        assert!(b.lower <= t + 1e-6 && t <= b.upper + 1e-6, "[{}, {}] vs {t}", b.lower, b.upper);
        assert!(b.upper - t <= 1e-6 * t.max(1.0));
    }
}

#[test]
fn linfty_two_modulo_antidiagonal() {
    let q = quotient_space(
        Space::Concrete(build_linfty(2)),
        vec![SpaceElement::scalar(&[c(1.0, 0.0), c(-1.0, 0.0)])],
    )
    .unwrap();
    let b = q.norm_bounds(&SpaceElement::scalar(&[c(std::f64::consts::FRAC_1_SQRT_2, 0.0)]), &ctx()).unwrap();
    // the coset of e1 has norm 1/2 and coordinate 1/sqrt 2 along the complement
    assert!((b.upper - 0.5).abs() <= 1e-6 && (b.lower - 0.5).abs() <= 1e-6, "{b:?}");
}

#[test]
fn l1_level_one_is_sum_of_moduli() {
    let x = SpaceElement::scalar(&[c(1.0, 0.0), c(0.0, 1.0), c(-0.5, 0.5)]);
    let want = 2.0 + 0.5f64.sqrt();
    let b = build_l1(3, 1).norm_bounds(&x, &ctx()).unwrap();
    assert!(b.lower <= want + 1e-9 && want <= b.upper + 1e-9);
    assert!(b.width() <= 0.1, "{b:?}");
}

/// At level 1 the MIN quantization agrees with the original norm.
#[test]
fn min_quantization_agrees_at_base_level() {
    let m2 = Space::Concrete(full_algebra(2));
    let mq = min_quantization(m2.clone(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let x = SpaceElement::random(&mut rng, 4, 1);
        let v = m2.norm_bounds(&x, &ctx()).unwrap().upper;
        let b = mq.norm_bounds(&x, &ctx()).unwrap();
        assert!(b.lower <= v + 1e-6 && v <= b.upper + 1e-6, "{v} vs {b:?}");
    }
}

/// The MIN_1 norm of `sum_ij e_ij (x) e_ij` on `M_2` is at most 1 while the `M_2` norm is 2.
#[test]
fn min_quantization_is_strictly_smaller_on_m2() {
    let mut coeffs = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            let mut e = CMat::zeros(2, 2);
            e[(i, j)] = c(1.0, 0.0);
            coeffs.push(e);
        }
    }
    let x = SpaceElement::new(2, coeffs).unwrap();
    let m2 = Space::Concrete(full_algebra(2));
    assert!((m2.norm_bounds(&x, &ctx()).unwrap().upper - 2.0).abs() <= 1e-9);
    let b = min_quantization(m2, 1).norm_bounds(&x, &ctx()).unwrap();
    assert!(b.upper <= 1.0 + 1e-6, "{b:?}");
}
