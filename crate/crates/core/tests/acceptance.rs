use opforge::amalgam::{extend_and_pair, nap_amalgamate_1exact};
use opforge::chain::{exactness_estimate, run_chain, ChainConfig};
use opforge::ctx::{Budget, EvalCtx};
use opforge::derived::{quotient_space, Space};
use opforge::linalg::{c, ginibre, random_unitary, spectral_norm, CMat};
use opforge::maps::{cb_norm_bounds, transpose_map};
use opforge::metric::{fraisse_distance_bounds, inequality_suite, line, BasedSpace};
use opforge::sdp::spectral::{solve_spectral_min, SpectralProgram};
use opforge::space::{
    build_linfty, check_ruan, full_algebra, make_space, random_space, AmbientSignature, ConcreteSpace, MatrixTuple,
    SpaceElement,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::time::Instant;

/// Written to the process stdout directly so the line shows up under captured test output.
fn report(n: usize, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn random_blocks(rng: &mut ChaCha8Rng, max_block: usize, max_count: usize) -> AmbientSignature {
    let count = rng.random_range(1..=max_count);
    AmbientSignature((0..count).map(|_| rng.random_range(1..=max_block)).collect())
}

/// Minimum of a convex function on `R^d` by repeated grid refinement around the best point.
fn grid_min<F: Fn(&[f64]) -> f64>(f: F, d: usize, radius: f64, points: usize, rounds: usize) -> f64 {
    let mut center = vec![0.0; d];
    let mut r = radius;
    let mut best = f(&center);
    for _ in 0..rounds {
        let total = points.pow(d as u32);
        let mut best_pt = center.clone();
        for code in 0..total {
            let mut cc = code;
            let pt: Vec<f64> = (0..d)
                .map(|i| {
                    let k = cc % points;
                    cc /= points;
                    center[i] - r + 2.0 * r * k as f64 / (points - 1) as f64
                })
                .collect();
            let v = f(&pt);
            if v < best {
                best = v;
                best_pt = pt;
            }
        }
        center = best_pt;
        r *= 0.5;
    }
    best
}

#[test]
fn criterion_01_transpose() {
    let ctx = EvalCtx::default();
    let t = Instant::now();
    let b2 = cb_norm_bounds(&transpose_map(2), &ctx).unwrap();
    let t2 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let b3 = cb_norm_bounds(&transpose_map(3), &ctx).unwrap();
    let t3 = t.elapsed().as_secs_f64();
    let ok2 = b2.contains(2.0, 0.0) && b2.width() <= 1e-4 && t2 <= 60.0;
    let ok3 = b3.contains(3.0, 0.0) && b3.width() <= 1e-2 && t3 <= 60.0;
    report(
        1,
        ok2 && ok3,
        format!(
            "M2 [{:.9}, {:.9}] in {t2:.1}s, M3 [{:.9}, {:.9}] in {t3:.1}s",
            b2.lower, b2.upper, b3.lower, b3.upper
        ),
    );
    assert!(ok2 && ok3);
}

#[test]
fn criterion_02_ruan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let amb = random_blocks(&mut rng, 4, 3);
        let dim = rng.random_range(1..=amb.dim().min(6));
        let s = random_space(&amb, dim, rng.random()).unwrap();
        worst = worst.max(check_ruan(&s, 100, i, 1e-8).max_violation());
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-8 && secs <= 300.0;
    report(2, ok, format!("max violation {worst:e} in {secs:.1}s"));
    assert!(ok);
}

/// `B0 ⊃ X`, and `B1` holding a unitarily rotated copy of `X` next to a compression of it,
/// so `f` is a complete isometry onto its range.
fn isometric_instance(rng: &mut ChaCha8Rng, max_block: usize, max_dim: usize) -> (ConcreteSpace, CMat, ConcreteSpace, CMat) {
    let amb0 = random_blocks(rng, max_block, 2);
    let d0 = rng.random_range(1..=amb0.dim().min(max_dim));
    let b0 = random_space(&amb0, d0, rng.random()).unwrap();
    let dx = rng.random_range(1..=d0);
    let x_sub = ginibre(rng, d0, dx);
    let xs: Vec<MatrixTuple> = (0..dx).map(|i| b0.tuple_of(&x_sub.column(i).into_owned())).collect();
    let us: Vec<CMat> = b0.blocks().iter().map(|&m| random_unitary(rng, m)).collect();
    let j = rng.random_range(0..b0.blocks().len());
    let mj = b0.blocks()[j];
    let r = rng.random_range(1..=mj);
    let v = ginibre(rng, mj, r).qr().q();
    let image = |t: &MatrixTuple| -> MatrixTuple {
        let mut out: MatrixTuple = t.iter().zip(&us).map(|(a, u)| u * a * u.adjoint()).collect();
        out.push(v.adjoint() * &t[j] * &v);
        out
    };
    let mut amb1 = b0.ambient.0.clone();
    amb1.push(r);
    let amb1 = AmbientSignature(amb1);
    let mut basis: Vec<MatrixTuple> = xs.iter().map(image).collect();
    let extra = rng.random_range(0..=(max_dim - dx).min(amb1.dim() - dx));
    for _ in 0..extra {
        basis.push(amb1.blocks().iter().map(|&m| ginibre(rng, m, m)).collect());
    }
    let b1 = make_space(amb1, basis).unwrap();
    let mut f = CMat::zeros(b1.dim(), dx);
    for i in 0..dx {
        f[(i, i)] = c(1.0, 0.0);
    }
    (b0, x_sub, b1, f)
}

#[test]
fn criterion_03_exact_amalgamation() {
    let ctx = EvalCtx::with_seed(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Instant::now();
    let (mut iso, mut agree) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (b0, x, b1, f) = isometric_instance(&mut rng, 3, 4);
        let r = extend_and_pair(&b0, &x, &b1, &f, 0.0, &ctx).unwrap();
        iso = iso.max(r.isometry_defect0).max(r.isometry_defect1);
        agree = agree.max(r.agreement_defect);
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = iso <= 1e-9 && agree <= 1e-9 && secs <= 600.0;
    report(3, ok, format!("isometry defect {iso:e}, agreement defect {agree:e} in {secs:.1}s"));
    assert!(ok);
}

#[test]
fn criterion_04_nap_stages() {
    let ctx = EvalCtx::with_seed(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = Instant::now();
    let mut failures = 0;
    let mut worst_tol: f64 = 0.0;
    for i in 0..20 {
        let delta = if i % 2 == 0 { 0.0 } else { 0.2 };
        let (x, x0, y, f) = isometric_instance(&mut rng, 2, 3);
        let f = f * c(1.0 / (1.0 + delta), 0.0);
        let r = nap_amalgamate_1exact(&x, &x0, &y, &f, delta, 0.5, 3, &ctx).unwrap();
        worst_tol = worst_tol.max(r.tolerance);
        if !r.all_hold {
            failures += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = failures == 0 && worst_tol <= 1e-5 && secs <= 900.0;
    report(4, ok, format!("{failures} failing instances, tolerance {worst_tol:e}, {secs:.1}s"));
    assert!(ok);
}

fn quotient_value(q: &Space, rep: &SpaceElement, ctx: &EvalCtx) -> f64 {
    let Space::Quotient { complement, .. } = q else { unreachable!() };
    q.norm_bounds(&rep.transform(&complement.adjoint()), ctx).unwrap().upper
}

#[test]
fn criterion_05_quotients() {
    let ctx = EvalCtx::with_seed(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let amb = AmbientSignature(vec![rng.random_range(1..=2), 2]);
        let d = rng.random_range(2..=amb.dim().min(4));
        let s = random_space(&amb, d, rng.random()).unwrap();
        let r = rng.random_range(1..=2.min(d - 1));
        let kernel: Vec<SpaceElement> = (0..r).map(|_| SpaceElement::random(&mut rng, d, 1)).collect();
        let x = SpaceElement::random(&mut rng, d, 1);
        let q = quotient_space(Space::Concrete(s.clone()), kernel.clone()).unwrap();
        let v = quotient_value(&q, &x, &ctx);
        let radius = 4.0 * s.level_norm(&x) / kernel.iter().map(|k| s.level_norm(k)).fold(f64::INFINITY, f64::min);
        let oracle = grid_min(
            |l| {
                let mut y = x.clone();
                for (i, k) in kernel.iter().enumerate() {
                    y = y.sub(&k.scale(c(l[2 * i], l[2 * i + 1])));
                }
                s.level_norm(&y)
            },
            2 * r,
            radius,
            if r == 1 { 41 } else { 13 },
            40,
        );
        worst = worst.max((v - oracle).abs());
    }
    let l = build_linfty(2);
    let e = SpaceElement::scalar(&[c(1.0, 0.0), c(-1.0, 0.0)]);
    let q = quotient_space(Space::Concrete(l), vec![e]).unwrap();
    let half = quotient_value(&q, &SpaceElement::scalar(&[c(1.0, 0.0), c(0.0, 0.0)]), &ctx);
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 5e-3 && (half - 0.5).abs() <= 1e-6 && secs <= 300.0;
    report(5, ok, format!("grid disagreement {worst:e}, l-inf(2) case {half:.9}, {secs:.1}s"));
    assert!(ok);
}

#[test]
fn criterion_06_one_dimensional_law() {
    let ctx = EvalCtx::with_seed(6).with_budget(Budget::new(6, 100));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = Instant::now();
    let mut worst_width: f64 = 0.0;
    let mut misses = 0;
    for i in 0..20 {
        let r: f64 = rng.random_range(0.1..3.0);
        let s: f64 = rng.random_range(0.1..3.0);
        for n in [1usize, 2] {
            let amb_a: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=n)).collect();
            let amb_b: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=n)).collect();
            let a = line(r, &amb_a, 2 * i, &ctx).unwrap();
            let b = line(s, &amb_b, 2 * i + 1, &ctx).unwrap();
            let rep = fraisse_distance_bounds(&a, &b, n, &ctx).unwrap();
            let d = (r - s).abs();
            if !(rep.d_lower <= d + 1e-9 && d <= rep.d_upper + 1e-9) {
                misses += 1;
            }
            worst_width = worst_width.max(rep.d_upper - rep.d_lower);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = misses == 0 && worst_width <= 1e-4 && secs <= 300.0;
    report(6, ok, format!("{misses} intervals missing |r - s|, width {worst_width:e}, {secs:.1}s"));
    assert!(ok);
}

fn auerbach_pair(rng: &mut ChaCha8Rng, n: usize, ctx: &EvalCtx) -> (BasedSpace, BasedSpace) {
    loop {
        let make = |rng: &mut ChaCha8Rng| -> Option<BasedSpace> {
            let amb = if n == 1 {
                AmbientSignature(vec![1; rng.random_range(2..=3)])
            } else {
                random_blocks(rng, 2, 2)
            };
            if amb.dim() < 2 {
                return None;
            }
            let s = random_space(&amb, 2, rng.random()).ok()?;
            let mut t = ginibre(rng, 2, 2);
            for i in 0..2 {
                let nrm = s.level_norm(&SpaceElement::scalar(t.column(i).as_slice()));
                let col = t.column(i) / c(nrm, 0.0);
                t.set_column(i, &col);
            }
            let b = BasedSpace::new(s, t, ctx).ok()?;
            (b.auerbach_bound <= 2.0).then_some(b)
        };
        if let (Some(a), Some(b)) = (make(rng), make(rng)) {
            return (a, b);
        }
    }
}

#[test]
fn criterion_07_inequalities() {
    let ctx = EvalCtx::with_seed(7).with_budget(Budget::new(4, 60));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = Instant::now();
    let mut violations = 0;
    let mut literal_refuted = 0;
    for n in [1usize, 2] {
        for _ in 0..100 {
            let (a, b) = auerbach_pair(&mut rng, n, &ctx);
            let r = inequality_suite(&a, &b, n, 20, 1e-4, &ctx).unwrap();
            if !(r.dnb_vs_distance.holds && r.bound_norm.holds && r.distance_vs_dnb.holds) {
                violations += 1;
                println!("violation: {}", serde_json::to_string(&r).unwrap());
            }
            if !r.literal_distance_vs_dnb.holds {
                literal_refuted += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = violations == 0 && secs <= 1200.0;
    report(
        7,
        ok,
        format!("{violations} violations in 200 pairs, literal d <= d_nb - 1 refuted on {literal_refuted}, {secs:.1}s"),
    );
    assert!(ok);
}

#[test]
fn criterion_08_chain() {
    let ctx = EvalCtx::with_seed(8).with_budget(Budget::new(4, 40));
    let t = Instant::now();
    let cfg = ChainConfig::mn(1, 50, 1);
    let (s1, r1) = run_chain(&cfg, &ctx).unwrap();
    let (s2, _) = run_chain(&cfg, &ctx).unwrap();
    let identical = serde_json::to_string(&s1.current).unwrap() == serde_json::to_string(&s2.current).unwrap();
    let mut e1 = ChainConfig::e1(30, 1);
    e1.algebra_sizes = vec![2];
    let (s3, r3) = run_chain(&e1, &ctx).unwrap();
    let ruan = check_ruan(&s3.current, 50, 8, 1e-8).max_violation();
    let secs = t.elapsed().as_secs_f64();
    let ok = r1.max_defect <= 0.05 && identical && r3.max_defect <= 0.1 && ruan <= 1e-8 && secs <= 1800.0;
    report(
        8,
        ok,
        format!(
            "mn defect {:e} (dim {}), rerun identical {identical}, e1 defect {:e} (dim {}), ruan {ruan:e}, {secs:.1}s",
            r1.max_defect, r1.final_dim, r3.max_defect, r3.final_dim
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_09_exactness() {
    let ctx = EvalCtx::with_seed(9);
    let t = Instant::now();
    let l = exactness_estimate(&build_linfty(3), 3, &ctx).unwrap();
    let all_one = l.iter().all(|b| b.contains(1.0, 1e-6));
    let m = exactness_estimate(&full_algebra(2), 1, &ctx).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = all_one && m[0].lower >= 1.2 && secs <= 600.0;
    report(
        9,
        ok,
        format!(
            "l-inf(3) {:?}, M2 at n = 1 [{:.6}, {:.6}], {secs:.1}s",
            l.iter().map(|b| (b.lower, b.upper)).collect::<Vec<_>>(),
            m[0].lower,
            m[0].upper
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let t = Instant::now();
    let (mut gap, mut worst_grid) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for i in 0..200 {
        let d = if i % 2 == 0 { 3 } else { rng.random_range(1..=6) };
        let mut p = SpectralProgram::new(d);
        for _ in 0..rng.random_range(1..=3) {
            let (r, cc) = (rng.random_range(1..=3), rng.random_range(1..=3));
            p.add_block(ginibre(&mut rng, r, cc), (0..d).map(|_| ginibre(&mut rng, r, cc)).collect());
        }
        let s = solve_spectral_min(&p);
        if s.status != opforge::sdp::ipm::SolveStatus::Optimal {
            failures += 1;
        }
        gap = gap.max(s.gap);
        if d == 3 {
            let radius = 4.0 * p.objective(&[0.0; 3]) / p.blocks.iter().flat_map(|b| b.coeffs.iter().map(spectral_norm)).fold(f64::INFINITY, f64::min).max(1e-3);
            let oracle = grid_min(|t| p.objective(t), 3, radius.min(1e3), 21, 45);
            worst_grid = worst_grid.max((oracle - s.value).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = failures == 0 && gap <= 1e-8 && worst_grid <= 5e-3 && secs <= 600.0;
    report(10, ok, format!("{failures} failures, max gap {gap:e}, grid disagreement {worst_grid:e}, {secs:.1}s"));
    assert!(ok);
}
