//! Concrete copies of derived spaces: an injective map into a direct sum of matrix
//! algebras built from explicit contractions, with a certified bound on the inverse.

use crate::ctx::EvalCtx;
use crate::derived::Space;
use crate::error::{OpError, Result};
use crate::linalg::{c, ginibre, CMat, ONE};
use crate::maps::{map_norm_upper, LinearMap};
use crate::onesum::ascent_lower;
use crate::space::{make_space_labeled, AmbientSignature, ConcreteSpace, MatrixTuple, SpaceElement};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Concretization {
    /// Image of the basis, in the same order.
    pub space: ConcreteSpace,
    /// Certified upper bound on the inverse of the embedding at the requested level.
    pub distortion: f64,
    pub target_met: bool,
    pub contractions: usize,
}

fn done(space: ConcreteSpace, distortion: f64, eps: f64, contractions: usize) -> Concretization {
    Concretization {
        space,
        distortion,
        target_met: distortion <= 1.0 + eps + 1e-12,
        contractions,
    }
}

/// Embeds `x` at level `n` with distortion at most `1 + eps` when the budget allows.
pub fn concretize(x: &Space, n: usize, eps: f64, ctx: &EvalCtx) -> Result<Concretization> {
    match x {
        Space::Concrete(s) => Ok(done(s.clone(), 1.0, eps, 0)),
        Space::Scaled { .. } if x.as_scaled_concrete().is_some() => {
            let (s, d) = x.as_scaled_concrete().unwrap();
            let basis = s
                .basis
                .iter()
                .map(|t| t.iter().map(|b| b * c(d, 0.0)).collect())
                .collect();
            let sp = make_space_labeled(s.ambient.clone(), basis, format!("{}*{d}", s.label))?;
            Ok(done(sp, 1.0, eps, 0))
        }
        Space::L1 { k, ncap } if n == 1 => {
            let _ = ncap;
            l1_phases(*k, eps, ctx)
        }
        Space::MinQuant { parent, n: q } => match parent.as_concrete() {
            Some(p) => min_compressions(x, p, *q, n, eps, ctx),
            None => Err(OpError::Invalid("quantization of a derived space".into())),
        },
        Space::OneSum { .. } | Space::L1 { .. } => one_sum_tuples(x, n, eps, ctx),
        _ => Err(OpError::Invalid(format!("no concretization for {}", x.kind()))),
    }
}

/// Like [`concretize`], but a missed target is an error.
pub fn concretize_strict(x: &Space, n: usize, eps: f64, ctx: &EvalCtx) -> Result<Concretization> {
    let r = concretize(x, n, eps, ctx)?;
    if r.target_met {
        Ok(r)
    } else {
        Err(OpError::BudgetExhausted(format!(
            "best distortion {} with {} contractions",
            r.distortion, r.contractions
        )))
    }
}

/// `l^1(k)` at level 1 through the functionals `x -> sum_i w_i x_i` with `w_1 = 1` and
/// `w_i` ranging over the `K`-th roots of unity. Rounding every phase of a norming
/// functional to the grid loses at most `cos(pi / K)`.
pub fn l1_phases(k: usize, eps: f64, ctx: &EvalCtx) -> Result<Concretization> {
    let cap = (ctx.budget.restarts.max(1) * ctx.budget.iterations.max(1)).max(64);
    let mut kk = 4usize;
    let need = |kk: usize| 1.0 / (std::f64::consts::PI / kk as f64).cos();
    while need(kk) > 1.0 + eps && (kk + 1).pow(k.saturating_sub(1) as u32) <= cap {
        kk += 1;
    }
    let count = kk.pow(k.saturating_sub(1) as u32);
    let roots: Vec<_> = (0..kk)
        .map(|t| {
            let a = 2.0 * std::f64::consts::PI * t as f64 / kk as f64;
            c(a.cos(), a.sin())
        })
        .collect();
    let mut basis: Vec<MatrixTuple> = vec![Vec::with_capacity(count); k];
    for code in 0..count {
        let mut cc = code;
        for (i, b) in basis.iter_mut().enumerate() {
            let w = if i == 0 {
                ONE
            } else {
                let r = roots[cc % kk];
                cc /= kk;
                r
            };
            b.push(CMat::from_element(1, 1, w));
        }
    }
    let space = make_space_labeled(AmbientSignature(vec![1; count]), basis, format!("l1({k})"))?;
    let distortion = if k == 1 { 1.0 } else { need(kk) };
    Ok(done(space, distortion, eps, count))
}

/// Sum of compressions `x -> V^* x_j V` onto `n`-dimensional subspaces of the ambient
/// blocks; these are complete contractions on the parent, so `n`-contractions on `MIN_n`.
fn min_compressions(x: &Space, p: &ConcreteSpace, q: usize, n: usize, eps: f64, ctx: &EvalCtx) -> Result<Concretization> {
    let size = q.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut blocks: Vec<usize> = Vec::new();
    let mut parts: Vec<Vec<CMat>> = vec![Vec::new(); p.dim()];
    let push = |v: &CMat, j: usize, blocks: &mut Vec<usize>, parts: &mut Vec<Vec<CMat>>| {
        blocks.push(v.ncols());
        for (i, b) in p.basis.iter().enumerate() {
            parts[i].push(v.adjoint() * &b[j] * v);
        }
    };
    for (j, &m) in p.blocks().iter().enumerate() {
        if m <= size {
            push(&CMat::identity(m, m), j, &mut blocks, &mut parts);
            continue;
        }
        // coordinate windows, then random isometries
        for s in 0..=(m - size) {
            let v = CMat::from_fn(m, size, |a, b| if a == s + b { ONE } else { c(0.0, 0.0) });
            push(&v, j, &mut blocks, &mut parts);
        }
        for _ in 0..ctx.budget.restarts.max(1) {
            let g = ginibre(&mut rng, m, size);
            let v = g.qr().q();
            push(&v, j, &mut blocks, &mut parts);
        }
    }
    let count = blocks.len();
    let space = make_space_labeled(AmbientSignature(blocks), parts, format!("min{q}({})", p.label))?;
    let inv = LinearMap::new(
        Arc::new(Space::Concrete(space.clone())),
        Arc::new(x.clone()),
        CMat::identity(p.dim(), p.dim()),
    )?;
    let d = map_norm_upper(&inv, n, ctx)?.upper.max(1.0);
    Ok(done(space, d, eps, count))
}

/// Sum of contraction tuples found by ascent on random elements of a 1-sum.
fn one_sum_tuples(x: &Space, n: usize, eps: f64, ctx: &EvalCtx) -> Result<Concretization> {
    let atoms = x.atoms().ok_or_else(|| OpError::Invalid("1-sum without concrete atoms".into()))?;
    let d = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut blocks = Vec::new();
    let mut parts: Vec<Vec<CMat>> = vec![Vec::new(); d];
    for r in 0..ctx.budget.restarts.max(1) {
        let e = SpaceElement::random(&mut rng, d, n);
        let (_, t) = ascent_lower(&atoms, &e, 2, ctx.budget.iterations, ctx.fork(r as u64).seed);
        blocks.push(t.q);
        for (i, u) in t.images.iter().enumerate() {
            parts[i].push(u.clone());
        }
    }
    let count = blocks.len();
    let space = make_space_labeled(AmbientSignature(blocks), parts, format!("{}-concrete", x.kind()))?;
    let inv = LinearMap::new(Arc::new(Space::Concrete(space.clone())), Arc::new(x.clone()), CMat::identity(d, d))?;
    let dist = map_norm_upper(&inv, n, ctx)?.upper.max(1.0);
    Ok(done(space, dist, eps, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derived::{build_l1, min_quantization, scaled_space};
    use crate::space::{build_linfty, full_algebra};

    #[test]
    fn concrete_and_scaled() {
        let ctx = EvalCtx::with_seed(1);
        let s = Space::Concrete(full_algebra(2));
        let r = concretize(&s, 2, 0.0, &ctx).unwrap();
        assert_eq!(r.distortion, 1.0);
        let t = scaled_space(s, 3.0).unwrap();
        let r = concretize(&t, 2, 0.0, &ctx).unwrap();
        let x = SpaceElement::single(4, 0, CMat::identity(1, 1));
        assert!((r.space.level_norm(&x) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn l1_two_at_level_one() {
        let ctx = EvalCtx::with_seed(1);
        let r = concretize(&build_l1(2, 1), 1, 0.01, &ctx).unwrap();
        assert!(r.target_met && r.distortion <= 1.01);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l1 = build_l1(2, 1);
        for _ in 0..50 {
            let x = SpaceElement::random(&mut rng, 2, 1);
            let exact = l1.norm_bounds(&x, &ctx).unwrap().upper;
            let img = r.space.level_norm(&x);
            assert!(img <= exact + 1e-12 && img >= exact / r.distortion - 1e-12);
        }
    }

    #[test]
    fn min_of_linfty_is_itself() {
        let ctx = EvalCtx::with_seed(1).with_budget(crate::ctx::Budget::new(2, 50));
        let m = min_quantization(Space::Concrete(build_linfty(3)), 1);
        let r = concretize(&m, 1, 1e-6, &ctx).unwrap();
        assert!(r.target_met, "{}", r.distortion);
    }
}
