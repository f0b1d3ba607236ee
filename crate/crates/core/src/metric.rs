//! The Fraïssé metric between based spaces, the n-bounded distance, Auerbach constants
//! and the comparison inequalities relating them.

use crate::amalgam::extend_and_pair;
use crate::bound::{Certificate, NormBound};
use crate::ctx::EvalCtx;
use crate::derived::{build_l1, Space};
use crate::error::{OpError, Result};
use crate::linalg::{c, ginibre, inverse_checked, inverse_condition, spectral_norm, CMat};
use crate::maps::{dual_functional_norms, map_norm_bounds, map_norm_upper, subspace, LinearMap};
use crate::sdp::extension::nearest_contraction;
use crate::space::{make_space_labeled, AmbientSignature, ConcreteSpace, MatrixTuple, SpaceElement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A space with an ordered basis `a_1, ..., a_k`, given by coordinates in the basis of
/// the underlying concrete space (column `i` holds `a_i`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasedSpace {
    pub space: ConcreteSpace,
    #[serde(with = "crate::json::cmat")]
    pub tuple: CMat,
    pub auerbach_bound: f64,
}

impl BasedSpace {
    pub fn new(space: ConcreteSpace, tuple: CMat, ctx: &EvalCtx) -> Result<Self> {
        if tuple.nrows() != space.dim() || tuple.ncols() != space.dim() {
            return Err(OpError::DimensionMismatch(format!(
                "tuple of shape {:?} in a space of dimension {}",
                tuple.shape(),
                space.dim()
            )));
        }
        let mut b = BasedSpace {
            space,
            tuple,
            auerbach_bound: f64::INFINITY,
        };
        b.auerbach_bound = auerbach_constant(&b, ctx)?;
        Ok(b)
    }

    /// The basis of the space itself.
    pub fn canonical(space: ConcreteSpace, ctx: &EvalCtx) -> Result<Self> {
        let d = space.dim();
        Self::new(space, CMat::identity(d, d), ctx)
    }

    pub fn len(&self) -> usize {
        self.tuple.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> Vec<MatrixTuple> {
        (0..self.len())
            .map(|i| self.space.tuple_of(&self.tuple.column(i).into_owned()))
            .collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.space.level_norm(&SpaceElement::scalar(self.tuple.column(i).as_slice())))
            .collect()
    }

    /// `sum_i alpha_i (x) a_i` in the coordinates of the space.
    pub fn combine(&self, alpha: &SpaceElement) -> SpaceElement {
        alpha.transform(&self.tuple)
    }

    /// The space with `a_1, ..., a_k` as its basis.
    pub fn as_basis_space(&self) -> Result<ConcreteSpace> {
        subspace(&self.space, &self.tuple, &self.space.label)
    }
}

/// Rows are the coordinate functionals `a_i^*` in the coordinates of the space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalTuple {
    #[serde(with = "crate::json::cmat")]
    pub functionals: CMat,
}

pub fn dual_basis(b: &BasedSpace) -> Result<FunctionalTuple> {
    let ic = inverse_condition(&b.tuple);
    if ic < 1e-12 {
        return Err(OpError::IllConditioned(if ic > 0.0 { 1.0 / ic } else { f64::INFINITY }));
    }
    let inv = inverse_checked(&b.tuple).ok_or(OpError::IllConditioned(f64::INFINITY))?;
    Ok(FunctionalTuple { functionals: inv })
}

/// `max_i max(||a_i||, ||a_i^*||)` with certified upper bounds on the functional norms.
pub fn auerbach_constant(b: &BasedSpace, ctx: &EvalCtx) -> Result<f64> {
    dual_basis(b)?;
    let duals = dual_functional_norms(&b.as_basis_space()?, ctx)?;
    Ok(b.norms().into_iter().chain(duals).fold(0.0, f64::max))
}

/// `iota(a_i) = b_i` in space coordinates.
pub fn comparison_map(a: &BasedSpace, b: &BasedSpace) -> Result<LinearMap> {
    if a.len() != b.len() {
        return Err(OpError::NotAuerbachComparable(a.len(), b.len()));
    }
    let inv = dual_basis(a)?.functionals;
    LinearMap::between(&a.space, &b.space, &b.tuple * inv)
}

/// `[lower, upper]` for `||iota||_n ||iota^{-1}||_n`.
pub fn dnb_interval(a: &BasedSpace, b: &BasedSpace, n: usize, ctx: &EvalCtx) -> Result<NormBound> {
    let f = comparison_map(a, b)?;
    let g = comparison_map(b, a)?;
    let bf = map_norm_bounds(&f, n, ctx)?;
    let bg = map_norm_bounds(&g, n, ctx)?;
    Ok(NormBound::new(
        bf.lower * bg.lower,
        bf.upper * bg.upper,
        Certificate::Derived {
            rule: "product of map-norm intervals".into(),
        },
    ))
}

/// Complete contractions `u: <a> -> M_n` given by their values on the tuple.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionPair {
    #[serde(with = "crate::json::cmat_vec")]
    pub u_images: Vec<CMat>,
    #[serde(with = "crate::json::cmat_vec")]
    pub v_images: Vec<CMat>,
    /// `true` when `u` acts on the first tuple.
    pub u_on_first: bool,
    pub value: f64,
}

impl ContractionPair {
    pub fn displacement(&self) -> f64 {
        self.u_images
            .iter()
            .zip(&self.v_images)
            .map(|(a, b)| spectral_norm(&(a - b)))
            .fold(0.0, f64::max)
    }
}

/// Joint embedding: coordinates of the images of the two tuples in `space`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingWitness {
    pub space: ConcreteSpace,
    #[serde(with = "crate::json::cmat")]
    pub left: CMat,
    #[serde(with = "crate::json::cmat")]
    pub right: CMat,
    /// Allowance for embeddings that are isometric only up to a certified defect.
    pub slack: f64,
    pub construction: String,
}

impl EmbeddingWitness {
    pub fn value(&self) -> f64 {
        let k = self.left.ncols();
        (0..k)
            .map(|i| {
                let d = self.left.column(i) - self.right.column(i);
                self.space.level_norm(&SpaceElement::scalar(d.as_slice()))
            })
            .fold(0.0, f64::max)
            + self.slack
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceReport {
    pub schema: String,
    pub level: usize,
    pub k: usize,
    pub d_lower: f64,
    pub d_upper: f64,
    pub dnb_interval: Option<NormBound>,
    pub lower_witness: Option<ContractionPair>,
    pub upper_witness: Option<EmbeddingWitness>,
}

fn pad(m: &CMat, n: usize) -> CMat {
    let mut out = CMat::zeros(n, n);
    let r = m.nrows().min(n);
    let cc = m.ncols().min(n);
    out.view_mut((0, 0), (r, cc)).copy_from(&m.view((0, 0), (r, cc)));
    out
}

/// Compressions `x -> V^* x_j W` by isometries, normed at the tuple and at random
/// combinations first, then random.
fn contraction_candidates(p: &BasedSpace, n: usize, count: usize, seed: u64) -> Vec<Vec<CMat>> {
    let vecs = p.vectors();
    let blocks = p.space.blocks().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let compress = |vw: &(usize, CMat, CMat)| -> Vec<CMat> {
        let (j, v, w) = vw;
        vecs.iter().map(|t| pad(&(v.adjoint() * &t[*j] * w), n)).collect()
    };
    let mut targets: Vec<MatrixTuple> = vecs.clone();
    for _ in 0..p.len() {
        let coeffs: Vec<_> = (0..p.len()).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let t: MatrixTuple = (0..blocks.len())
            .map(|j| {
                let mut acc = CMat::zeros(blocks[j], blocks[j]);
                for (i, v) in vecs.iter().enumerate() {
                    acc += &v[j] * coeffs[i];
                }
                acc
            })
            .collect();
        targets.push(t);
    }
    for t in &targets {
        for (j, &m) in blocks.iter().enumerate() {
            let r = m.min(n);
            let svd = t[j].clone().svd(true, true);
            let u = svd.u.unwrap();
            let vt = svd.v_t.unwrap();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let v = CMat::from_fn(m, r, |a, b| u[(a, order[b])]);
            let w = CMat::from_fn(m, r, |a, b| vt[(order[b], a)].conj());
            out.push(compress(&(j, v, w)));
        }
    }
    while out.len() < count.max(out.len() + 1) {
        let j = rng.random_range(0..blocks.len());
        let m = blocks[j];
        let r = m.min(n);
        let v = ginibre(&mut rng, m, r).qr().q();
        let w = ginibre(&mut rng, m, r).qr().q();
        out.push(compress(&(j, v, w)));
        if out.len() >= count {
            break;
        }
    }
    out
}

fn ambient_vectors(b: &BasedSpace) -> CMat {
    b.space.basis_matrix() * &b.tuple
}

/// `sup_u inf_v max_i ||u(p_i) - v(q_i)||` over the sampled `u`.
fn one_sided_lower(p: &BasedSpace, q: &BasedSpace, n: usize, ctx: &EvalCtx, u_on_first: bool) -> Option<ContractionPair> {
    let cands = contraction_candidates(p, n, ctx.budget.restarts.max(1), ctx.seed);
    let basis = ambient_vectors(q);
    let blocks = q.space.blocks().to_vec();
    let results: Vec<ContractionPair> = cands
        .par_iter()
        .map(|u| {
            let r = nearest_contraction(&blocks, n, &basis, u, &ctx.solver);
            ContractionPair {
                u_images: u.clone(),
                v_images: r.images,
                u_on_first,
                value: r.lower,
            }
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(j.cmp(i)))
        .map(|(_, r)| r)
}

/// Joint embedding with the two tuples side by side in the common ambient.
fn shared_ambient_witness(a: &BasedSpace, b: &BasedSpace) -> Option<EmbeddingWitness> {
    if a.space.ambient != b.space.ambient {
        return None;
    }
    let amb = a.space.ambient.clone();
    let mut vectors: Vec<MatrixTuple> = a.vectors();
    vectors.extend(b.vectors());
    let (basis, coords) = crate::amalgam::span_basis(&amb, &vectors);
    let space = make_space_labeled(amb, basis, "shared".into()).ok()?;
    let k = a.len();
    Some(EmbeddingWitness {
        space,
        left: coords.columns(0, k).into_owned(),
        right: coords.columns(k, k).into_owned(),
        slack: 0.0,
        construction: "shared ambient".into(),
    })
}

/// `a` and `b` in the infinity-sum of the two spaces.
fn direct_sum_witness(a: &BasedSpace, b: &BasedSpace) -> Result<EmbeddingWitness> {
    let amb = AmbientSignature(a.space.blocks().iter().chain(b.space.blocks()).cloned().collect());
    let za: Vec<CMat> = b.space.blocks().iter().map(|&m| CMat::zeros(m, m)).collect();
    let zb: Vec<CMat> = a.space.blocks().iter().map(|&m| CMat::zeros(m, m)).collect();
    let mut basis: Vec<MatrixTuple> = a.space.basis.iter().map(|t| t.iter().chain(&za).cloned().collect()).collect();
    basis.extend(b.space.basis.iter().map(|t| zb.iter().chain(t.iter()).cloned().collect()));
    let space = make_space_labeled(amb, basis, "sum".into())?;
    let (da, db) = (a.space.dim(), b.space.dim());
    let mut left = CMat::zeros(da + db, a.len());
    left.view_mut((0, 0), (da, a.len())).copy_from(&a.tuple);
    let mut right = CMat::zeros(da + db, b.len());
    right.view_mut((da, 0), (db, b.len())).copy_from(&b.tuple);
    Ok(EmbeddingWitness {
        space,
        left,
        right,
        slack: 0.0,
        construction: "direct sum".into(),
    })
}

/// Amalgam of `a` and `b` along `iota / ||iota||`.
fn amalgam_witness(a: &BasedSpace, b: &BasedSpace, ctx: &EvalCtx) -> Result<EmbeddingWitness> {
    let iota = comparison_map(a, b)?;
    let back = comparison_map(b, a)?;
    let l = map_norm_upper(&iota, usize::MAX, ctx)?.upper;
    let linv = map_norm_upper(&back, usize::MAX, ctx)?.upper;
    let d = a.space.dim();
    let f = &iota.coeffs * c(1.0 / l, 0.0);
    let mut delta = (l * linv - 1.0).max(0.0);
    let mut last = None;
    for _ in 0..3 {
        match extend_and_pair(&a.space, &CMat::identity(d, d), &b.space, &f, delta, ctx) {
            Ok(r) => {
                let na = a.norms();
                let nb = b.norms();
                let slack = (0..a.len())
                    .map(|i| r.isometry_defect0 * na[i] + r.isometry_defect1 * nb[i])
                    .fold(0.0, f64::max);
                return Ok(EmbeddingWitness {
                    left: &r.emb0.coeffs * &a.tuple,
                    right: &r.emb1.coeffs * &b.tuple,
                    space: r.amalgam,
                    slack,
                    construction: format!("amalgam along the comparison map, delta {delta:e}"),
                });
            }
            Err(e @ OpError::ExtensionFailure(_)) => {
                last = Some(e);
                delta = delta * (1.0 + 1e-6) + 1e-7;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn swap(w: EmbeddingWitness) -> EmbeddingWitness {
    EmbeddingWitness {
        left: w.right,
        right: w.left,
        ..w
    }
}

/// Smallest certified joint-embedding displacement among the constructions tried.
pub fn distance_upper(a: &BasedSpace, b: &BasedSpace, ctx: &EvalCtx) -> Result<EmbeddingWitness> {
    let mut cands = vec![direct_sum_witness(a, b)?];
    cands.extend(shared_ambient_witness(a, b));
    if let Ok(w) = amalgam_witness(a, b, ctx) {
        cands.push(w);
    }
    if let Ok(w) = amalgam_witness(b, a, ctx) {
        cands.push(swap(w));
    }
    Ok(cands
        .into_iter()
        .map(|w| (w.value(), w))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("direct sum candidate")
        .1)
}

/// Certified interval for the Fraïssé distance between the tuples as `M_n`-spaces.
pub fn fraisse_distance_bounds(a: &BasedSpace, b: &BasedSpace, n: usize, ctx: &EvalCtx) -> Result<DistanceReport> {
    if a.len() != b.len() {
        return Err(OpError::NotAuerbachComparable(a.len(), b.len()));
    }
    let k = a.len();
    if k == 0 {
        return Ok(DistanceReport {
            schema: crate::json::SCHEMA.into(),
            level: n,
            k,
            d_lower: 0.0,
            d_upper: 0.0,
            dnb_interval: None,
            lower_witness: None,
            upper_witness: None,
        });
    }
    let l1 = one_sided_lower(a, b, n, ctx, true);
    let l2 = one_sided_lower(b, a, n, ctx, false);
    let lower_witness = [l1, l2]
        .into_iter()
        .flatten()
        .max_by(|x, y| x.value.total_cmp(&y.value));
    let up = distance_upper(a, b, ctx)?;
    let d_upper = up.value();
    let d_lower = lower_witness.as_ref().map_or(0.0, |w| w.value).min(d_upper);
    let dnb = dnb_interval(a, b, n, ctx).ok();
    Ok(DistanceReport {
        schema: crate::json::SCHEMA.into(),
        level: n,
        k,
        d_lower,
        d_upper,
        dnb_interval: dnb,
        lower_witness,
        upper_witness: Some(up),
    })
}

/// Joins witnesses for `(a, b)` and `(b, c)` into one for `(a, c)` by amalgamating the two
/// joint spaces over the copies of `b`.
pub fn compose_witnesses(ab: &EmbeddingWitness, bc: &EmbeddingWitness, ctx: &EvalCtx) -> Result<EmbeddingWitness> {
    let r = extend_and_pair(&ab.space, &ab.right, &bc.space, &bc.left, 0.0, ctx)?;
    let b_norm = (0..ab.right.ncols())
        .map(|i| ab.space.level_norm(&SpaceElement::scalar(ab.right.column(i).as_slice())))
        .fold(0.0, f64::max);
    Ok(EmbeddingWitness {
        left: &r.emb0.coeffs * &ab.left,
        right: &r.emb1.coeffs * &bc.right,
        slack: ab.slack
            + bc.slack
            + r.agreement_defect * b_norm
            + r.isometry_defect0 * ab.value()
            + r.isometry_defect1 * bc.value(),
        space: r.amalgam,
        construction: "composition".into(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityReport {
    pub schema: String,
    pub level: usize,
    pub k: usize,
    pub auerbach: f64,
    pub d_lower: f64,
    pub d_upper: f64,
    pub dnb: NormBound,
    pub iota_upper: f64,
    /// `d_nb <= (1 + k N d)^2`.
    pub dnb_vs_distance: InequalityCheck,
    /// Worst sampled `| ||sum alpha a|| - ||sum alpha b|| | - d ||sum alpha e||_1`.
    pub bound_norm: InequalityCheck,
    pub samples: usize,
    /// `d <= N (d_nb - 1) + N |1 - 1 / ||iota|||`.
    pub distance_vs_dnb: InequalityCheck,
    /// `d <= d_nb - 1` as literally stated; reported, not asserted.
    pub literal_distance_vs_dnb: InequalityCheck,
    pub slack: f64,
    pub all_hold: bool,
}

pub fn inequality_suite(
    a: &BasedSpace,
    b: &BasedSpace,
    n: usize,
    samples: usize,
    slack: f64,
    ctx: &EvalCtx,
) -> Result<InequalityReport> {
    if a.len() != b.len() {
        return Err(OpError::NotAuerbachComparable(a.len(), b.len()));
    }
    let k = a.len();
    let nn = a.auerbach_bound.max(b.auerbach_bound);
    let up = distance_upper(a, b, ctx)?;
    let d_upper = up.value();
    let dnb = dnb_interval(a, b, n, ctx)?;
    let iota_upper = map_norm_upper(&comparison_map(a, b)?, n, ctx)?.upper;
    let rhs = (1.0 + k as f64 * nn * d_upper).powi(2);
    let c1 = InequalityCheck {
        lhs: dnb.upper,
        rhs,
        holds: dnb.upper <= rhs + slack,
    };
    let l1 = build_l1(k, n);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5eed);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = (0.0, 0.0);
    for _ in 0..samples {
        let alpha = SpaceElement::random(&mut rng, k, n);
        let na = a.space.level_norm(&a.combine(&alpha));
        let nb = b.space.level_norm(&b.combine(&alpha));
        let e = l1.norm_bounds(&alpha, ctx)?.upper;
        let excess = (na - nb).abs() - d_upper * e;
        if excess > worst {
            worst = excess;
            worst_pair = ((na - nb).abs(), d_upper * e);
        }
    }
    let c2 = InequalityCheck {
        lhs: worst_pair.0,
        rhs: worst_pair.1,
        holds: samples == 0 || worst <= slack,
    };
    let rhs3 = nn * (dnb.upper - 1.0) + nn * (1.0 - 1.0 / iota_upper).abs();
    let c3 = InequalityCheck {
        lhs: d_upper,
        rhs: rhs3,
        holds: d_upper <= rhs3 + slack,
    };
    let report = fraisse_lower_only(a, b, n, ctx);
    let c4 = InequalityCheck {
        lhs: report,
        rhs: dnb.upper - 1.0,
        holds: report <= dnb.upper - 1.0 + slack,
    };
    let all_hold = c1.holds && c2.holds && c3.holds;
    Ok(InequalityReport {
        schema: crate::json::SCHEMA.into(),
        level: n,
        k,
        auerbach: nn,
        d_lower: report,
        d_upper,
        dnb,
        iota_upper,
        dnb_vs_distance: c1,
        bound_norm: c2,
        samples,
        distance_vs_dnb: c3,
        literal_distance_vs_dnb: c4,
        slack,
        all_hold,
    })
}

fn fraisse_lower_only(a: &BasedSpace, b: &BasedSpace, n: usize, ctx: &EvalCtx) -> f64 {
    let small = ctx.with_budget(crate::ctx::Budget::new(ctx.budget.restarts.min(4), ctx.budget.iterations));
    [one_sided_lower(a, b, n, &small, true), one_sided_lower(b, a, n, &small, false)]
        .into_iter()
        .flatten()
        .map(|w| w.value)
        .fold(0.0, f64::max)
}

/// A one-dimensional based space whose vector has norm `r`.
pub fn line(r: f64, ambient: &[usize], seed: u64, ctx: &EvalCtx) -> Result<BasedSpace> {
    let amb = AmbientSignature(ambient.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: MatrixTuple = amb.blocks().iter().map(|&m| ginibre(&mut rng, m, m)).collect();
    let s = make_space_labeled(amb, vec![t], "line".into())?;
    let norm = s.level_norm(&SpaceElement::scalar(&[c(1.0, 0.0)]));
    BasedSpace::new(s, CMat::from_element(1, 1, c(r / norm, 0.0)), ctx)
}

/// Canonical based space of a concrete space.
pub fn from_space(space: Arc<Space>, ctx: &EvalCtx) -> Result<BasedSpace> {
    let s = space
        .as_concrete()
        .ok_or_else(|| OpError::Invalid("based spaces are concrete".into()))?;
    BasedSpace::canonical(s.clone(), ctx)
}
