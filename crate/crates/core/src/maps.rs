//! Linear maps between spaces and certified bounds on their n-norms and cb-norms.

use crate::bound::{Certificate, NormBound, Witness};
use crate::ctx::EvalCtx;
use crate::derived::Space;
use crate::error::{OpError, Result};
use crate::linalg::{c, ginibre, unit, CMat, CVec, ONE, ZERO};
use crate::sdp::extension::min_cb_extension;
use crate::sdp::SolveStatus;
use crate::space::{ConcreteSpace, MatrixTuple, SpaceElement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct LinearMap {
    pub domain: Arc<Space>,
    pub codomain: Arc<Space>,
    /// `dim codomain x dim domain`, acting on basis coordinates.
    pub coeffs: CMat,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    domain: String,
    codomain: String,
    #[serde(with = "crate::json::cmat")]
    coefficients: CMat,
}

fn space_label(s: &Space) -> String {
    match s {
        Space::Concrete(c) => c.label.clone(),
        other => other.kind().to_string(),
    }
}

impl LinearMap {
    pub fn new(domain: Arc<Space>, codomain: Arc<Space>, coeffs: CMat) -> Result<Self> {
        if coeffs.shape() != (codomain.dim(), domain.dim()) {
            return Err(OpError::DimensionMismatch(format!(
                "coefficients {:?}, expected {:?}",
                coeffs.shape(),
                (codomain.dim(), domain.dim())
            )));
        }
        if coeffs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(OpError::Invalid("non-finite coefficient".into()));
        }
        Ok(LinearMap {
            domain,
            codomain,
            coeffs,
        })
    }

    pub fn between(domain: &ConcreteSpace, codomain: &ConcreteSpace, coeffs: CMat) -> Result<Self> {
        Self::new(
            Arc::new(Space::Concrete(domain.clone())),
            Arc::new(Space::Concrete(codomain.clone())),
            coeffs,
        )
    }

    pub fn identity(space: Arc<Space>) -> Self {
        let d = space.dim();
        LinearMap {
            domain: space.clone(),
            codomain: space,
            coeffs: CMat::identity(d, d),
        }
    }

    /// `(id_{M_k} (x) f)(x)`.
    pub fn amplify(&self, x: &SpaceElement) -> SpaceElement {
        x.transform(&self.coeffs)
    }

    pub fn scaled(&self, t: f64) -> LinearMap {
        LinearMap {
            coeffs: &self.coeffs * c(t, 0.0),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MapFile {
            domain: space_label(&self.domain),
            codomain: space_label(&self.codomain),
            coefficients: self.coeffs.clone(),
        })
        .expect("map serializes")
    }

    pub fn from_json(s: &str, domain: Arc<Space>, codomain: Arc<Space>) -> Result<Self> {
        let f: MapFile = serde_json::from_str(s).map_err(|e| OpError::Invalid(e.to_string()))?;
        Self::new(domain, codomain, f.coefficients)
    }

    /// Images of the domain basis as ambient tuples of a concrete codomain.
    pub fn image_tuples(&self) -> Option<Vec<MatrixTuple>> {
        let cod = self.codomain.as_concrete()?;
        Some(
            (0..self.coeffs.ncols())
                .map(|i| cod.tuple_of(&self.coeffs.column(i).into_owned()))
                .collect(),
        )
    }
}

/// `g o f`.
pub fn compose(g: &LinearMap, f: &LinearMap) -> Result<LinearMap> {
    if g.coeffs.ncols() != f.coeffs.nrows() {
        return Err(OpError::DimensionMismatch(format!(
            "cannot compose {}x{} after {}x{}",
            g.coeffs.nrows(),
            g.coeffs.ncols(),
            f.coeffs.nrows(),
            f.coeffs.ncols()
        )));
    }
    Ok(LinearMap {
        domain: f.domain.clone(),
        codomain: g.codomain.clone(),
        coeffs: &g.coeffs * &f.coeffs,
    })
}

/// Concrete subspace of `space` spanned by the columns of `sub` (domain coordinates).
pub fn subspace(space: &ConcreteSpace, sub: &CMat, label: &str) -> Result<ConcreteSpace> {
    if sub.nrows() != space.dim() {
        return Err(OpError::DimensionMismatch("subspace coordinates".into()));
    }
    let basis = (0..sub.ncols())
        .map(|i| space.tuple_of(&sub.column(i).into_owned()))
        .collect();
    crate::space::make_space_labeled(space.ambient.clone(), basis, label.to_string())
}

/// `f` restricted to the span of the columns of `sub`; the new domain has those columns
/// as its basis.
pub fn restrict(f: &LinearMap, sub: &CMat) -> Result<LinearMap> {
    let dom = f
        .domain
        .as_concrete()
        .ok_or_else(|| OpError::Invalid("restriction needs a concrete domain".into()))?;
    let s = subspace(dom, sub, &format!("{}|sub", dom.label))?;
    LinearMap::new(Arc::new(Space::Concrete(s)), f.codomain.clone(), &f.coeffs * sub)
}

/// Inclusion of a subspace given by coordinate columns.
pub fn inclusion(space: &ConcreteSpace, sub: &CMat) -> Result<LinearMap> {
    let s = subspace(space, sub, &format!("{}|sub", space.label))?;
    LinearMap::between(&s, space, sub.clone())
}

/// The image of `f` as a concrete space with basis `f(b_i)`.
pub fn range_space(f: &LinearMap) -> Result<ConcreteSpace> {
    check_injective(&f.coeffs)?;
    let cod = f
        .codomain
        .as_concrete()
        .ok_or_else(|| OpError::Invalid("range needs a concrete codomain".into()))?;
    subspace(cod, &f.coeffs, &format!("range({})", cod.label))
}

fn check_injective(a: &CMat) -> Result<()> {
    if a.ncols() == 0 {
        return Ok(());
    }
    let smin = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if a.nrows() < a.ncols() || smin <= 1e-10 {
        return Err(OpError::NotInjective(if a.nrows() < a.ncols() { 0.0 } else { smin }));
    }
    Ok(())
}

/// `f^{-1}` on its range; the range carries the basis `f(b_i)`, so the coefficients are
/// the identity.
pub fn inverse_on_range(f: &LinearMap) -> Result<LinearMap> {
    let r = range_space(f)?;
    let d = f.domain.dim();
    LinearMap::new(Arc::new(Space::Concrete(r)), f.domain.clone(), CMat::identity(d, d))
}

/// `f` with its codomain cut down to its range.
pub fn corestrict(f: &LinearMap) -> Result<LinearMap> {
    let r = range_space(f)?;
    let d = f.domain.dim();
    LinearMap::new(f.domain.clone(), Arc::new(Space::Concrete(r)), CMat::identity(d, d))
}

// ---------------------------------------------------------------------------
// lower bounds

/// Gradient of the blockwise Schatten-p surrogate `(sum_j ||A_j||_p^p)^{1/p}` with respect
/// to the coefficients, together with the surrogate value.
fn surrogate_grad(space: &ConcreteSpace, x: &SpaceElement, p: f64) -> (f64, Vec<CMat>) {
    let k = x.level;
    let blocks = space.element_blocks(x);
    let svds: Vec<_> = blocks.iter().map(|b| b.clone().svd(true, true)).collect();
    let smax = svds
        .iter()
        .flat_map(|s| s.singular_values.iter().cloned())
        .fold(0.0f64, f64::max);
    let mut grads = vec![CMat::zeros(k, k); x.dim()];
    if smax == 0.0 {
        return (0.0, grads);
    }
    let mut total = 0.0;
    for s in &svds {
        total += s.singular_values.iter().map(|v| (v / smax).powf(p)).sum::<f64>();
    }
    let value = smax * total.powf(1.0 / p);
    for (j, s) in svds.iter().enumerate() {
        let m = space.blocks()[j];
        let u = s.u.as_ref().expect("u");
        let vt = s.v_t.as_ref().expect("v");
        let w: Vec<f64> = s
            .singular_values
            .iter()
            .map(|v| (v / smax).powf(p - 1.0) / total.powf(1.0 - 1.0 / p))
            .collect();
        let mut gam = CMat::zeros(k * m, k * m);
        for (i, &wi) in w.iter().enumerate() {
            if wi > 1e-300 {
                gam += u.column(i) * vt.row(i) * c(wi, 0.0);
            }
        }
        accumulate_block_grad(space, j, &gam, &mut grads);
    }
    (value, grads)
}

/// Adds `d/d alpha_i Re tr(gam^* A_j)` to `grads`.
fn accumulate_block_grad(space: &ConcreteSpace, j: usize, gam: &CMat, grads: &mut [CMat]) {
    let m = space.blocks()[j];
    let k = gam.nrows() / m;
    for (i, b) in space.basis.iter().enumerate() {
        let bj = &b[j];
        if bj.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        let g = &mut grads[i];
        for pp in 0..k {
            for qq in 0..k {
                let mut acc = ZERO;
                for r in 0..m {
                    for s2 in 0..m {
                        acc += gam[(pp * m + r, qq * m + s2)] * bj[(r, s2)].conj();
                    }
                }
                g[(pp, qq)] += acc;
            }
        }
    }
}

/// One linearize-and-solve step: with `(u, v)` the top singular pair of the largest
/// codomain block of `f(x)`, minimize `||y||` over `Re <u, f(y) v> = 1`. The minimizer
/// `y` satisfies `||f(y)|| / ||y|| >= 1 / ||y||`.
fn polish_step(b: &Blocky, f: &CMat, x: &SpaceElement, ctx: &EvalCtx) -> Option<SpaceElement> {
    let k = x.level;
    let d = x.dim();
    let fx = x.transform(f);
    let blocks = b.cod.element_blocks(&fx);
    let (j, _) = blocks
        .iter()
        .enumerate()
        .map(|(j, m)| (j, crate::linalg::spectral_norm(m)))
        .fold((0, -1.0), |a, c| if c.1 > a.1 { c } else { a });
    let (_, u, v) = crate::linalg::top_singular(&blocks[j]);
    let gam = &u * v.adjoint();
    let mut gc = vec![CMat::zeros(k, k); b.cod.dim()];
    accumulate_block_grad(b.cod, j, &gam, &mut gc);
    let g = SpaceElement { level: k, coeffs: gc }.transform(&f.adjoint());
    // real coordinates: (re, im) of every coefficient entry
    let n = 2 * k * k * d;
    let mut gv = nalgebra::DVector::<f64>::zeros(n);
    for i in 0..d {
        for e in 0..k * k {
            let z = g.coeffs[i][(e / k, e % k)];
            gv[2 * (i * k * k + e)] = z.re;
            gv[2 * (i * k * k + e) + 1] = z.im;
        }
    }
    let gn = gv.norm();
    if gn < 1e-14 || n < 2 {
        return None;
    }
    let to_elem = |r: &nalgebra::DVector<f64>| SpaceElement {
        level: k,
        coeffs: (0..d)
            .map(|i| {
                CMat::from_fn(k, k, |p, q| {
                    let o = 2 * (i * k * k + p * k + q);
                    c(r[o], r[o + 1])
                })
            })
            .collect(),
    };
    let y0 = &gv / (gn * gn);
    // Householder reflection mapping e_1 to g/|g|; its other columns span g^perp
    let mut w = &gv / gn;
    w[0] -= 1.0;
    let wn = w.norm();
    let h = if wn < 1e-14 {
        nalgebra::DMatrix::<f64>::identity(n, n)
    } else {
        let w = w / wn;
        nalgebra::DMatrix::<f64>::identity(n, n) - &w * w.transpose() * 2.0
    };
    let dirs: Vec<SpaceElement> = (1..n).map(|r| to_elem(&h.column(r).into_owned())).collect();
    let base = to_elem(&y0);
    let mut prog = crate::sdp::SpectralProgram::new(n - 1);
    for jj in 0..b.dom.blocks().len() {
        prog.add_block(
            b.dom.element_block(&base, jj),
            dirs.iter().map(|e| b.dom.element_block(e, jj)).collect(),
        );
    }
    let r = crate::sdp::solve_spectral_min_with(&prog, &ctx.solver);
    if !r.value.is_finite() {
        return None;
    }
    let mut y = base;
    for (t, e) in r.primal.iter().zip(&dirs) {
        y = y.add(&e.scale(c(*t, 0.0)));
    }
    Some(y)
}

/// Up to `rounds` polishing steps, keeping the best exact ratio.
fn polish(b: &Blocky, f: &CMat, x: SpaceElement, rounds: usize, ctx: &EvalCtx) -> (f64, SpaceElement) {
    let mut best = (b.ratio(f, &x), x);
    for _ in 0..rounds {
        match polish_step(b, f, &best.1, ctx) {
            Some(y) => {
                let r = b.ratio(f, &y);
                if r > best.0 * (1.0 + 1e-13) {
                    best = (r, y);
                } else {
                    break;
                }
            }
            None => break,
        }
    }
    best
}

struct Blocky<'a> {
    dom: &'a ConcreteSpace,
    dscale: f64,
    cod: &'a ConcreteSpace,
    cscale: f64,
}

impl Blocky<'_> {
    fn ratio(&self, f: &CMat, x: &SpaceElement) -> f64 {
        let nx = self.dscale * self.dom.level_norm(x);
        if nx <= 0.0 {
            return 0.0;
        }
        self.cscale * self.cod.level_norm(&x.transform(f)) / nx
    }
}

fn fro(x: &SpaceElement) -> f64 {
    x.coeffs.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt()
}

/// Smoothed log-ratio ascent from `x0`; returns the best exact ratio seen and its element.
fn ascend(b: &Blocky, f: &CMat, x0: SpaceElement, iterations: usize) -> (f64, SpaceElement) {
    let fh = f.adjoint();
    let mut x = x0;
    let mut best = (b.ratio(f, &x), x.clone());
    if iterations == 0 || fro(&x) == 0.0 {
        return best;
    }
    let stages = [4.0, 8.0, 16.0, 32.0, 64.0, 256.0, 1024.0];
    let per = (iterations / stages.len()).max(1);
    let objective = |x: &SpaceElement, p: f64| -> (f64, Vec<CMat>) {
        let (nd, gd) = surrogate_grad(b.dom, x, p);
        let fx = x.transform(f);
        let (nc, gc) = surrogate_grad(b.cod, &fx, p);
        if nd <= 0.0 || nc <= 0.0 {
            return (f64::NEG_INFINITY, vec![]);
        }
        let pull = SpaceElement { level: x.level, coeffs: gc }.transform(&fh);
        let g = pull
            .coeffs
            .iter()
            .zip(&gd)
            .map(|(a, d)| a * c(1.0 / nc, 0.0) - d * c(1.0 / nd, 0.0))
            .collect();
        (nc.ln() - nd.ln(), g)
    };
    for &p in &stages {
        let mut step = 0.5;
        let (mut val, mut grad) = objective(&x, p);
        if grad.is_empty() {
            break;
        }
        for _ in 0..per {
            let scale = fro(&x);
            let gn = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
            if gn < 1e-14 {
                break;
            }
            let mut accepted = false;
            for _ in 0..30 {
                let t = step * scale / gn;
                let cand = SpaceElement {
                    level: x.level,
                    coeffs: x.coeffs.iter().zip(&grad).map(|(a, g)| a + g * c(t, 0.0)).collect(),
                };
                let (v2, g2) = objective(&cand, p);
                if v2 > val {
                    let s = 1.0 / fro(&cand);
                    x = cand.scale(c(s, 0.0));
                    val = v2;
                    grad = g2.into_iter().map(|g| g * c(1.0 / s, 0.0)).collect();
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            let r = b.ratio(f, &x);
            if r > best.0 {
                best = (r, x.clone());
            }
        }
    }
    best
}

/// Embeds `alpha` (size `j <= k`) in the top-left corner of a `k x k` matrix.
fn pad(alpha: &CMat, k: usize) -> CMat {
    let mut out = CMat::zeros(k, k);
    out.view_mut((0, 0), alpha.shape()).copy_from(alpha);
    out
}

fn pad_element(x: &SpaceElement, k: usize) -> SpaceElement {
    SpaceElement {
        level: k,
        coeffs: x.coeffs.iter().map(|a| pad(a, k)).collect(),
    }
}

/// Structured starting points: matrix-unit elements of each ambient block projected onto
/// the space, their transposes, basis vectors and phase patterns.
fn seeds(space: &Space, k: usize, rng: &mut ChaCha8Rng) -> Vec<SpaceElement> {
    let d = space.dim();
    let mut out = Vec::new();
    if let Some((cs, _)) = space.as_scaled_concrete() {
        for (j, &m) in cs.blocks().iter().enumerate() {
            let mm = m.min(k);
            for swap in [false, true] {
                let mut coeffs = vec![CMat::zeros(k, k); d];
                for a in 0..mm {
                    for b in 0..mm {
                        let mut t: MatrixTuple = cs.blocks().iter().map(|&q| CMat::zeros(q, q)).collect();
                        t[j][(a, b)] = ONE;
                        let (coords, _) = cs.coordinates_of(&t);
                        let (p, q) = if swap { (b, a) } else { (a, b) };
                        for i in 0..d {
                            coeffs[i][(p, q)] += coords[i].conj();
                        }
                    }
                }
                let x = SpaceElement { level: k, coeffs };
                if fro(&x) > 1e-12 {
                    out.push(x);
                }
            }
        }
    }
    for i in 0..d {
        out.push(SpaceElement::single(d, i, CMat::identity(k, k)));
    }
    let phases = [ONE, c(-1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0)];
    if d <= 4 {
        let total = 4usize.pow(d as u32);
        for code in 0..total {
            let mut cc = code;
            let coords: Vec<_> = (0..d)
                .map(|_| {
                    let p = phases[cc % 4];
                    cc /= 4;
                    p
                })
                .collect();
            if coords[0] == ONE {
                out.push(pad_element(&SpaceElement::scalar(&coords), k));
            }
        }
    } else {
        for _ in 0..16 {
            let coords: Vec<_> = (0..d).map(|_| phases[rng.random_range(0..4)]).collect();
            out.push(pad_element(&SpaceElement::scalar(&coords), k));
        }
    }
    out
}

/// Certified lower bound on `||f||_k` with the witness element; the upper endpoint is
/// left at `+inf`.
pub fn map_norm_lower(f: &LinearMap, k: usize, ctx: &EvalCtx) -> Result<NormBound> {
    if k == 0 {
        return Err(OpError::Invalid("level must be at least 1".into()));
    }
    for s in [&f.domain, &f.codomain] {
        if let Some(cap) = s.level_cap() {
            if k > cap {
                return Err(OpError::LevelExceeded { level: k, cap });
            }
        }
    }
    let d = f.domain.dim();
    if d == 0 || f.coeffs.iter().all(|z| z.norm() == 0.0) {
        return Ok(NormBound::lower_only(0.0, None));
    }
    // best witness from the level below, padded
    let mut best: (f64, Option<SpaceElement>) = (0.0, None);
    if k > 1 {
        let prev = map_norm_lower(f, k - 1, ctx)?;
        if let Some(w) = prev.lower_witness {
            let x = SpaceElement { level: w.level, coeffs: w.coefficients };
            best = (prev.lower, Some(pad_element(&x, k)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.fork(k as u64).seed);
    let mut starts = seeds(&f.domain, k, &mut rng);
    if let Some(x) = &best.1 {
        starts.insert(0, x.clone());
    }
    let restarts = ctx.budget.restarts.max(1);
    for _ in 0..restarts {
        starts.push(SpaceElement::random(&mut rng, d, k));
    }
    let blocky = match (f.domain.as_scaled_concrete(), f.codomain.as_scaled_concrete()) {
        (Some((dom, dscale)), Some((cod, cscale))) => Some(Blocky { dom, dscale, cod, cscale }),
        _ => None,
    };
    let results: Vec<(f64, SpaceElement)> = match &blocky {
        Some(b) => {
            // evaluate every start, ascend from the most promising ones
            let mut scored: Vec<(f64, usize)> = starts
                .iter()
                .enumerate()
                .map(|(i, x)| (b.ratio(&f.coeffs, x), i))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut chosen: Vec<usize> = scored.iter().take(restarts).map(|s| s.1).collect();
            chosen.sort_unstable();
            let iters = ctx.budget.iterations;
            let mut out: Vec<(f64, SpaceElement)> = chosen
                .par_iter()
                .map(|&i| ascend(b, &f.coeffs, starts[i].clone(), iters))
                .collect();
            out.extend(scored.iter().map(|&(v, i)| (v, starts[i].clone())));
            if 2 * k * k * d <= 400 {
                let top = out
                    .iter()
                    .enumerate()
                    .fold(None::<(f64, usize)>, |a, (i, (v, _))| match a {
                        Some((bv, _)) if bv >= *v => a,
                        _ => Some((*v, i)),
                    });
                if let Some((_, i)) = top {
                    let p = polish(b, &f.coeffs, out[i].1.clone(), 4, ctx);
                    out.push(p);
                }
            }
            out
        }
        None => {
            let take = restarts.min(starts.len()).max(8.min(starts.len()));
            starts
                .iter()
                .take(take)
                .map(|x| {
                    let nx = f.domain.norm_bounds(x, ctx)?.upper;
                    let nf = f.codomain.norm_bounds(&f.amplify(x), ctx)?.lower;
                    Ok((if nx > 0.0 { nf / nx } else { 0.0 }, x.clone()))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    for (v, x) in results {
        if v > best.0 + 1e-15 {
            best = (v, Some(x));
        }
    }
    let witness = best.1.map(|x| Witness {
        level: k,
        coefficients: x.coeffs,
        value: best.0,
    });
    Ok(NormBound::lower_only(best.0, witness))
}

/// Recomputes the ratio certified by a witness.
pub fn witness_ratio(f: &LinearMap, w: &Witness, ctx: &EvalCtx) -> Result<f64> {
    let x = SpaceElement { level: w.level, coeffs: w.coefficients.clone() };
    let nx = f.domain.norm_bounds(&x, ctx)?.upper;
    let nf = f.codomain.norm_bounds(&f.amplify(&x), ctx)?.lower;
    Ok(if nx > 0.0 { nf / nx } else { 0.0 })
}

// ---------------------------------------------------------------------------
// upper bounds

/// Upper bound on the cb-norm of `x -> f(x)_j` for every ambient block `j` of a concrete
/// codomain, from extension programs over a concrete domain.
pub fn blockwise_cb_upper(
    dom: &ConcreteSpace,
    cod: &ConcreteSpace,
    coeffs: &CMat,
    blocks: Option<&[usize]>,
    ctx: &EvalCtx,
) -> Result<Vec<f64>> {
    let basis = dom.basis_matrix();
    let all: Vec<usize> = (0..cod.blocks().len()).collect();
    let which = blocks.unwrap_or(&all);
    let images: Vec<MatrixTuple> = (0..coeffs.ncols())
        .map(|i| cod.tuple_of(&coeffs.column(i).into_owned()))
        .collect();
    which
        .par_iter()
        .map(|&j| {
            let m = cod.blocks()[j];
            let imgs: Vec<CMat> = images.iter().map(|t| t[j].clone()).collect();
            let scale = imgs
                .iter()
                .flat_map(|a| a.iter().map(|z| z.norm()))
                .fold(0.0f64, f64::max);
            if scale == 0.0 {
                return Ok(0.0);
            }
            let imgs: Vec<CMat> = imgs.iter().map(|a| a * c(1.0 / scale, 0.0)).collect();
            let mut cert = min_cb_extension(dom.blocks(), m, &basis, &imgs, &ctx.solver);
            cert.upper *= scale;
            cert.dual_bound *= scale;
            if !cert.upper.is_finite() {
                return Err(OpError::SolverFailure(format!("extension program for block {j}: {:?}", cert.status)));
            }
            if cert.status == SolveStatus::Failure && cert.upper > 2.0 * cert.dual_bound.max(1e-12) + 1e-6 {
                return Err(OpError::SolverFailure(format!(
                    "extension program for block {j} left gap {:e}",
                    cert.upper - cert.dual_bound
                )));
            }
            Ok(cert.upper)
        })
        .collect()
}

/// Ambient dimension above which extension programs run on a block subset.
pub const LARGE_AMBIENT: usize = 48;

/// The space projected onto a subset of its ambient blocks.
pub fn project_blocks(space: &ConcreteSpace, subset: &[usize]) -> Result<ConcreteSpace> {
    let amb: Vec<usize> = subset.iter().map(|&j| space.blocks()[j]).collect();
    let basis = space
        .basis
        .iter()
        .map(|t| subset.iter().map(|&j| t[j].clone()).collect())
        .collect();
    crate::space::make_space_labeled(crate::space::AmbientSignature(amb), basis, format!("{}|blocks", space.label))
}

/// Smaller copies of `space` on which a block projection is still injective, best
/// conditioned first. The projection is a complete contraction, so any bound for a map
/// on a copy bounds the map on `space`.
pub fn reduced_domains(space: &ConcreteSpace, max_ambient: usize, count: usize) -> Vec<ConcreteSpace> {
    if space.ambient.dim() <= max_ambient {
        return Vec::new();
    }
    let d = space.dim();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for j in 0..space.blocks().len() {
        if let Ok(s) = project_blocks(space, &[j]) {
            let sv = s.basis_matrix().svd(false, false).singular_values;
            if sv.len() == d {
                scored.push((sv.iter().cloned().fold(f64::INFINITY, f64::min), j));
            }
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<ConcreteSpace> = scored
        .iter()
        .take(count)
        .filter_map(|&(_, j)| project_blocks(space, &[j]).ok())
        .collect();
    if out.is_empty() {
        let mut order: Vec<usize> = (0..space.blocks().len()).collect();
        order.sort_by_key(|&j| (space.blocks()[j], j));
        let mut subset = Vec::new();
        for &j in &order {
            subset.push(j);
            subset.sort_unstable();
            if let Ok(s) = project_blocks(space, &subset) {
                if s.ambient.dim() < space.ambient.dim() {
                    out.push(s);
                }
                break;
            }
        }
    }
    out
}

/// Certified upper bound on `||f||_k`.
pub fn map_norm_upper(f: &LinearMap, k: usize, ctx: &EvalCtx) -> Result<NormBound> {
    let (v, cert) = upper_rec(&f.domain, &f.codomain, &f.coeffs, k, ctx)?;
    Ok(NormBound::new(0.0, v, cert))
}

fn is_zero(a: &CMat) -> bool {
    a.iter().all(|z| z.norm() == 0.0)
}

fn upper_rec(dom: &Space, cod: &Space, f: &CMat, k: usize, ctx: &EvalCtx) -> Result<(f64, Certificate)> {
    if is_zero(f) {
        return Ok((0.0, Certificate::Exact));
    }
    match (dom, cod) {
        (Space::Concrete(d), Space::Concrete(cs)) => {
            let reduced = reduced_domains(d, LARGE_AMBIENT, 3);
            let vals = if reduced.is_empty() {
                blockwise_cb_upper(d, cs, f, None, ctx)?
            } else {
                let mut best: Option<Vec<f64>> = None;
                for r in &reduced {
                    let v = blockwise_cb_upper(r, cs, f, None, ctx)?;
                    let mx = v.iter().cloned().fold(0.0, f64::max);
                    if best.as_ref().map_or(true, |b| mx < b.iter().cloned().fold(0.0, f64::max)) {
                        best = Some(v);
                    }
                }
                best.unwrap()
            };
            let v = vals.iter().cloned().fold(0.0, f64::max);
            Ok((v, Certificate::Extension { block_values: vals }))
        }
        (Space::Scaled { parent, delta }, _) => {
            let (v, c) = upper_rec(parent, cod, f, k, ctx)?;
            Ok((v / delta, c))
        }
        (_, Space::Scaled { parent, delta }) => {
            let (v, c) = upper_rec(dom, parent, f, k, ctx)?;
            Ok((v * delta, c))
        }
        (Space::Quotient { parent, complement, .. }, _) => {
            // f o q, with q the coordinate projection W^*
            upper_rec(parent, cod, &(f * complement.adjoint()), k, ctx)
        }
        (Space::L1 { k: kk, .. }, _) => {
            let mut v = 0.0f64;
            for i in 0..*kk {
                let y = SpaceElement::scalar(f.column(i).as_slice());
                v = v.max(cod.norm_bounds(&y, ctx)?.upper);
            }
            Ok((v, Certificate::Derived { rule: "l1_domain".into() }))
        }
        (Space::OneSum { summands, .. }, _) => {
            let mut v = 0.0f64;
            let mut start = 0;
            for s in summands {
                let fs = f.columns(start, s.dim()).into_owned();
                v = v.max(upper_rec(s, cod, &fs, k, ctx)?.0);
                start += s.dim();
            }
            Ok((v, Certificate::Derived { rule: "one_sum_domain".into() }))
        }
        (Space::MinQuant { parent, n }, _) => {
            let small = k <= *n
                || cod
                    .as_concrete()
                    .map(|cs| cs.ambient.max_block() <= *n)
                    .unwrap_or(false);
            if small {
                upper_rec(parent, cod, f, k, ctx)
            } else {
                Ok((f64::INFINITY, Certificate::Unbounded))
            }
        }
        (_, Space::MinQuant { parent, n }) => upper_rec(dom, parent, f, k.max(*n), ctx),
        (_, Space::Quotient { parent, complement, .. }) => upper_rec(dom, parent, &(complement * f), k, ctx),
        (_, Space::L1 { k: kk, .. }) => {
            let mut v = 0.0;
            for i in 0..*kk {
                let fi = f.rows(i, 1).into_owned();
                v += upper_rec(dom, &Space::Concrete(crate::space::build_linfty(1)), &fi, k, ctx)?.0;
            }
            Ok((v, Certificate::Triangle))
        }
        (_, Space::OneSum { summands, .. }) => {
            let mut v = 0.0;
            let mut start = 0;
            for s in summands {
                let fs = f.rows(start, s.dim()).into_owned();
                v += upper_rec(dom, s, &fs, k, ctx)?.0;
                start += s.dim();
            }
            Ok((v, Certificate::Triangle))
        }
    }
}

/// cb-norm upper bounds of the coordinate functionals `b_i^*` of a concrete space.
pub fn dual_functional_norms(space: &ConcreteSpace, ctx: &EvalCtx) -> Result<Vec<f64>> {
    let d = space.dim();
    let scalar = Space::Concrete(crate::space::build_linfty(1));
    let dom = Space::Concrete(space.clone());
    (0..d)
        .map(|i| {
            let row = CMat::from_fn(1, d, |_, j| if i == j { ONE } else { ZERO });
            Ok(upper_rec(&dom, &scalar, &row, usize::MAX, ctx)?.0)
        })
        .collect()
}

/// `sum_i ||b_i^*||_cb ||f(b_i)||`, an upper bound on `||f||_cb` that stays accurate for
/// maps of tiny norm.
pub fn triangle_upper(f: &LinearMap, duals: &[f64], ctx: &EvalCtx) -> Result<f64> {
    let d = f.coeffs.ncols();
    let mut total = 0.0;
    for i in 0..d {
        let y = SpaceElement::scalar(f.coeffs.column(i).as_slice());
        if y.coeffs.iter().all(|a| a[(0, 0)].norm() == 0.0) {
            continue;
        }
        total += duals[i] * f.codomain.norm_bounds(&y, ctx)?.upper;
    }
    Ok(total)
}

/// `[lower, upper]` for `||f||_k`.
pub fn map_norm_bounds(f: &LinearMap, k: usize, ctx: &EvalCtx) -> Result<NormBound> {
    let lo = map_norm_lower(f, k, ctx)?;
    let up = map_norm_upper(f, k, ctx)?;
    Ok(combine(lo, up))
}

fn combine(lo: NormBound, up: NormBound) -> NormBound {
    let mut b = NormBound::new(lo.lower, up.upper, up.upper_certificate);
    b.lower_witness = lo.lower_witness;
    b
}

/// Level at which the cb-norm is attained for maps into the codomain, if bounded.
pub fn smith_level(cod: &Space) -> Option<usize> {
    match cod {
        Space::Concrete(c) => Some(c.ambient.max_block()),
        Space::Scaled { parent, .. } => smith_level(parent),
        Space::MinQuant { n, .. } => Some(*n),
        Space::L1 { .. } => Some(1),
        _ => None,
    }
}

/// `[lower, upper]` for `||f||_cb`. The lower endpoint is taken at the codomain's Smith
/// level when it has one and at level 2 otherwise.
pub fn cb_norm_bounds(f: &LinearMap, ctx: &EvalCtx) -> Result<NormBound> {
    let mut level = smith_level(&f.codomain).unwrap_or(2);
    for s in [&f.domain, &f.codomain] {
        if let Some(cap) = s.level_cap() {
            level = level.min(cap);
        }
    }
    let lo = map_norm_lower(f, level.max(1), ctx)?;
    let up = map_norm_upper(f, usize::MAX, ctx)?;
    Ok(combine(lo, up))
}

/// The element `sum_{a,b} e_ab (x) e_ab` of `M_n(M_n)` in the matrix-unit basis.
pub fn matrix_unit_element(n: usize) -> SpaceElement {
    SpaceElement {
        level: n,
        coeffs: (0..n * n).map(|u| unit(n, n, u / n, u % n)).collect(),
    }
}

/// Transpose on `M_n` in the matrix-unit basis.
pub fn transpose_map(n: usize) -> LinearMap {
    let s = Arc::new(Space::Concrete(crate::space::full_algebra(n)));
    let mut t = CMat::zeros(n * n, n * n);
    for a in 0..n {
        for b in 0..n {
            t[(b * n + a, a * n + b)] = ONE;
        }
    }
    LinearMap {
        domain: s.clone(),
        codomain: s,
        coeffs: t,
    }
}

/// Random map with Gaussian coefficients.
pub fn random_map(domain: Arc<Space>, codomain: Arc<Space>, seed: u64) -> LinearMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = ginibre(&mut rng, codomain.dim(), domain.dim());
    LinearMap {
        domain,
        codomain,
        coeffs,
    }
}

/// The coordinate vector as a column.
pub fn column(v: &CVec) -> CMat {
    CMat::from_column_slice(v.len(), 1, v.as_slice())
}
