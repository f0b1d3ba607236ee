//! Spaces whose norms are given by evaluators: 1-sums, quotients, MIN_n quantizations,
//! `l^1(k)` and scaled copies. Every evaluator returns a certified interval.

use crate::bound::{Certificate, NormBound, Witness};
use crate::ctx::EvalCtx;
use crate::error::{OpError, Result};
use crate::linalg::{c, ginibre, hermitian_part, orthogonal_complement, rank_of_rows, CMat, CVec, I};
use crate::onesum::{ascent_lower, coset_representative, factorization_upper, triangle_bound, Atom, ContractionTuple};
use crate::sdp::lmi::{AffineHerm, LmiProgram};
use crate::sdp::{solve, solve_spectral_min_with, SolveStatus, SpectralProgram};
use crate::space::{build_linfty, AmbientSignature, ConcreteSpace, MatrixTuple, SpaceElement};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    Concrete(ConcreteSpace),
    OneSum {
        summands: Vec<Space>,
        ncap: usize,
    },
    Quotient {
        parent: Box<Space>,
        kernel: Vec<SpaceElement>,
        /// Orthonormal complement of the kernel in parent coordinates; its columns are
        /// the representatives of the quotient basis.
        #[serde(with = "crate::json::cmat")]
        complement: CMat,
        /// Contraction tuples on the parent 1-sum that vanish on the kernel.
        #[serde(default)]
        annihilators: Vec<ContractionTuple>,
    },
    MinQuant {
        parent: Box<Space>,
        n: usize,
    },
    L1 {
        k: usize,
        ncap: usize,
    },
    Scaled {
        parent: Box<Space>,
        delta: f64,
    },
}

impl From<ConcreteSpace> for Space {
    fn from(s: ConcreteSpace) -> Self {
        Space::Concrete(s)
    }
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Concrete(s) => s.dim(),
            Space::OneSum { summands, .. } => summands.iter().map(|s| s.dim()).sum(),
            Space::Quotient { complement, .. } => complement.ncols(),
            Space::MinQuant { parent, .. } | Space::Scaled { parent, .. } => parent.dim(),
            Space::L1 { k, .. } => *k,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Space::Concrete(_) => "concrete",
            Space::OneSum { .. } => "one_sum",
            Space::Quotient { .. } => "quotient",
            Space::MinQuant { .. } => "min_quant",
            Space::L1 { .. } => "l1",
            Space::Scaled { .. } => "scaled",
        }
    }

    pub fn as_concrete(&self) -> Option<&ConcreteSpace> {
        match self {
            Space::Concrete(s) => Some(s),
            _ => None,
        }
    }

    /// Concrete space and scale when the space is `delta X` for concrete `X`.
    pub fn as_scaled_concrete(&self) -> Option<(&ConcreteSpace, f64)> {
        match self {
            Space::Concrete(s) => Some((s, 1.0)),
            Space::Scaled { parent, delta } => parent.as_scaled_concrete().map(|(s, d)| (s, d * delta)),
            _ => None,
        }
    }

    /// Highest level at which the norm is defined, if capped.
    pub fn level_cap(&self) -> Option<usize> {
        match self {
            Space::Concrete(_) => None,
            Space::OneSum { ncap, summands } => summands
                .iter()
                .filter_map(|s| s.level_cap())
                .chain(std::iter::once(*ncap))
                .min(),
            Space::L1 { ncap, .. } => Some(*ncap),
            Space::Quotient { parent, .. } | Space::MinQuant { parent, .. } | Space::Scaled { parent, .. } => {
                parent.level_cap()
            }
        }
    }

    /// Flattens nested 1-sums, `l^1` and scalings of concrete spaces into atoms.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        fn go(s: &Space, scale: f64, start: &mut usize, out: &mut Vec<Atom>) -> bool {
            match s {
                Space::Concrete(c) => {
                    out.push(Atom {
                        space: c.clone(),
                        scale,
                        start: *start,
                    });
                    *start += c.dim();
                    true
                }
                Space::Scaled { parent, delta } => go(parent, scale * delta, start, out),
                Space::OneSum { summands, .. } => summands.iter().all(|t| go(t, scale, start, out)),
                Space::L1 { k, .. } => {
                    for _ in 0..*k {
                        out.push(Atom {
                            space: build_linfty(1),
                            scale,
                            start: *start,
                        });
                        *start += 1;
                    }
                    true
                }
                _ => false,
            }
        }
        match self {
            Space::OneSum { .. } | Space::L1 { .. } => {}
            Space::Scaled { parent, .. } if matches!(**parent, Space::OneSum { .. } | Space::L1 { .. }) => {}
            _ => return None,
        }
        let mut out = Vec::new();
        let mut start = 0;
        if go(self, 1.0, &mut start, &mut out) {
            Some(out)
        } else {
            None
        }
    }

    /// Certified interval for `||x||` at level `x.level`.
    pub fn norm_bounds(&self, x: &SpaceElement, ctx: &EvalCtx) -> Result<NormBound> {
        if x.dim() != self.dim() {
            return Err(OpError::DimensionMismatch(format!(
                "element has {} coordinates, space has dimension {}",
                x.dim(),
                self.dim()
            )));
        }
        if let Some(cap) = self.level_cap() {
            if x.level > cap {
                return Err(OpError::LevelExceeded { level: x.level, cap });
            }
        }
        match self {
            Space::Concrete(s) => Ok(NormBound::exact(s.level_norm(x))),
            Space::Scaled { parent, delta } => Ok(parent.norm_bounds(x, ctx)?.scaled(*delta)),
            Space::OneSum { .. } | Space::L1 { .. } => one_sum_bounds(self, x, ctx),
            Space::Quotient { .. } => quotient_bounds(self, x, ctx),
            Space::MinQuant { parent, n } => min_bounds(parent, *n, x, ctx),
        }
    }

    pub fn norm_upper(&self, x: &SpaceElement, ctx: &EvalCtx) -> Result<f64> {
        Ok(self.norm_bounds(x, ctx)?.upper)
    }
}

/// `X_1 +_inf ... +_inf X_r`: concatenated ambients, block-embedded bases.
pub fn infty_sum(spaces: &[ConcreteSpace]) -> Result<ConcreteSpace> {
    if spaces.is_empty() {
        return Err(OpError::DimensionMismatch("empty list".into()));
    }
    let ambient: Vec<usize> = spaces.iter().flat_map(|s| s.blocks().to_vec()).collect();
    let mut basis = Vec::new();
    let mut offset = 0;
    for s in spaces {
        for b in &s.basis {
            let t: MatrixTuple = ambient
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    if j >= offset && j < offset + s.blocks().len() {
                        b[j - offset].clone()
                    } else {
                        CMat::zeros(m, m)
                    }
                })
                .collect();
            basis.push(t);
        }
        offset += s.blocks().len();
    }
    Ok(ConcreteSpace {
        ambient: AmbientSignature(ambient),
        basis,
        label: spaces.iter().map(|s| s.label.as_str()).collect::<Vec<_>>().join("+inf"),
    })
}

pub fn scaled_space(x: Space, delta: f64) -> Result<Space> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(OpError::NonpositiveScale(delta));
    }
    Ok(Space::Scaled {
        parent: Box::new(x),
        delta,
    })
}

pub fn one_sum(summands: Vec<Space>, ncap: usize) -> Space {
    Space::OneSum { summands, ncap }
}

/// `l^1(k)` as an `M_ncap`-space.
pub fn build_l1(k: usize, ncap: usize) -> Space {
    Space::L1 { k, ncap }
}

pub fn min_quantization(x: Space, n: usize) -> Space {
    Space::MinQuant {
        parent: Box::new(x),
        n,
    }
}

/// `X / span(kernel)`; kernel vectors are level-1 elements of `X`.
pub fn quotient_space(parent: Space, kernel: Vec<SpaceElement>) -> Result<Space> {
    let d = parent.dim();
    for v in &kernel {
        if v.level != 1 || v.dim() != d {
            return Err(OpError::KernelNotSubspace(
                "kernel vectors must be level-1 elements of the parent".into(),
            ));
        }
    }
    let rows: Vec<CVec> = kernel.iter().map(|v| v.coords()).collect();
    if rank_of_rows(&rows, crate::space::INDEPENDENCE_TOL) < kernel.len() {
        return Err(OpError::KernelNotSubspace("kernel vectors are dependent".into()));
    }
    let kmat = CMat::from_fn(d, kernel.len(), |i, j| rows[j][i]);
    let complement = orthogonal_complement(&kmat);
    Ok(Space::Quotient {
        parent: Box::new(parent),
        kernel,
        complement,
        annihilators: Vec::new(),
    })
}

/// Kernel given by ambient tuples of a concrete parent; rejects tuples outside the space.
pub fn quotient_by_tuples(parent: &ConcreteSpace, kernel: &[MatrixTuple]) -> Result<Space> {
    let mut elems = Vec::new();
    for t in kernel {
        let (coords, res) = parent.coordinates_of(t);
        let scale = crate::linalg::spectral_norm(&CMat::from_column_slice(
            coords.len(),
            1,
            coords.as_slice(),
        ))
        .max(1.0);
        if res > 1e-9 * scale {
            return Err(OpError::KernelNotSubspace(format!("residual {res:e}")));
        }
        elems.push(SpaceElement::scalar(coords.as_slice()));
    }
    quotient_space(Space::Concrete(parent.clone()), elems)
}

fn one_sum_bounds(space: &Space, x: &SpaceElement, ctx: &EvalCtx) -> Result<NormBound> {
    let atoms = space.atoms();
    if x.level == 1 {
        // Banach 1-sum: the norm is the sum of the summand norms
        if let Some(atoms) = &atoms {
            let v = triangle_bound(atoms, x);
            return Ok(NormBound::exact(v));
        }
    }
    match atoms {
        Some(atoms) => {
            let tri = triangle_bound(&atoms, x);
            let single = atoms
                .iter()
                .map(|a| {
                    let xs = SpaceElement {
                        level: x.level,
                        coeffs: x.coeffs[a.start..a.start + a.dim()].to_vec(),
                    };
                    a.scale * a.space.level_norm(&xs)
                })
                .fold(0.0, f64::max);
            if single >= tri * (1.0 - 1e-15) {
                return Ok(NormBound::exact(tri));
            }
            let (lo, _) = ascent_lower(&atoms, x, ctx.budget.restarts.clamp(1, 8), ctx.budget.iterations, ctx.seed);
            let (up, dual, _) = factorization_upper(&atoms, x, &[], &ctx.solver);
            let (upper, cert) = if up < tri {
                (up, Certificate::Sdp { dual_bound: dual, repair: 0.0 })
            } else {
                (tri, Certificate::Triangle)
            };
            Ok(NormBound::new(lo.max(single), upper, cert))
        }
        None => {
            let Space::OneSum { summands, .. } = space else {
                unreachable!("l1 always has atoms")
            };
            let mut lower = 0.0f64;
            let mut upper = 0.0;
            let mut start = 0;
            for s in summands {
                let xs = SpaceElement {
                    level: x.level,
                    coeffs: x.coeffs[start..start + s.dim()].to_vec(),
                };
                let b = s.norm_bounds(&xs, ctx)?;
                lower = lower.max(b.lower);
                upper += b.upper;
                start += s.dim();
            }
            Ok(NormBound::new(lower, upper, Certificate::Triangle))
        }
    }
}

fn quotient_bounds(space: &Space, x: &SpaceElement, ctx: &EvalCtx) -> Result<NormBound> {
    let Space::Quotient {
        parent,
        kernel,
        complement,
        annihilators,
    } = space
    else {
        unreachable!()
    };
    if complement.ncols() == 0 {
        return Ok(NormBound::exact(0.0));
    }
    let rep = x.transform(complement);
    if kernel.is_empty() {
        return parent.norm_bounds(&rep, ctx);
    }
    let k = x.level;
    if let Some(p) = parent.as_concrete() {
        let prog = coset_program(k, kernel, |y| p.element_blocks(y), &rep);
        let r = solve_spectral_min_with(&prog, &ctx.solver);
        let lower = if r.status == SolveStatus::Optimal { r.dual_bound.max(0.0) } else { 0.0 };
        return Ok(NormBound::new(
            lower,
            r.value,
            Certificate::Sdp {
                dual_bound: r.dual_bound,
                repair: 0.0,
            },
        ));
    }
    if let Some(atoms) = parent.atoms() {
        let (up, dual, gamma) = factorization_upper(&atoms, &rep, kernel, &ctx.solver);
        let mut lower = 0.0f64;
        for t in annihilators {
            lower = lower.max(t.value(&rep));
        }
        let best_rep = coset_representative(&rep, kernel, &gamma);
        let (_, tuple) = ascent_lower(&atoms, &best_rep, ctx.budget.restarts.clamp(1, 4), ctx.budget.iterations, ctx.seed);
        let prog = coset_program(k, kernel, |y| vec![tuple.apply(y)], &rep);
        let r = solve_spectral_min_with(&prog, &ctx.solver);
        if r.status == SolveStatus::Optimal {
            lower = lower.max(r.dual_bound);
        }
        return Ok(NormBound::new(
            lower.min(up),
            up,
            Certificate::Sdp {
                dual_bound: dual,
                repair: 0.0,
            },
        ));
    }
    let b = parent.norm_bounds(&rep, ctx)?;
    Ok(NormBound::new(0.0, b.upper, Certificate::Derived { rule: "representative".into() }))
}

/// `min over gamma of max_j ||blocks_j(rep - sum_r gamma_r (x) n_r)||` as a spectral program.
fn coset_program<F: Fn(&SpaceElement) -> Vec<CMat>>(
    k: usize,
    kernel: &[SpaceElement],
    blocks: F,
    rep: &SpaceElement,
) -> SpectralProgram {
    let nvars = 2 * k * k * kernel.len();
    let mut prog = SpectralProgram::new(nvars);
    let base = blocks(rep);
    // blocks of e_pq (x) n_r and i e_pq (x) n_r
    let mut coeff_blocks: Vec<Vec<CMat>> = Vec::with_capacity(nvars);
    for nv in kernel {
        for p in 0..k {
            for q in 0..k {
                let mut e = SpaceElement::zero(nv.dim(), k);
                for (i, a) in e.coeffs.iter_mut().enumerate() {
                    a[(p, q)] = nv.coeffs[i][(0, 0)];
                }
                let b = blocks(&e);
                coeff_blocks.push(b.iter().map(|m| m * c(-1.0, 0.0)).collect());
                coeff_blocks.push(b.iter().map(|m| m * c(0.0, -1.0)).collect());
            }
        }
    }
    for (j, b0) in base.into_iter().enumerate() {
        prog.add_block(b0, coeff_blocks.iter().map(|v| v[j].clone()).collect());
    }
    prog
}

/// `sup |<xi, X eta>|` over unit vectors of Schmidt rank at most `n` in `C^k (x) C^m`.
pub fn schmidt_norm_lower(xm: &CMat, k: usize, m: usize, n: usize, restarts: usize, iterations: usize, seed: u64) -> f64 {
    let trunc = |w: &CVec| -> (CVec, f64) {
        let mat = CMat::from_fn(k, m, |a, b| w[a * m + b]);
        let svd = mat.svd(true, true);
        let u = svd.u.expect("u");
        let vt = svd.v_t.expect("v");
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let mut t = CMat::zeros(k, m);
        for &i in idx.iter().take(n) {
            let s = svd.singular_values[i];
            t += u.column(i) * vt.row(i) * c(s, 0.0);
        }
        let nrm = t.norm();
        let v = CVec::from_fn(k * m, |i, _| t[(i / m, i % m)]);
        if nrm > 0.0 {
            (v / c(nrm, 0.0), nrm)
        } else {
            (v, 0.0)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dimv = k * m;
    let mut best = 0.0f64;
    for rs in 0..restarts.max(1) {
        let mut eta = if rs == 0 {
            let (_, _, v) = crate::linalg::top_singular(xm);
            v
        } else {
            let g = ginibre(&mut rng, dimv, 1);
            CVec::from_fn(dimv, |i, _| g[(i, 0)])
        };
        eta = trunc(&eta).0;
        let mut last = 0.0;
        for _ in 0..iterations.max(1) {
            let (xi, _) = trunc(&(xm * &eta));
            let (e2, val) = trunc(&(xm.adjoint() * &xi));
            eta = e2;
            if val <= last * (1.0 + 1e-13) {
                break;
            }
            last = val;
        }
        // certified value from explicit rank-n vectors
        let (xi, _) = trunc(&(xm * &eta));
        let v = xi.dotc(&(xm * &eta)).norm();
        best = best.max(v);
    }
    best
}

fn trace_one_hermitian(prog: &mut LmiProgram, n: usize) -> AffineHerm {
    use crate::linalg::unit;
    let mut h = AffineHerm::constant(unit(n, n, n - 1, n - 1));
    for i in 0..n {
        if i + 1 < n {
            let v = prog.add_var(0.0);
            h.add_term(v, unit(n, n, i, i) - unit(n, n, n - 1, n - 1));
        }
        for j in (i + 1)..n {
            let re = prog.add_var(0.0);
            let im = prog.add_var(0.0);
            h.add_term(re, unit(n, n, i, j) + unit(n, n, j, i));
            h.add_term(im, unit(n, n, i, j) * I - unit(n, n, j, i) * I);
        }
    }
    h
}

fn partial_traces(h: &CMat, k: usize, m: usize) -> (CMat, CMat) {
    let ta = CMat::from_fn(k, k, |a, b| (0..m).map(|cc| h[(a * m + cc, b * m + cc)]).sum());
    let tb = CMat::from_fn(m, m, |a, b| (0..k).map(|kk| h[(kk * m + a, kk * m + b)]).sum());
    (ta, tb)
}

/// Upper bound on the Schmidt-rank-`n` norm through the reduction criterion
/// `n (rho_A (x) I) >= rho`, `n (I (x) rho_B) >= rho` on the Gram blocks.
pub fn schmidt_norm_upper(xm: &CMat, k: usize, m: usize, n: usize, ctx: &EvalCtx) -> f64 {
    let big = k * m;
    let mut prog = LmiProgram::new();
    let p = trace_one_hermitian(&mut prog, big);
    let q = trace_one_hermitian(&mut prog, big);
    let mut w_terms = Vec::new();
    for a in 0..big {
        for b in 0..big {
            let x = xm[(a, b)];
            let re = prog.add_var(-x.re);
            let im = prog.add_var(-x.im);
            w_terms.push((a, b, re, im));
        }
    }
    // [[P, W], [W^*, Q]]
    let n2 = 2 * big;
    let mut constant = CMat::zeros(n2, n2);
    constant.view_mut((0, 0), (big, big)).copy_from(&p.constant);
    constant.view_mut((big, big), (big, big)).copy_from(&q.constant);
    let mut g = AffineHerm::constant(constant);
    for (v, e) in &p.terms {
        let mut z = CMat::zeros(n2, n2);
        z.view_mut((0, 0), (big, big)).copy_from(e);
        g.add_term(*v, z);
    }
    for (v, e) in &q.terms {
        let mut z = CMat::zeros(n2, n2);
        z.view_mut((big, big), (big, big)).copy_from(e);
        g.add_term(*v, z);
    }
    for &(a, b, re, im) in &w_terms {
        let mut z = CMat::zeros(n2, n2);
        z[(a, big + b)] = c(1.0, 0.0);
        z[(big + b, a)] = c(1.0, 0.0);
        g.add_term(re, z.clone());
        let mut zi = CMat::zeros(n2, n2);
        zi[(a, big + b)] = I;
        zi[(big + b, a)] = -I;
        g.add_term(im, zi);
    }
    g.push_into(&mut prog);
    let nf = n as f64;
    for h in [&p, &q] {
        let red = |mat: &CMat| -> (CMat, CMat) {
            let (ta, tb) = partial_traces(mat, k, m);
            let ra = crate::linalg::kron(&ta, &CMat::identity(m, m)) * c(nf, 0.0) - mat;
            let rb = crate::linalg::kron(&CMat::identity(k, k), &tb) * c(nf, 0.0) - mat;
            (ra, rb)
        };
        let (ca, cb) = red(&h.constant);
        let mut ha = AffineHerm::constant(ca);
        let mut hb = AffineHerm::constant(cb);
        for (v, e) in &h.terms {
            let (ea, eb) = red(e);
            ha.add_term(*v, ea);
            hb.add_term(*v, eb);
        }
        ha.push_into(&mut prog);
        hb.push_into(&mut prog);
    }
    crate::sdp::extension::maybe_dump(&prog, "schmidt");
    let sol = solve(&prog, &ctx.solver);
    if sol.status != SolveStatus::Optimal {
        return f64::INFINITY;
    }
    let _ = hermitian_part;
    -sol.dual_value
}

fn min_bounds(parent: &Space, n: usize, x: &SpaceElement, ctx: &EvalCtx) -> Result<NormBound> {
    let k = x.level;
    if k <= n {
        return parent.norm_bounds(x, ctx);
    }
    match parent.as_concrete() {
        Some(p) => {
            if n >= p.ambient.max_block() {
                return Ok(NormBound::exact(p.level_norm(x)));
            }
            let full = p.level_norm(x);
            let mut lower = 0.0f64;
            let mut upper = 0.0f64;
            for (j, &m) in p.blocks().iter().enumerate() {
                let xm = p.element_block(x, j);
                if n >= m {
                    let v = crate::linalg::spectral_norm(&xm);
                    lower = lower.max(v);
                    upper = upper.max(v);
                    continue;
                }
                let lo = schmidt_norm_lower(&xm, k, m, n, ctx.budget.restarts.clamp(1, 10), ctx.budget.iterations, ctx.fork(j as u64).seed);
                let up = schmidt_norm_upper(&xm, k, m, n, ctx).min(crate::linalg::spectral_norm(&xm));
                lower = lower.max(lo);
                upper = upper.max(up.max(lo));
            }
            Ok(NormBound::new(lower, upper.min(full), Certificate::Sdp { dual_bound: upper, repair: 0.0 })
                .with_witness(Some(Witness {
                    level: k,
                    coefficients: x.coeffs.clone(),
                    value: lower,
                })))
        }
        None => {
            let b = parent.norm_bounds(x, ctx)?;
            Ok(NormBound::new(0.0, b.upper, Certificate::Derived { rule: "min_dominated".into() }))
        }
    }
}

/// Interval for `||x||` in `M_k(MIN_n(X))`.
pub fn min_quantization_bounds(x_space: &Space, n: usize, x: &SpaceElement, ctx: &EvalCtx) -> Result<NormBound> {
    min_bounds(x_space, n, x, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{unit, ONE};
    use crate::space::{full_algebra, random_space};

    fn ctx() -> EvalCtx {
        EvalCtx::with_seed(1)
    }

    #[test]
    fn infty_sum_is_max() {
        let a = full_algebra(2);
        let b = full_algebra(3);
        let s = infty_sum(&[a.clone(), b.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = SpaceElement::random(&mut rng, 13, 2);
        let xa = SpaceElement { level: 2, coeffs: x.coeffs[..4].to_vec() };
        let xb = SpaceElement { level: 2, coeffs: x.coeffs[4..].to_vec() };
        assert!((s.level_norm(&x) - a.level_norm(&xa).max(b.level_norm(&xb))).abs() < 1e-12);
        let l = infty_sum(&[build_linfty(1), build_linfty(1)]).unwrap();
        assert_eq!(l.ambient.0, vec![1, 1]);
    }

    #[test]
    fn scaled_norms() {
        let s = Space::Concrete(full_algebra(2));
        assert!(scaled_space(s.clone(), 0.0).is_err());
        let t = scaled_space(s.clone(), 2.0).unwrap();
        let x = SpaceElement::scalar(&[ONE, c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let b = t.norm_bounds(&x, &ctx()).unwrap();
        assert_eq!((b.lower, b.upper), (2.0, 2.0));
    }

    #[test]
    fn l1_level_one_and_cap() {
        let l = build_l1(3, 2);
        let x = SpaceElement::scalar(&[c(1.0, 0.0), c(-2.0, 0.0), c(0.0, 3.0)]);
        let b = l.norm_bounds(&x, &ctx()).unwrap();
        assert_eq!(b.width(), 0.0);
        assert!((b.lower - 6.0).abs() < 1e-12);
        let y = SpaceElement::zero(3, 3);
        assert!(matches!(l.norm_bounds(&y, &ctx()), Err(OpError::LevelExceeded { .. })));
    }

    #[test]
    fn l1_diagonal_units() {
        let l = build_l1(2, 2);
        let x = SpaceElement { level: 2, coeffs: vec![unit(2, 2, 0, 0), unit(2, 2, 1, 1)] };
        let b = l.norm_bounds(&x, &ctx()).unwrap();
        assert!(b.contains(1.0, 1e-6), "{b:?}");
    }

    #[test]
    fn quotient_of_linfty() {
        let q = quotient_space(
            Space::Concrete(build_linfty(2)),
            vec![SpaceElement::scalar(&[ONE, c(-1.0, 0.0)])],
        )
        .unwrap();
        assert_eq!(q.dim(), 1);
        // e_1 + N: representative e_1 has coordinates (1, 0); project onto the complement
        let Space::Quotient { complement, .. } = &q else { unreachable!() };
        let coord = complement[(0, 0)].conj();
        let x = SpaceElement::scalar(&[coord]);
        let b = q.norm_bounds(&x, &ctx()).unwrap();
        assert!(b.contains(0.5, 1e-8), "{b:?}");
        assert!(b.width() < 1e-7);
    }

    #[test]
    fn quotient_by_everything_is_zero() {
        let s = Space::Concrete(build_linfty(2));
        let q = quotient_space(
            s,
            vec![SpaceElement::scalar(&[ONE, c(0.0, 0.0)]), SpaceElement::scalar(&[c(0.0, 0.0), ONE])],
        )
        .unwrap();
        assert_eq!(q.dim(), 0);
        let b = q.norm_bounds(&SpaceElement::zero(0, 2), &ctx()).unwrap();
        assert_eq!(b.upper, 0.0);
    }

    #[test]
    fn kernel_outside_rejected() {
        let p = crate::space::make_space(AmbientSignature(vec![2]), vec![vec![unit(2, 2, 0, 0)]]).unwrap();
        assert!(matches!(quotient_by_tuples(&p, &[vec![unit(2, 2, 0, 1)]]), Err(OpError::KernelNotSubspace(_))));
    }

    #[test]
    fn min_of_m2_at_level_one() {
        let m2 = Space::Concrete(full_algebra(2));
        let x = SpaceElement {
            level: 2,
            coeffs: (0..4).map(|u| unit(2, 2, u / 2, u % 2)).collect(),
        };
        let full = m2.norm_bounds(&x, &ctx()).unwrap();
        assert!((full.upper - 2.0).abs() < 1e-12);
        let b = min_quantization_bounds(&m2, 1, &x, &ctx()).unwrap();
        assert!(b.lower >= 1.0 - 1e-9, "{b:?}");
        assert!(b.upper < 2.0 - 0.5, "{b:?}");
        // at level n the quantization agrees with the space
        let b2 = min_quantization_bounds(&m2, 2, &x, &ctx()).unwrap();
        assert!(b2.width() < 1e-12);
    }

    #[test]
    fn scalar_min_element() {
        let s = random_space(&AmbientSignature(vec![2, 3]), 1, 2).unwrap();
        let m = min_quantization(Space::Concrete(s.clone()), 1);
        let x = SpaceElement { level: 3, coeffs: vec![CMat::identity(3, 3) * c(2.0, 0.0)] };
        let b = m.norm_bounds(&x, &ctx()).unwrap();
        let v = s.level_norm(&SpaceElement::scalar(&[c(2.0, 0.0)]));
        assert!(b.contains(v, 1e-6), "{b:?} {v}");
    }
}
