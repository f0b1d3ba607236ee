//! Norms on 1-sums of concrete spaces.
//!
//! Upper bounds come from the factorization `x_s = a_s y_s b_s`:
//!
//! ```text
//! minimize t  s.t.  [[P_s (x) I, d_s x_s^(j)], [*, Q_s (x) I]] >= 0,  sum P_s <= t I,  sum Q_s <= t I
//! ```
//!
//! Lower bounds come from explicit tuples of complete contractions
//! `u_s(b) = V_s^* (pi_s(b) (x) I_r) W_s`, found by block-coordinate ascent.

use crate::linalg::{c, hermitian_part, kron, min_eig_herm, spectral_norm, CMat, I};
use crate::sdp::lmi::{free_hermitian, AffineHerm, LmiProgram};
use crate::sdp::{solve, SolverOptions};
use crate::space::{ConcreteSpace, SpaceElement};
use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One concrete summand of a flattened 1-sum, scaled by `scale`, occupying
/// coordinates `start .. start + space.dim()`.
#[derive(Clone, Debug)]
pub struct Atom {
    pub space: ConcreteSpace,
    pub scale: f64,
    pub start: usize,
}

impl Atom {
    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn restrict(&self, x: &SpaceElement) -> SpaceElement {
        SpaceElement {
            level: x.level,
            coeffs: x.coeffs[self.start..self.start + self.dim()].to_vec(),
        }
    }
}

/// A tuple of complete contractions into `M_q`, stored as the images `U_i` of every
/// coordinate vector of the 1-sum: `T(x) = sum_i alpha_i (x) U_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionTuple {
    pub q: usize,
    #[serde(with = "crate::json::cmat_vec")]
    pub images: Vec<CMat>,
}

impl ContractionTuple {
    pub fn apply(&self, x: &SpaceElement) -> CMat {
        let k = x.level;
        let mut out = CMat::zeros(k * self.q, k * self.q);
        for (a, u) in x.coeffs.iter().zip(&self.images) {
            if a.iter().any(|z| z.norm() != 0.0) {
                out += kron(a, u);
            }
        }
        out
    }

    pub fn value(&self, x: &SpaceElement) -> f64 {
        spectral_norm(&self.apply(x))
    }
}

fn lambda_max(h: &CMat) -> f64 {
    SymmetricEigen::new(hermitian_part(h))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Triangle bound `sum_s scale_s ||x_s||`.
pub fn triangle_bound(atoms: &[Atom], x: &SpaceElement) -> f64 {
    atoms
        .iter()
        .map(|a| a.scale * a.space.level_norm(&a.restrict(x)))
        .sum()
}

/// Certified factorization bound for `inf_gamma ||x - sum_r gamma_r (x) n_r||` in the
/// 1-sum. `kernel` holds coordinate vectors (level 1). Returns
/// `(upper, dual_bound, gamma)`.
pub fn factorization_upper(
    atoms: &[Atom],
    x: &SpaceElement,
    kernel: &[SpaceElement],
    opts: &SolverOptions,
) -> (f64, f64, Vec<CMat>) {
    let k = x.level;
    let mut prog = LmiProgram::new();
    let t = prog.add_var(1.0);
    // coset variables gamma_r in M_k
    let mut gvars: Vec<Vec<(usize, usize, usize, usize)>> = Vec::new();
    for _ in kernel {
        let mut v = Vec::new();
        for p in 0..k {
            for q in 0..k {
                v.push((p, q, prog.add_var(0.0), prog.add_var(0.0)));
            }
        }
        gvars.push(v);
    }
    let mut sum_p = AffineHerm::zeros(k);
    let mut sum_q = AffineHerm::zeros(k);
    sum_p.add_term(t, CMat::identity(k, k));
    sum_q.add_term(t, CMat::identity(k, k));
    let mut stored: Vec<(AffineHerm, AffineHerm, Vec<AffineHerm>)> = Vec::new();
    for atom in atoms {
        let pv = free_hermitian(&mut prog, k);
        let qv = free_hermitian(&mut prog, k);
        for (v, e) in &pv.terms {
            sum_p.add_term(*v, -e.clone());
        }
        for (v, e) in &qv.terms {
            sum_q.add_term(*v, -e.clone());
        }
        let xs = atom.restrict(x);
        let mut blocks = Vec::new();
        for (j, &m) in atom.space.blocks().iter().enumerate() {
            let km = k * m;
            let xj = atom.space.element_block(&xs, j) * c(atom.scale, 0.0);
            let mut constant = CMat::zeros(2 * km, 2 * km);
            constant.view_mut((0, km), (km, km)).copy_from(&xj);
            constant.view_mut((km, 0), (km, km)).copy_from(&xj.adjoint());
            let mut h = AffineHerm::constant(constant);
            let idm = CMat::identity(m, m);
            for (v, e) in &pv.terms {
                let mut z = CMat::zeros(2 * km, 2 * km);
                z.view_mut((0, 0), (km, km)).copy_from(&kron(e, &idm));
                h.add_term(*v, z);
            }
            for (v, e) in &qv.terms {
                let mut z = CMat::zeros(2 * km, 2 * km);
                z.view_mut((km, km), (km, km)).copy_from(&kron(e, &idm));
                h.add_term(*v, z);
            }
            for (r, nvec) in kernel.iter().enumerate() {
                // block j of the kernel vector restricted to this atom
                let mut nb = CMat::zeros(m, m);
                for i in 0..atom.dim() {
                    let s = nvec.coeffs[atom.start + i][(0, 0)];
                    if s != c(0.0, 0.0) {
                        nb += &atom.space.basis[i][j] * s;
                    }
                }
                if nb.iter().all(|z| z.norm() == 0.0) {
                    continue;
                }
                for &(p, q, re, im) in &gvars[r] {
                    let e = kron(&crate::linalg::unit(k, k, p, q), &nb) * c(-atom.scale, 0.0);
                    for (var, coef) in [(re, e.clone()), (im, e * I)] {
                        let mut z = CMat::zeros(2 * km, 2 * km);
                        z.view_mut((0, km), (km, km)).copy_from(&coef);
                        z.view_mut((km, 0), (km, km)).copy_from(&coef.adjoint());
                        h.add_term(var, z);
                    }
                }
            }
            blocks.push(h.clone());
            h.push_into(&mut prog);
        }
        stored.push((pv, qv, blocks));
    }
    sum_p.push_into(&mut prog);
    sum_q.push_into(&mut prog);
    crate::sdp::extension::maybe_dump(&prog, "one-sum");
    let sol = solve(&prog, opts);
    let y = &sol.y;

    // repair: shift P_s, Q_s until every block is PSD, then recompute t
    let mut tp = CMat::zeros(k, k);
    let mut tq = CMat::zeros(k, k);
    for (pv, qv, blocks) in &stored {
        let mut shift = 0.0f64;
        for h in blocks {
            let lam = min_eig_herm(&h.eval(y));
            if lam < 0.0 {
                shift = shift.max(-lam * (1.0 + 1e-9) + 1e-15);
            }
        }
        tp += hermitian_part(&pv.eval(y)) + CMat::identity(k, k) * c(shift, 0.0);
        tq += hermitian_part(&qv.eval(y)) + CMat::identity(k, k) * c(shift, 0.0);
    }
    let upper = lambda_max(&tp).max(lambda_max(&tq)).max(0.0);
    let gamma: Vec<CMat> = gvars
        .iter()
        .map(|vs| {
            let mut g = CMat::zeros(k, k);
            for &(p, q, re, im) in vs {
                g[(p, q)] = c(y[re], y[im]);
            }
            g
        })
        .collect();
    (upper, sol.dual_value.min(upper), gamma)
}

/// `x - sum_r gamma_r (x) n_r`.
pub fn coset_representative(x: &SpaceElement, kernel: &[SpaceElement], gamma: &[CMat]) -> SpaceElement {
    let mut out = x.clone();
    for (nv, g) in kernel.iter().zip(gamma) {
        for (i, a) in out.coeffs.iter_mut().enumerate() {
            let s = nv.coeffs[i][(0, 0)];
            if s != c(0.0, 0.0) {
                *a -= g * s;
            }
        }
    }
    out
}

struct AtomRep {
    /// `X_sj` for each ambient block.
    blocks: Vec<CMat>,
    sizes: Vec<usize>,
    scale: f64,
}

fn polar(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u");
    let vt = svd.v_t.expect("v");
    u * vt
}

/// `X~ b` for `b` stored as a `k x D` matrix, columns grouped by `(j, c, rho)`.
fn apply_rep(rep: &AtomRep, b: &CMat, k: usize, r: usize, adjoint: bool) -> CMat {
    let mut out = CMat::zeros(k, b.ncols());
    let mut col = 0;
    for (xj, &m) in rep.blocks.iter().zip(&rep.sizes) {
        let op = if adjoint { xj.adjoint() } else { xj.clone() };
        for rho in 0..r {
            // columns col + c*r + rho for c in 0..m
            let vec = crate::linalg::CVec::from_fn(k * m, |idx, _| b[(idx / m, col + (idx % m) * r + rho)]);
            let w = &op * vec;
            for idx in 0..k * m {
                out[(idx / m, col + (idx % m) * r + rho)] = w[idx];
            }
        }
        col += m * r;
    }
    out
}

/// Builds the contraction tuple `u_s(b) = V_s^* (pi_s(b) (x) I_r) W_s` with
/// `V_s = C_s^T`, `W_s = D_s^T`, scaled by the atom scale.
fn tuple_from(atoms: &[Atom], cs: &[CMat], ds: &[CMat], r: usize, dim: usize) -> ContractionTuple {
    let q = cs.first().map(|m| m.nrows()).unwrap_or(1);
    let mut images = vec![CMat::zeros(q, q); dim];
    for ((atom, cmat), dmat) in atoms.iter().zip(cs).zip(ds) {
        let v = cmat.transpose();
        let w = dmat.transpose();
        for i in 0..atom.dim() {
            let big = crate::linalg::block_diag(
                &atom
                    .space
                    .basis[i]
                    .iter()
                    .map(|b| kron(b, &CMat::identity(r, r)))
                    .collect::<Vec<_>>()
                    .iter()
                    .collect::<Vec<_>>(),
            );
            images[atom.start + i] = v.adjoint() * big * &w * c(atom.scale, 0.0);
        }
    }
    ContractionTuple { q, images }
}

/// Lower bound for the 1-sum norm by alternating maximization over contraction tuples
/// into `M_k`. Returns the certified value `||T(x)||` and the tuple.
pub fn ascent_lower(
    atoms: &[Atom],
    x: &SpaceElement,
    restarts: usize,
    iterations: usize,
    seed: u64,
) -> (f64, ContractionTuple) {
    let k = x.level;
    let r = k;
    let dim: usize = atoms.iter().map(|a| a.dim()).sum();
    let reps: Vec<AtomRep> = atoms
        .iter()
        .map(|a| {
            let xs = a.restrict(x);
            AtomRep {
                blocks: a.space.element_blocks(&xs),
                sizes: a.space.blocks().to_vec(),
                scale: a.scale,
            }
        })
        .collect();
    let widths: Vec<usize> = atoms
        .iter()
        .map(|a| a.space.blocks().iter().sum::<usize>() * r)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ContractionTuple)> = None;
    for _ in 0..restarts.max(1) {
        let mut rmat = crate::linalg::ginibre(&mut rng, k, k);
        rmat /= c(rmat.norm(), 0.0);
        let mut lmat = crate::linalg::ginibre(&mut rng, k, k);
        lmat /= c(lmat.norm(), 0.0);
        let mut cs: Vec<CMat> = widths.iter().map(|&w| polar(&crate::linalg::ginibre(&mut rng, k, w))).collect();
        let mut ds: Vec<CMat> = widths.iter().map(|&w| polar(&crate::linalg::ginibre(&mut rng, k, w))).collect();
        let mut last = f64::NEG_INFINITY;
        for _ in 0..iterations.max(1) {
            // A side: A_s = R C_s against M_s = X~_s B_s
            let bs: Vec<CMat> = ds.iter().map(|d| &lmat * d).collect();
            let ms: Vec<CMat> = reps
                .iter()
                .zip(&bs)
                .map(|(rep, b)| apply_rep(rep, b, k, r, false) * c(rep.scale, 0.0))
                .collect();
            for _ in 0..2 {
                for (cmat, m) in cs.iter_mut().zip(&ms) {
                    *cmat = polar(&(rmat.adjoint() * m));
                }
                let mut g = CMat::zeros(k, k);
                for (cmat, m) in cs.iter().zip(&ms) {
                    g += m * cmat.adjoint();
                }
                let n = g.norm();
                if n > 0.0 {
                    rmat = g / c(n, 0.0);
                }
            }
            // B side: B_s = L D_s against N_s = X~_s^* A_s
            let as_: Vec<CMat> = cs.iter().map(|cm| &rmat * cm).collect();
            let ns: Vec<CMat> = reps
                .iter()
                .zip(&as_)
                .map(|(rep, a)| apply_rep(rep, a, k, r, true) * c(rep.scale, 0.0))
                .collect();
            let mut val = 0.0;
            for _ in 0..2 {
                for (dmat, nn) in ds.iter_mut().zip(&ns) {
                    *dmat = polar(&(lmat.adjoint() * nn));
                }
                let mut g = CMat::zeros(k, k);
                for (dmat, nn) in ds.iter().zip(&ns) {
                    g += nn * dmat.adjoint();
                }
                let n = g.norm();
                if n > 0.0 {
                    lmat = g / c(n, 0.0);
                }
                val = n;
            }
            if val <= last * (1.0 + 1e-12) + 1e-15 {
                break;
            }
            last = val;
        }
        let tuple = tuple_from(atoms, &cs, &ds, r, dim);
        let v = tuple.value(x);
        if best.as_ref().map(|(b, _)| v > *b).unwrap_or(true) {
            best = Some((v, tuple));
        }
    }
    best.expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_linfty, full_algebra, random_space, AmbientSignature};

    fn scalar_atoms(k: usize) -> Vec<Atom> {
        (0..k)
            .map(|i| Atom {
                space: build_linfty(1),
                scale: 1.0,
                start: i,
            })
            .collect()
    }

    #[test]
    fn l1_level_one_is_classical() {
        let atoms = scalar_atoms(3);
        let x = SpaceElement::scalar(&[c(1.0, 0.0), c(0.0, -2.0), c(0.5, 0.5)]);
        let exact = 1.0 + 2.0 + 0.5f64.hypot(0.5);
        let (lo, _) = ascent_lower(&atoms, &x, 3, 50, 1);
        let (up, _, _) = factorization_upper(&atoms, &x, &[], &SolverOptions::default());
        assert!((lo - exact).abs() < 1e-9, "{lo}");
        assert!((up - exact).abs() < 1e-6, "{up}");
        assert!((triangle_bound(&atoms, &x) - exact).abs() < 1e-12);
    }

    #[test]
    fn diagonal_units_have_norm_one() {
        let atoms = scalar_atoms(2);
        let x = SpaceElement {
            level: 2,
            coeffs: vec![crate::linalg::unit(2, 2, 0, 0), crate::linalg::unit(2, 2, 1, 1)],
        };
        let (lo, _) = ascent_lower(&atoms, &x, 5, 100, 2);
        let (up, _, _) = factorization_upper(&atoms, &x, &[], &SolverOptions::default());
        assert!(lo <= up + 1e-7);
        assert!((up - 1.0).abs() < 1e-6, "{up}");
        assert!((lo - 1.0).abs() < 1e-6, "{lo}");
    }

    #[test]
    fn tuple_images_are_contractive() {
        let s = random_space(&AmbientSignature(vec![2, 1]), 2, 3).unwrap();
        let atoms = vec![
            Atom { space: s.clone(), scale: 1.0, start: 0 },
            Atom { space: full_algebra(2), scale: 0.5, start: 2 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = SpaceElement::random(&mut rng, 6, 2);
        let (lo, tuple) = ascent_lower(&atoms, &x, 4, 60, 5);
        let (up, dual, _) = factorization_upper(&atoms, &x, &[], &SolverOptions::default());
        assert!(lo <= up + 1e-7, "{lo} {up}");
        assert!(dual <= up + 1e-9);
        assert!(up <= triangle_bound(&atoms, &x) + 1e-7);
        // every restriction of the tuple is contractive on its summand at level 1
        for i in 0..2 {
            let e = SpaceElement::single(6, i, CMat::identity(1, 1));
            assert!(tuple.value(&e) <= s.level_norm(&SpaceElement::single(2, i, CMat::identity(1, 1))) + 1e-9);
        }
    }
}
