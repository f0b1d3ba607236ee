//! Completely bounded norms of maps out of `M_{p_1} + ... + M_{p_r}` and minimal-norm
//! extensions of maps defined on a subspace.
//!
//! A map `F` into `M_m` factors as `F(x) = sum_k V_k^* pi(x) W_k`; the Gram matrices of
//! the factors give the program
//!
//! ```text
//! minimize t  s.t.  [[P_l, C_l], [C_l^*, Q_l]] >= 0,
//!                   t I - sum_l Tr_in P_l >= 0,  t I - sum_l Tr_in Q_l >= 0
//! ```
//!
//! with `C_l[(a,c),(b,d)] = F(e_ab)[c,d]` the Choi matrix of the `l`-th block.
//! Free parameters of `F` on a complement of the subspace make the same program
//! compute the smallest cb-norm over all extensions.

use super::ipm::{solve, SolveStatus, SolverOptions};
use super::lmi::{free_complex_matrix, free_hermitian, AffineHerm, AffineMat, LmiProgram};
use crate::linalg::{c, hermitian_part, min_eig_herm, orthogonal_complement, CMat, I};
use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CbCertificate {
    pub status: SolveStatus,
    /// Certified upper bound on the cb-norm of the returned extension.
    pub upper: f64,
    /// Dual bound for the minimum over extensions supported on the same blocks.
    pub dual_bound: f64,
    /// Diagonal shift applied to make the returned Gram blocks positive semidefinite.
    pub repair: f64,
    /// Images of the ambient matrix units (vectorized ambient order).
    #[serde(with = "crate::json::cmat_vec")]
    pub unit_images: Vec<CMat>,
}

/// Partial trace over the input factor of a `(p m) x (p m)` matrix indexed `(a, c)`.
pub fn partial_trace_in(h: &CMat, p: usize, m: usize) -> CMat {
    CMat::from_fn(m, m, |i, j| (0..p).map(|a| h[(a * m + i, a * m + j)]).sum())
}

/// Choi matrix of block `l` from the images of its matrix units.
pub fn choi_block(images: &[CMat], p: usize, m: usize) -> CMat {
    let mut ch = CMat::zeros(p * m, p * m);
    for a in 0..p {
        for b in 0..p {
            let f = &images[a * p + b];
            for cc in 0..m {
                for d in 0..m {
                    ch[(a * m + cc, b * m + d)] = f[(cc, d)];
                }
            }
        }
    }
    ch
}

fn lambda_max(h: &CMat) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(hermitian_part(h))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

static DUMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Writes the program to `$OPFORGE_SDP_DUMP/program-<n>.json` when that variable is set.
pub fn maybe_dump(prog: &LmiProgram, tag: &str) {
    if let Ok(dir) = std::env::var("OPFORGE_SDP_DUMP") {
        let n = DUMP_COUNTER.fetch_add(1, Ordering::SeqCst);
        let path = std::path::Path::new(&dir).join(format!("{tag}-{n}.json"));
        if let Ok(s) = serde_json::to_string(prog) {
            let _ = std::fs::write(path, s);
        }
    }
}

/// Smallest certified cb-norm of a linear map `F: A -> M_m` with `F(s_i) = images[i]`,
/// where the columns of `basis` are the vectorized `s_i` in `A = M_{p_1} + ... + M_{p_r}`.
pub fn min_cb_extension(
    in_blocks: &[usize],
    m: usize,
    basis: &CMat,
    images: &[CMat],
    opts: &SolverOptions,
) -> CbCertificate {
    let dim_amb: usize = in_blocks.iter().map(|p| p * p).sum();
    assert_eq!(basis.nrows(), dim_amb, "basis rows");
    assert_eq!(basis.ncols(), images.len(), "image count");
    let d = basis.ncols();

    // orthonormalize the subspace; images follow through R^{-1}
    let (u, fixed_images) = if d > 0 {
        let qr = basis.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let rinv = r.try_inverse().expect("independent basis");
        let imgs: Vec<CMat> = (0..d)
            .map(|j| {
                let mut acc = CMat::zeros(m, m);
                for i in 0..d {
                    let s = rinv[(i, j)];
                    if s != c(0.0, 0.0) {
                        acc += &images[i] * s;
                    }
                }
                acc
            })
            .collect();
        (q, imgs)
    } else {
        (CMat::zeros(dim_amb, 0), Vec::new())
    };
    let comp = orthogonal_complement(&u);
    let nfree = comp.ncols();

    let mut prog = LmiProgram::new();
    let t = prog.add_var(1.0);
    // free images Y_j of the complement vectors, entry (c, d) re/im
    let mut free_vars: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    for j in 0..nfree {
        for cc in 0..m {
            for dd in 0..m {
                let re = prog.add_var(0.0);
                let im = prog.add_var(0.0);
                free_vars.push((j, cc, dd, re, im));
            }
        }
    }

    // affine image of each ambient unit
    let unit_affine = |uix: usize| -> (CMat, Vec<(usize, CMat)>) {
        let mut constant = CMat::zeros(m, m);
        for (i, img) in fixed_images.iter().enumerate() {
            let a = u[(uix, i)].conj();
            if a != c(0.0, 0.0) {
                constant += img * a;
            }
        }
        let mut terms = Vec::new();
        for &(j, cc, dd, re, im) in &free_vars {
            let b = comp[(uix, j)].conj();
            if b.norm() > 0.0 {
                let mut e = CMat::zeros(m, m);
                e[(cc, dd)] = b;
                terms.push((re, e.clone()));
                terms.push((im, e * I));
            }
        }
        (constant, terms)
    };

    let mut trace_p = AffineHerm::zeros(m);
    let mut trace_q = AffineHerm::zeros(m);
    let mut offset = 0;
    let mut gram_blocks: Vec<(AffineHerm, AffineHerm, AffineMat, usize)> = Vec::new();
    for &p in in_blocks {
        let pm = p * m;
        // Choi matrix as an affine map
        let mut choi = AffineMat::constant(CMat::zeros(pm, pm));
        let mut term_map: std::collections::BTreeMap<usize, CMat> = Default::default();
        for a in 0..p {
            for b in 0..p {
                let (cst, terms) = unit_affine(offset + a * p + b);
                for cc in 0..m {
                    for dd in 0..m {
                        choi.constant[(a * m + cc, b * m + dd)] = cst[(cc, dd)];
                    }
                }
                for (v, e) in terms {
                    let slot = term_map.entry(v).or_insert_with(|| CMat::zeros(pm, pm));
                    for cc in 0..m {
                        for dd in 0..m {
                            slot[(a * m + cc, b * m + dd)] += e[(cc, dd)];
                        }
                    }
                }
            }
        }
        choi.terms = term_map.into_iter().collect();
        let pvar = free_hermitian(&mut prog, pm);
        let qvar = free_hermitian(&mut prog, pm);
        for (v, e) in &pvar.terms {
            trace_p.add_term(*v, partial_trace_in(e, p, m) * c(-1.0, 0.0));
        }
        for (v, e) in &qvar.terms {
            trace_q.add_term(*v, partial_trace_in(e, p, m) * c(-1.0, 0.0));
        }
        // [[P, C], [C^*, Q]]
        let n2 = 2 * pm;
        let mut constant = CMat::zeros(n2, n2);
        constant.view_mut((0, pm), (pm, pm)).copy_from(&choi.constant);
        constant
            .view_mut((pm, 0), (pm, pm))
            .copy_from(&choi.constant.adjoint());
        let mut h = AffineHerm::constant(constant);
        for (v, e) in &pvar.terms {
            let mut z = CMat::zeros(n2, n2);
            z.view_mut((0, 0), (pm, pm)).copy_from(e);
            h.add_term(*v, z);
        }
        for (v, e) in &qvar.terms {
            let mut z = CMat::zeros(n2, n2);
            z.view_mut((pm, pm), (pm, pm)).copy_from(e);
            h.add_term(*v, z);
        }
        for (v, e) in &choi.terms {
            let mut z = CMat::zeros(n2, n2);
            z.view_mut((0, pm), (pm, pm)).copy_from(e);
            z.view_mut((pm, 0), (pm, pm)).copy_from(&e.adjoint());
            h.add_term(*v, z);
        }
        h.push_into(&mut prog);
        gram_blocks.push((pvar, qvar, choi, p));
        offset += p * p;
    }
    trace_p.add_term(t, CMat::identity(m, m));
    trace_q.add_term(t, CMat::identity(m, m));
    trace_p.push_into(&mut prog);
    trace_q.push_into(&mut prog);

    maybe_dump(&prog, "cb-extension");
    let sol = solve(&prog, opts);
    let y = &sol.y;

    // repair and exact re-evaluation
    let mut repair = 0.0f64;
    let mut sum_p = CMat::zeros(m, m);
    let mut sum_q = CMat::zeros(m, m);
    for (pvar, qvar, choi, p) in &gram_blocks {
        let pm = p * m;
        let pv = hermitian_part(&pvar.eval(y));
        let qv = hermitian_part(&qvar.eval(y));
        let cv = choi.eval(y);
        let mut g = CMat::zeros(2 * pm, 2 * pm);
        g.view_mut((0, 0), (pm, pm)).copy_from(&pv);
        g.view_mut((pm, pm), (pm, pm)).copy_from(&qv);
        g.view_mut((0, pm), (pm, pm)).copy_from(&cv);
        g.view_mut((pm, 0), (pm, pm)).copy_from(&cv.adjoint());
        let lam = min_eig_herm(&g);
        let shift = if lam < 0.0 { -lam * (1.0 + 1e-9) + 1e-15 } else { 0.0 };
        repair = repair.max(shift);
        let id = CMat::identity(pm, pm) * c(shift, 0.0);
        sum_p += partial_trace_in(&(pv + &id), *p, m);
        sum_q += partial_trace_in(&(qv + id), *p, m);
    }
    let upper = lambda_max(&sum_p).max(lambda_max(&sum_q)).max(0.0);

    let unit_images: Vec<CMat> = (0..dim_amb)
        .map(|uix| {
            let (cst, terms) = unit_affine(uix);
            let mut f = cst;
            for (v, e) in terms {
                f += e * c(y[v], 0.0);
            }
            f
        })
        .collect();

    CbCertificate {
        status: sol.status,
        upper,
        dual_bound: sol.dual_value.min(upper),
        repair,
        unit_images,
    }
}

/// cb-norm upper bound of a map given on all of `A` by the images of its matrix units.
pub fn cb_norm_of_units(in_blocks: &[usize], m: usize, unit_images: &[CMat], opts: &SolverOptions) -> CbCertificate {
    let dim_amb: usize = in_blocks.iter().map(|p| p * p).sum();
    let basis = CMat::identity(dim_amb, dim_amb);
    min_cb_extension(in_blocks, m, &basis, unit_images, opts)
}

/// Result of a contractive-extension request.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtensionResult {
    pub status: SolveStatus,
    pub certificate: CbCertificate,
    pub target: f64,
}

/// Looks for an extension `F: A -> M_m` of the partial map with `||F||_cb <= target`.
/// `Infeasible` means the smallest certified extension norm exceeds the target by more
/// than `1e-7`.
pub fn solve_contractive_extension(
    in_blocks: &[usize],
    m: usize,
    basis: &CMat,
    images: &[CMat],
    target: f64,
) -> ExtensionResult {
    let cert = min_cb_extension(in_blocks, m, basis, images, &SolverOptions::from_env());
    let status = if cert.upper <= target + 1e-7 {
        SolveStatus::Optimal
    } else if cert.status == SolveStatus::Failure && cert.dual_bound <= target {
        SolveStatus::Failure
    } else {
        SolveStatus::Infeasible
    };
    ExtensionResult {
        status,
        certificate: cert,
        target,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NearestContraction {
    pub status: SolveStatus,
    /// Lower bound on `min max_i ||targets_i - F(s_i)||` over complete contractions `F`.
    pub lower: f64,
    /// `max_i ||targets_i - F(s_i)||` for the returned `F`, rescaled to be contractive.
    pub upper: f64,
    /// `F(s_i)`.
    #[serde(with = "crate::json::cmat_vec")]
    pub images: Vec<CMat>,
}

/// Distance from the targets to the images of the `s_i` (columns of `basis`) under
/// complete contractions `A -> M_m`:
///
/// ```text
/// minimize s  s.t.  [[P_l, C_l], [C_l^*, Q_l]] >= 0,  I - sum_l Tr_in P_l >= 0,
///                   I - sum_l Tr_in Q_l >= 0,  ||targets_i - F(s_i)|| <= s
/// ```
pub fn nearest_contraction(
    in_blocks: &[usize],
    m: usize,
    basis: &CMat,
    targets: &[CMat],
    opts: &SolverOptions,
) -> NearestContraction {
    let dim_amb: usize = in_blocks.iter().map(|p| p * p).sum();
    assert_eq!(basis.nrows(), dim_amb, "basis rows");
    assert_eq!(basis.ncols(), targets.len(), "target count");
    let mut prog = LmiProgram::new();
    let s = prog.add_var(1.0);
    let units: Vec<AffineMat> = (0..dim_amb).map(|_| free_complex_matrix(&mut prog, m, m)).collect();
    let mut trace_p = AffineHerm::constant(CMat::identity(m, m));
    let mut trace_q = AffineHerm::constant(CMat::identity(m, m));
    let mut offset = 0;
    let mut gram: Vec<(AffineHerm, AffineHerm, usize, usize)> = Vec::new();
    for &p in in_blocks {
        let pm = p * m;
        let pvar = free_hermitian(&mut prog, pm);
        let qvar = free_hermitian(&mut prog, pm);
        for (v, e) in &pvar.terms {
            trace_p.add_term(*v, partial_trace_in(e, p, m) * c(-1.0, 0.0));
        }
        for (v, e) in &qvar.terms {
            trace_q.add_term(*v, partial_trace_in(e, p, m) * c(-1.0, 0.0));
        }
        let n2 = 2 * pm;
        let mut h = AffineHerm::zeros(n2);
        for (v, e) in &pvar.terms {
            let mut z = CMat::zeros(n2, n2);
            z.view_mut((0, 0), (pm, pm)).copy_from(e);
            h.add_term(*v, z);
        }
        for (v, e) in &qvar.terms {
            let mut z = CMat::zeros(n2, n2);
            z.view_mut((pm, pm), (pm, pm)).copy_from(e);
            h.add_term(*v, z);
        }
        for a in 0..p {
            for b in 0..p {
                for (v, e) in &units[offset + a * p + b].terms {
                    let mut z = CMat::zeros(n2, n2);
                    for cc in 0..m {
                        for dd in 0..m {
                            z[(a * m + cc, pm + b * m + dd)] = e[(cc, dd)];
                            z[(pm + b * m + dd, a * m + cc)] = e[(cc, dd)].conj();
                        }
                    }
                    h.add_term(*v, z);
                }
            }
        }
        h.push_into(&mut prog);
        gram.push((pvar, qvar, p, offset));
        offset += p * p;
    }
    trace_p.push_into(&mut prog);
    trace_q.push_into(&mut prog);
    let image_of = |i: usize| -> AffineMat {
        let mut acc = AffineMat::constant(CMat::zeros(m, m));
        for (u, unit) in units.iter().enumerate() {
            let w = basis[(u, i)];
            if w != c(0.0, 0.0) {
                acc.add(&unit.scale(w));
            }
        }
        acc
    };
    for (i, t) in targets.iter().enumerate() {
        let mut diff = image_of(i).scale(c(-1.0, 0.0));
        diff.constant += t;
        diff.dilation(Some(s), 0.0).push_into(&mut prog);
    }
    maybe_dump(&prog, "nearest-contraction");
    let sol = solve(&prog, opts);
    let y = &sol.y;
    let unit_vals: Vec<CMat> = units.iter().map(|u| u.eval(y)).collect();
    // certified cb-norm of the returned map, then rescale into the unit ball
    let mut sum_p = CMat::zeros(m, m);
    let mut sum_q = CMat::zeros(m, m);
    for (pvar, qvar, p, off) in &gram {
        let pm = p * m;
        let pv = hermitian_part(&pvar.eval(y));
        let qv = hermitian_part(&qvar.eval(y));
        let cv = choi_block(&unit_vals[*off..off + p * p], *p, m);
        let mut g = CMat::zeros(2 * pm, 2 * pm);
        g.view_mut((0, 0), (pm, pm)).copy_from(&pv);
        g.view_mut((pm, pm), (pm, pm)).copy_from(&qv);
        g.view_mut((0, pm), (pm, pm)).copy_from(&cv);
        g.view_mut((pm, 0), (pm, pm)).copy_from(&cv.adjoint());
        let lam = min_eig_herm(&g);
        let shift = if lam < 0.0 { -lam * (1.0 + 1e-9) + 1e-15 } else { 0.0 };
        let id = CMat::identity(pm, pm) * c(shift, 0.0);
        sum_p += partial_trace_in(&(pv + &id), *p, m);
        sum_q += partial_trace_in(&(qv + id), *p, m);
    }
    let cb = lambda_max(&sum_p).max(lambda_max(&sum_q)).max(0.0);
    let scale = if cb > 1.0 { 1.0 / cb } else { 1.0 };
    let images: Vec<CMat> = (0..targets.len())
        .map(|i| image_of(i).eval(y) * c(scale, 0.0))
        .collect();
    let upper = targets
        .iter()
        .zip(&images)
        .map(|(t, v)| crate::linalg::spectral_norm(&(t - v)))
        .fold(0.0, f64::max);
    NearestContraction {
        status: sol.status,
        lower: sol.dual_value.max(0.0).min(upper),
        upper,
        images,
    }
}

/// Transpose on `M_n` as images of matrix units.
pub fn transpose_units(n: usize) -> Vec<CMat> {
    (0..n * n)
        .map(|u| crate::linalg::unit(n, n, u % n, u / n))
        .collect()
}

#[doc(hidden)]
pub fn identity_units(n: usize) -> Vec<CMat> {
    (0..n * n)
        .map(|u| crate::linalg::unit(n, n, u / n, u % n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{trace_norm, unit, ONE};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn identity_has_cb_norm_one() {
        let r = cb_norm_of_units(&[2], 2, &identity_units(2), &opts());
        assert!((r.upper - 1.0).abs() < 1e-7, "{}", r.upper);
    }

    #[test]
    fn transpose_cb_norm_is_n() {
        for n in 2..=3 {
            let r = cb_norm_of_units(&[n], n, &transpose_units(n), &opts());
            assert!((r.upper - n as f64).abs() < 1e-6, "n={n} {}", r.upper);
            assert!(r.dual_bound <= r.upper + 1e-9);
        }
    }

    #[test]
    fn functional_norm_is_trace_norm() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.5), c(0.3, 0.0), c(-0.2, 1.0), c(0.7, 0.0)]);
        // x -> tr(a^* x): image of e_ab is conj(a_ab)
        let units: Vec<CMat> = (0..4)
            .map(|u| CMat::from_element(1, 1, a[(u / 2, u % 2)].conj()))
            .collect();
        let r = cb_norm_of_units(&[2], 1, &units, &opts());
        assert!((r.upper - trace_norm(&a)).abs() < 1e-6);
    }

    #[test]
    fn diagonal_coordinate_extends_contractively() {
        // X = diagonal of M_2, partial = first diagonal coordinate
        let basis = CMat::from_fn(4, 2, |i, j| if (j == 0 && i == 0) || (j == 1 && i == 3) { ONE } else { c(0.0, 0.0) });
        let images = vec![CMat::from_element(1, 1, ONE), CMat::zeros(1, 1)];
        let r = solve_contractive_extension(&[2], 1, &basis, &images, 1.0);
        assert_eq!(r.status, SolveStatus::Optimal);
        // the extension agrees with the partial map on X
        let f = &r.certificate.unit_images;
        assert!((f[0][(0, 0)] - ONE).norm() < 1e-9);
        assert!(f[3][(0, 0)].norm() < 1e-9);
        let again = cb_norm_of_units(&[2], 1, f, &opts());
        assert!(again.upper <= 1.0 + 1e-7);
    }

    #[test]
    fn undersized_target_is_infeasible() {
        let basis = CMat::identity(4, 4);
        let r = solve_contractive_extension(&[2], 2, &basis, &identity_units(2), 0.5);
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.certificate.dual_bound > 0.5);
    }

    #[test]
    fn two_block_ambient() {
        // x -> x_1 + x_2 on M_1 + M_1 into M_1: norm 2
        let units = vec![CMat::from_element(1, 1, ONE), CMat::from_element(1, 1, ONE)];
        let r = cb_norm_of_units(&[1, 1], 1, &units, &opts());
        assert!((r.upper - 2.0).abs() < 1e-7);
        let _ = unit(1, 1, 0, 0);
    }
}
