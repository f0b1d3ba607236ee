//! Dense complex linear algebra used throughout the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Matrix unit `e_{ij}` of size `rows x cols`.
pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    m[(i, j)] = ONE;
    m
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn trace_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().sum()
}

/// Top singular triplet `(sigma, u, v)` with `m v = sigma u`.
pub fn top_singular(m: &CMat) -> (f64, CVec, CVec) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let mut best = 0;
    for k in 0..svd.singular_values.len() {
        if svd.singular_values[k] > svd.singular_values[best] {
            best = k;
        }
    }
    let v = vt.row(best).adjoint();
    (svd.singular_values[best], u.column(best).into_owned(), v)
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]`.
pub fn realify(h: &CMat) -> RMat {
    let (r, cc) = h.shape();
    let mut out = RMat::zeros(2 * r, 2 * cc);
    for i in 0..r {
        for j in 0..cc {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + r, j + cc)] = z.re;
            out[(i, j + cc)] = -z.im;
            out[(i + r, j)] = z.im;
        }
    }
    out
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Complex Ginibre matrix: entries `(g1 + i g2)/sqrt(2)` with standard normal `g`.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        c(a * s, b * s)
    })
}

/// Haar-ish unitary from the QR factorization of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = ginibre(rng, n, n);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = q.clone();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            out[(i, j)] = q[(i, j)] * ph;
        }
    }
    out
}

/// Numerical rank of the matrix whose rows are `rows`, relative tolerance `tol`.
pub fn rank_of_rows(rows: &[CVec], tol: f64) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let n = rows[0].len();
    let m = CMat::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * top).count()
}

/// Smallest over largest singular value.
pub fn inverse_condition(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Orthonormal basis of the orthogonal complement of the column span of `a`
/// (columns assumed linearly independent) inside `C^n`.
pub fn orthogonal_complement(a: &CMat) -> CMat {
    let n = a.nrows();
    let mut basis: Vec<CVec> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let p = b.dotc(&v);
                v -= b * p;
            }
        }
        let nv = v.norm();
        if nv > 1e-12 {
            basis.push(v / c(nv, 0.0));
        }
    }
    let start = basis.len();
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = CVec::zeros(n);
        v[k] = ONE;
        for _ in 0..2 {
            for b in &basis {
                let p = b.dotc(&v);
                v -= b * p;
            }
        }
        let nv = v.norm();
        if nv > 0.5 {
            basis.push(v / c(nv, 0.0));
        }
    }
    let extra = &basis[start..];
    CMat::from_fn(n, extra.len(), |i, j| extra[j][i])
}

/// Least-squares solution of `a x = b` by SVD pseudo-inverse.
pub fn lstsq(a: &CMat, b: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(b, 1e-13 * top.max(1e-300))
        .expect("svd computed with both factors")
}

/// Inverse of a square complex matrix with a conditioning report.
pub fn inverse_checked(a: &CMat) -> Option<CMat> {
    a.clone().try_inverse()
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eig_sym(a: &RMat) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    nalgebra::SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eig_herm(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    nalgebra::SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Place `blocks` on the diagonal of a larger matrix.
pub fn block_diag(blocks: &[&CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut cc) = (0, 0);
    for b in blocks {
        out.view_mut((r, cc), b.shape()).copy_from(*b);
        r += b.nrows();
        cc += b.ncols();
    }
    out
}

/// Frobenius inner product `tr(a^* b)`.
pub fn inner(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn realify_preserves_spectrum_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ginibre(&mut rng, 4, 4);
        let h = hermitian_part(&g);
        let r = realify(&h);
        let lam_c = min_eig_herm(&h);
        let lam_r = min_eig_sym(&r);
        assert!((lam_c - lam_r).abs() < 1e-12);
        // spectral norm of a non-Hermitian matrix is preserved too
        let rg = realify(&g);
        let n_r = rg.singular_values().iter().cloned().fold(0.0, f64::max);
        assert!((n_r - spectral_norm(&g)).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = ginibre(&mut rng, 6, 2);
        let q = orthogonal_complement(&a);
        assert_eq!(q.ncols(), 4);
        let g = q.adjoint() * &q;
        assert!((g - CMat::identity(4, 4)).norm() < 1e-12);
        assert!((q.adjoint() * &a).norm() < 1e-12);
    }

    #[test]
    fn top_singular_triplet() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ginibre(&mut rng, 3, 5);
        let (s, u, v) = top_singular(&m);
        assert!((&m * &v - &u * c(s, 0.0)).norm() < 1e-12);
        assert!((s - spectral_norm(&m)).abs() < 1e-12);
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(&mut rng, 4);
        assert!((u.adjoint() * &u - CMat::identity(4, 4)).norm() < 1e-12);
    }
}
