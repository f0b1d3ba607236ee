//! Concrete matrix-normed spaces: finite-dimensional subspaces of `M_{m_1} + ... + M_{m_r}`
//! with the operator norm at every matrix level.

use crate::error::{OpError, Result};
use crate::linalg::{c, ginibre, kron, rank_of_rows, spectral_norm, CMat, CVec, ONE};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const INDEPENDENCE_TOL: f64 = 1e-10;

/// Block sizes of the ambient algebra.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmbientSignature(pub Vec<usize>);

impl AmbientSignature {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|&m| m == 0) {
            return Err(OpError::DimensionMismatch(format!(
                "ambient blocks must be nonempty and positive: {blocks:?}"
            )));
        }
        Ok(AmbientSignature(blocks))
    }

    pub fn blocks(&self) -> &[usize] {
        &self.0
    }

    /// Complex dimension of the ambient algebra.
    pub fn dim(&self) -> usize {
        self.0.iter().map(|m| m * m).sum()
    }

    /// Offset of block `j` inside the vectorized ambient.
    pub fn offset(&self, j: usize) -> usize {
        self.0[..j].iter().map(|m| m * m).sum()
    }

    pub fn max_block(&self) -> usize {
        self.0.iter().cloned().max().unwrap_or(0)
    }
}

/// One matrix per ambient block.
pub type MatrixTuple = Vec<CMat>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcreteSpace {
    pub ambient: AmbientSignature,
    #[serde(with = "crate::json::cmat_vec_vec")]
    pub basis: Vec<MatrixTuple>,
    pub label: String,
}

/// A level-`k` element `sum_i alpha_i (x) b_i`, stored as the `alpha_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceElement {
    pub level: usize,
    #[serde(with = "crate::json::cmat_vec")]
    pub coeffs: Vec<CMat>,
}

impl SpaceElement {
    pub fn new(level: usize, coeffs: Vec<CMat>) -> Result<Self> {
        if coeffs.iter().any(|a| a.shape() != (level, level)) {
            return Err(OpError::DimensionMismatch(format!(
                "coefficients must be {level}x{level}"
            )));
        }
        Ok(SpaceElement { level, coeffs })
    }

    pub fn zero(dim: usize, level: usize) -> Self {
        SpaceElement {
            level,
            coeffs: vec![CMat::zeros(level, level); dim],
        }
    }

    /// Level-1 element with the given coordinates.
    pub fn scalar(coords: &[Complex64]) -> Self {
        SpaceElement {
            level: 1,
            coeffs: coords.iter().map(|&z| CMat::from_element(1, 1, z)).collect(),
        }
    }

    /// `e_ij (x) b_l` type elements: `alpha (x) b_index` at level `alpha.nrows()`.
    pub fn single(dim: usize, index: usize, alpha: CMat) -> Self {
        let k = alpha.nrows();
        let mut x = Self::zero(dim, k);
        x.coeffs[index] = alpha;
        x
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn add(&self, other: &SpaceElement) -> SpaceElement {
        SpaceElement {
            level: self.level,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &SpaceElement) -> SpaceElement {
        self.add(&other.scale(c(-1.0, 0.0)))
    }

    pub fn scale(&self, s: Complex64) -> SpaceElement {
        SpaceElement {
            level: self.level,
            coeffs: self.coeffs.iter().map(|a| a * s).collect(),
        }
    }

    /// `alpha . x . beta` with rectangular scalar matrices.
    pub fn sandwich(&self, alpha: &CMat, beta: &CMat) -> SpaceElement {
        SpaceElement {
            level: alpha.nrows(),
            coeffs: self.coeffs.iter().map(|a| alpha * a * beta).collect(),
        }
    }

    /// Block diagonal `diag(x, y)`.
    pub fn direct_sum(&self, other: &SpaceElement) -> SpaceElement {
        let k = self.level + other.level;
        SpaceElement {
            level: k,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| crate::linalg::block_diag(&[a, b]))
                .collect(),
        }
    }

    /// Coefficients mixed by a `dim_out x dim` matrix: `y_j = sum_i t_{ji} alpha_i`.
    pub fn transform(&self, t: &CMat) -> SpaceElement {
        let k = self.level;
        let coeffs = (0..t.nrows())
            .map(|j| {
                let mut m = CMat::zeros(k, k);
                for (i, a) in self.coeffs.iter().enumerate() {
                    let s = t[(j, i)];
                    if s != Complex64::new(0.0, 0.0) {
                        m += a * s;
                    }
                }
                m
            })
            .collect();
        SpaceElement { level: k, coeffs }
    }

    /// Level-1 coordinates as a vector.
    pub fn coords(&self) -> CVec {
        assert_eq!(self.level, 1);
        CVec::from_iterator(self.coeffs.len(), self.coeffs.iter().map(|a| a[(0, 0)]))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize, level: usize) -> Self {
        SpaceElement {
            level,
            coeffs: (0..dim).map(|_| ginibre(rng, level, level)).collect(),
        }
    }
}

impl ConcreteSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn blocks(&self) -> &[usize] {
        self.ambient.blocks()
    }

    /// Vectorized ambient coordinates of a matrix tuple (row-major per block).
    pub fn vectorize(ambient: &AmbientSignature, t: &MatrixTuple) -> CVec {
        let mut v = CVec::zeros(ambient.dim());
        let mut o = 0;
        for (j, &m) in ambient.blocks().iter().enumerate() {
            for a in 0..m {
                for b in 0..m {
                    v[o + a * m + b] = t[j][(a, b)];
                }
            }
            o += m * m;
        }
        v
    }

    pub fn devectorize(ambient: &AmbientSignature, v: &CVec) -> MatrixTuple {
        let mut o = 0;
        ambient
            .blocks()
            .iter()
            .map(|&m| {
                let t = CMat::from_fn(m, m, |a, b| v[o + a * m + b]);
                o += m * m;
                t
            })
            .collect()
    }

    /// `D x d` matrix whose columns are the vectorized basis.
    pub fn basis_matrix(&self) -> CMat {
        let d = self.dim();
        let cols: Vec<CVec> = self
            .basis
            .iter()
            .map(|t| Self::vectorize(&self.ambient, t))
            .collect();
        CMat::from_fn(self.ambient.dim(), d, |i, j| cols[j][i])
    }

    /// Ambient block `j` of `sum_i alpha_i (x) b_i`.
    pub fn element_block(&self, x: &SpaceElement, j: usize) -> CMat {
        let m = self.ambient.0[j];
        let k = x.level;
        let mut out = CMat::zeros(k * m, k * m);
        for (a, b) in x.coeffs.iter().zip(&self.basis) {
            if a.iter().any(|z| z.norm() != 0.0) {
                out += kron(a, &b[j]);
            }
        }
        out
    }

    pub fn element_blocks(&self, x: &SpaceElement) -> Vec<CMat> {
        (0..self.ambient.0.len())
            .map(|j| self.element_block(x, j))
            .collect()
    }

    /// The level-1 element as an ambient tuple.
    pub fn tuple_of(&self, coords: &CVec) -> MatrixTuple {
        self.ambient
            .blocks()
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let mut t = CMat::zeros(m, m);
                for (i, b) in self.basis.iter().enumerate() {
                    t += &b[j] * coords[i];
                }
                t
            })
            .collect()
    }

    pub fn level_norm(&self, x: &SpaceElement) -> f64 {
        assert_eq!(x.coeffs.len(), self.dim(), "element dimension");
        (0..self.ambient.0.len())
            .map(|j| spectral_norm(&self.element_block(x, j)))
            .fold(0.0, f64::max)
    }

    /// Coordinates of an ambient tuple in this basis (least squares) and the residual norm.
    pub fn coordinates_of(&self, t: &MatrixTuple) -> (CVec, f64) {
        let b = self.basis_matrix();
        let v = Self::vectorize(&self.ambient, t);
        let rhs = CMat::from_column_slice(v.len(), 1, v.as_slice());
        let x = crate::linalg::lstsq(&b, &rhs);
        let res = (&b * &x - rhs).norm();
        (x.column(0).into_owned(), res)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SpaceFile::from(self)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: SpaceFile =
            serde_json::from_str(s).map_err(|e| OpError::Invalid(e.to_string()))?;
        make_space_labeled(AmbientSignature::new(f.ambient)?, f.basis, f.label)
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    #[serde(default = "schema")]
    schema: String,
    ambient: Vec<usize>,
    #[serde(with = "crate::json::cmat_vec_vec")]
    basis: Vec<MatrixTuple>,
    #[serde(default)]
    label: String,
}

fn schema() -> String {
    crate::json::SCHEMA.to_string()
}

impl From<&ConcreteSpace> for SpaceFile {
    fn from(s: &ConcreteSpace) -> Self {
        SpaceFile {
            schema: schema(),
            ambient: s.ambient.0.clone(),
            basis: s.basis.clone(),
            label: s.label.clone(),
        }
    }
}

pub fn make_space(ambient: AmbientSignature, basis: Vec<MatrixTuple>) -> Result<ConcreteSpace> {
    make_space_labeled(ambient, basis, String::new())
}

pub fn make_space_labeled(
    ambient: AmbientSignature,
    basis: Vec<MatrixTuple>,
    label: String,
) -> Result<ConcreteSpace> {
    if basis.is_empty() {
        return Err(OpError::DimensionMismatch("empty basis".into()));
    }
    for t in &basis {
        if t.len() != ambient.0.len()
            || t.iter().zip(&ambient.0).any(|(m, &s)| m.shape() != (s, s))
        {
            return Err(OpError::DimensionMismatch(format!(
                "tuple does not conform to ambient {:?}",
                ambient.0
            )));
        }
        if t.iter().flat_map(|m| m.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(OpError::Invalid("non-finite entry".into()));
        }
    }
    let rows: Vec<CVec> = basis
        .iter()
        .map(|t| ConcreteSpace::vectorize(&ambient, t))
        .collect();
    let rank = rank_of_rows(&rows, INDEPENDENCE_TOL);
    if rank < basis.len() {
        return Err(OpError::LinearlyDependentBasis {
            rank,
            dim: basis.len(),
        });
    }
    Ok(ConcreteSpace {
        ambient,
        basis,
        label,
    })
}

/// `l^inf(k)`: the diagonal of `k` one-dimensional blocks.
pub fn build_linfty(k: usize) -> ConcreteSpace {
    let ambient = AmbientSignature(vec![1; k]);
    let basis = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| CMat::from_element(1, 1, if i == j { ONE } else { c(0.0, 0.0) }))
                .collect()
        })
        .collect();
    ConcreteSpace {
        ambient,
        basis,
        label: format!("linf{k}"),
    }
}

/// The full algebra `M_m` with matrix units as basis.
pub fn full_algebra(m: usize) -> ConcreteSpace {
    let basis = (0..m * m)
        .map(|u| vec![crate::linalg::unit(m, m, u / m, u % m)])
        .collect();
    ConcreteSpace {
        ambient: AmbientSignature(vec![m]),
        basis,
        label: format!("M{m}"),
    }
}

pub fn random_space(ambient: &AmbientSignature, dim: usize, seed: u64) -> Result<ConcreteSpace> {
    if dim == 0 || dim > ambient.dim() {
        return Err(OpError::DimensionMismatch(format!(
            "dimension {dim} not in 1..={}",
            ambient.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let basis: Vec<MatrixTuple> = (0..dim)
            .map(|_| ambient.0.iter().map(|&m| ginibre(&mut rng, m, m)).collect())
            .collect();
        if let Ok(s) = make_space_labeled(ambient.clone(), basis, format!("random-{seed}")) {
            return Ok(s);
        }
    }
    Err(OpError::RandomnessExhausted(ATTEMPTS))
}

/// Outcome of a randomized axiom check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub max_ruan_violation: f64,
    pub max_linf_violation: f64,
    pub max_module_violation: f64,
}

impl AxiomReport {
    pub fn max_violation(&self) -> f64 {
        self.max_ruan_violation
            .max(self.max_linf_violation)
            .max(self.max_module_violation)
    }
}

/// Relative excess of `||sum alpha_i x_i beta_i||` over
/// `||sum alpha_i alpha_i^*||^{1/2} max ||x_i|| ||sum beta_i^* beta_i||^{1/2}`.
pub fn ruan_violation<N: Fn(&SpaceElement) -> f64>(
    norm: &N,
    xs: &[SpaceElement],
    alphas: &[CMat],
    betas: &[CMat],
) -> f64 {
    let k = alphas[0].nrows();
    let dim = xs[0].dim();
    let mut lhs = SpaceElement::zero(dim, k);
    let mut aa = CMat::zeros(k, k);
    let mut bb = CMat::zeros(k, k);
    let mut xmax = 0.0f64;
    for ((x, a), b) in xs.iter().zip(alphas).zip(betas) {
        lhs = lhs.add(&x.sandwich(a, b));
        aa += a * a.adjoint();
        bb += b.adjoint() * b;
        xmax = xmax.max(norm(x));
    }
    let rhs = spectral_norm(&aa).sqrt() * xmax * spectral_norm(&bb).sqrt();
    (norm(&lhs) - rhs) / rhs.max(1.0)
}

/// Random check of the Ruan inequality, the L-infinity condition and the module
/// inequality `||a x b|| <= ||a|| ||x|| ||b||` for an arbitrary level-norm oracle.
pub fn check_ruan_with<N: Fn(&SpaceElement) -> f64>(
    norm: N,
    dim: usize,
    max_level: usize,
    samples: usize,
    seed: u64,
) -> AxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AxiomReport {
        samples,
        max_ruan_violation: 0.0,
        max_linf_violation: 0.0,
        max_module_violation: 0.0,
    };
    for _ in 0..samples {
        let k = rng.random_range(1..=max_level);
        let count = rng.random_range(1..=3);
        let mut xs = Vec::new();
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        for _ in 0..count {
            let ki = rng.random_range(1..=max_level);
            xs.push(SpaceElement::random(&mut rng, dim, ki));
            alphas.push(ginibre(&mut rng, k, ki));
            betas.push(ginibre(&mut rng, ki, k));
        }
        let v = ruan_violation(&norm, &xs, &alphas, &betas);
        report.max_ruan_violation = report.max_ruan_violation.max(v);

        let ky = rng.random_range(1..=max_level);
        let y = SpaceElement::random(&mut rng, dim, ky);
        let x = &xs[0];
        let nd = norm(&x.direct_sum(&y));
        let nm = norm(x).max(norm(&y));
        report.max_linf_violation = report
            .max_linf_violation
            .max((nd - nm).abs() / nm.max(1.0));

        let a = &alphas[0];
        let b = &betas[0];
        let lhs = norm(&x.sandwich(a, b));
        let rhs = spectral_norm(a) * norm(x) * spectral_norm(b);
        report.max_module_violation = report
            .max_module_violation
            .max((lhs - rhs) / rhs.max(1.0));
    }
    report
}

pub fn check_ruan(space: &ConcreteSpace, samples: usize, seed: u64, _tol: f64) -> AxiomReport {
    check_ruan_with(|x| space.level_norm(x), space.dim(), 3, samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit;

    #[test]
    fn full_algebra_is_accepted() {
        let s = full_algebra(2);
        assert_eq!(s.dim(), 4);
        let again = make_space(s.ambient.clone(), s.basis.clone()).unwrap();
        assert_eq!(again.dim(), 4);
    }

    #[test]
    fn duplicate_vector_rejected() {
        let e11 = vec![unit(2, 2, 0, 0)];
        let r = make_space(AmbientSignature(vec![2]), vec![e11.clone(), e11]);
        assert!(matches!(r, Err(OpError::LinearlyDependentBasis { .. })));
    }

    #[test]
    fn nonconforming_rejected() {
        let r = make_space(AmbientSignature(vec![2]), vec![vec![unit(3, 3, 0, 0)]]);
        assert!(matches!(r, Err(OpError::DimensionMismatch(_))));
    }

    #[test]
    fn identity_has_norm_one() {
        let s = full_algebra(2);
        let x = SpaceElement::scalar(&[ONE, c(0.0, 0.0), c(0.0, 0.0), ONE]);
        assert!((s.level_norm(&x) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn linfty_max_modulus() {
        let s = build_linfty(2);
        let x = SpaceElement::scalar(&[c(3.0, 0.0), c(0.0, 4.0)]);
        assert!((s.level_norm(&x) - 4.0).abs() < 1e-14);
        assert_eq!(build_linfty(1).dim(), 1);
    }

    #[test]
    fn direct_sum_is_max() {
        let s = random_space(&AmbientSignature(vec![2, 3]), 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = SpaceElement::random(&mut rng, 3, 2);
        let y = SpaceElement::random(&mut rng, 3, 1);
        let d = s.level_norm(&x.direct_sum(&y));
        assert!((d - s.level_norm(&x).max(s.level_norm(&y))).abs() < 1e-12);
    }

    #[test]
    fn random_space_is_deterministic() {
        let a = AmbientSignature(vec![2]);
        let s1 = random_space(&a, 2, 9).unwrap();
        let s2 = random_space(&a, 2, 9).unwrap();
        assert_eq!(s1.basis, s2.basis);
        assert!(random_space(&a, 5, 9).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let s = random_space(&AmbientSignature(vec![2, 1]), 3, 17).unwrap();
        let t = ConcreteSpace::from_json(&s.to_json()).unwrap();
        assert_eq!(s.basis, t.basis);
        assert_eq!(s.ambient, t.ambient);
    }

    #[test]
    fn concrete_space_satisfies_axioms() {
        let s = random_space(&AmbientSignature(vec![2, 2]), 3, 3).unwrap();
        let r = check_ruan(&s, 100, 5, 1e-10);
        assert!(r.max_violation() <= 1e-10, "{r:?}");
    }

    #[test]
    fn one_dimensional_linf_check() {
        let s = build_linfty(1);
        let r = check_ruan(&s, 50, 1, 1e-10);
        assert!(r.max_linf_violation <= 1e-12);
    }

    #[test]
    fn halved_level_is_caught() {
        // norm halved at level 2 only
        let s = full_algebra(2);
        let fake = |x: &SpaceElement| {
            let v = s.level_norm(x);
            if x.level == 2 {
                0.5 * v
            } else {
                v
            }
        };
        let y = SpaceElement::single(4, 0, CMat::identity(1, 1));
        let x = y.direct_sum(&SpaceElement::zero(4, 1));
        let alpha = CMat::from_row_slice(1, 2, &[ONE, c(0.0, 0.0)]);
        let beta = CMat::from_column_slice(2, 1, &[ONE, c(0.0, 0.0)]);
        let v = ruan_violation(&fake, &[x], &[alpha], &[beta]);
        assert!(v > 0.4, "{v}");
    }
}
