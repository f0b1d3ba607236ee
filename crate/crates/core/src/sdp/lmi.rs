//! Linear matrix inequality programs in the form
//!
//! ```text
//! minimize  c . y   subject to  F_b(y) = F_b0 + sum_i y_i F_bi >= 0  for every block b
//! ```
//!
//! Complex Hermitian blocks are stored through the real embedding
//! `[[Re H, -Im H], [Im H, Re H]]`, which is positive semidefinite exactly when
//! `H` is.

use crate::linalg::{realify, CMat, RMat};
use serde::{Deserialize, Serialize};

/// One symmetric coefficient matrix stored as explicit `(row, col, value)` entries
/// (both triangles present).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseSym {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn from_dense(m: &RMat) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        SparseSym { entries }
    }

    pub fn to_dense(&self, n: usize) -> RMat {
        let mut m = RMat::zeros(n, n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// `<self, m>` for dense `m`.
    #[inline]
    pub fn dot(&self, m: &RMat) -> f64 {
        self.entries.iter().map(|&(i, j, v)| v * m[(i, j)]).sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmiBlock {
    pub dim: usize,
    pub constant: RMat,
    pub terms: Vec<(usize, SparseSym)>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LmiProgram {
    pub cost: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
}

impl LmiProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    /// Adds a scalar variable with objective coefficient `cost`.
    pub fn add_var(&mut self, cost: f64) -> usize {
        self.cost.push(cost);
        self.cost.len() - 1
    }

    pub fn add_vars(&mut self, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.add_var(0.0)).collect()
    }

    /// Adds the real block `constant + sum y_i term_i >= 0`. Terms must be symmetric.
    pub fn add_real_block(&mut self, constant: RMat, terms: Vec<(usize, RMat)>) {
        let dim = constant.nrows();
        let mut merged: Vec<(usize, RMat)> = Vec::new();
        for (v, m) in terms {
            if let Some(slot) = merged.iter_mut().find(|(w, _)| *w == v) {
                slot.1 += m;
            } else {
                merged.push((v, m));
            }
        }
        let terms = merged
            .into_iter()
            .map(|(v, m)| (v, SparseSym::from_dense(&m)))
            .filter(|(_, s)| !s.entries.is_empty())
            .collect();
        self.blocks.push(LmiBlock {
            dim,
            constant,
            terms,
        });
    }

    /// Adds the Hermitian block `constant + sum y_i term_i >= 0` (terms Hermitian).
    pub fn add_hermitian_block(&mut self, constant: &CMat, terms: Vec<(usize, CMat)>) {
        let terms = terms.into_iter().map(|(v, m)| (v, realify(&m))).collect();
        self.add_real_block(realify(constant), terms);
    }

    /// Value of `F_b(y)` for block `b`.
    pub fn block_value(&self, b: usize, y: &[f64]) -> RMat {
        let blk = &self.blocks[b];
        let mut m = blk.constant.clone();
        for (v, s) in &blk.terms {
            for &(i, j, a) in &s.entries {
                m[(i, j)] += y[*v] * a;
            }
        }
        m
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        self.cost.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    /// Smallest eigenvalue over all blocks at `y`.
    pub fn min_eigenvalue(&self, y: &[f64]) -> f64 {
        (0..self.blocks.len())
            .map(|b| crate::linalg::min_eig_sym(&self.block_value(b, y)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A Hermitian matrix expressed as an affine function of real variables:
/// `constant + sum coeff_k * y_{var_k}`.
#[derive(Clone, Debug)]
pub struct AffineHerm {
    pub constant: CMat,
    pub terms: Vec<(usize, CMat)>,
}

impl AffineHerm {
    pub fn constant(m: CMat) -> Self {
        AffineHerm {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(CMat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn add_term(&mut self, var: usize, coeff: CMat) {
        self.terms.push((var, coeff));
    }

    pub fn eval(&self, y: &[f64]) -> CMat {
        let mut m = self.constant.clone();
        for (v, t) in &self.terms {
            m += t * num_complex::Complex64::new(y[*v], 0.0);
        }
        m
    }

    pub fn push_into(self, prog: &mut LmiProgram) {
        prog.add_hermitian_block(&self.constant, self.terms);
    }
}

/// A general (rectangular) complex matrix affine in real variables.
#[derive(Clone, Debug)]
pub struct AffineMat {
    pub constant: CMat,
    pub terms: Vec<(usize, CMat)>,
}

impl AffineMat {
    pub fn constant(m: CMat) -> Self {
        AffineMat {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, y: &[f64]) -> CMat {
        let mut m = self.constant.clone();
        for (v, t) in &self.terms {
            m += t * num_complex::Complex64::new(y[*v], 0.0);
        }
        m
    }

    pub fn scale(&self, s: num_complex::Complex64) -> AffineMat {
        AffineMat {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(v, t)| (*v, t * s)).collect(),
        }
    }

    pub fn add(&mut self, other: &AffineMat) {
        self.constant += &other.constant;
        self.terms.extend(other.terms.iter().cloned());
    }

    /// Hermitian dilation `[[t I, M], [M^*, t I]]` with `t` the variable `tvar`
    /// (or the constant `tconst` when `tvar` is `None`).
    pub fn dilation(&self, tvar: Option<usize>, tconst: f64) -> AffineHerm {
        let (r, cc) = self.constant.shape();
        let n = r + cc;
        let mut constant = CMat::zeros(n, n);
        for k in 0..n {
            constant[(k, k)] = num_complex::Complex64::new(tconst, 0.0);
        }
        constant.view_mut((0, r), (r, cc)).copy_from(&self.constant);
        constant
            .view_mut((r, 0), (cc, r))
            .copy_from(&self.constant.adjoint());
        let mut h = AffineHerm::constant(constant);
        if let Some(t) = tvar {
            h.add_term(t, CMat::identity(n, n));
        }
        for (v, m) in &self.terms {
            let mut d = CMat::zeros(n, n);
            d.view_mut((0, r), (r, cc)).copy_from(m);
            d.view_mut((r, 0), (cc, r)).copy_from(&m.adjoint());
            h.add_term(*v, d);
        }
        h
    }
}

/// Allocates real variables parametrizing a free complex `rows x cols` matrix.
pub fn free_complex_matrix(prog: &mut LmiProgram, rows: usize, cols: usize) -> AffineMat {
    let mut m = AffineMat::constant(CMat::zeros(rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let re = prog.add_var(0.0);
            let im = prog.add_var(0.0);
            m.terms.push((re, crate::linalg::unit(rows, cols, i, j)));
            m.terms
                .push((im, crate::linalg::unit(rows, cols, i, j) * crate::linalg::I));
        }
    }
    m
}

/// Allocates real variables parametrizing a free Hermitian `n x n` matrix.
pub fn free_hermitian(prog: &mut LmiProgram, n: usize) -> AffineHerm {
    use crate::linalg::{unit, I};
    let mut h = AffineHerm::zeros(n);
    for i in 0..n {
        let v = prog.add_var(0.0);
        h.add_term(v, unit(n, n, i, i));
        for j in (i + 1)..n {
            let re = prog.add_var(0.0);
            let im = prog.add_var(0.0);
            h.add_term(re, unit(n, n, i, j) + unit(n, n, j, i));
            h.add_term(im, unit(n, n, i, j) * I - unit(n, n, j, i) * I);
        }
    }
    h
}
