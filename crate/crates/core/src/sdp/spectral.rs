//! Minimization of the largest spectral norm over an affine matrix family.

use super::ipm::{solve, SolveStatus, SolverOptions};
use super::lmi::{AffineMat, LmiProgram};
use crate::linalg::{c, spectral_norm, CMat};
use serde::{Deserialize, Serialize};

/// `A_0 + sum_i t_i A_i` for real `t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralBlock {
    pub constant: CMat,
    pub coeffs: Vec<CMat>,
}

/// Minimize `max_b ||A_b(t)|| + linear . t` over `t` in `R^variable_dim`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralProgram {
    pub variable_dim: usize,
    pub blocks: Vec<SpectralBlock>,
    pub linear: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective evaluated exactly at `primal`; an upper bound on the minimum.
    pub value: f64,
    pub primal: Vec<f64>,
    /// Lower bound on the minimum from the dual matrices.
    pub dual_bound: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl SpectralProgram {
    pub fn new(variable_dim: usize) -> Self {
        SpectralProgram {
            variable_dim,
            blocks: Vec::new(),
            linear: vec![0.0; variable_dim],
        }
    }

    pub fn add_block(&mut self, constant: CMat, coeffs: Vec<CMat>) {
        assert_eq!(coeffs.len(), self.variable_dim, "coefficient count");
        for a in &coeffs {
            assert_eq!(a.shape(), constant.shape(), "coefficient shape");
        }
        self.blocks.push(SpectralBlock { constant, coeffs });
    }

    pub fn block_at(&self, b: usize, t: &[f64]) -> CMat {
        let blk = &self.blocks[b];
        let mut m = blk.constant.clone();
        for (a, &ti) in blk.coeffs.iter().zip(t) {
            if ti != 0.0 {
                m += a * c(ti, 0.0);
            }
        }
        m
    }

    pub fn objective(&self, t: &[f64]) -> f64 {
        let s = (0..self.blocks.len())
            .map(|b| spectral_norm(&self.block_at(b, t)))
            .fold(0.0, f64::max);
        s + self.linear.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()
    }

    fn to_lmi(&self) -> LmiProgram {
        let mut prog = LmiProgram::new();
        let vars: Vec<usize> = self.linear.iter().map(|&l| prog.add_var(l)).collect();
        let s = prog.add_var(1.0);
        for blk in &self.blocks {
            let mut m = AffineMat::constant(blk.constant.clone());
            for (v, a) in vars.iter().zip(&blk.coeffs) {
                if a.iter().any(|z| z.norm() != 0.0) {
                    m.terms.push((*v, a.clone()));
                }
            }
            m.dilation(Some(s), 0.0).push_into(&mut prog);
        }
        prog
    }
}

pub fn solve_spectral_min(p: &SpectralProgram) -> SolveResult {
    solve_spectral_min_with(p, &SolverOptions::from_env())
}

pub fn solve_spectral_min_with(p: &SpectralProgram, opts: &SolverOptions) -> SolveResult {
    if p.variable_dim == 0 || p.blocks.is_empty() {
        let v = p.objective(&vec![0.0; p.variable_dim]);
        return SolveResult {
            status: SolveStatus::Optimal,
            value: v,
            primal: vec![0.0; p.variable_dim],
            dual_bound: v,
            gap: 0.0,
            iterations: 0,
        };
    }
    let prog = p.to_lmi();
    let sol = solve(&prog, opts);
    let t: Vec<f64> = sol.y[..p.variable_dim].to_vec();
    let value = p.objective(&t);
    let dual_bound = sol.dual_value.min(value);
    let gap = value - dual_bound;
    let status = match sol.status {
        SolveStatus::Optimal if gap <= opts.gap_tol * (1.0 + value.abs()) => SolveStatus::Optimal,
        SolveStatus::Optimal => SolveStatus::Failure,
        s => s,
    };
    SolveResult {
        status,
        value,
        primal: t,
        dual_bound,
        gap,
        iterations: sol.iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ginibre, random_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_variables_is_plain_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = ginibre(&mut rng, 3, 3);
        let mut p = SpectralProgram::new(0);
        p.add_block(a.clone(), vec![]);
        let r = solve_spectral_min(&p);
        assert_eq!(r.value, spectral_norm(&a));
    }

    #[test]
    fn scalar_max() {
        // max(|1 - t|, |t|) -> 1/2
        let mut p = SpectralProgram::new(1);
        p.add_block(CMat::from_element(1, 1, c(1.0, 0.0)), vec![CMat::from_element(1, 1, c(-1.0, 0.0))]);
        p.add_block(CMat::zeros(1, 1), vec![CMat::from_element(1, 1, c(1.0, 0.0))]);
        let r = solve_spectral_min(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value - 0.5).abs() < 1e-8);
        assert!((r.primal[0] - 0.5).abs() < 1e-6);
    }

    fn random_program(seed: u64, vars: usize, n: usize) -> SpectralProgram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SpectralProgram::new(vars);
        for _ in 0..2 {
            let a0 = ginibre(&mut rng, n, n);
            let cs = (0..vars).map(|_| ginibre(&mut rng, n, n)).collect();
            p.add_block(a0, cs);
        }
        p
    }

    #[test]
    fn unitary_invariance() {
        let p = random_program(11, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut q = SpectralProgram::new(3);
        for b in &p.blocks {
            let u = random_unitary(&mut rng, 4);
            let v = random_unitary(&mut rng, 4);
            q.add_block(
                &u * &b.constant * &v,
                b.coeffs.iter().map(|a| &u * a * &v).collect(),
            );
        }
        let r1 = solve_spectral_min(&p);
        let r2 = solve_spectral_min(&q);
        assert!((r1.value - r2.value).abs() < 1e-7);
    }

    #[test]
    fn weak_duality_and_gap() {
        for seed in 0..10 {
            let p = random_program(seed, 3, 3);
            let r = solve_spectral_min(&p);
            assert_eq!(r.status, SolveStatus::Optimal, "seed {seed}");
            assert!(r.dual_bound <= r.value + 1e-12);
            assert!(r.gap <= 1e-8 * (1.0 + r.value));
        }
    }
}
