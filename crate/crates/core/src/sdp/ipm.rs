//! Primal-dual interior-point method (HKM direction, Mehrotra predictor-corrector)
//! for [`LmiProgram`]s.
//!
//! The LMI program `min c.y s.t. F0 + sum y_i F_i >= 0` is solved as the dual of the
//! standard-form SDP `min <F0', X> s.t. <F_i, X> = c_i, X >= 0`. Any feasible `X`
//! certifies the lower bound `-<F0, X>` on the LMI optimum.

use super::lmi::LmiProgram;
use crate::linalg::RMat;
use nalgebra::{Cholesky, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl SolverOptions {
    /// Defaults, with every tolerance replaced by `OPFORGE_SOLVER_TOL` when set.
    pub fn from_env() -> Self {
        let mut o = Self::default();
        if let Some(t) = std::env::var("OPFORGE_SOLVER_TOL")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
        {
            if t > 0.0 {
                o.gap_tol = t;
                o.feas_tol = t;
            }
        }
        o
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Failure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IpmSolution {
    pub status: SolveStatus,
    /// LMI objective `c.y` at the returned point.
    pub primal_value: f64,
    /// Lower bound on the LMI optimum from the dual matrix.
    pub dual_value: f64,
    pub y: Vec<f64>,
    pub dual_blocks: Vec<RMat>,
    pub iterations: usize,
    /// Relative infeasibility of the dual equations `<F_i, X> = c_i`.
    pub dual_residual: f64,
    /// Residual of `Z = F(y)` (primal slack mismatch).
    pub primal_residual: f64,
}

impl IpmSolution {
    pub fn gap(&self) -> f64 {
        self.primal_value - self.dual_value
    }
}

struct Work<'a> {
    prog: &'a LmiProgram,
    /// For each variable, the blocks and term indices in which it appears.
    var_terms: Vec<Vec<(usize, usize)>>,
    /// Variables appearing in each block, with term index.
    block_vars: Vec<Vec<(usize, usize)>>,
}

impl<'a> Work<'a> {
    fn new(prog: &'a LmiProgram) -> Self {
        let m = prog.num_vars();
        let mut var_terms = vec![Vec::new(); m];
        let mut block_vars = vec![Vec::new(); prog.blocks.len()];
        for (b, blk) in prog.blocks.iter().enumerate() {
            for (t, (v, _)) in blk.terms.iter().enumerate() {
                var_terms[*v].push((b, t));
                block_vars[b].push((*v, t));
            }
        }
        Work {
            prog,
            var_terms,
            block_vars,
        }
    }

    /// Adjoint operator value `A(X)_i = <F_i, X>`.
    fn a_op(&self, xs: &[RMat]) -> DVector<f64> {
        let m = self.prog.num_vars();
        let mut out = DVector::zeros(m);
        for (i, terms) in self.var_terms.iter().enumerate() {
            let mut s = 0.0;
            for &(b, t) in terms {
                s += self.prog.blocks[b].terms[t].1.dot(&xs[b]);
            }
            out[i] = s;
        }
        out
    }

    /// `sum_i v_i F_i` restricted to block `b`.
    fn at_op(&self, b: usize, v: &DVector<f64>) -> RMat {
        let blk = &self.prog.blocks[b];
        let mut m = RMat::zeros(blk.dim, blk.dim);
        for (var, s) in &blk.terms {
            let c = v[*var];
            if c != 0.0 {
                for &(i, j, a) in &s.entries {
                    m[(i, j)] += c * a;
                }
            }
        }
        m
    }
}

fn sym(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

fn inner(a: &RMat, b: &RMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest step keeping `x + a dx` positive definite (capped at `cap`).
fn max_step(x: &RMat, dx: &RMat, cap: f64) -> f64 {
    let chol = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let linv = match l.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let s = sym(&(&linv * dx * linv.transpose()));
    let lam = SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if lam >= 0.0 {
        cap
    } else {
        (-1.0 / lam).min(cap)
    }
}

fn spd_inverse(m: &RMat) -> Option<RMat> {
    Cholesky::new(m.clone()).map(|c| c.inverse())
}

/// Solves an LMI program. The returned `y` is always the last iterate.
pub fn solve(prog: &LmiProgram, opts: &SolverOptions) -> IpmSolution {
    let w = Work::new(prog);
    let m = prog.num_vars();
    let nb = prog.blocks.len();
    // standard form data: C = F0, A_i = -F_i, b = -c
    let bvec = DVector::from_iterator(m, prog.cost.iter().map(|c| -c));
    let n_total: usize = prog.blocks.iter().map(|b| b.dim).sum();

    if m == 0 || nb == 0 || n_total == 0 {
        let feasible = prog.min_eigenvalue(&[]) >= -opts.feas_tol;
        return IpmSolution {
            status: if feasible {
                SolveStatus::Optimal
            } else {
                SolveStatus::Infeasible
            },
            primal_value: 0.0,
            dual_value: 0.0,
            y: vec![0.0; m],
            dual_blocks: prog
                .blocks
                .iter()
                .map(|b| RMat::zeros(b.dim, b.dim))
                .collect(),
            iterations: 0,
            dual_residual: 0.0,
            primal_residual: 0.0,
        };
    }

    let norm_c: f64 = prog
        .blocks
        .iter()
        .map(|b| b.constant.norm_squared())
        .sum::<f64>()
        .sqrt();
    let norm_b = bvec.norm();
    let mut max_a = 0.0f64;
    let mut ratio = 0.0f64;
    for (i, terms) in w.var_terms.iter().enumerate() {
        let mut na2 = 0.0;
        for &(b, t) in terms {
            na2 += prog.blocks[b].terms[t]
                .1
                .entries
                .iter()
                .map(|e| e.2 * e.2)
                .sum::<f64>();
        }
        let na = na2.sqrt();
        max_a = max_a.max(na);
        ratio = ratio.max((1.0 + bvec[i].abs()) / (1.0 + na));
    }
    let sqn = (n_total as f64).sqrt();
    let xi = 10.0f64.max(sqn).max(sqn * ratio);
    let eta = 10.0f64.max(sqn).max(norm_c).max(max_a);

    let mut xs: Vec<RMat> = prog
        .blocks
        .iter()
        .map(|b| RMat::identity(b.dim, b.dim) * xi)
        .collect();
    let mut zs: Vec<RMat> = prog
        .blocks
        .iter()
        .map(|b| RMat::identity(b.dim, b.dim) * eta)
        .collect();
    let mut y = DVector::<f64>::zeros(m);

    let mut status = SolveStatus::Failure;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;

    for it in 0..opts.max_iter {
        iterations = it;
        // residuals
        let ax = w.a_op(&xs);
        let rp = &bvec + &ax;
        let rd: Vec<RMat> = (0..nb)
            .map(|b| {
                let aty = w.at_op(b, &y);
                // C - Z - A^T y with A_i = -F_i  =>  F0 - Z + sum y_i F_i
                &prog.blocks[b].constant - &zs[b] + aty
            })
            .collect();
        let pobj: f64 = (0..nb).map(|b| inner(&prog.blocks[b].constant, &xs[b])).sum();
        let dobj = bvec.dot(&y);
        let xz: f64 = (0..nb).map(|b| inner(&xs[b], &zs[b])).sum();
        let mu = xz / n_total as f64;
        let pinf = rp.norm() / (1.0 + norm_b);
        let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + norm_c);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        if dinf < opts.feas_tol {
            // y is (nearly) LMI-feasible: remember the best objective so far
            let val = -dobj;
            if best.as_ref().map(|(v, _)| val < *v).unwrap_or(true) {
                best = Some((val, y.iter().cloned().collect()));
            }
        }
        // iterate past the nominal tolerance while progress is cheap; a later
        // numerical breakdown still reports Optimal from the nominal test
        let nominal = pinf < opts.feas_tol && dinf < opts.feas_tol && rel_gap < opts.gap_tol;
        if nominal {
            status = SolveStatus::Optimal;
        } else if status == SolveStatus::Optimal {
            status = SolveStatus::Failure;
        }
        let tight = 1e-3;
        if pinf < opts.feas_tol * tight && dinf < opts.feas_tol * tight && rel_gap < opts.gap_tol * tight {
            break;
        }
        if !mu.is_finite() || mu > 1e30 {
            break;
        }
        // primal objective diverging to -inf: the LMI has no feasible point
        if pobj < -1e12 && pinf < 1e-6 {
            status = SolveStatus::Infeasible;
            break;
        }

        let zinv: Vec<RMat> = match zs.iter().map(spd_inverse).collect::<Option<Vec<_>>>() {
            Some(v) => v,
            None => break,
        };

        // Schur complement M_ij = tr(A_i X A_j Z^{-1})
        let mut schur = RMat::zeros(m, m);
        for b in 0..nb {
            let blk = &prog.blocks[b];
            let vars = &w.block_vars[b];
            let x = &xs[b];
            let zi = &zinv[b];
            let n = blk.dim;
            let nnz_total: usize = vars.iter().map(|&(_, t)| blk.terms[t].1.entries.len()).sum();
            let dense_path = n * n < nnz_total;
            for (pj, &(vj, tj)) in vars.iter().enumerate() {
                let ej = &blk.terms[tj].1.entries;
                if dense_path {
                    // G = X A_j Z^{-1}, then M_ij = tr(A_i G)
                    let mut g = RMat::zeros(n, n);
                    for &(r2, c2, a2) in ej {
                        for r in 0..n {
                            let xa = a2 * x[(r, r2)];
                            if xa != 0.0 {
                                for cc in 0..n {
                                    g[(r, cc)] += xa * zi[(c2, cc)];
                                }
                            }
                        }
                    }
                    for &(vi, ti) in vars[..=pj].iter() {
                        let s: f64 = blk.terms[ti]
                            .1
                            .entries
                            .iter()
                            .map(|&(r, cc, a)| a * g[(cc, r)])
                            .sum();
                        schur[(vi, vj)] += s;
                        if vi != vj {
                            schur[(vj, vi)] += s;
                        }
                    }
                    continue;
                }
                for &(vi, ti) in vars[..=pj].iter() {
                    let ei = &blk.terms[ti].1.entries;
                    let mut s = 0.0;
                    for &(r, cc, a) in ei {
                        for &(r2, c2, a2) in ej {
                            s += a * a2 * x[(cc, r2)] * zi[(c2, r)];
                        }
                    }
                    schur[(vi, vj)] += s;
                    if vi != vj {
                        schur[(vj, vi)] += s;
                    }
                }
            }
        }
        let diag_max = (0..m).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max);
        let factor = {
            let mut reg = 0.0;
            let mut f = None;
            for _ in 0..8 {
                let mut s = schur.clone();
                for i in 0..m {
                    s[(i, i)] += reg;
                }
                if let Some(c) = Cholesky::new(s) {
                    f = Some(c);
                    break;
                }
                reg = if reg == 0.0 {
                    1e-14 * diag_max.max(1e-300)
                } else {
                    reg * 100.0
                };
            }
            f
        };
        let factor = match factor {
            Some(f) => f,
            None => break,
        };

        // X Rd Z^{-1} per block
        let xrdz: Vec<RMat> = (0..nb).map(|b| &xs[b] * &rd[b] * &zinv[b]).collect();

        let direction = |sigma: f64, corr: Option<&Vec<RMat>>| -> (DVector<f64>, Vec<RMat>, Vec<RMat>) {
            // G = sigma mu Z^{-1} - X - X Rd Z^{-1} - corr
            let g: Vec<RMat> = (0..nb)
                .map(|b| {
                    let mut g = &zinv[b] * (sigma * mu) - &xs[b] - &xrdz[b];
                    if let Some(cv) = corr {
                        g -= &cv[b];
                    }
                    g
                })
                .collect();
            // A_i = -F_i, so A(G)_i = -<F_i, G>
            let ag = -w.a_op(&g);
            let rhs = &rp - ag;
            let dy = factor.solve(&rhs);
            // dZ = Rd - A^T dy = Rd + sum dy_i F_i
            let dz: Vec<RMat> = (0..nb).map(|b| &rd[b] + w.at_op(b, &dy)).collect();
            let dx: Vec<RMat> = (0..nb)
                .map(|b| sym(&(&g[b] + &xrdz[b] - &xs[b] * &dz[b] * &zinv[b])))
                .collect();
            (dy, dx, dz)
        };

        let step = |dx: &Vec<RMat>, dz: &Vec<RMat>| -> (f64, f64) {
            let mut ap = 1.0f64;
            let mut ad = 1.0f64;
            for b in 0..nb {
                ap = ap.min(max_step(&xs[b], &dx[b], 1.0));
                ad = ad.min(max_step(&zs[b], &dz[b], 1.0));
            }
            (ap, ad)
        };

        // predictor
        let (_dy_a, dx_a, dz_a) = direction(0.0, None);
        let (ap, ad) = step(&dx_a, &dz_a);
        let mu_aff: f64 = (0..nb)
            .map(|b| inner(&(&xs[b] + &dx_a[b] * ap), &(&zs[b] + &dz_a[b] * ad)))
            .sum::<f64>()
            / n_total as f64;
        let sigma = ((mu_aff / mu).max(0.0)).powi(3).min(1.0);
        let corr: Vec<RMat> = (0..nb).map(|b| &dx_a[b] * &dz_a[b] * &zinv[b]).collect();
        let (dy, dx, dz) = direction(sigma, Some(&corr));
        let (ap, ad) = step(&dx, &dz);
        let gamma = if it < 5 { 0.9 } else { 0.98 };
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        for b in 0..nb {
            xs[b] += &dx[b] * ap;
            zs[b] += &dz[b] * ad;
            xs[b] = sym(&xs[b]);
            zs[b] = sym(&zs[b]);
        }
        y += dy * ad;
    }

    let yv: Vec<f64> = y.iter().cloned().collect();
    let ax = w.a_op(&xs);
    let rp = &bvec + &ax;
    let dual_residual = rp.norm() / (1.0 + norm_b);
    let primal_residual: f64 = (0..nb)
        .map(|b| {
            let aty = w.at_op(b, &y);
            (&prog.blocks[b].constant - &zs[b] + aty).norm_squared()
        })
        .sum::<f64>()
        .sqrt()
        / (1.0 + norm_c);
    // lower bound: c.y' >= -<F0,X> + y'.r  (r = c - <F_i,X>), evaluated at y
    let lower: f64 = -(0..nb).map(|b| inner(&prog.blocks[b].constant, &xs[b])).sum::<f64>()
        + yv.iter().zip(rp.iter()).map(|(a, r)| -a * r).sum::<f64>();
    let mut y_out = yv;
    let mut primal_value = prog.objective(&y_out);
    if status != SolveStatus::Optimal {
        if let Some((v, by)) = best {
            if v < primal_value || primal_residual > opts.feas_tol {
                primal_value = v;
                y_out = by;
            }
        }
    }
    IpmSolution {
        status,
        primal_value,
        dual_value: lower.min(primal_value),
        y: y_out,
        dual_blocks: xs,
        iterations,
        dual_residual,
        primal_residual,
    }
}
