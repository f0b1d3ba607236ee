//! The amalgamation chain: probes `X ⊂ Y` with anchors `X -> Z`, the extension defect of
//! a probe, one amalgamation step, round-robin runs, and the exactness estimator.

use crate::amalgam::extend_and_pair_hinted;
use crate::bound::{Certificate, NormBound};
use crate::concretize::{concretize, l1_phases};
use crate::ctx::{Budget, EvalCtx};
use crate::derived::{min_quantization, min_quantization_bounds, Space};
use crate::error::{OpError, Result};
use crate::linalg::{c, ginibre, orthogonal_complement, CMat};
use crate::maps::{inverse_on_range, map_norm_lower, map_norm_upper, subspace, LinearMap, LARGE_AMBIENT};
use crate::space::{full_algebra, make_space_labeled, random_space, AmbientSignature, ConcreteSpace, SpaceElement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Coefficients of `X -> Z` with certified bounds on the map and its inverse, and the
/// ambient blocks of `Z` holding an exact copy of `X`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Anchor {
    #[serde(with = "crate::json::cmat")]
    pub coeffs: CMat,
    pub blocks: Vec<usize>,
    pub norm_upper: f64,
    pub inv_upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Probe {
    pub id: usize,
    pub kind: String,
    pub outer: ConcreteSpace,
    /// Columns are the basis of `X` in the coordinates of `Y`.
    #[serde(with = "crate::json::cmat")]
    pub x_sub: CMat,
    pub target: f64,
    pub anchor: Option<Anchor>,
}

impl Probe {
    pub fn new(id: usize, kind: &str, outer: ConcreteSpace, x_sub: CMat, target: f64) -> Result<Self> {
        if x_sub.nrows() != outer.dim() {
            return Err(OpError::DimensionMismatch("subspace rows".into()));
        }
        if x_sub.ncols() > 0 {
            subspace(&outer, &x_sub, "X")?;
        }
        Ok(Probe {
            id,
            kind: kind.into(),
            outer,
            x_sub,
            target,
            anchor: None,
        })
    }

    pub fn inner(&self) -> Result<ConcreteSpace> {
        subspace(&self.outer, &self.x_sub, "X")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub probe: usize,
    /// `norm_upper * inv_upper - 1` for `best_map`, plus the agreement allowance.
    pub defect: f64,
    #[serde(with = "crate::json::opt_cmat")]
    pub best_map: Option<CMat>,
    pub norm_upper: f64,
    pub inv_upper: f64,
    pub allowance: f64,
    pub trajectory: Vec<(usize, f64)>,
}

impl LedgerEntry {
    fn refresh(&mut self) {
        self.defect = if self.best_map.is_some() {
            (self.norm_upper * self.inv_upper - 1.0).max(0.0) + self.allowance
        } else {
            f64::INFINITY
        };
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub probe: usize,
    pub action: String,
    pub z_dim: usize,
    /// `Z_{t-1} -> Z_t` in coordinates.
    #[serde(with = "crate::json::opt_cmat")]
    pub embedding: Option<CMat>,
    pub embedding_norm_upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainState {
    pub level: usize,
    pub current: ConcreteSpace,
    pub probes: Vec<Probe>,
    pub ledger: Vec<LedgerEntry>,
    pub history: Vec<HistoryRecord>,
    pub seed: u64,
    pub tick: usize,
}

impl ChainState {
    pub fn new(start: ConcreteSpace, probes: Vec<Probe>, level: usize, seed: u64) -> Self {
        let ledger = probes
            .iter()
            .map(|p| LedgerEntry {
                probe: p.id,
                defect: f64::INFINITY,
                best_map: None,
                norm_upper: f64::INFINITY,
                inv_upper: f64::INFINITY,
                allowance: 0.0,
                trajectory: Vec::new(),
            })
            .collect();
        ChainState {
            level,
            current: start,
            probes,
            ledger,
            history: Vec::new(),
            seed,
            tick: 0,
        }
    }

    /// Moves anchors and ledger maps along `Z -> Z'` (coefficients `e`, norm at most
    /// `1 + eta`, inverse contractive) with the old ambient shifted by `shift` blocks.
    fn push_forward(&mut self, e: &CMat, eta: f64, shift: usize) {
        for p in &mut self.probes {
            if let Some(a) = &mut p.anchor {
                a.coeffs = e * &a.coeffs;
                a.norm_upper *= 1.0 + eta;
                for b in &mut a.blocks {
                    *b += shift;
                }
            }
        }
        for l in &mut self.ledger {
            if let Some(m) = &mut l.best_map {
                *m = e * &*m;
                l.norm_upper *= 1.0 + eta;
                l.refresh();
            }
        }
    }

    pub fn max_defect(&self) -> f64 {
        self.ledger.iter().map(|l| l.defect).fold(0.0, f64::max)
    }

    /// Composite `Z_s -> Z_t` of the recorded embeddings for `s < t`.
    pub fn composite(&self, from: usize) -> Option<CMat> {
        let mut acc: Option<CMat> = None;
        for h in self.history.iter().filter(|h| h.step >= from) {
            if let Some(e) = &h.embedding {
                acc = Some(match acc {
                    None => e.clone(),
                    Some(a) => e * a,
                });
            }
        }
        acc
    }
}

/// `psi = [anchor, m] [X Q]^{-1}` for a complement `Q` of `X` in `Y`.
pub fn extension_from(p: &Probe, anchor: &CMat, m: &CMat) -> CMat {
    let q = orthogonal_complement(&p.x_sub);
    let dy = p.outer.dim();
    let mut basis = CMat::zeros(dy, dy);
    basis.columns_mut(0, p.x_sub.ncols()).copy_from(&p.x_sub);
    basis.columns_mut(p.x_sub.ncols(), q.ncols()).copy_from(&q);
    let mut imgs = CMat::zeros(anchor.nrows(), dy);
    imgs.columns_mut(0, anchor.ncols()).copy_from(anchor);
    imgs.columns_mut(anchor.ncols(), m.ncols()).copy_from(m);
    imgs * basis.try_inverse().expect("basis of Y")
}

/// `||psi||_n ||psi^{-1}||_n - 1` from certified upper bounds; infinite when `psi` is not
/// injective.
pub fn distortion_defect(z: &ConcreteSpace, y: &ConcreteSpace, psi: &CMat, n: usize, ctx: &EvalCtx) -> Result<f64> {
    let f = LinearMap::new(Arc::new(Space::Concrete(y.clone())), Arc::new(Space::Concrete(z.clone())), psi.clone())?;
    let inv = match inverse_on_range(&f) {
        Ok(g) => g,
        Err(OpError::NotInjective(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let a = map_norm_upper(&f, n, ctx)?.upper;
    let b = map_norm_upper(&inv, n, ctx)?.upper;
    Ok((a * b - 1.0).max(0.0))
}

/// Smallest certified defect among extensions of the anchor: the supplied candidates,
/// then a random local search over the free part when `Z` is small.
pub fn extension_defect(z: &ConcreteSpace, p: &Probe, hints: &[CMat], ctx: &EvalCtx) -> Result<(f64, Option<CMat>)> {
    let level = usize::MAX;
    let anchor = match &p.anchor {
        Some(a) => a.coeffs.clone(),
        None if p.x_sub.ncols() == 0 => CMat::zeros(z.dim(), 0),
        None => return Ok((f64::INFINITY, None)),
    };
    let mut best = (f64::INFINITY, None);
    for h in hints {
        let d = distortion_defect(z, &p.outer, h, level, ctx)?;
        if d < best.0 {
            best = (d, Some(h.clone()));
        }
    }
    let free = p.outer.dim() - p.x_sub.ncols();
    if free == 0 {
        let psi = extension_from(p, &anchor, &CMat::zeros(z.dim(), 0));
        let d = distortion_defect(z, &p.outer, &psi, level, ctx)?;
        if d < best.0 {
            best = (d, Some(psi));
        }
        return Ok(best);
    }
    if z.ambient.dim() > LARGE_AMBIENT || z.dim() < p.outer.dim() {
        return Ok(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut cur_m = ginibre(&mut rng, z.dim(), free) * c(0.5, 0.0);
    let mut cur = distortion_defect(z, &p.outer, &extension_from(p, &anchor, &cur_m), level, ctx)?;
    let mut sigma = 0.3;
    for _ in 0..ctx.budget.iterations.min(40) {
        let trial = &cur_m + ginibre(&mut rng, z.dim(), free) * c(sigma, 0.0);
        let d = distortion_defect(z, &p.outer, &extension_from(p, &anchor, &trial), level, ctx)?;
        if d < cur {
            cur = d;
            cur_m = trial;
        } else {
            sigma *= 0.8;
        }
    }
    if cur < best.0 {
        best = (cur, Some(extension_from(p, &anchor, &cur_m)));
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub probe: usize,
    pub action: String,
    pub z_dim: usize,
    pub ambient_blocks: usize,
    pub defect_before: f64,
    pub defect_after: f64,
}

fn record(state: &mut ChainState, probe: usize, action: &str, e: Option<CMat>, eta: f64) {
    state.history.push(HistoryRecord {
        step: state.tick,
        probe,
        action: action.into(),
        z_dim: state.current.dim(),
        embedding: e,
        embedding_norm_upper: 1.0 + eta,
    });
}

/// Plants `X` by a direct sum when the probe has no anchor, then amalgamates `Y` over
/// the anchor. Skipped when the ledger defect is already within target.
pub fn chain_step(state: &mut ChainState, idx: usize, ctx: &EvalCtx) -> Result<StepRecord> {
    let before = state.ledger[idx].defect;
    let probe_id = state.probes[idx].id;
    if before <= state.probes[idx].target {
        state.tick += 1;
        return Ok(StepRecord {
            step: state.tick,
            probe: probe_id,
            action: "skip".into(),
            z_dim: state.current.dim(),
            ambient_blocks: state.current.blocks().len(),
            defect_before: before,
            defect_after: before,
        });
    }
    let mut action = String::new();
    let dx = state.probes[idx].x_sub.ncols();
    if state.probes[idx].anchor.is_none() {
        if dx == 0 {
            state.probes[idx].anchor = Some(Anchor {
                coeffs: CMat::zeros(state.current.dim(), 0),
                blocks: Vec::new(),
                norm_upper: 1.0,
                inv_upper: 1.0,
            });
        } else {
            let x = state.probes[idx].inner()?;
            let z = state.current.clone();
            let r = extend_and_pair_hinted(&x, &CMat::zeros(x.dim(), 0), &z, &CMat::zeros(z.dim(), 0), 0.0, None, ctx)?;
            let shift = x.blocks().len();
            state.current = r.amalgam.clone();
            state.push_forward(&r.emb1.coeffs, r.isometry_defect1, shift);
            state.probes[idx].anchor = Some(Anchor {
                coeffs: r.emb0.coeffs.clone(),
                blocks: (0..shift).collect(),
                norm_upper: 1.0 + r.isometry_defect0,
                inv_upper: 1.0,
            });
            record(state, probe_id, "plant", Some(r.emb1.coeffs.clone()), r.isometry_defect1);
            action.push_str("plant+");
        }
    }
    let anchor = state.probes[idx].anchor.clone().expect("anchored");
    let y = state.probes[idx].outer.clone();
    let x_sub = state.probes[idx].x_sub.clone();
    let z = state.current.clone();
    let hint = if anchor.blocks.is_empty() { None } else { Some(anchor.blocks.as_slice()) };
    let r = extend_and_pair_hinted(&y, &x_sub, &z, &anchor.coeffs, (anchor.inv_upper - 1.0).max(0.0), hint, ctx)?;
    let shift = y.blocks().len();
    state.current = r.amalgam.clone();
    state.push_forward(&r.emb1.coeffs, r.isometry_defect1, shift);
    let entry = &mut state.ledger[idx];
    entry.best_map = Some(r.emb0.coeffs.clone());
    entry.norm_upper = 1.0 + r.isometry_defect0;
    entry.inv_upper = 1.0;
    entry.allowance = r.agreement_defect;
    entry.refresh();
    state.tick += 1;
    let after = state.ledger[idx].defect;
    state.ledger[idx].trajectory.push((state.tick, after));
    record(state, probe_id, "extend", Some(r.emb1.coeffs.clone()), r.isometry_defect1);
    action.push_str("extend");
    Ok(StepRecord {
        step: state.tick,
        probe: probe_id,
        action,
        z_dim: state.current.dim(),
        ambient_blocks: state.current.blocks().len(),
        defect_before: before,
        defect_after: after,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainMode {
    Mn,
    E1,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub mode: ChainMode,
    pub level: usize,
    pub steps: usize,
    pub probes: usize,
    pub max_dim: usize,
    /// Sizes of the full matrix algebras used as `Y` in E1 mode.
    pub algebra_sizes: Vec<usize>,
    pub target: f64,
    pub seed: u64,
    pub dim_cap: usize,
    pub snapshot_every: usize,
}

impl ChainConfig {
    pub fn mn(level: usize, steps: usize, seed: u64) -> Self {
        ChainConfig {
            mode: ChainMode::Mn,
            level,
            steps,
            probes: 10,
            max_dim: 3,
            algebra_sizes: vec![2, 3],
            target: 0.05,
            seed,
            dim_cap: 2000,
            snapshot_every: 0,
        }
    }

    pub fn e1(steps: usize, seed: u64) -> Self {
        ChainConfig {
            mode: ChainMode::E1,
            level: 3,
            target: 0.1,
            ..Self::mn(3, steps, seed)
        }
    }
}

fn random_sub(rng: &mut ChaCha8Rng, dy: usize, dx: usize) -> CMat {
    if dx == 0 {
        return CMat::zeros(dy, 0);
    }
    ginibre(rng, dy, dx)
}

/// The probe corpus for a configuration, drawn deterministically from its seed.
pub fn probe_corpus(cfg: &ChainConfig, ctx: &EvalCtx) -> Result<Vec<Probe>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.level.clamp(1, 3);
    let maxd = cfg.max_dim.max(1);
    let mut out = Vec::new();
    for id in 0..cfg.probes {
        let kind = match cfg.mode {
            ChainMode::Mn => id % 5,
            ChainMode::E1 => 10 + id % 3,
        };
        let probe = match kind {
            // direct sum case
            0 if id > 0 => {
                let dy = rng.random_range(1..=maxd);
                let blocks: Vec<usize> = (0..dy).map(|_| rng.random_range(1..=n)).collect();
                let y = random_space(&AmbientSignature(blocks), dy, rng.random())?;
                Probe::new(id, "join", y, CMat::zeros(dy, 0), cfg.target)?
            }
            // l1(2) at level one
            3 if n == 1 && maxd >= 2 => {
                let y = l1_phases(2, 0.05, ctx)?.space;
                let x = random_sub(&mut rng, 2, 1);
                Probe::new(id, "l1", y, x, cfg.target)?
            }
            // MIN_n of a block space
            4 => {
                let base = random_space(&AmbientSignature(vec![n + 1]), 2.min(maxd), rng.random())?;
                let small = ctx.with_budget(Budget::new(2, ctx.budget.iterations));
                let con = concretize(&min_quantization(Space::Concrete(base), n), n, 0.0, &small)?;
                let dy = con.space.dim();
                let x = random_sub(&mut rng, dy, 1.min(dy - 1));
                Probe::new(id, "min", con.space, x, cfg.target)?
            }
            10 | 11 => {
                let m = cfg.algebra_sizes[(id / 3) % cfg.algebra_sizes.len().max(1)];
                let y = full_algebra(m);
                let dx = rng.random_range(1..=maxd.min(m * m - 1));
                let x = random_sub(&mut rng, m * m, dx);
                Probe::new(id, &format!("M{m}"), y, x, cfg.target)?
            }
            _ => {
                let top = if cfg.mode == ChainMode::E1 { 3 } else { n };
                let nb = rng.random_range(1..=2);
                let blocks: Vec<usize> = (0..nb).map(|_| rng.random_range(1..=top)).collect();
                let amb = AmbientSignature(blocks);
                let dy = rng.random_range(2..=maxd.max(2)).min(amb.dim());
                let y = random_space(&amb, dy, rng.random())?;
                let dx = rng.random_range(1..dy.max(2)).min(dy - 1);
                let x = random_sub(&mut rng, dy, dx);
                Probe::new(id, "pair", y, x, cfg.target)?
            }
        };
        out.push(probe);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainSnapshot {
    pub step: usize,
    pub space: ConcreteSpace,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainReport {
    pub schema: String,
    pub config: ChainConfig,
    pub steps: Vec<StepRecord>,
    pub ledger: Vec<(usize, f64)>,
    pub max_defect: f64,
    pub final_dim: usize,
    pub final_blocks: usize,
    pub halted: bool,
    pub snapshots: Vec<ChainSnapshot>,
}

/// Round-robin over the corpus for `cfg.steps` ticks starting from `C`.
pub fn run_chain(cfg: &ChainConfig, ctx: &EvalCtx) -> Result<(ChainState, ChainReport)> {
    if cfg.steps == 0 {
        return Err(OpError::Invalid("at least one step".into()));
    }
    let ctx = EvalCtx {
        seed: cfg.seed,
        ..*ctx
    };
    let probes = probe_corpus(cfg, &ctx)?;
    if probes.is_empty() {
        return Err(OpError::Invalid("empty probe corpus".into()));
    }
    let start = crate::space::build_linfty(1);
    let mut state = ChainState::new(start, probes, cfg.level, cfg.seed);
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();
    let mut halted = false;
    for t in 0..cfg.steps {
        let idx = t % state.probes.len();
        steps.push(chain_step(&mut state, idx, &ctx.fork(t as u64))?);
        if cfg.snapshot_every > 0 && (t + 1) % cfg.snapshot_every == 0 {
            snapshots.push(ChainSnapshot {
                step: t + 1,
                space: state.current.clone(),
            });
        }
        if state.current.dim() > cfg.dim_cap {
            halted = true;
            break;
        }
    }
    let report = ChainReport {
        schema: crate::json::SCHEMA.into(),
        config: cfg.clone(),
        steps,
        ledger: state.ledger.iter().map(|l| (l.probe, l.defect)).collect(),
        max_defect: state.max_defect(),
        final_dim: state.current.dim(),
        final_blocks: state.current.blocks().len(),
        halted,
        snapshots,
    };
    Ok((state, report))
}

fn min_ratio_candidates(e: &ConcreteSpace) -> Vec<SpaceElement> {
    // sum_ab e_ab (x) P(e_ab) for each block, P the best approximation in E
    let mut out = Vec::new();
    for (j, &m) in e.blocks().iter().enumerate() {
        if m < 2 {
            continue;
        }
        let mut coeffs = vec![CMat::zeros(m, m); e.dim()];
        for a in 0..m {
            for b in 0..m {
                let t: Vec<CMat> = e
                    .blocks()
                    .iter()
                    .enumerate()
                    .map(|(l, &ml)| {
                        if l == j {
                            crate::linalg::unit(m, m, a, b)
                        } else {
                            CMat::zeros(ml, ml)
                        }
                    })
                    .collect();
                let (x, _) = e.coordinates_of(&t);
                for (i, z) in x.iter().enumerate() {
                    coeffs[i][(a, b)] += *z;
                }
            }
        }
        out.push(SpaceElement { level: m, coeffs });
    }
    out
}

/// Intervals for `||id: MIN_n(E) -> E||_cb`, `n = 1..=n_max`.
pub fn exactness_estimate(e: &ConcreteSpace, n_max: usize, ctx: &EvalCtx) -> Result<Vec<NormBound>> {
    let es = Space::Concrete(e.clone());
    let mut lowers = Vec::new();
    let mut uppers = Vec::new();
    for n in 1..=n_max {
        let q = min_quantization(es.clone(), n);
        // upper: inverse of a sum of compressions
        let con = concretize(&q, n, 0.0, ctx)?;
        let inv = LinearMap::new(Arc::new(Space::Concrete(con.space)), Arc::new(es.clone()), CMat::identity(e.dim(), e.dim()))?;
        let up = map_norm_upper(&inv, usize::MAX, ctx)?.upper.max(1.0);
        // lower: witness ratios
        let id = LinearMap::new(Arc::new(q), Arc::new(es.clone()), CMat::identity(e.dim(), e.dim()))?;
        let k = e.ambient.max_block().max(n);
        let mut lo = map_norm_lower(&id, k, ctx)?.lower;
        for x in min_ratio_candidates(e) {
            let top = min_quantization_bounds(&es, n, &x, ctx)?.upper;
            if top > 0.0 {
                lo = lo.max(e.level_norm(&x) / top);
            }
        }
        lowers.push(lo.min(up));
        uppers.push(up);
    }
    // the sequence is nonincreasing in n
    for i in 1..uppers.len() {
        uppers[i] = uppers[i].min(uppers[i - 1]);
    }
    for i in (0..lowers.len().saturating_sub(1)).rev() {
        lowers[i] = lowers[i].max(lowers[i + 1]);
    }
    Ok(lowers
        .into_iter()
        .zip(uppers)
        .map(|(l, u)| {
            NormBound::new(
                l.min(u),
                u,
                Certificate::Derived {
                    rule: "inverse of a sum of compressions".into(),
                },
            )
        })
        .collect())
}

/// A fixed probe: `X ⊂ Y` from explicit data with a given anchor.
pub fn anchored_probe(id: usize, y: ConcreteSpace, x_sub: CMat, anchor: Anchor, target: f64) -> Result<Probe> {
    let mut p = Probe::new(id, "given", y, x_sub, target)?;
    p.anchor = Some(anchor);
    Ok(p)
}

/// Makes the space `span(basis)` under a new label; used for starting spaces.
pub fn relabel(s: &ConcreteSpace, label: &str) -> Result<ConcreteSpace> {
    make_space_labeled(s.ambient.clone(), s.basis.clone(), label.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::build_linfty;

    fn ctx() -> EvalCtx {
        EvalCtx::with_seed(2).with_budget(Budget::new(3, 20))
    }

    #[test]
    fn nothing_to_extend() {
        let ctx = ctx();
        let z = full_algebra(2);
        let y = build_linfty(2);
        // anchor: diagonal embedding of l^inf(2) into M_2
        let mut a = CMat::zeros(4, 2);
        a[(0, 0)] = c(1.0, 0.0);
        a[(3, 1)] = c(1.0, 0.0);
        let p = anchored_probe(
            0,
            y,
            CMat::identity(2, 2),
            Anchor {
                coeffs: a,
                blocks: vec![0],
                norm_upper: 1.0,
                inv_upper: 1.0,
            },
            0.05,
        )
        .unwrap();
        let (d, _) = extension_defect(&z, &p, &[], &ctx).unwrap();
        assert!(d <= 1e-6, "{d}");
    }

    #[test]
    fn no_room_in_scalars() {
        let ctx = ctx();
        let z = build_linfty(1);
        let y = build_linfty(2);
        let x = CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let p = anchored_probe(
            0,
            y,
            x,
            Anchor {
                coeffs: CMat::identity(1, 1),
                blocks: vec![0],
                norm_upper: 1.0,
                inv_upper: 1.0,
            },
            0.05,
        )
        .unwrap();
        let (d, _) = extension_defect(&z, &p, &[], &ctx).unwrap();
        assert!(d > 0.5);
    }

    #[test]
    fn join_and_planted_recovery() {
        let ctx = ctx();
        let y = random_space(&AmbientSignature(vec![1, 1, 1]), 2, 4).unwrap();
        let join = Probe::new(0, "join", y.clone(), CMat::zeros(2, 0), 0.05).unwrap();
        let planted = Probe::new(1, "pair", y, CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.5, 0.0)]), 0.05).unwrap();
        let mut st = ChainState::new(build_linfty(1), vec![join, planted], 1, 2);
        let r = chain_step(&mut st, 0, &ctx).unwrap();
        assert!(r.defect_after <= 1e-6, "{r:?}");
        assert_eq!(st.current.dim(), 3);
        let r = chain_step(&mut st, 1, &ctx).unwrap();
        assert!(r.defect_after <= 1e-4, "{r:?}");
        // independent re-evaluation of the stored map
        let best = st.ledger[1].best_map.clone().unwrap();
        let (d, _) = extension_defect(&st.current, &st.probes[1], &[best], &ctx).unwrap();
        assert!(d <= 1e-4 && (d - st.ledger[1].defect).abs() <= 1e-6 + st.ledger[1].defect, "{d}");
        // revisit is a no-op
        let dim = st.current.dim();
        let r = chain_step(&mut st, 1, &ctx).unwrap();
        assert_eq!(r.action, "skip");
        assert_eq!(st.current.dim(), dim);
    }

    #[test]
    fn short_run_is_deterministic_and_isometric() {
        let ctx = ctx();
        let mut cfg = ChainConfig::mn(1, 6, 3);
        cfg.probes = 3;
        let (s1, r1) = run_chain(&cfg, &ctx).unwrap();
        let (s2, _) = run_chain(&cfg, &ctx).unwrap();
        assert_eq!(serde_json::to_string(&s1.current).unwrap(), serde_json::to_string(&s2.current).unwrap());
        assert!(r1.max_defect <= 0.05, "{r1:?}");
        // each recorded embedding preserves sampled norms
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = build_linfty(1);
        let mut cur_dim = start.dim();
        for h in &s1.history {
            let e = h.embedding.as_ref().unwrap();
            assert_eq!(e.ncols(), cur_dim);
            cur_dim = e.nrows();
        }
        let total = s1.composite(0).unwrap();
        for _ in 0..5 {
            let x = SpaceElement::random(&mut rng, 1, 1);
            let y = x.transform(&total);
            assert!((s1.current.level_norm(&y) - start.level_norm(&x)).abs() <= 1e-7);
        }
    }

    #[test]
    fn exactness_of_linfty_and_m2() {
        let ctx = ctx();
        let b = exactness_estimate(&build_linfty(3), 2, &ctx).unwrap();
        for x in &b {
            assert!(x.contains(1.0, 1e-6), "{x:?}");
        }
        let b = exactness_estimate(&full_algebra(2), 1, &ctx).unwrap();
        assert!(b[0].lower >= 1.2, "{:?}", b[0]);
    }
}
