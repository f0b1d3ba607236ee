//! Amalgamation: the exact extend-and-pair amalgam, the 1-sum pushout with certified
//! intervals, and the staged amalgamation of 1-exact spaces.

use crate::ctx::EvalCtx;
use crate::derived::{one_sum, quotient_space, scaled_space, Space};
use crate::error::{OpError, Result};
use crate::linalg::{c, lstsq, CMat, CVec, ONE, ZERO};
use crate::maps::{dual_functional_norms, map_norm_upper, reduced_domains, subspace, triangle_upper, LinearMap, LARGE_AMBIENT};
use crate::onesum::ContractionTuple;
use crate::sdp::extension::min_cb_extension;
use crate::space::{make_space_labeled, AmbientSignature, ConcreteSpace, MatrixTuple, SpaceElement};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// A linear map between ambient algebras that reads the blocks `subset` of the source and
/// sends their matrix units to `unit_images[j]` in target block `j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmbientMap {
    pub source: AmbientSignature,
    pub target: AmbientSignature,
    pub subset: Vec<usize>,
    #[serde(with = "crate::json::cmat_vec_vec")]
    pub unit_images: Vec<Vec<CMat>>,
    /// Certified upper bound on the cb-norm.
    pub cb_upper: f64,
}

impl AmbientMap {
    pub fn apply(&self, t: &MatrixTuple) -> MatrixTuple {
        let mut v = Vec::new();
        for &j in &self.subset {
            let m = self.source.0[j];
            for a in 0..m {
                for b in 0..m {
                    v.push(t[j][(a, b)]);
                }
            }
        }
        self.target
            .blocks()
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let mut out = CMat::zeros(m, m);
                for (u, z) in v.iter().enumerate() {
                    if *z != ZERO {
                        out += &self.unit_images[j][u] * *z;
                    }
                }
                out
            })
            .collect()
    }
}

fn vectorize_subset(amb: &AmbientSignature, subset: &[usize], vecs: &CMat) -> CMat {
    let mut rows = Vec::new();
    for &j in subset {
        let o = amb.offset(j);
        let m = amb.0[j];
        rows.extend(o..o + m * m);
    }
    CMat::from_fn(rows.len(), vecs.ncols(), |r, col| vecs[(rows[r], col)])
}

/// Extends the map sending the columns of `vecs` (vectorized tuples in `src`) to `images`
/// to a map `src -> target` of smallest certified cb-norm found. Large sources are handled
/// through block subsets on which the subspace projects injectively.
pub fn extend_into(
    src: &AmbientSignature,
    vecs: &CMat,
    target: &AmbientSignature,
    images: &[MatrixTuple],
    forced: Option<&[usize]>,
    ctx: &EvalCtx,
) -> Result<AmbientMap> {
    let d = vecs.ncols();
    let all: Vec<usize> = (0..src.0.len()).collect();
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    if let Some(f) = forced {
        candidates.push(f.to_vec());
    }
    if d == 0 || src.dim() <= LARGE_AMBIENT {
        candidates.push(all.clone());
    } else {
        let basis: Vec<MatrixTuple> = (0..d)
            .map(|i| ConcreteSpace::devectorize(src, &vecs.column(i).into_owned()))
            .collect();
        let sp = ConcreteSpace {
            ambient: src.clone(),
            basis,
            label: String::new(),
        };
        for r in reduced_domains(&sp, LARGE_AMBIENT, 3) {
            let mut subset = Vec::new();
            let mut used = vec![false; src.0.len()];
            'outer: for (jj, &m) in r.blocks().iter().enumerate() {
                for (j, &mm) in src.0.iter().enumerate() {
                    if !used[j] && mm == m && (0..d).all(|i| r.basis[i][jj] == sp.basis[i][j]) {
                        used[j] = true;
                        subset.push(j);
                        continue 'outer;
                    }
                }
            }
            if subset.len() == r.blocks().len() {
                candidates.push(subset);
            }
        }
        if candidates.is_empty() {
            candidates.push(all.clone());
        }
    }
    let mut best: Option<AmbientMap> = None;
    for subset in candidates {
        let in_blocks: Vec<usize> = subset.iter().map(|&j| src.0[j]).collect();
        let sub_dim: usize = in_blocks.iter().map(|m| m * m).sum();
        let sv = vectorize_subset(src, &subset, vecs);
        if d > 0 {
            let s = sv.clone().svd(false, false).singular_values;
            if s.iter().cloned().fold(f64::INFINITY, f64::min) <= 1e-10 * s.max().max(1e-300) {
                continue;
            }
        }
        let mut unit_images = Vec::new();
        let mut cb: f64 = 0.0;
        for (j, &m) in target.blocks().iter().enumerate() {
            let imgs: Vec<CMat> = images.iter().map(|t| t[j].clone()).collect();
            let scale = imgs
                .iter()
                .flat_map(|a| a.iter().map(|z| z.norm()))
                .fold(0.0f64, f64::max);
            if scale == 0.0 {
                unit_images.push(vec![CMat::zeros(m, m); sub_dim]);
                continue;
            }
            let imgs: Vec<CMat> = imgs.iter().map(|a| a * c(1.0 / scale, 0.0)).collect();
            let cert = min_cb_extension(&in_blocks, m, &sv, &imgs, &ctx.solver);
            if !cert.upper.is_finite() {
                return Err(OpError::ExtensionFailure(format!("block {j}: {:?}", cert.status)));
            }
            cb = cb.max(cert.upper * scale);
            unit_images.push(cert.unit_images.iter().map(|u| u * c(scale, 0.0)).collect());
        }
        let cand = AmbientMap {
            source: src.clone(),
            target: target.clone(),
            subset,
            unit_images,
            cb_upper: cb,
        };
        let good = cand.cb_upper <= 1.0 + 1e-7;
        if best.as_ref().map_or(true, |b| cand.cb_upper < b.cb_upper) {
            best = Some(cand);
        }
        if good {
            break;
        }
    }
    best.ok_or_else(|| OpError::ExtensionFailure("no block subset is injective on the subspace".into()))
}

fn concat(a: &MatrixTuple, b: &MatrixTuple) -> MatrixTuple {
    a.iter().chain(b.iter()).cloned().collect()
}

/// Greedy basis of the span of `vectors` (in order) and the coordinates of every vector in
/// it. Selected vectors get exact unit coordinates.
pub fn span_basis(amb: &AmbientSignature, vectors: &[MatrixTuple]) -> (Vec<MatrixTuple>, CMat) {
    let vs: Vec<CVec> = vectors.iter().map(|t| ConcreteSpace::vectorize(amb, t)).collect();
    let mut q: Vec<CVec> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    for (i, v) in vs.iter().enumerate() {
        let nv = v.norm();
        if nv == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for u in &q {
                let p = u.dotc(&r);
                r -= u * p;
            }
        }
        let nr = r.norm();
        if nr > 1e-9 * nv {
            q.push(r / c(nr, 0.0));
            chosen.push(i);
        }
    }
    let basis: Vec<MatrixTuple> = chosen.iter().map(|&i| vectors[i].clone()).collect();
    let bm = CMat::from_fn(amb.dim(), chosen.len(), |r, col| vs[chosen[col]][r]);
    let mut coords = CMat::zeros(chosen.len(), vectors.len());
    for (i, v) in vs.iter().enumerate() {
        if let Some(pos) = chosen.iter().position(|&ci| ci == i) {
            coords[(pos, i)] = ONE;
        } else if !chosen.is_empty() {
            let x = lstsq(&bm, &CMat::from_column_slice(v.len(), 1, v.as_slice()));
            coords.set_column(i, &x.column(0));
        }
    }
    (basis, coords)
}

#[derive(Clone, Debug)]
pub struct AmalgamResult {
    pub amalgam: ConcreteSpace,
    pub emb0: LinearMap,
    pub emb1: LinearMap,
    pub isometry_defect0: f64,
    pub isometry_defect1: f64,
    /// Certified upper bound on `||emb1 o f - emb0|_X||`.
    pub agreement_defect: f64,
    pub f_ext: AmbientMap,
    pub g_ext: AmbientMap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmalgamSummary {
    pub schema: String,
    pub amalgam_dim: usize,
    pub ambient: Vec<usize>,
    pub isometry_defect0: f64,
    pub isometry_defect1: f64,
    pub agreement_defect: f64,
    pub extension_norms: [f64; 2],
}

impl AmalgamResult {
    pub fn summary(&self) -> AmalgamSummary {
        AmalgamSummary {
            schema: crate::json::SCHEMA.into(),
            amalgam_dim: self.amalgam.dim(),
            ambient: self.amalgam.ambient.0.clone(),
            isometry_defect0: self.isometry_defect0,
            isometry_defect1: self.isometry_defect1,
            agreement_defect: self.agreement_defect,
            extension_norms: [self.f_ext.cb_upper, self.g_ext.cb_upper],
        }
    }
}

/// Amalgamates `B0` and `B1` over `X = span(x_sub) ⊂ B0` and `f: X -> B1` by
/// `psi0(x) = (x, F x)`, `psi1(y) = (G y, y)` with `F` extending `f` and `G` extending
/// `f^{-1} / (1 + delta)`, both complete contractions.
pub fn extend_and_pair(
    b0: &ConcreteSpace,
    x_sub: &CMat,
    b1: &ConcreteSpace,
    f: &CMat,
    delta: f64,
    ctx: &EvalCtx,
) -> Result<AmalgamResult> {
    extend_and_pair_hinted(b0, x_sub, b1, f, delta, None, ctx)
}

/// [`extend_and_pair`] with the inverse extension first tried on the blocks `hint` of
/// the ambient of `B1`.
pub fn extend_and_pair_hinted(
    b0: &ConcreteSpace,
    x_sub: &CMat,
    b1: &ConcreteSpace,
    f: &CMat,
    delta: f64,
    hint: Option<&[usize]>,
    ctx: &EvalCtx,
) -> Result<AmalgamResult> {
    if !(delta >= 0.0) {
        return Err(OpError::Invalid(format!("delta = {delta}")));
    }
    let dx = x_sub.ncols();
    if x_sub.nrows() != b0.dim() || f.shape() != (b1.dim(), dx) {
        return Err(OpError::DimensionMismatch("subspace or map shape".into()));
    }
    let xv = b0.basis_matrix() * x_sub;
    let fv = b1.basis_matrix() * f;
    if dx > 0 {
        let sv = fv.clone().svd(false, false).singular_values;
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 1e-10 {
            return Err(OpError::NotInjective(smin));
        }
    }
    let f_images: Vec<MatrixTuple> = (0..dx).map(|i| b1.tuple_of(&f.column(i).into_owned())).collect();
    let g_images: Vec<MatrixTuple> = (0..dx)
        .map(|i| b0.tuple_of(&(x_sub.column(i).into_owned() * c(1.0 / (1.0 + delta), 0.0))))
        .collect();
    let fe = extend_into(&b0.ambient, &xv, &b1.ambient, &f_images, None, ctx)?;
    let ge = extend_into(&b1.ambient, &fv, &b0.ambient, &g_images, hint, ctx)?;
    for (name, e) in [("f", &fe), ("f^-1/(1+delta)", &ge)] {
        if e.cb_upper > 1.0 + 1e-7 {
            return Err(OpError::ExtensionFailure(format!(
                "no contractive extension of {name}: certified {}",
                e.cb_upper
            )));
        }
    }
    let amb = AmbientSignature(b0.ambient.0.iter().chain(b1.ambient.0.iter()).cloned().collect());
    let mut vectors: Vec<MatrixTuple> = Vec::new();
    for t in &b1.basis {
        vectors.push(concat(&ge.apply(t), t));
    }
    for t in &b0.basis {
        vectors.push(concat(t, &fe.apply(t)));
    }
    let (basis, coords) = span_basis(&amb, &vectors);
    let amalgam = make_space_labeled(amb, basis, format!("({})*({})", b0.label, b1.label))?;
    let d1 = b1.dim();
    let e1 = coords.columns(0, d1).into_owned();
    let e0 = coords.columns(d1, b0.dim()).into_owned();
    let za = Arc::new(Space::Concrete(amalgam.clone()));
    let emb0 = LinearMap::new(Arc::new(Space::Concrete(b0.clone())), za.clone(), e0)?;
    let emb1 = LinearMap::new(Arc::new(Space::Concrete(b1.clone())), za.clone(), e1)?;
    let agreement_defect = if dx == 0 {
        0.0
    } else {
        let xs = subspace(b0, x_sub, "X")?;
        let diff = &emb1.coeffs * f - &emb0.coeffs * x_sub;
        let dmap = LinearMap::new(Arc::new(Space::Concrete(xs.clone())), za, diff)?;
        let duals = dual_functional_norms(&xs, ctx)?;
        let tri = triangle_upper(&dmap, &duals, ctx)?;
        if tri <= 1e-9 || tri <= delta / (1.0 + delta) + 1e-9 {
            tri
        } else {
            tri.min(map_norm_upper(&dmap, usize::MAX, ctx)?.upper)
        }
    };
    Ok(AmalgamResult {
        amalgam,
        emb0,
        emb1,
        isometry_defect0: (fe.cb_upper - 1.0).max(0.0),
        isometry_defect1: (ge.cb_upper - 1.0).max(0.0),
        agreement_defect,
        f_ext: fe,
        g_ext: ge,
    })
}

// ---------------------------------------------------------------------------
// pushout

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PushoutProbe {
    pub side: String,
    pub level: usize,
    pub norm: f64,
    pub lower: f64,
    pub upper: f64,
    /// `norm` lies in `[lower, upper]` up to `1e-6`.
    pub isometric_within_interval: bool,
    /// `upper <= norm + 1e-6`.
    pub contractive: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PushoutReport {
    pub schema: String,
    pub delta: f64,
    pub probes: Vec<PushoutProbe>,
    pub all_consistent: bool,
}

/// `Z = (X +1 Y +1 delta X) / {(-z, f(z), z)}` with its canonical maps, evaluated on
/// probes. Lower endpoints come from contraction tuples annihilating the kernel.
pub fn pushout_space(x: &ConcreteSpace, y: &ConcreteSpace, f: &CMat, delta: f64, ncap: usize, ctx: &EvalCtx) -> Result<Space> {
    let dx = x.dim();
    let dy = y.dim();
    let mut summands = vec![Space::Concrete(x.clone()), Space::Concrete(y.clone())];
    if delta > 0.0 {
        summands.push(scaled_space(Space::Concrete(x.clone()), delta)?);
    }
    let parent = one_sum(summands, ncap);
    let total = parent.dim();
    let kernel: Vec<SpaceElement> = (0..dx)
        .map(|i| {
            let mut v = vec![ZERO; total];
            v[i] = c(-1.0, 0.0);
            for l in 0..dy {
                v[dx + l] = f[(l, i)];
            }
            if delta > 0.0 {
                v[dx + dy + i] = ONE;
            }
            SpaceElement::scalar(&v)
        })
        .collect();
    let mut q = quotient_space(parent, kernel)?;
    // annihilating tuples
    let xv = y.basis_matrix() * f;
    let fmap = LinearMap::between(x, y, f.clone())?;
    let fnorm = map_norm_upper(&fmap, usize::MAX, ctx)?.upper.max(1.0);
    let mut tuples = Vec::new();
    for (j, &m) in x.blocks().iter().enumerate() {
        let imgs: Vec<MatrixTuple> = (0..dx)
            .map(|i| vec![&x.basis[i][j] * c(1.0 / (1.0 + delta), 0.0)])
            .collect();
        let psi = extend_into(&y.ambient, &xv, &AmbientSignature(vec![m]), &imgs, None, ctx)?;
        let s = 1.0 / psi.cb_upper.max(1.0);
        let mut images: Vec<CMat> = (0..dx).map(|i| &x.basis[i][j] * c(s, 0.0)).collect();
        images.extend(y.basis.iter().map(|t| &psi.apply(t)[0] * c(s, 0.0)));
        if delta > 0.0 {
            images.extend((0..dx).map(|i| &x.basis[i][j] * c(s * delta / (1.0 + delta), 0.0)));
        }
        tuples.push(ContractionTuple { q: m, images });
    }
    for (l, &m) in y.blocks().iter().enumerate() {
        let s = 1.0 / fnorm;
        let mut images: Vec<CMat> = (0..dx).map(|i| &y.tuple_of(&f.column(i).into_owned())[l] * c(s, 0.0)).collect();
        images.extend(y.basis.iter().map(|t| &t[l] * c(s, 0.0)));
        if delta > 0.0 {
            images.extend((0..dx).map(|_| CMat::zeros(m, m)));
        }
        tuples.push(ContractionTuple { q: m, images });
    }
    if let Space::Quotient { annihilators, .. } = &mut q {
        *annihilators = tuples;
    }
    Ok(q)
}

fn quotient_coords(q: &Space, rep: &SpaceElement) -> SpaceElement {
    match q {
        Space::Quotient { complement, .. } => rep.transform(&complement.adjoint()),
        _ => rep.clone(),
    }
}

pub fn pushout_bounds(
    x: &ConcreteSpace,
    y: &ConcreteSpace,
    f: &CMat,
    delta: f64,
    probes_x: &[SpaceElement],
    probes_y: &[SpaceElement],
    ctx: &EvalCtx,
) -> Result<PushoutReport> {
    let ncap = probes_x.iter().chain(probes_y).map(|p| p.level).max().unwrap_or(1);
    let q = pushout_space(x, y, f, delta, ncap, ctx)?;
    let total = q.dim() + x.dim();
    let mut probes = Vec::new();
    for (side, list, space, offset) in [("i", probes_x, x, 0usize), ("j", probes_y, y, x.dim())] {
        for p in list {
            let mut coeffs = vec![CMat::zeros(p.level, p.level); total];
            for (i, a) in p.coeffs.iter().enumerate() {
                coeffs[offset + i] = a.clone();
            }
            let rep = SpaceElement { level: p.level, coeffs };
            let b = q.norm_bounds(&quotient_coords(&q, &rep), ctx)?;
            let norm = space.level_norm(p);
            probes.push(PushoutProbe {
                side: side.into(),
                level: p.level,
                norm,
                lower: b.lower,
                upper: b.upper,
                isometric_within_interval: b.contains(norm, 1e-6),
                contractive: b.upper <= norm + 1e-6,
            });
        }
    }
    let all_consistent = probes.iter().all(|p| p.isometric_within_interval && p.contractive);
    Ok(PushoutReport {
        schema: crate::json::SCHEMA.into(),
        delta,
        probes,
        all_consistent,
    })
}

// ---------------------------------------------------------------------------
// staged amalgamation of 1-exact spaces

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// (1) and (2): level and largest ambient block.
    pub n: usize,
    pub max_block: usize,
    pub z_dim: usize,
    /// (3)
    pub i_norm: f64,
    pub j_norm: f64,
    /// (4), for the embedding of the previous stage.
    pub phi_norm: Option<f64>,
    pub phi_inv_norm: Option<f64>,
    /// (5)
    pub i_inv_norm: f64,
    pub j_inv_norm: f64,
    pub inv_bound: f64,
    /// (6)
    pub i_drift: Option<f64>,
    pub j_drift: Option<f64>,
    pub drift_bound: Option<f64>,
    /// (7)
    pub agreement: f64,
    pub agreement_bound: f64,
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub space: ConcreteSpace,
    #[serde(with = "crate::json::cmat")]
    pub i: CMat,
    #[serde(with = "crate::json::cmat")]
    pub j: CMat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NapResult {
    pub stages: Vec<StageRecord>,
    pub snapshots: Vec<StageSnapshot>,
    pub tolerance: f64,
    pub all_hold: bool,
}

impl NapResult {
    pub fn final_space(&self) -> &ConcreteSpace {
        &self.snapshots.last().expect("at least one stage").space
    }

    /// One JSON object per stage.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.stages {
            writeln!(w, "{}", serde_json::to_string(s).expect("record serializes"))?;
        }
        Ok(())
    }
}

/// Block-diagonal copy of the blocks `subset` of a tuple, placed in the top-left corner
/// of `M_n` and scaled by `s`. A complete contraction of norm `s`.
fn corner(t: &MatrixTuple, subset: &[usize], n: usize, s: f64) -> CMat {
    let mut out = CMat::zeros(n, n);
    let mut o = 0;
    for &j in subset {
        let m = t[j].nrows();
        out.view_mut((o, o), (m, m)).copy_from(&(&t[j] * c(s, 0.0)));
        o += m;
    }
    out
}

struct StageState {
    z: ConcreteSpace,
    i: CMat,
    j: CMat,
    sx: Vec<usize>,
    sy: Vec<usize>,
    n: usize,
}

/// Stages `1..=stages` of the recursive amalgamation of `X ⊃ X0 = span(x0)` and `Y` along
/// `f: X0 -> Y`, with every stage condition certified from the stored coefficients.
#[allow(clippy::too_many_arguments)]
pub fn nap_amalgamate_1exact(
    x: &ConcreteSpace,
    x0: &CMat,
    y: &ConcreteSpace,
    f: &CMat,
    delta: f64,
    eps: f64,
    stages: usize,
    ctx: &EvalCtx,
) -> Result<NapResult> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(OpError::Invalid(format!("epsilon {eps} outside (0, 1]")));
    }
    if stages == 0 {
        return Err(OpError::Invalid("at least one stage".into()));
    }
    let first = extend_and_pair(x, x0, y, f, delta, ctx)?;
    let rx = x.blocks().len();
    let ry = y.blocks().len();
    let mut st = StageState {
        n: first.amalgam.ambient.max_block(),
        z: first.amalgam.clone(),
        i: first.emb0.coeffs.clone(),
        j: first.emb1.coeffs.clone(),
        sx: (0..rx).collect(),
        sy: (rx..rx + ry).collect(),
    };
    let size_x: usize = x.blocks().iter().sum();
    let size_y: usize = y.blocks().iter().sum();
    let mut records = Vec::new();
    let mut snapshots = vec![StageSnapshot {
        space: st.z.clone(),
        i: st.i.clone(),
        j: st.j.clone(),
    }];
    let mut tol = 1e-6;
    records.push(certify(x, x0, y, f, &st, None, 1, delta, eps, tol, ctx)?);
    for k in 1..stages {
        let n_next = st.n.max(size_x).max(size_y);
        let s = 1.0 / (1.0 + eps * 0.5f64.powi(k as i32));
        let amb = AmbientSignature(st.z.ambient.0.iter().cloned().chain([n_next, n_next]).collect());
        let phi = |t: &MatrixTuple, st: &StageState| -> MatrixTuple {
            let mut out = t.clone();
            out.push(corner(t, &st.sx, n_next, s));
            out.push(corner(t, &st.sy, n_next, s));
            out
        };
        let theta_x = |i: usize| -> CMat {
            let t = &x.basis[i];
            let all: Vec<usize> = (0..rx).collect();
            corner(t, &all, n_next, 1.0)
        };
        let theta_y = |l: usize| -> CMat {
            let t = &y.basis[l];
            let all: Vec<usize> = (0..ry).collect();
            corner(t, &all, n_next, 1.0)
        };
        let mut vectors: Vec<MatrixTuple> = st.z.basis.iter().map(|t| phi(t, &st)).collect();
        for i in 0..x.dim() {
            let iz = st.z.tuple_of(&st.i.column(i).into_owned());
            let mut t = iz.clone();
            t.push(theta_x(i));
            t.push(corner(&iz, &st.sy, n_next, s));
            vectors.push(t);
        }
        for l in 0..y.dim() {
            let jz = st.z.tuple_of(&st.j.column(l).into_owned());
            let mut t = jz.clone();
            t.push(corner(&jz, &st.sx, n_next, s));
            t.push(theta_y(l));
            vectors.push(t);
        }
        let (basis, coords) = span_basis(&amb, &vectors);
        let dz = st.z.dim();
        let z_next = make_space_labeled(amb.clone(), basis, format!("Z{}", k + 1))?;
        let phi_c = coords.columns(0, dz).into_owned();
        let i_next = coords.columns(dz, x.dim()).into_owned();
        let j_next = coords.columns(dz + x.dim(), y.dim()).into_owned();
        let r = st.z.ambient.0.len();
        let prev = StageState {
            z: st.z.clone(),
            i: st.i.clone(),
            j: st.j.clone(),
            sx: st.sx.clone(),
            sy: st.sy.clone(),
            n: st.n,
        };
        st = StageState {
            z: z_next,
            i: i_next,
            j: j_next,
            sx: vec![r],
            sy: vec![r + 1],
            n: n_next,
        };
        tol += 1e-6;
        snapshots.push(StageSnapshot {
            space: st.z.clone(),
            i: st.i.clone(),
            j: st.j.clone(),
        });
        records.push(certify(x, x0, y, f, &st, Some((&prev, &phi_c, s)), k + 1, delta, eps, tol, ctx)?);
    }
    let all_hold = records.iter().all(|r| r.holds);
    Ok(NapResult {
        stages: records,
        snapshots,
        tolerance: tol,
        all_hold,
    })
}

#[allow(clippy::too_many_arguments)]
fn certify(
    x: &ConcreteSpace,
    x0: &CMat,
    y: &ConcreteSpace,
    f: &CMat,
    st: &StageState,
    prev: Option<(&StageState, &CMat, f64)>,
    k: usize,
    delta: f64,
    eps: f64,
    tol: f64,
    ctx: &EvalCtx,
) -> Result<StageRecord> {
    let z = Arc::new(Space::Concrete(st.z.clone()));
    let xs = Arc::new(Space::Concrete(x.clone()));
    let ys = Arc::new(Space::Concrete(y.clone()));
    let cb = |m: &LinearMap| -> Result<f64> { Ok(map_norm_upper(m, usize::MAX, ctx)?.upper) };
    let im = LinearMap::new(xs.clone(), z.clone(), st.i.clone())?;
    let jm = LinearMap::new(ys.clone(), z.clone(), st.j.clone())?;
    let i_norm = cb(&im)?;
    let j_norm = cb(&jm)?;
    let i_inv_norm = cb(&crate::maps::inverse_on_range(&im)?)?;
    let j_inv_norm = cb(&crate::maps::inverse_on_range(&jm)?)?;
    let inv_bound = 1.0 + eps * 0.5f64.powi(k as i32);
    let x0s = Arc::new(Space::Concrete(subspace(x, x0, "X0")?));
    let agree = LinearMap::new(x0s, z.clone(), &st.j * f - &st.i * x0)?;
    let agreement = cb(&agree)?;
    let geo: f64 = (0..k.saturating_sub(1)).map(|i| 0.5f64.powi(i as i32)).sum();
    let agreement_bound = delta + 2.0 * eps * geo;
    let (mut phi_norm, mut phi_inv_norm, mut i_drift, mut j_drift, mut drift_bound) = (None, None, None, None, None);
    if let Some((p, phi, s)) = prev {
        // phi(z) = (z, a_X z, a_Y z) with a_X, a_Y corner maps of norm s: the identity
        // coordinate makes phi isometric and the extra coordinates are contractions
        phi_norm = Some(s.max(1.0));
        phi_inv_norm = Some(1.0);
        let di = LinearMap::new(xs.clone(), z.clone(), phi * &p.i - &st.i)?;
        let dj = LinearMap::new(ys.clone(), z.clone(), phi * &p.j - &st.j)?;
        i_drift = Some(cb(&di)?);
        j_drift = Some(cb(&dj)?);
        drift_bound = Some(eps * 0.5f64.powi(k as i32 - 1));
    }
    let max_block = st.z.ambient.max_block();
    let mut holds = max_block <= st.n
        && i_norm <= 1.0 + tol
        && j_norm <= 1.0 + tol
        && i_inv_norm <= inv_bound + tol
        && j_inv_norm <= inv_bound + tol
        && agreement <= agreement_bound + tol;
    if let (Some(a), Some(b), Some(bd)) = (i_drift, j_drift, drift_bound) {
        holds &= a <= bd + tol && b <= bd + tol;
    }
    if let (Some(a), Some(b)) = (phi_norm, phi_inv_norm) {
        holds &= a <= 1.0 + tol && b <= 1.0 + tol;
    }
    Ok(StageRecord {
        stage: k,
        n: st.n,
        max_block,
        z_dim: st.z.dim(),
        i_norm,
        j_norm,
        phi_norm,
        phi_inv_norm,
        i_inv_norm,
        j_inv_norm,
        inv_bound,
        i_drift,
        j_drift,
        drift_bound,
        agreement,
        agreement_bound,
        tolerance: tol,
        holds,
    })
}
