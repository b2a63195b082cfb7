//! Free maps: sampling with jets, freeness margins, generic projections and headroom scaling.

use crate::error::{invalid, Error, Result};
use crate::fd::{fd_jet, Jet2};
use crate::field::{Field, FieldKind};
use crate::grid::{sym_pairs, BallGrid};
use crate::linalg::{cholesky_upper, dot, gram_det, norm, orthonormalize, sym_eigenvalues, DenseMatrix};
use crate::smooth::{JetMap, PolyMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Default certification threshold for projection margins.
pub const MARGIN_FLOOR: f64 = 1e-3;
/// Default safety factor of [`headroom_scale`].
pub const HEADROOM_SAFETY: f64 = 0.5;

/// Map values on a grid with first and second derivatives and per-node freeness margins.
#[derive(Clone, Debug)]
pub struct FreeMapRecord {
    pub values: Field<f64>,
    pub jet: Jet2<f64>,
    /// Gram determinant of the jet vectors at each active node.
    pub margin: Vec<f64>,
    /// Minimum of `margin` over closed-ball nodes.
    pub min_margin: f64,
}

/// `n(n+3)/2`, the number of first and second derivative directions.
pub fn jet_dim(n: usize) -> usize {
    n * (n + 3) / 2
}

impl FreeMapRecord {
    /// Record with finite-difference jets of the sampled values.
    pub fn from_values(values: Field<f64>) -> Self {
        let jet = fd_jet(&values);
        Self::from_parts(values, jet)
    }

    /// Record with exact jets of an analytic map.
    pub fn from_map(grid: &Arc<BallGrid<f64>>, map: &dyn JetMap) -> Self {
        let n = grid.n();
        let q = map.q();
        let pairs = sym_pairs(n);
        let per: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|p| {
                let j = map.jet(&grid.coord_f64(p), 2);
                let val: Vec<f64> = j.iter().map(|c| c.value()).collect();
                let mut d1 = Vec::with_capacity(n * q);
                for i in 0..n {
                    let mut e = vec![0u8; n];
                    e[i] = 1;
                    d1.extend(j.iter().map(|c| c.partial(&e)));
                }
                let mut d2 = Vec::with_capacity(pairs.len() * q);
                for &(a, b) in &pairs {
                    let mut e = vec![0u8; n];
                    e[a] += 1;
                    e[b] += 1;
                    d2.extend(j.iter().map(|c| c.partial(&e)));
                }
                (val, d1, d2)
            })
            .collect();
        let mut jet = Jet2::zeros(n, q, grid.len());
        let mut data = Vec::with_capacity(grid.len() * q);
        for (p, (v, d1, d2)) in per.into_iter().enumerate() {
            data.extend(v);
            jet.d1[p * n * q..(p + 1) * n * q].copy_from_slice(&d1);
            let np = pairs.len();
            jet.d2[p * np * q..(p + 1) * np * q].copy_from_slice(&d2);
        }
        let values = Field::from_data(grid, FieldKind::Vector(q), data).expect("shape");
        Self::from_parts(values, jet)
    }

    /// Record from values and a given jet.
    pub fn from_parts(values: Field<f64>, jet: Jet2<f64>) -> Self {
        let (margin, min_margin) = margins_of(&values, &jet);
        FreeMapRecord {
            values,
            jet,
            margin,
            min_margin,
        }
    }

    pub fn grid(&self) -> &Arc<BallGrid<f64>> {
        self.values.grid()
    }
    pub fn q(&self) -> usize {
        self.values.ncomp()
    }
    /// The `n + n(n+1)/2` jet vectors at a node.
    pub fn jet_vectors(&self, node: usize) -> Vec<Vec<f64>> {
        let n = self.grid().n();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| self.jet.d1_at(node, i).to_vec()).collect();
        for pair in 0..n * (n + 1) / 2 {
            v.push(self.jet.d2_at(node, pair).to_vec());
        }
        v
    }
    /// Pullback metric `∂_iF·∂_jF` as a symmetric tensor field.
    pub fn pullback(&self) -> Field<f64> {
        let grid = self.grid();
        let pairs = sym_pairs(grid.n());
        let mut out = Field::zeros(grid, FieldKind::SymTensor);
        for p in 0..grid.len() {
            for (k, &(i, j)) in pairs.iter().enumerate() {
                out.at_mut(p)[k] = dot(self.jet.d1_at(p, i), self.jet.d1_at(p, j));
            }
        }
        out
    }
    /// Record of `s·F`.
    pub fn scaled(&self, s: f64) -> Self {
        Self::from_parts(self.values.scale(s), self.jet.scaled(s))
    }
}

fn margins_of(values: &Field<f64>, jet: &Jet2<f64>) -> (Vec<f64>, f64) {
    let grid = values.grid();
    let n = grid.n();
    let np = n * (n + 1) / 2;
    let margin: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let mut v: Vec<Vec<f64>> = (0..n).map(|i| jet.d1_at(p, i).to_vec()).collect();
            for pair in 0..np {
                v.push(jet.d2_at(p, pair).to_vec());
            }
            gram_det(&v).unwrap_or(0.0).max(0.0)
        })
        .collect();
    let min = grid
        .closed_ball_nodes()
        .into_iter()
        .map(|p| margin[p])
        .fold(f64::INFINITY, f64::min);
    (margin, min)
}

/// The explicit free map `x ↦ (x, {xⁱxʲ}_{i≤j})` into `ℝ^{n(n+3)/2}`.
pub fn standard_free_map(n: usize) -> PolyMap {
    PolyMap::standard_free(n, jet_dim(n))
}

/// Per-node freeness margins and their minimum over the closed ball.
pub fn freeness_margin(rec: &FreeMapRecord) -> (Vec<f64>, f64) {
    (rec.margin.clone(), rec.min_margin)
}

/// Sampled immersed submanifold of `ℝ^q`.
#[derive(Clone, Debug)]
pub struct SampledSubmanifold {
    pub points: Vec<Vec<f64>>,
    /// Tangent vectors per sample.
    pub tangents: Vec<Vec<Vec<f64>>>,
    /// Second-derivative vectors per sample (empty when unused).
    pub second: Vec<Vec<Vec<f64>>>,
}

impl SampledSubmanifold {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn has_second(&self) -> bool {
        self.second.iter().any(|s| !s.is_empty())
    }
    /// Samples a parametrized curve `t ↦ (c(t), c'(t), c''(t))`.
    pub fn from_curve(ts: &[f64], c: impl Fn(f64) -> [Vec<f64>; 3]) -> Self {
        let mut s = SampledSubmanifold {
            points: vec![],
            tangents: vec![],
            second: vec![],
        };
        for &t in ts {
            let [p, d1, d2] = c(t);
            s.points.push(p);
            s.tangents.push(vec![d1]);
            s.second.push(vec![d2]);
        }
        s
    }
    /// Applies the linear map `x ↦ M x` (M is `r × q`, row-major rows).
    pub fn map_linear(&self, m: &[Vec<f64>]) -> Self {
        let ap = |v: &Vec<f64>| m.iter().map(|row| dot(row, v)).collect::<Vec<f64>>();
        SampledSubmanifold {
            points: self.points.iter().map(ap).collect(),
            tangents: self.tangents.iter().map(|f| f.iter().map(ap).collect()).collect(),
            second: self.second.iter().map(|f| f.iter().map(ap).collect()).collect(),
        }
    }
}

/// Sine-distance margins of a projection direction.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct ProjectionMargins {
    pub secant: f64,
    pub tangent: f64,
    /// `None` when the submanifold carries no second-derivative data.
    pub jet: Option<f64>,
}

impl ProjectionMargins {
    pub fn min(&self) -> f64 {
        self.secant.min(self.tangent).min(self.jet.unwrap_or(f64::INFINITY))
    }
}

/// `|v - proj_span v|` for a (possibly dependent) spanning set.
fn dist_to_span(v: &[f64], span: &[Vec<f64>]) -> f64 {
    let basis = orthonormal_basis(span);
    let mut r = v.to_vec();
    for b in &basis {
        let c = dot(&r, b);
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    norm(&r)
}

fn orthonormal_basis(span: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = span.iter().map(|s| norm(s)).fold(0.0, f64::max).max(1e-300);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for s in span {
        let mut r = s.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nr = norm(&r);
        if nr > 1e-10 * scale {
            basis.push(r.iter().map(|x| x / nr).collect());
        }
    }
    basis
}

/// Secant, tangent and jet margins of the projection along the unit vector `v`.
pub fn projection_margins(s: &SampledSubmanifold, v: &[f64]) -> Result<ProjectionMargins> {
    if (norm(v) - 1.0).abs() > 1e-9 {
        return invalid("projection direction must be a unit vector");
    }
    if s.len() < 2 {
        return invalid("need at least two samples");
    }
    let m = s.len();
    let secant = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in i + 1..m {
                let d: Vec<f64> = s.points[i].iter().zip(&s.points[j]).map(|(a, b)| a - b).collect();
                let nd = norm(&d);
                if nd == 0.0 {
                    return Err(Error::InvalidArgument(format!("coincident samples {i} and {j}")));
                }
                let c = dot(v, &d) / nd;
                best = best.min((1.0 - c * c).max(0.0).sqrt());
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let tangent = s.tangents.iter().map(|t| dist_to_span(v, t)).fold(f64::INFINITY, f64::min);
    let jet = if s.has_second() {
        Some(
            s.tangents
                .iter()
                .zip(&s.second)
                .map(|(t, d)| {
                    let mut span = t.clone();
                    span.extend(d.iter().cloned());
                    dist_to_span(v, &span)
                })
                .fold(f64::INFINITY, f64::min),
        )
    } else {
        None
    };
    Ok(ProjectionMargins { secant, tangent, jet })
}

/// Orthonormal rows spanning `v⊥` (a `(q-1) × q` isometry onto `ℝ^{q-1}` after `π_v`).
pub fn complement_isometry(v: &[f64]) -> Vec<Vec<f64>> {
    let q = v.len();
    let mut span = vec![v.to_vec()];
    for i in 0..q {
        let mut e = vec![0.0; q];
        e[i] = 1.0;
        span.push(e);
    }
    let basis = orthonormal_basis(&span);
    basis[1..q].to_vec()
}

/// `π_v(x) = x - (x·v)v`.
pub fn project_along(v: &[f64], x: &[f64]) -> Vec<f64> {
    let c = dot(x, v);
    x.iter().zip(v).map(|(a, b)| a - c * b).collect()
}

/// One reduction step.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionStep {
    pub from_dim: usize,
    pub direction: Vec<f64>,
    pub margins: ProjectionMargins,
}

/// Output of [`reduce_dimension`].
#[derive(Clone, Debug)]
pub struct Reduction {
    pub result: SampledSubmanifold,
    pub steps: Vec<ReductionStep>,
}

fn random_unit(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = norm(&v);
        if nv > 0.1 && nv <= 1.0 {
            return v.iter().map(|x| x / nv).collect();
        }
    }
}

/// Projects `s` down to `ℝ^{q_target}` one direction at a time, choosing the best of
/// `trials` seeded random directions by minimum margin and rejecting steps below
/// `margin_floor`.
pub fn reduce_dimension(s: &SampledSubmanifold, q_target: usize, seed: u64, trials: usize, margin_floor: f64) -> Result<Reduction> {
    let mut cur = s.clone();
    let mut steps = Vec::new();
    if q_target > cur.dim() || q_target == 0 {
        return invalid(format!("target dimension {q_target} not in 1..={}", cur.dim()));
    }
    if trials == 0 {
        return invalid("trials must be positive");
    }
    let mut step = 0u64;
    while cur.dim() > q_target {
        let q = cur.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        let dirs: Vec<Vec<f64>> = (0..trials).map(|_| random_unit(&mut rng, q)).collect();
        let scored = dirs
            .par_iter()
            .map(|v| projection_margins(&cur, v).map(|m| (m.min(), m)))
            .collect::<Result<Vec<_>>>()?;
        let (best, (score, margins)) = scored
            .into_iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap().then(b.0.cmp(&a.0)))
            .expect("trials > 0");
        if score < margin_floor {
            return Err(Error::Certification(format!(
                "no direction clears margin floor {margin_floor:e} at dimension {q}; best margin {score:e}"
            )));
        }
        let v = &dirs[best];
        let iso = complement_isometry(v);
        cur = cur.map_linear(&iso);
        steps.push(ReductionStep {
            from_dim: q,
            direction: v.clone(),
            margins,
        });
        step += 1;
    }
    Ok(Reduction { result: cur, steps })
}

/// Output of [`headroom_scale`].
#[derive(Clone, Debug)]
pub struct Headroom {
    /// Scale `ε₀ = safety / m*`.
    pub eps0: f64,
    /// `m* = max F*(g^can)(Y, Y)` over nodes and `g`-unit vectors `Y`.
    pub m_star: f64,
    /// The record of `√ε₀ F`.
    pub scaled: FreeMapRecord,
    /// Minimum eigenvalue of `g - ε₀ F*(g^can)` over the closed ball.
    pub min_gap: f64,
}

fn sym_matrix(n: usize, comps: &[f64]) -> DenseMatrix<f64> {
    let mut m = vec![0.0; n * n];
    for (k, (i, j)) in sym_pairs(n).into_iter().enumerate() {
        m[i * n + j] = comps[k];
        m[j * n + i] = comps[k];
    }
    DenseMatrix::from_vec(n, n, m).expect("finite")
}

/// Largest generalized eigenvalue of `(b, g)` for symmetric `b` and SPD `g`.
fn max_rayleigh(b: &DenseMatrix<f64>, g: &DenseMatrix<f64>) -> Result<f64> {
    let c = cholesky_upper(g)?;
    let n = g.rows();
    // C⁻ᵀ B C⁻¹ by triangular solves
    let mut cinv = vec![0.0; n * n];
    for col in 0..n {
        for i in (0..n).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..n {
                s -= c[(i, k)] * cinv[k * n + col];
            }
            cinv[i * n + col] = s / c[(i, i)];
        }
    }
    let ci = DenseMatrix::from_vec(n, n, cinv)?;
    let m = ci.transpose().matmul(b).matmul(&ci);
    Ok(*sym_eigenvalues(&m).last().expect("nonempty"))
}

/// Scales `F` so that `g - ε₀F*(g^can)` stays positive definite with the given safety.
pub fn headroom_scale(rec: &FreeMapRecord, g: &Field<f64>, safety: f64) -> Result<Headroom> {
    if !(safety > 0.0 && safety < 1.0) {
        return invalid("safety must lie in (0, 1)");
    }
    let grid = rec.grid();
    let n = grid.n();
    let pb = rec.pullback();
    let mut m_star: f64 = 0.0;
    let nodes = grid.closed_ball_nodes();
    for &p in &nodes {
        let gm = sym_matrix(n, g.at(p));
        let bm = sym_matrix(n, pb.at(p));
        let r = max_rayleigh(&bm, &gm)
            .map_err(|_| Error::InvalidArgument(format!("metric not positive definite at node {p} ({:?})", grid.coord_f64(p))))?;
        m_star = m_star.max(r);
    }
    if m_star <= 0.0 {
        return invalid("pullback metric vanishes identically");
    }
    let eps0 = safety / m_star;
    let scaled = rec.scaled(eps0.sqrt());
    let mut min_gap = f64::INFINITY;
    for &p in &nodes {
        let d: Vec<f64> = g.at(p).iter().zip(pb.at(p)).map(|(a, b)| a - eps0 * b).collect();
        let ev = sym_eigenvalues(&sym_matrix(n, &d));
        min_gap = min_gap.min(ev[0]);
    }
    Ok(Headroom {
        eps0,
        m_star,
        scaled,
        min_gap,
    })
}

/// Orthonormal complement of the `n(n+3)/2` jet vectors, completed from the coordinate axes.
pub fn jet_complement(vectors: &[Vec<f64>], count: usize) -> Result<Vec<Vec<f64>>> {
    let q = vectors[0].len();
    let mut span: Vec<Vec<f64>> = vectors.to_vec();
    for i in 0..q {
        let mut e = vec![0.0; q];
        e[i] = 1.0;
        span.push(e);
    }
    let basis = orthonormal_basis(&span);
    let k = orthonormalize(vectors)?.len();
    if basis.len() < k + count {
        return invalid(format!("complement of dimension {count} unavailable in R^{q}"));
    }
    Ok(basis[k..k + count].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;
    use std::f64::consts::PI;

    fn circle(m: usize) -> SampledSubmanifold {
        let ts: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
        SampledSubmanifold::from_curve(&ts, |t| {
            [
                vec![t.cos(), t.sin(), 0.0],
                vec![-t.sin(), t.cos(), 0.0],
                vec![-t.cos(), -t.sin(), 0.0],
            ]
        })
    }

    #[test]
    fn standard_map_values_and_margin() {
        let f = standard_free_map(1);
        assert_eq!(f.eval(&[2.0]), vec![2.0, 4.0]);
        let g = make_ball_grid::<f64>(1, 33).unwrap();
        let rec = FreeMapRecord::from_map(&g, &f);
        for &p in &g.closed_ball_nodes() {
            assert!((rec.margin[p] - 4.0).abs() < 1e-9);
        }
        // finite-difference jets are exact on quadratics
        let fd = FreeMapRecord::from_values(rec.values.clone());
        assert!((fd.min_margin - 4.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_map_has_zero_margin() {
        let g = make_ball_grid::<f64>(1, 17).unwrap();
        let line = PolyMap {
            n: 1,
            q: 3,
            terms: vec![(0, 1.0, vec![1])],
        };
        assert_eq!(FreeMapRecord::from_map(&g, &line).min_margin, 0.0);
    }

    #[test]
    fn margin_scales_homogeneously() {
        let g = make_ball_grid::<f64>(2, 9).unwrap();
        let rec = FreeMapRecord::from_map(&g, &standard_free_map(2));
        let s = rec.scaled(1.5);
        assert!((s.min_margin / rec.min_margin - 1.5f64.powi(10)).abs() < 1e-9 * 1.5f64.powi(10));
    }

    #[test]
    fn circle_margins() {
        let c = circle(64);
        let m = projection_margins(&c, &[0.0, 0.0, 1.0]).unwrap();
        assert!((m.secant - 1.0).abs() < 1e-12 && (m.tangent - 1.0).abs() < 1e-12);
        assert!((m.jet.unwrap() - 1.0).abs() < 1e-12);
        let m = projection_margins(&c, &[1.0, 0.0, 0.0]).unwrap();
        assert!(m.secant < 1e-12);
        let v = [0.3, -0.4, (1.0f64 - 0.25).sqrt()];
        let a = projection_margins(&c, &v).unwrap();
        let b = projection_margins(&c, &v.map(|x| -x)).unwrap();
        assert!((a.secant - b.secant).abs() < 1e-14 && (a.tangent - b.tangent).abs() < 1e-14);
    }

    #[test]
    fn coincident_samples_rejected() {
        let mut c = circle(8);
        c.points[1] = c.points[0].clone();
        assert!(projection_margins(&c, &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn reduce_noop_and_segment() {
        let c = circle(16);
        let r = reduce_dimension(&c, 3, 1, 8, MARGIN_FLOOR).unwrap();
        assert!(r.steps.is_empty());
        assert_eq!(r.result.points, c.points);
        let ts: Vec<f64> = (0..20).map(|k| -1.0 + k as f64 / 10.0).collect();
        let seg = SampledSubmanifold {
            points: ts.iter().map(|&t| vec![t, 2.0 * t, -t]).collect(),
            tangents: ts.iter().map(|_| vec![vec![1.0, 2.0, -1.0]]).collect(),
            second: vec![],
        };
        let r = reduce_dimension(&seg, 2, 3, 16, MARGIN_FLOOR).unwrap();
        assert_eq!(r.result.dim(), 2);
        assert!(r.steps[0].margins.secant > 0.0 && r.steps[0].margins.tangent > 0.0);
    }

    #[test]
    fn projection_is_idempotent() {
        let v = [0.6, 0.0, 0.8];
        let x = [1.0, 2.0, 3.0];
        let p = project_along(&v, &x);
        let pp = project_along(&v, &p);
        assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(norm(&p) <= norm(&x));
        let iso = complement_isometry(&v);
        assert_eq!(iso.len(), 2);
        for r in &iso {
            assert!(dot(r, &v).abs() < 1e-12 && (norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn headroom_examples() {
        let g = make_ball_grid::<f64>(1, 9).unwrap();
        let id = PolyMap {
            n: 1,
            q: 2,
            terms: vec![(0, 1.0, vec![1])],
        };
        let rec = FreeMapRecord::from_map(&g, &id);
        let two = Field::scalar_fn(&g, |_| 2.0);
        let two = Field::from_data(&g, FieldKind::SymTensor, two.into_data()).unwrap();
        let h = headroom_scale(&rec, &two, 0.5).unwrap();
        assert!((h.m_star - 0.5).abs() < 1e-14 && (h.eps0 - 1.0).abs() < 1e-14);
        let own = rec.pullback();
        let h = headroom_scale(&rec, &own, 0.5).unwrap();
        assert!((h.eps0 - 0.5).abs() < 1e-14 && h.min_gap > 0.0);
    }
}
