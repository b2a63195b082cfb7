//! Substitution of the fast phase `t = β(x̂₁/ε)` and injectivity margins of sampled maps.

use super::chain::{Expansion, StepState};
use crate::error::{invalid, Result};
use crate::fd::Jet2;
use crate::field::{Field, FieldKind};
use crate::free_maps::FreeMapRecord;
use crate::grid::{sym_pairs, BallGrid};
use crate::jet::{space, Jet, JetVec};
use crate::linalg::{sym_eigenvalues, DenseMatrix};
use crate::smooth::JetMap;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Values, first and second derivatives, residual and max third derivative at one node.
type NodeValues = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64);

/// Jets in `x` of `F_k(ε, β(x̂₁/ε), x̂)` at `x` with `x̂ = A x`, and the expansion at that point.
fn point_jet(state: &StepState, eps: f64, chart: &[f64], x: &[f64], deg: usize) -> Result<(Vec<Jet>, Expansion)> {
    let n = state.n();
    let xh: Vec<f64> = (0..n).map(|i| (0..n).map(|j| chart[i * n + j] * x[j]).sum()).collect();
    let s0 = xh[0] / eps;
    let beta = state.profiles.beta_jet(s0, deg)?;
    let mut s = Jet::constant(n, deg, s0);
    for j in 0..n {
        s.axpy(chart[j] / eps, &Jet::var(n, deg, j, 0.0));
    }
    let t = s.compose_uni(beta.coeffs());
    let t0 = t.value();
    let mut subs = vec![t.add_const(-t0)];
    for i in 0..n {
        let mut d = Jet::zero(n, deg);
        for j in 0..n {
            d.axpy(chart[i * n + j], &Jet::var(n, deg, j, 0.0));
        }
        subs.push(d);
    }
    let e = state.expand(t0, &xh, deg)?;
    let f = e.map_jet(eps).iter().map(|c| c.compose(&subs).truncate(deg)).collect();
    Ok((f, e))
}

/// `x ↦ F_k(ε, β(x̂₁/ε), A x)` as an analytic map in the grid coordinates.
#[derive(Clone)]
pub struct SubstitutedMap {
    pub state: Arc<StepState>,
    pub eps: f64,
    /// Row-major `A`.
    pub chart: Vec<f64>,
}

impl JetMap for SubstitutedMap {
    fn n(&self) -> usize {
        self.state.n()
    }
    fn q(&self) -> usize {
        self.state.q()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x, 0).iter().map(|c| c.value()).collect()
    }
    fn jet(&self, x: &[f64], deg: usize) -> JetVec {
        point_jet(&self.state, self.eps, &self.chart, x, deg)
            .expect("substituted map outside the profile range")
            .0
    }
}

/// Substituted map on a grid with its residual.
#[derive(Clone, Debug)]
pub struct Substituted {
    pub eps: f64,
    pub level: usize,
    /// Power `r` with `F*g_can − F₀*g_can − a⁴(dx̂¹)² = ε^r f`.
    pub order: usize,
    pub record: FreeMapRecord,
    /// `f` in the grid coordinates.
    pub residual: Field<f64>,
    pub displacement_max: f64,
    /// `max |∂³F|` over the closed ball.
    pub third_derivative_max: f64,
    /// `h²/3 · max|∂³F|`, the truncation error of centered first differences.
    pub fd_error_bound: f64,
}

/// Evaluates `F_{ε,k}(x) = F_k(ε, β(x̂₁/ε), x̂)` with `x̂ = A x` at every grid node.
///
/// `chart` is the row-major `n × n` matrix `A`; the state's base map and cutoff are given in `x̂`.
pub fn substitute(state: &StepState, eps: f64, grid: &Arc<BallGrid<f64>>, chart: &[f64]) -> Result<Substituted> {
    let n = state.n();
    let q = state.q();
    if grid.n() != n || chart.len() != n * n {
        return invalid("grid or chart dimension does not match the step state");
    }
    if !(eps > 0.0) {
        return invalid(format!("epsilon must be positive, got {eps}"));
    }
    const OUT: usize = 3;
    let pairs = sym_pairs(n);
    let np = pairs.len();
    let sp = space(n);
    let per: Vec<Result<NodeValues>> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let x = grid.coord_f64(p);
            let (f, e) = point_jet(state, eps, chart, &x, OUT)?;
            let val: Vec<f64> = f.iter().map(|c| c.value()).collect();
            let mut d1 = Vec::with_capacity(n * q);
            for i in 0..n {
                let mut m = vec![0u8; n];
                m[i] = 1;
                d1.extend(f.iter().map(|c| c.partial(&m)));
            }
            let mut d2 = Vec::with_capacity(np * q);
            for &(a, b) in &pairs {
                let mut m = vec![0u8; n];
                m[a] += 1;
                m[b] += 1;
                d2.extend(f.iter().map(|c| c.partial(&m)));
            }
            let mut third: f64 = 0.0;
            for k in 0..sp.size(OUT) {
                if sp.degree_of(k) == 3 {
                    let e3 = sp.exponents(k);
                    for c in &f {
                        third = third.max(c.partial(e3).abs());
                    }
                }
            }
            // residual in x̂, pulled back to x
            let rh = e.residual(eps);
            let full = |i: usize, j: usize| -> f64 {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                rh[pairs.iter().position(|&pp| pp == (a, b)).unwrap()]
            };
            let rx: Vec<f64> = pairs
                .iter()
                .map(|&(k, l)| {
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            acc += chart[i * n + k] * chart[j * n + l] * full(i, j);
                        }
                    }
                    acc
                })
                .collect();
            Ok((val, d1, d2, rx, third))
        })
        .collect();
    let mut jet = Jet2::zeros(n, q, grid.len());
    let mut data = Vec::with_capacity(grid.len() * q);
    let mut res = Vec::with_capacity(grid.len() * np);
    let mut third_max: f64 = 0.0;
    let ball = grid.closed_ball_nodes();
    let mut in_ball = vec![false; grid.len()];
    for &p in &ball {
        in_ball[p] = true;
    }
    for (p, r) in per.into_iter().enumerate() {
        let (v, d1, d2, rx, third) = r?;
        data.extend(v);
        jet.d1[p * n * q..(p + 1) * n * q].copy_from_slice(&d1);
        jet.d2[p * np * q..(p + 1) * np * q].copy_from_slice(&d2);
        res.extend(rx);
        if in_ball[p] {
            third_max = third_max.max(third);
        }
    }
    let order = if state.level <= 1 { 1 } else { state.level + 1 };
    let values = Field::from_data(grid, FieldKind::Vector(q), data)?;
    let base = Field::from_fn(grid, FieldKind::Vector(q), |x, out| {
        let xh: Vec<f64> = (0..n).map(|i| (0..n).map(|j| chart[i * n + j] * x[j]).sum()).collect();
        out.copy_from_slice(&state.f0.eval(&xh));
    });
    let displacement_max = values.sub(&base).max_norm();
    let residual = Field::from_data(grid, FieldKind::SymTensor, res)?;
    let h = grid.h();
    Ok(Substituted {
        eps,
        level: state.level,
        order,
        record: FreeMapRecord::from_parts(values, jet),
        residual,
        displacement_max,
        third_derivative_max: third_max,
        fd_error_bound: h * h / 3.0 * third_max,
    })
}

/// Injectivity diagnostics of a sampled map.
#[derive(Clone, Debug, Serialize)]
pub struct InjectivityMargin {
    pub lebesgue: f64,
    /// `min |F(x) − F(y)|` over node pairs with `|x − y| ≥ δ_L`.
    pub pair_min: f64,
    /// `min σ_min(DF)` over the closed ball.
    pub immersion_min: f64,
}

impl InjectivityMargin {
    pub fn min(&self) -> f64 {
        self.pair_min.min(self.immersion_min)
    }
}

/// Pairwise separation beyond `δ_L` and the immersion margin below it.
pub fn injectivity_margin(rec: &FreeMapRecord, lebesgue: f64) -> Result<InjectivityMargin> {
    if !(lebesgue > 0.0) {
        return invalid(format!("Lebesgue radius must be positive, got {lebesgue}"));
    }
    let grid = rec.grid();
    let n = grid.n();
    let nodes = grid.closed_ball_nodes();
    let l2 = lebesgue * lebesgue;
    let pair_min = nodes
        .par_iter()
        .enumerate()
        .map(|(a, &p)| {
            let xp = grid.coord_f64(p);
            let fp = rec.values.at(p);
            let mut best = f64::INFINITY;
            for &r in &nodes[a + 1..] {
                let xr = grid.coord_f64(r);
                let dx: f64 = xp.iter().zip(&xr).map(|(u, v)| (u - v) * (u - v)).sum();
                if dx < l2 {
                    continue;
                }
                let df: f64 = fp.iter().zip(rec.values.at(r)).map(|(u, v)| (u - v) * (u - v)).sum();
                best = best.min(df);
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
        .sqrt();
    let immersion_min = nodes
        .par_iter()
        .map(|&p| {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    g[i * n + j] = rec.jet.d1_at(p, i).iter().zip(rec.jet.d1_at(p, j)).map(|(u, v)| u * v).sum();
                }
            }
            let ev = sym_eigenvalues(&DenseMatrix::from_vec(n, n, g).expect("square"));
            ev[0].max(0.0).sqrt()
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(InjectivityMargin {
        lebesgue,
        pair_min,
        immersion_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;
    use crate::oscillator::chain::{build_u1, corrector_u2, step_fk, SampleSet};
    use crate::oscillator::frames::build_frames;
    use crate::oscillator::profiles::build_profiles;
    use crate::smooth::{JetFn, JetMap, Plateau, PolyMap, Zero};

    fn state(a: Arc<dyn JetFn>, grid: &Arc<BallGrid<f64>>) -> StepState {
        let f0: Arc<dyn JetMap> = Arc::new(PolyMap::standard_free(1, 7));
        let frames = Arc::new(build_frames(f0.clone(), grid, 1.0, &[0.0]).unwrap());
        let profiles = Arc::new(build_profiles(256).unwrap());
        let samples = SampleSet::uniform(16, (0..9).map(|k| vec![-0.9 + 0.2 * k as f64]).collect());
        let s1 = build_u1(f0, a, frames, profiles, &samples).unwrap();
        step_fk(&corrector_u2(&s1, &samples).unwrap(), 3, &samples).unwrap()
    }

    #[test]
    fn pullback_identity_holds_nodewise() {
        let grid = make_ball_grid::<f64>(1, 129).unwrap();
        let a: Arc<dyn JetFn> = Arc::new(Plateau::new(vec![0.0], 0.0, 0.9).with_amplitude(0.1));
        let st = state(a.clone(), &grid);
        let eps = 0.1;
        let sub = substitute(&st, eps, &grid, &[1.0]).unwrap();
        assert_eq!(sub.order, 4);
        let scale = eps.powi(4);
        for p in grid.closed_ball_nodes() {
            let x = grid.coord_f64(p);
            let d: Vec<f64> = sub.record.jet.d1_at(p, 0).to_vec();
            let d0 = 1.0 + 4.0 * x[0] * x[0];
            let lhs = d.iter().map(|v| v * v).sum::<f64>() - d0 - a.eval(&x).powi(4);
            assert!((lhs - scale * sub.residual.get(p, 0)).abs() < 1e-12, "x={x:?}");
        }
        assert!(sub.displacement_max < 0.05 && sub.displacement_max > 0.0);
        let inj = injectivity_margin(&sub.record, 0.1).unwrap();
        assert!(inj.pair_min > 0.0 && inj.immersion_min > 0.9, "{inj:?}");
    }

    #[test]
    fn substituted_map_matches_grid_record() {
        let grid = make_ball_grid::<f64>(1, 17).unwrap();
        let a: Arc<dyn JetFn> = Arc::new(Plateau::new(vec![0.0], 0.0, 0.8).with_amplitude(0.1));
        let st = Arc::new(state(a, &grid));
        let sub = substitute(&st, 0.1, &grid, &[1.0]).unwrap();
        let map = SubstitutedMap {
            state: st,
            eps: 0.1,
            chart: vec![1.0],
        };
        for p in 0..grid.len() {
            let j = map.jet(&grid.coord_f64(p), 2);
            for c in 0..7 {
                assert!((j[c].value() - sub.record.values.get(p, c)).abs() < 1e-14);
                assert!((j[c].partial(&[1]) - sub.record.jet.d1_at(p, 0)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cutoff_leaves_base_map() {
        let grid = make_ball_grid::<f64>(1, 33).unwrap();
        let st = state(Arc::new(Zero(1)), &grid);
        let sub = substitute(&st, 0.1, &grid, &[1.0]).unwrap();
        assert_eq!(sub.displacement_max, 0.0);
        assert_eq!(sub.residual.max_abs(), 0.0);
    }

    #[test]
    fn injectivity_of_circle_arc() {
        // unit circle arc over [-1, 1] radians: chord length 2 sin(d/2)
        let grid = make_ball_grid::<f64>(1, 65).unwrap();
        let rec = FreeMapRecord::from_map(&grid, &PolyMapCircle);
        let m = injectivity_margin(&rec, 0.5).unwrap();
        assert!((m.pair_min - 2.0 * (0.25f64).sin()).abs() < 1e-3, "{m:?}");
        assert!((m.immersion_min - 1.0).abs() < 1e-12);
    }

    struct PolyMapCircle;
    impl JetMap for PolyMapCircle {
        fn n(&self) -> usize {
            1
        }
        fn q(&self) -> usize {
            2
        }
        fn jet(&self, x: &[f64], deg: usize) -> Vec<Jet> {
            let t = Jet::var(1, deg, 0, x[0]);
            vec![t.cos(), t.sin()]
        }
    }
}
