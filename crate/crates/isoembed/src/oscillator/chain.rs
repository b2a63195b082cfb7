//! Corrector hierarchy `u₁, u₂, …` evaluated pointwise through Taylor jets in `(t, x)`.
//!
//! The map of level `k` is `F_k = Σ_j ε^j G_j` with `ε`-independent coefficients. Writing
//! `W_m = ∂₁G_m + ϱ⁻¹∂_tG_{m+1}`, the residuals of `|∂₁F + (εϱ)⁻¹∂_tF|²`, the mixed and the
//! tangential products are exact polynomials in `ε` with coefficients `c_m`.

use super::frames::FrameFields;
use super::profiles::ProfilePack;
use crate::error::{invalid, Error, Result};
use crate::grid::sym_pairs;
use crate::jet::{jdot, jleast_norm, jvadd, jvscale, jvscale_f, max_degree, Jet, JetVec};
use crate::periodic::{periodic_quadrature, PeriodicProfile};
use crate::smooth::{smooth_step_jet, JetFn, JetMap};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Floor for the normalized Gram determinant of a corrector row set.
pub const ROW_GRAM_FLOOR: f64 = 1e-13;
/// Partition threshold as a fraction of `max|a|` when the small-amplitude rows degenerate.
pub const DELTA_FRACTION: f64 = 0.5;
/// Threshold putting the whole support in the small-amplitude family.
pub const DELTA_SINGLE: f64 = 2.0;
/// Gram floor the small-amplitude rows must clear to use [`DELTA_SINGLE`].
pub const SINGLE_FAMILY_FLOOR: f64 = 1e-8;

/// State of the oscillatory step at a given level.
#[derive(Clone)]
pub struct StepState {
    pub f0: Arc<dyn JetMap>,
    pub a: Arc<dyn JetFn>,
    pub profiles: Arc<ProfilePack>,
    pub frames: Arc<FrameFields>,
    /// 1 after `u₁`, 2 after `u₂`, `k` after the generic steps up to `F_k`.
    pub level: usize,
    /// Partition threshold `δ` for the generic steps.
    pub delta: f64,
    /// `max|a|` over the sample points.
    pub a_max: f64,
    pub report: StepReport,
}

/// Diagnostics gathered while building the state.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepReport {
    /// Max violation of the pointwise `u₁` identities.
    pub u1_identity_max: f64,
    /// Max violation of `|∂_tu₁|² = a⁴ϱ²`.
    pub u1_speed_max: f64,
    /// Max per-node violation of the `t`-integral identities.
    pub u1_integral_max: f64,
    /// Minimum normalized Gram determinant per row set.
    pub gram_min: Vec<(String, f64)>,
    /// Max violation of the `û₂` orthogonality rows.
    pub u2_orthogonality_max: f64,
    pub samples: usize,
}

/// Jet expansion of the level map at one point `(t, x)`.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub n: usize,
    pub level: usize,
    /// `G_0 … G_{level+1}`.
    pub g: Vec<JetVec>,
    pub rho_inv: Jet,
    /// Order-zero targets of the three residual families, in `sym_pairs` order.
    pub target: Vec<Jet>,
    /// Normalized Gram determinants of the row sets solved at this point.
    pub grams: Vec<(String, f64)>,
}

/// Sample points `(t, x)` for diagnostics.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub ts: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
}

impl SampleSet {
    /// `m` uniform times crossed with the given points, shifted off the symmetry points of the profiles.
    pub fn uniform(m: usize, xs: Vec<Vec<f64>>) -> Self {
        let step = 2.0 * std::f64::consts::PI / m as f64;
        SampleSet {
            ts: (0..m).map(|k| (k as f64 + 0.37) * step).collect(),
            xs,
        }
    }
    fn pairs(&self) -> Vec<(f64, Vec<f64>)> {
        self.xs.iter().flat_map(|x| self.ts.iter().map(move |&t| (t, x.clone()))).collect()
    }
}

fn embed_x(j: &Jet, nv: usize) -> Jet {
    let map: Vec<usize> = (1..nv).collect();
    j.embed(nv, &map)
}

fn dvec(v: &[Jet], var: usize) -> JetVec {
    v.iter().map(|c| c.deriv(var)).collect()
}

fn sc(s: &Jet, v: &[Jet]) -> JetVec {
    jvscale(s, v)
}

fn normalized_row_gram(rows: &[JetVec]) -> f64 {
    let vals: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|c| c.value()).collect();
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / s).collect()
        })
        .collect();
    crate::linalg::gram_det(&vals).unwrap_or(0.0)
}

/// Degree of the base jets needed for outputs of degree `out` at level `level`.
pub fn required_degree(level: usize, out: usize) -> usize {
    if level <= 1 {
        out + 3
    } else {
        out + level + 4
    }
}

struct Solver<'a> {
    t: f64,
    x: &'a [f64],
    grams: Vec<(String, f64)>,
}

impl Solver<'_> {
    fn solve(&mut self, label: &str, rows: &[JetVec], rhs: &[Jet]) -> Result<JetVec> {
        let g = normalized_row_gram(rows);
        self.grams.push((label.to_string(), g));
        let fail = |gd: f64| Error::RankFailure {
            node: format!("t={:.6}, x={:?}", self.t, self.x),
            family: label.to_string(),
            gram_det: gd,
        };
        if !(g >= ROW_GRAM_FLOOR) {
            return Err(fail(g));
        }
        jleast_norm(rows, rhs).map(|(x, _)| x).ok_or_else(|| fail(g))
    }
}

impl StepState {
    pub fn n(&self) -> usize {
        self.f0.n()
    }
    pub fn q(&self) -> usize {
        self.f0.q()
    }

    /// Expansion at `(t, x)` with outputs of degree at least `out`.
    pub fn expand(&self, t: f64, x: &[f64], out: usize) -> Result<Expansion> {
        let n = self.n();
        let nv = n + 1;
        let level = self.level;
        let d = required_degree(level, out);
        if d > max_degree(nv) {
            return invalid(format!(
                "jet degree {d} exceeds the supported {} for {nv} variables",
                max_degree(nv)
            ));
        }
        let q = self.q();
        let f0: JetVec = self.f0.jet(x, d).iter().map(|c| embed_x(c, nv)).collect();
        let a = embed_x(&self.a.jet(x, d), nv);
        let df: Vec<JetVec> = (0..n).map(|i| dvec(&f0, i + 1)).collect();
        let ddf = |i: usize, j: usize| -> JetVec { dvec(&df[i], j + 1) };
        let mut target = Vec::new();
        for (i, j) in sym_pairs(n) {
            let mut c = jdot(&df[i], &df[j]);
            if i == 0 && j == 0 {
                c = c.add(&a.powi(4));
            }
            target.push(c);
        }
        let tj = self.profiles.time_jets(t, d);
        let et = |j: &Jet| j.embed(nv, &[0]);
        let rho_inv = et(&tj.rho_inv);
        let zero = vec![Jet::zero(nv, d); q];
        let mut g: Vec<JetVec> = vec![f0.clone()];
        let mut grams = Vec::new();
        if a.is_zero() {
            for _ in 0..=level {
                g.push(zero.clone());
            }
            return Ok(Expansion {
                n,
                level,
                g,
                rho_inv,
                target,
                grams,
            });
        }
        let fj = self.frames.jets(x, d - 2);
        let u: JetVec = fj.u.iter().map(|c| embed_x(c, nv)).collect();
        let v: JetVec = fj.v.iter().map(|c| embed_x(c, nv)).collect();
        let (al1, al2) = (et(&tj.alpha[0]), et(&tj.alpha[1]));
        let v1 = jvadd(&sc(&al1, &u), &sc(&al2, &v));
        let a2 = a.mul(&a);
        let u1 = sc(&a2, &v1);
        g.push(u1.clone());
        if level == 1 {
            g.push(zero);
            return Ok(Expansion {
                n,
                level,
                g,
                rho_inv,
                target,
                grams,
            });
        }
        let mut solver = Solver { t, x, grams: Vec::new() };
        let dt_v1 = dvec(&v1, 0);
        let dtt_v1 = dvec(&dt_v1, 0);
        let dt_u1 = dvec(&u1, 0);
        let da: Vec<Jet> = (0..n).map(|i| a.deriv(i + 1)).collect();
        // ∂_iu₁ = a·D_i
        let dd: Vec<JetVec> = (0..n)
            .map(|i| jvadd(&sc(&da[i].scale(2.0), &v1), &sc(&a, &dvec(&v1, i + 1))))
            .collect();
        let phi = [et(&tj.phi_rho_alpha[0]), et(&tj.phi_rho_alpha[1])];
        let (phi_n, phi_w) = (et(&tj.phi_norm), et(&tj.phi_wronski));
        // h_i = a² H_i
        let hh: Vec<Jet> = (0..n)
            .map(|i| {
                let kappa = if i == 0 { 1.0 } else { 2.0 };
                let m = ddf(0, i);
                let first = jdot(&m, &u).mul(&phi[0]).add(&jdot(&m, &v).mul(&phi[1])).scale(kappa);
                let dv = dvec(&v, i + 1);
                first
                    .sub(&a.mul(&da[i]).mul(&phi_n).scale(2.0))
                    .sub(&a2.mul(&jdot(&u, &dv)).mul(&phi_w))
            })
            .collect();
        let dh = |i: usize, j: usize| -> Jet { da[j].mul(&hh[i]).scale(2.0).add(&a.mul(&hh[i].deriv(j + 1))) };
        let r0 = jvadd(&df[0], &sc(&rho_inv, &dt_u1));
        let mut rows: Vec<JetVec> = vec![r0.clone()];
        let mut rhs: Vec<Jet> = vec![a.mul(&hh[0])];
        for i in 1..n {
            rows.push(df[i].clone());
            rhs.push(a.mul(&hh[i]));
        }
        rows.push(jvadd(&ddf(0, 0), &sc(&rho_inv.scale(2.0), &dvec(&dt_u1, 1))));
        rhs.push(a.mul(&jdot(&dd[0], &dd[0])).add(&dh(0, 0).scale(2.0)).scale(0.5));
        for i in 1..n {
            rows.push(jvadd(&ddf(0, i), &sc(&rho_inv, &dvec(&dt_u1, i + 1))));
            rhs.push(a.mul(&jdot(&dd[0], &dd[i])).add(&dh(i, 0)).add(&dh(0, i)).scale(0.5));
        }
        for i in 1..n {
            for j in i..n {
                rows.push(ddf(i, j));
                rhs.push(a.mul(&jdot(&dd[i], &dd[j])).add(&dh(j, i)).add(&dh(i, j)).scale(0.5));
            }
        }
        rows.push(dt_v1.clone());
        rhs.push(Jet::zero(nv, d));
        rows.push(dtt_v1.clone());
        rhs.push(Jet::zero(nv, d));
        let ub2 = solver.solve("u2", &rows, &rhs)?;
        let uh2 = sc(&a, &ub2);
        // v̂₂ rows
        let mut rows_v: Vec<JetVec> = vec![r0.clone()];
        let mut rhs_v: Vec<Jet> = vec![a2.mul(&jdot(&dd[0], &ub2)).neg()];
        for i in 1..n {
            rows_v.push(df[i].clone());
            rhs_v.push(a2.mul(&jdot(&dd[i], &ub2)).neg());
        }
        rows_v.push(dt_v1.clone());
        rhs_v.push(Jet::zero(nv, d));
        rows_v.push(dtt_v1.clone());
        let dt_ub2 = dvec(&ub2, 0);
        rhs_v.push(jdot(&dt_ub2, &dt_ub2).scale(0.5));
        let vh2 = solver.solve("v2", &rows_v, &rhs_v)?;
        g.push(uh2.clone());
        g.push(vh2);
        if level > 2 {
            let ratio = a2.scale(1.0 / (self.delta * self.delta));
            let phi2 = smooth_step_jet(&ratio.add_const(-0.36).scale(1.0 / 0.45));
            let phi1 = smooth_step_jet(&ratio.neg().add_const(0.81).scale(1.0 / 0.45));
            let dt_uh2 = dvec(&uh2, 0);
            let r11g = jvadd(
                &jvadd(&ddf(0, 0), &sc(&rho_inv.scale(2.0), &dvec(&dt_u1, 1))),
                &sc(&rho_inv, &dvec(&sc(&rho_inv, &dt_uh2), 0)),
            );
            let w1 = jvadd(&dvec(&u1, 1), &sc(&rho_inv, &dt_uh2));
            let du1: Vec<JetVec> = (0..n).map(|i| dvec(&u1, i + 1)).collect();
            let dtt_u1 = dvec(&dt_u1, 0);
            let pairs = sym_pairs(n);
            for step in 2..level {
                let exp = Expansion {
                    n,
                    level: step,
                    g: g.clone(),
                    rho_inv: rho_inv.clone(),
                    target: target.clone(),
                    grams: Vec::new(),
                };
                let h = exp.coeff(step + 1);
                let hidx = |i: usize, j: usize| pairs.iter().position(|&p| p == (i, j)).unwrap();
                let mut uh = zero.clone();
                let mut vh = zero.clone();
                for (fam, w) in [(1usize, &phi1), (2usize, &phi2)] {
                    if w.is_zero() {
                        continue;
                    }
                    let hw: Vec<Jet> = h.iter().map(|c| c.mul(w).scale(0.5)).collect();
                    let mut rows: Vec<JetVec> = Vec::new();
                    let mut rhs: Vec<Jet> = Vec::new();
                    for i in 1..n {
                        rows.push(df[i].clone());
                        rhs.push(Jet::zero(nv, d));
                    }
                    rows.push(r0.clone());
                    rhs.push(Jet::zero(nv, d));
                    for i in 1..n {
                        for j in i..n {
                            rows.push(ddf(i, j));
                            rhs.push(hw[hidx(i, j)].clone());
                        }
                    }
                    for i in 1..n {
                        rows.push(jvadd(&ddf(0, i), &sc(&rho_inv, &dvec(&dt_u1, i + 1))));
                        rhs.push(hw[hidx(0, i)].clone());
                    }
                    if fam == 1 {
                        rows.push(r11g.clone());
                        rhs.push(hw[0].clone());
                        rows.push(dt_v1.clone());
                        rhs.push(Jet::zero(nv, d));
                        rows.push(dtt_v1.clone());
                        rhs.push(Jet::zero(nv, d));
                    } else {
                        rows.push(dtt_u1.clone());
                        rhs.push(Jet::zero(nv, d));
                        rows.push(dt_v1.clone());
                        rhs.push(Jet::zero(nv, d));
                    }
                    let uf = solver.solve(&format!("u{} family {fam}", step + 1), &rows, &rhs)?;
                    let mut rows: Vec<JetVec> = Vec::new();
                    let mut rhs: Vec<Jet> = Vec::new();
                    for i in 1..n {
                        rows.push(df[i].clone());
                        rhs.push(jdot(&du1[i], &uf).neg());
                    }
                    rows.push(r0.clone());
                    rhs.push(jdot(&w1, &uf).neg());
                    if fam == 1 {
                        rows.push(dt_v1.clone());
                        rhs.push(Jet::zero(nv, d));
                        rows.push(dtt_v1.clone());
                        rhs.push(Jet::zero(nv, d));
                    } else {
                        rows.push(sc(&rho_inv.mul(&rho_inv), &dtt_u1));
                        rhs.push(hw[0].sub(&jdot(&r11g, &uf)));
                        rows.push(dt_v1.clone());
                        rhs.push(Jet::zero(nv, d));
                    }
                    let vf = solver.solve(&format!("v{} family {fam}", step + 1), &rows, &rhs)?;
                    uh = jvadd(&uh, &uf);
                    vh = jvadd(&vh, &vf);
                }
                let last = g.len() - 1;
                g[last] = jvadd(&g[last], &uh);
                g.push(vh);
            }
        }
        grams.extend(solver.grams);
        Ok(Expansion {
            n,
            level,
            g,
            rho_inv,
            target,
            grams,
        })
    }

    /// Evaluates `f` at every sample in parallel.
    fn over_samples<T: Send>(&self, samples: &SampleSet, f: impl Fn(f64, &[f64]) -> Result<T> + Sync) -> Result<Vec<T>> {
        samples.pairs().into_par_iter().map(|(t, x)| f(t, &x)).collect()
    }

    fn merge_grams(&mut self, grams: impl IntoIterator<Item = (String, f64)>) {
        for (k, v) in grams {
            match self.report.gram_min.iter_mut().find(|(l, _)| *l == k) {
                Some(e) => e.1 = e.1.min(v),
                None => self.report.gram_min.push((k, v)),
            }
        }
    }
}

impl Expansion {
    fn nv(&self) -> usize {
        self.n + 1
    }
    fn w(&self, m: usize) -> Option<JetVec> {
        let g = self.g.get(m)?;
        let mut w = dvec(g, 1);
        if let Some(next) = self.g.get(m + 1) {
            w = jvadd(&w, &sc(&self.rho_inv, &dvec(next, 0)));
        }
        Some(w)
    }

    /// Residual coefficient `c_m` of the three families (targets removed at `m = 0`).
    pub fn coeff(&self, m: usize) -> Vec<Jet> {
        let n = self.n;
        let len = self.g.len();
        let ws: Vec<JetVec> = (0..len).map(|j| self.w(j).unwrap()).collect();
        let dg: Vec<Vec<JetVec>> = (0..n).map(|i| self.g.iter().map(|g| dvec(g, i + 1)).collect()).collect();
        let mut out = Vec::new();
        for (pi, (i, j)) in sym_pairs(n).into_iter().enumerate() {
            let mut acc: Option<Jet> = None;
            for l in 0..=m {
                let r = m - l;
                if l >= len || r >= len {
                    continue;
                }
                let term = if i == 0 && j == 0 {
                    jdot(&ws[l], &ws[r])
                } else if i == 0 {
                    jdot(&ws[l], &dg[j][r])
                } else {
                    jdot(&dg[i][l], &dg[j][r])
                };
                acc = Some(match acc {
                    None => term,
                    Some(a) => a.add(&term),
                });
            }
            let mut c = acc.unwrap_or_else(|| Jet::zero(self.nv(), 0));
            if m == 0 {
                c = c.sub(&self.target[pi]);
            }
            out.push(c);
        }
        out
    }

    /// Largest residual order with a nonzero coefficient.
    pub fn max_order(&self) -> usize {
        2 * (self.g.len() - 1)
    }

    /// Lowest residual order left by the level map.
    pub fn first_order(&self) -> usize {
        if self.level <= 1 {
            1
        } else {
            self.level + 1
        }
    }

    /// Residual `f(ε) = Σ_{m≥r} ε^{m−r} c_m` with `r` the first order.
    pub fn residual(&self, eps: f64) -> Vec<f64> {
        let k = self.first_order();
        let mut out = vec![0.0; self.target.len()];
        for m in k..=self.max_order() {
            let c = self.coeff(m);
            let s = eps.powi((m - k) as i32);
            for (o, ci) in out.iter_mut().zip(&c) {
                *o += s * ci.value();
            }
        }
        out
    }

    /// Residual coefficients `c_0 … c_max` as values.
    pub fn coeff_values(&self) -> Vec<Vec<f64>> {
        (0..=self.max_order())
            .map(|m| self.coeff(m).iter().map(|c| c.value()).collect())
            .collect()
    }

    /// `F = Σ ε^j G_j` as jets.
    pub fn map_jet(&self, eps: f64) -> JetVec {
        let mut acc = self.g[0].clone();
        for (j, g) in self.g.iter().enumerate().skip(1) {
            acc = jvadd(&acc, &jvscale_f(eps.powi(j as i32), g));
        }
        acc
    }

    /// Residual by direct evaluation of the three families from `F`, divided by `ε^r`.
    pub fn direct_residual(&self, eps: f64) -> Vec<f64> {
        let f = self.map_jet(eps);
        let n = self.n;
        let val = |v: &[Jet]| -> Vec<f64> { v.iter().map(|c| c.value()).collect() };
        let d1: Vec<f64> = val(&dvec(&f, 1));
        let dt: Vec<f64> = val(&dvec(&f, 0));
        let ri = self.rho_inv.value() / eps;
        let w: Vec<f64> = d1.iter().zip(&dt).map(|(a, b)| a + ri * b).collect();
        let di: Vec<Vec<f64>> = (0..n).map(|i| val(&dvec(&f, i + 1))).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let s = eps.powi(self.first_order() as i32);
        sym_pairs(n)
            .into_iter()
            .enumerate()
            .map(|(pi, (i, j))| {
                let lhs = if i == 0 && j == 0 {
                    dot(&w, &w)
                } else if i == 0 {
                    dot(&w, &di[j])
                } else {
                    dot(&di[i], &di[j])
                };
                (lhs - self.target[pi].value()) / s
            })
            .collect()
    }
}

fn vals(v: &[Jet]) -> Vec<f64> {
    v.iter().map(|c| c.value()).collect()
}

/// Builds `u₁ = a²(α₁u + α₂v)` and checks its identities on the samples.
pub fn build_u1(
    f0: Arc<dyn JetMap>,
    a: Arc<dyn JetFn>,
    frames: Arc<FrameFields>,
    profiles: Arc<ProfilePack>,
    samples: &SampleSet,
) -> Result<StepState> {
    if f0.n() != a.n() || f0.n() != frames.n {
        return invalid("dimension mismatch between base map, cutoff and frames");
    }
    let amax = samples.xs.iter().map(|x| a.eval(x).abs()).fold(0.0, f64::max);
    let delta = DELTA_FRACTION * amax.max(1e-300);
    let mut st = StepState {
        f0,
        a,
        profiles,
        frames,
        level: 1,
        delta,
        a_max: amax,
        report: StepReport::default(),
    };
    let n = st.n();
    // pointwise identities
    let point = st.over_samples(samples, |t, x| {
        let e = st.expand(t, x, 1)?;
        let u1 = &e.g[1];
        let dt_u1 = dvec(u1, 0);
        let f0 = &e.g[0];
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let di = dvec(f0, i + 1);
            worst = worst.max(jdot(&di, u1).value().abs()).max(jdot(&di, &dt_u1).value().abs());
            for j in i.max(1)..n {
                if i >= 1 {
                    worst = worst.max(jdot(&dvec(&di, j + 1), u1).value().abs());
                }
            }
        }
        let av = st.a.eval(x);
        let rho = super::profiles::rho_value(t);
        let speed = (jdot(&dt_u1, &dt_u1).value() - av.powi(4) * rho * rho).abs();
        Ok((worst, speed))
    })?;
    st.report.u1_identity_max = point.iter().map(|p| p.0).fold(0.0, f64::max);
    st.report.u1_speed_max = point.iter().map(|p| p.1).fold(0.0, f64::max);
    // integral identities per node over a full period
    let m = st.profiles.m;
    let ts = crate::periodic::sample_points::<f64>(m);
    let integ: Vec<f64> = samples
        .xs
        .par_iter()
        .map(|x| -> Result<f64> {
            let mut worst: f64 = 0.0;
            let mut a_int = vec![vec![0.0; m]; n];
            let mut b_int = vec![vec![vec![0.0; m]; n]; n];
            for (k, &t) in ts.iter().enumerate() {
                let e = st.expand(t, x, 1)?;
                let u1 = &e.g[1];
                let dt_u1 = vals(&dvec(u1, 0));
                let rho = super::profiles::rho_value(t);
                for i in 0..n {
                    let di_u1 = vals(&dvec(u1, i + 1));
                    a_int[i][k] = dt_u1.iter().zip(&di_u1).map(|(p, q)| p * q).sum();
                    let dif0 = vals(&dvec(&e.g[0], i + 1));
                    for j in 0..n {
                        let dj_u1 = vals(&dvec(u1, j + 1));
                        b_int[i][j][k] = rho * dif0.iter().zip(&dj_u1).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
            }
            for i in 0..n {
                worst = worst.max(periodic_quadrature(&PeriodicProfile::new(a_int[i].clone())?).abs());
                for j in 0..n {
                    worst = worst.max(periodic_quadrature(&PeriodicProfile::new(b_int[i][j].clone())?).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    st.report.u1_integral_max = integ.into_iter().fold(0.0, f64::max);
    st.report.samples = samples.ts.len() * samples.xs.len();
    let worst = st.report.u1_identity_max.max(st.report.u1_speed_max).max(st.report.u1_integral_max);
    if worst > 1e-8 {
        return Err(Error::Certification(format!("u1 identities violated by {worst:e}")));
    }
    Ok(st)
}

/// Adds `u₂ = û₂ + εv̂₂`, checking rank and the orthogonality rows on the samples.
pub fn corrector_u2(state: &StepState, samples: &SampleSet) -> Result<StepState> {
    let mut st = state.clone();
    st.level = 2;
    let out = st.over_samples(samples, |t, x| {
        let e = st.expand(t, x, 0)?;
        let uh2 = &e.g[2];
        let v1: JetVec = if st.a.eval(x) == 0.0 {
            return Ok((0.0, e.grams));
        } else {
            let a = st.a.eval(x);
            e.g[1].iter().map(|c| c.scale(1.0 / (a * a))).collect()
        };
        let dt = dvec(&v1, 0);
        let dtt = dvec(&dt, 0);
        let worst = jdot(&dt, uh2).value().abs().max(jdot(&dtt, uh2).value().abs());
        Ok((worst, e.grams))
    })?;
    for (w, g) in out {
        st.report.u2_orthogonality_max = st.report.u2_orthogonality_max.max(w);
        st.merge_grams(g);
    }
    Ok(st)
}

/// Residual summary of a level map at one `ε`.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualSummary {
    pub eps: f64,
    /// `max |ε^r f|` over the samples and families.
    pub residual_max: f64,
    /// Per-family maxima of `|f^{(k)}|`.
    pub family_max: Vec<f64>,
    /// `max |F − F₀|`.
    pub displacement_max: f64,
}

/// Evaluates `F_k` and its residual on the samples.
pub fn evaluate_level(state: &StepState, eps: f64, samples: &SampleSet) -> Result<ResidualSummary> {
    let k = if state.level <= 1 { 1 } else { state.level + 1 };
    let per = state.over_samples(samples, |t, x| {
        let e = state.expand(t, x, 0)?;
        let r = e.residual(eps);
        let f = e.map_jet(eps);
        let disp = f
            .iter()
            .zip(&e.g[0])
            .map(|(a, b)| (a.value() - b.value()).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok((r, disp))
    })?;
    let nf = sym_pairs(state.n()).len();
    let mut family_max = vec![0.0f64; nf];
    let mut disp: f64 = 0.0;
    for (r, d) in &per {
        for (m, v) in family_max.iter_mut().zip(r) {
            *m = m.max(v.abs());
        }
        disp = disp.max(*d);
    }
    let scale = eps.powi(k as i32);
    Ok(ResidualSummary {
        eps,
        residual_max: scale * family_max.iter().cloned().fold(0.0, f64::max),
        family_max,
        displacement_max: disp,
    })
}

/// `F₂` with its residual at `ε`.
pub fn step_f2(state: &StepState, eps: f64, samples: &SampleSet) -> Result<ResidualSummary> {
    if state.level != 2 {
        return invalid("step_f2 expects the state after corrector_u2");
    }
    evaluate_level(state, eps, samples)
}

/// Runs the generic step up to level `k`, checking the row sets on the samples.
///
/// The whole support goes to the small-amplitude family when its rows stay certified on the
/// samples; otherwise the support is split at `δ = max|a|/2`.
pub fn step_fk(state: &StepState, k: usize, samples: &SampleSet) -> Result<StepState> {
    if state.level < 2 || k < state.level {
        return invalid(format!("cannot step from level {} to {k}", state.level));
    }
    let mut st = state.clone();
    st.level = k;
    if k > 2 {
        let mut single = st.clone();
        single.delta = DELTA_SINGLE * st.a_max.max(1e-300);
        let ok = single
            .over_samples(samples, |t, x| {
                Ok(single
                    .expand(t, x, 0)
                    .map(|e| e.grams.iter().all(|(_, g)| *g >= SINGLE_FAMILY_FLOOR)))
            })?
            .into_iter()
            .all(|r| matches!(r, Ok(true)));
        st.delta = if ok { single.delta } else { DELTA_FRACTION * st.a_max.max(1e-300) };
    }
    let grams = st.over_samples(samples, |t, x| Ok(st.expand(t, x, 0)?.grams))?;
    for g in grams {
        st.merge_grams(g);
    }
    Ok(st)
}

/// `residual(ε)/residual(ε/2)` of the level map on the samples.
pub fn residual_ratio(state: &StepState, eps: f64, samples: &SampleSet) -> Result<f64> {
    let a = evaluate_level(state, eps, samples)?;
    let b = evaluate_level(state, eps / 2.0, samples)?;
    Ok(a.residual_max / b.residual_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;
    use crate::oscillator::frames::build_frames;
    use crate::oscillator::profiles::build_profiles;
    use crate::smooth::{Bump, Plateau, PolyMap, Zero};

    fn setup(a: Arc<dyn JetFn>) -> (StepState, SampleSet) {
        let xs: Vec<Vec<f64>> = [-0.55, -0.4, -0.1, 0.0, 0.25, 0.45, 0.58, 0.8].iter().map(|&x| vec![x]).collect();
        setup_on(a, xs)
    }

    fn setup_on(a: Arc<dyn JetFn>, xs: Vec<Vec<f64>>) -> (StepState, SampleSet) {
        let f0: Arc<dyn JetMap> = Arc::new(PolyMap::standard_free(1, 7));
        let g = make_ball_grid::<f64>(1, 17).unwrap();
        let frames = Arc::new(build_frames(f0.clone(), &g, 1.0, &[0.0]).unwrap());
        let profiles = Arc::new(build_profiles(256).unwrap());
        let samples = SampleSet::uniform(32, xs);
        (build_u1(f0, a, frames, profiles, &samples).unwrap(), samples)
    }

    fn bump() -> Arc<dyn JetFn> {
        Arc::new(Plateau::new(vec![0.0], 0.0, 0.9).with_amplitude(0.1))
    }

    #[test]
    fn zero_cutoff_gives_zero_correctors() {
        let (s1, samples) = setup(Arc::new(Zero(1)));
        let s3 = step_fk(&corrector_u2(&s1, &samples).unwrap(), 3, &samples).unwrap();
        let e = s3.expand(0.7, &[0.1], 0).unwrap();
        assert!(e.g[1..].iter().all(|g| g.iter().all(|c| c.is_zero())));
        assert_eq!(evaluate_level(&s3, 0.1, &samples).unwrap().residual_max, 0.0);
    }

    #[test]
    fn first_corrector_identities() {
        let (s1, _) = setup(bump());
        let r = &s1.report;
        assert!(
            r.u1_identity_max < 1e-12 && r.u1_speed_max < 1e-12 && r.u1_integral_max < 1e-10,
            "{r:?}"
        );
        let e = s1.expand(1.3, &[0.1], 1).unwrap();
        assert!(e.coeff(0).iter().all(|c| c.value().abs() < 1e-14));
    }

    #[test]
    fn corrector_cancels_low_orders() {
        let (s1, samples) = setup(bump());
        let s2 = corrector_u2(&s1, &samples).unwrap();
        assert!(s2.report.u2_orthogonality_max < 1e-12);
        let s3 = step_fk(&s2, 3, &samples).unwrap();
        for (t, x) in samples.pairs() {
            for (st, top) in [(&s2, 2), (&s3, 3)] {
                let e = st.expand(t, &x, 0).unwrap();
                for m in 0..=top {
                    for c in e.coeff(m) {
                        assert!(c.value().abs() < 1e-10, "level {top} order {m} at t={t} x={x:?}: {}", c.value());
                    }
                }
            }
        }
    }

    #[test]
    fn polynomial_residual_matches_direct_evaluation() {
        let (s1, samples) = setup(bump());
        let s3 = step_fk(&corrector_u2(&s1, &samples).unwrap(), 3, &samples).unwrap();
        for st in [&s1, &s3] {
            let e = st.expand(2.1, &[0.3], 0).unwrap();
            let (a, b) = (e.residual(0.1), e.direct_residual(0.1));
            assert!((a[0] - b[0]).abs() < 1e-8 * (1.0 + a[0].abs()), "{a:?} {b:?}");
        }
    }

    #[test]
    fn residual_orders() {
        let xs: Vec<Vec<f64>> = (0..=32).map(|k| vec![-0.88 + 0.055 * k as f64]).collect();
        let (s1, samples) = setup_on(Arc::new(Bump::new(vec![0.0], 0.9).with_amplitude(0.1)), xs);
        let s2 = corrector_u2(&s1, &samples).unwrap();
        let r2 = residual_ratio(&s2, 0.2, &samples).unwrap();
        let s3 = step_fk(&s2, 3, &samples).unwrap();
        let r3 = residual_ratio(&s3, 0.2, &samples).unwrap();
        assert!((5.6..=10.4).contains(&r2), "{r2}");
        assert!((11.0..=21.0).contains(&r3), "{r3}");
        assert_eq!(s3.delta, DELTA_SINGLE * s3.a_max);
    }
}
