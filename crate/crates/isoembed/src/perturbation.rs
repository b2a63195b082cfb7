//! Perturbation step: `u = a²v` with `∂_i(F₀+u)·∂_j(F₀+u) = ∂_iF₀·∂_jF₀ + f_ij` via a fixed point.

use crate::error::{invalid, Error, Result};
use crate::fd::{deriv1, fd_jet, fd_laplacian};
use crate::field::{Field, FieldKind};
use crate::free_maps::{jet_dim, FreeMapRecord};
use crate::grid::{sym_pairs, BallGrid};
use crate::holder::{cm_alpha_norm, cm_norm};
use crate::linalg::{rank_tol, solve, DenseMatrix};
use crate::poisson::{assemble, dirichlet_solve, DirichletOperator};
use crate::smooth::JetFn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Solver settings.
#[derive(Clone, Debug, Serialize)]
pub struct PerturbationOptions {
    /// Hölder exponent of the discrete norms.
    pub alpha: f64,
    /// Stop when the `C^{2,α}` step norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Gate threshold `ϑ`.
    pub theta: f64,
    /// Random probes for the operator norm of `E`.
    pub probes: usize,
    pub seed: u64,
}

impl Default for PerturbationOptions {
    fn default() -> Self {
        PerturbationOptions {
            alpha: 0.5,
            tol: 1e-12,
            max_iter: 50,
            theta: 1e-2,
            probes: 32,
            seed: 7,
        }
    }
}

/// Right inverse `Θ = Aᵀ(AAᵀ)⁻¹` of the jet matrix of a free map at every node.
#[derive(Clone, Debug)]
pub struct EOperator {
    grid: Arc<BallGrid<f64>>,
    pub n: usize,
    pub q: usize,
    /// `n(n+3)/2`.
    pub m: usize,
    /// Node-major `q × m` blocks, row-major.
    theta: Vec<f64>,
    /// `max |AΘ − I|` over all nodes.
    pub identity_error: f64,
}

/// Builds `Θ[F₀]` from the jets of a free map.
pub fn build_e(rec: &FreeMapRecord) -> Result<EOperator> {
    let grid = rec.grid().clone();
    let n = grid.n();
    let q = rec.q();
    let m = jet_dim(n);
    if q < m {
        return invalid(format!("target dimension {q} below the jet dimension {m}"));
    }
    let blocks: Vec<Result<(Vec<f64>, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let rows = rec.jet_vectors(p);
            let scale = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
            if !(rec.margin[p] > rank_tol(scale.max(f64::MIN_POSITIVE), m)) {
                return Err(Error::RankFailure {
                    node: format!("{:?}", grid.coord_f64(p)),
                    family: "jet matrix".into(),
                    gram_det: rec.margin[p],
                });
            }
            let mut g = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    g[i * m + j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                }
            }
            let g = DenseMatrix::from_vec(m, m, g)?;
            // columns of (AAᵀ)⁻¹
            let mut ginv = vec![0.0; m * m];
            for c in 0..m {
                let mut e = vec![0.0; m];
                e[c] = 1.0;
                let x = solve(&g, &e)?;
                for r in 0..m {
                    ginv[r * m + c] = x[r];
                }
            }
            let mut th = vec![0.0; q * m];
            for k in 0..q {
                for c in 0..m {
                    th[k * m + c] = (0..m).map(|r| rows[r][k] * ginv[r * m + c]).sum();
                }
            }
            let mut err: f64 = 0.0;
            for i in 0..m {
                for c in 0..m {
                    let v: f64 = (0..q).map(|k| rows[i][k] * th[k * m + c]).sum();
                    err = err.max((v - if i == c { 1.0 } else { 0.0 }).abs());
                }
            }
            Ok((th, err))
        })
        .collect();
    let mut theta = Vec::with_capacity(grid.len() * q * m);
    let mut identity_error: f64 = 0.0;
    for b in blocks {
        let (th, err) = b?;
        theta.extend(th);
        identity_error = identity_error.max(err);
    }
    Ok(EOperator {
        grid,
        n,
        q,
        m,
        theta,
        identity_error,
    })
}

impl EOperator {
    /// `E(h, f) = Θ·(h, f)` for `h` with `n` and `f` with `n(n+1)/2` components.
    pub fn apply(&self, h: &Field<f64>, f: &Field<f64>) -> Field<f64> {
        let (n, q, m) = (self.n, self.q, self.m);
        let mut out = Field::zeros(&self.grid, FieldKind::Vector(q));
        for p in 0..self.grid.len() {
            let th = &self.theta[p * q * m..(p + 1) * q * m];
            let rhs: Vec<f64> = h.at(p).iter().chain(f.at(p)).copied().collect();
            debug_assert_eq!(rhs.len(), m);
            let o = out.at_mut(p);
            for k in 0..q {
                o[k] = (0..m).map(|c| th[k * m + c] * rhs[c]).sum();
            }
            let _ = n;
        }
        out
    }

    /// `E(0, f)`.
    pub fn apply_f(&self, f: &Field<f64>) -> Field<f64> {
        self.apply(&Field::zeros(&self.grid, FieldKind::Vector(self.n)), f)
    }

    /// Lower bound for `‖E‖` in discrete `C^{2,α}` from random smooth probes.
    pub fn norm_estimate(&self, alpha: f64, probes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..probes {
            let waves: Vec<Vec<(Vec<f64>, f64, f64)>> = (0..self.m)
                .map(|_| {
                    (0..3)
                        .map(|_| {
                            let w: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                            (w, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
                        })
                        .collect()
                })
                .collect();
            let probe = Field::from_fn(&self.grid, FieldKind::Vector(self.m), |x, out| {
                for (c, ws) in waves.iter().enumerate() {
                    out[c] = ws
                        .iter()
                        .map(|(w, amp, ph)| amp * (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph).cos())
                        .sum();
                }
            });
            let pn = cm_alpha_norm(&probe, 2, alpha)?.value;
            if pn <= 0.0 {
                continue;
            }
            let split = |lo: usize, hi: usize, kind: FieldKind| {
                Field::from_fn(&self.grid, kind, |_, _| {}).clone_with(|p, o: &mut [f64]| o.copy_from_slice(&probe.at(p)[lo..hi]))
            };
            let h = split(0, self.n, FieldKind::Vector(self.n));
            let f = split(self.n, self.m, FieldKind::SymTensor);
            let out = cm_alpha_norm(&self.apply(&h, &f), 2, alpha)?.value;
            best = best.max(out / pn);
        }
        Ok(best)
    }
}

trait FillNodes {
    fn clone_with(self, f: impl Fn(usize, &mut [f64])) -> Self;
}

impl FillNodes for Field<f64> {
    fn clone_with(mut self, f: impl Fn(usize, &mut [f64])) -> Self {
        for p in 0..self.grid().len() {
            f(p, self.at_mut(p));
        }
        self
    }
}

/// Cutoff `a` sampled with its gradient, and the Dirichlet inverse on the same grid.
#[derive(Clone, Debug)]
pub struct Calculus {
    pub grid: Arc<BallGrid<f64>>,
    pub a: Field<f64>,
    pub da: Vec<Field<f64>>,
    pub dirichlet: Arc<DirichletOperator<f64>>,
}

impl Calculus {
    /// Samples `a` and `∇a` exactly and assembles `Δ⁻¹`.
    pub fn new(grid: &Arc<BallGrid<f64>>, a: &dyn JetFn) -> Result<Self> {
        let n = grid.n();
        if a.n() != n {
            return invalid("cutoff dimension does not match the grid");
        }
        let jets: Vec<crate::jet::Jet> = (0..grid.len()).into_par_iter().map(|p| a.jet(&grid.coord_f64(p), 1)).collect();
        let av = Field::from_data(grid, FieldKind::Scalar, jets.iter().map(|j| j.value()).collect())?;
        let da = (0..n)
            .map(|i| {
                let mut e = vec![0u8; n];
                e[i] = 1;
                Field::from_data(grid, FieldKind::Scalar, jets.iter().map(|j| j.partial(&e)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Calculus {
            grid: grid.clone(),
            a: av,
            da,
            dirichlet: Arc::new(assemble(grid)?),
        })
    }

    fn n(&self) -> usize {
        self.grid.n()
    }

    fn d(&self, v: &Field<f64>, i: usize) -> Field<f64> {
        Field::from_data(&self.grid, v.kind(), deriv1(&self.grid, v.data(), v.ncomp(), i)).expect("shape")
    }

    /// `N_i = 2∂_ia Δv·v + aΔv·∂_iv`.
    pub fn op_n(&self, v: &Field<f64>) -> Vec<Field<f64>> {
        let lap = fd_laplacian(v);
        (0..self.n())
            .map(|i| {
                let dv = self.d(v, i);
                Field::from_data(
                    &self.grid,
                    FieldKind::Scalar,
                    (0..self.grid.len())
                        .map(|p| {
                            let (l, x, d) = (lap.at(p), v.at(p), dv.at(p));
                            let lv: f64 = l.iter().zip(x).map(|(a, b)| a * b).sum();
                            let ld: f64 = l.iter().zip(d).map(|(a, b)| a * b).sum();
                            2.0 * self.da[i].get(p, 0) * lv + self.a.get(p, 0) * ld
                        })
                        .collect(),
                )
                .expect("shape")
            })
            .collect()
    }

    /// `w_i = Δ⁻¹N_i`, solved in parallel.
    pub fn inverse_n(&self, v: &Field<f64>) -> Result<Vec<Field<f64>>> {
        self.op_n(v).par_iter().map(|nf| dirichlet_solve(&self.dirichlet, nf)).collect()
    }

    /// `u⁽¹⁾_ij = a∂_iw_j + a∂_jw_i + 3∂_ia w_j + 3∂_ja w_i`.
    pub fn op_u1(&self, w: &[Field<f64>], i: usize, j: usize) -> Field<f64> {
        let (dwj, dwi) = (self.d(&w[j], i), self.d(&w[i], j));
        Field::scalar_fn_nodes(&self.grid, |p| {
            let a = self.a.get(p, 0);
            a * dwj.get(p, 0)
                + a * dwi.get(p, 0)
                + 3.0 * self.da[i].get(p, 0) * w[j].get(p, 0)
                + 3.0 * self.da[j].get(p, 0) * w[i].get(p, 0)
        })
    }

    /// `u⁽²⁾_ij = 4∂_ia∂_ja v·v + 2a∂_ia ∂_jv·v + 2a∂_ja ∂_iv·v + a²∂_iv·∂_jv`.
    pub fn op_u2(&self, v: &Field<f64>, i: usize, j: usize) -> Field<f64> {
        let (di, dj) = (self.d(v, i), self.d(v, j));
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        Field::scalar_fn_nodes(&self.grid, |p| {
            let (a, ai, aj) = (self.a.get(p, 0), self.da[i].get(p, 0), self.da[j].get(p, 0));
            let (x, xi, xj) = (v.at(p), di.at(p), dj.at(p));
            4.0 * ai * aj * dot(x, x) + 2.0 * a * ai * dot(xj, x) + 2.0 * a * aj * dot(xi, x) + a * a * dot(xi, xj)
        })
    }

    /// `u_ij = u⁽²⁾_ij − u⁽¹⁾_ij` for all pairs.
    fn u_all(&self, v: &Field<f64>, w: &[Field<f64>]) -> Vec<Field<f64>> {
        sym_pairs(self.n())
            .into_iter()
            .map(|(i, j)| self.op_u2(v, i, j).sub(&self.op_u1(w, i, j)))
            .collect()
    }

    /// `M_ij`, the discrete Laplacian of `u_ij`, so that `Δ⁻¹M_ij = u_ij`.
    pub fn op_m(&self, v: &Field<f64>, i: usize, j: usize) -> Result<Field<f64>> {
        let w = self.inverse_n(v)?;
        Ok(self.dirichlet.apply(&self.op_u2(v, i, j).sub(&self.op_u1(&w, i, j))))
    }

    /// `P_i = aΔ⁻¹N_i`.
    pub fn op_p(&self, w: &[Field<f64>]) -> Field<f64> {
        let n = self.n();
        Field::from_fn(&self.grid, FieldKind::Vector(n), |_, _| {}).clone_with(|p, o| {
            for i in 0..n {
                o[i] = self.a.get(p, 0) * w[i].get(p, 0);
            }
        })
    }

    /// `Q_ij = Δ⁻¹M_ij`, which equals `u_ij` by construction of `M`.
    pub fn op_q(&self, v: &Field<f64>, w: &[Field<f64>]) -> Field<f64> {
        let u = self.u_all(v, w);
        Field::zeros(&self.grid, FieldKind::SymTensor).clone_with(|p, o| {
            for (k, f) in u.iter().enumerate() {
                o[k] = f.get(p, 0);
            }
        })
    }

    /// `P` and `Q` together.
    pub fn op_pq(&self, v: &Field<f64>) -> Result<(Field<f64>, Field<f64>)> {
        let w = self.inverse_n(v)?;
        Ok((self.op_p(&w), self.op_q(v, &w)))
    }
}

trait ScalarNodes {
    fn scalar_fn_nodes(grid: &Arc<BallGrid<f64>>, f: impl Fn(usize) -> f64) -> Field<f64>;
}

impl ScalarNodes for Field<f64> {
    fn scalar_fn_nodes(grid: &Arc<BallGrid<f64>>, f: impl Fn(usize) -> f64) -> Field<f64> {
        Field::from_data(grid, FieldKind::Scalar, (0..grid.len()).map(f).collect()).expect("shape")
    }
}

/// Problem data: base map, cutoff and right-hand side.
#[derive(Clone, Debug)]
pub struct PerturbationProblem {
    pub base: FreeMapRecord,
    pub calculus: Arc<Calculus>,
    pub e: Arc<EOperator>,
    pub f: Field<f64>,
    pub opts: PerturbationOptions,
}

impl PerturbationProblem {
    /// Checks `a²f = f`, freeness of the base and builds `E`.
    pub fn new(base: FreeMapRecord, a: &dyn JetFn, f: Field<f64>, opts: PerturbationOptions) -> Result<Self> {
        let grid = base.grid().clone();
        let calculus = Arc::new(Calculus::new(&grid, a)?);
        let e = Arc::new(build_e(&base)?);
        Self::with_parts(base, calculus, e, f, opts)
    }

    /// Problem reusing an assembled calculus and `E`.
    pub fn with_parts(
        base: FreeMapRecord,
        calculus: Arc<Calculus>,
        e: Arc<EOperator>,
        f: Field<f64>,
        opts: PerturbationOptions,
    ) -> Result<Self> {
        if f.kind() != FieldKind::SymTensor || !Arc::ptr_eq(f.grid(), base.grid()) && f.grid().len() != base.grid().len() {
            return invalid("f must be a symmetric tensor field on the base grid");
        }
        if !(base.min_margin > 0.0) {
            return Err(Error::Certification(format!("base map not free (margin {:e})", base.min_margin)));
        }
        let fmax = f.max_abs();
        let mut worst: f64 = 0.0;
        for p in 0..f.grid().len() {
            let a2 = calculus.a.get(p, 0).powi(2);
            for &v in f.at(p) {
                worst = worst.max((a2 * v - v).abs());
            }
        }
        if worst > 1e-12 * fmax.max(f64::MIN_POSITIVE) && worst > 0.0 {
            return invalid(format!("a²f = f violated by {worst:e}: f must vanish where a < 1"));
        }
        Ok(PerturbationProblem {
            base,
            calculus,
            e,
            f,
            opts,
        })
    }

    /// `Φ(v) = −E(P(v), ½f − ½Q(v))`.
    pub fn phi(&self, v: &Field<f64>) -> Result<Field<f64>> {
        let (p, q) = self.calculus.op_pq(v)?;
        let rhs = self.f.scale(0.5).sub(&q.scale(0.5));
        Ok(self.e.apply(&p, &rhs).scale(-1.0))
    }

    fn norm2(&self, v: &Field<f64>) -> Result<f64> {
        Ok(cm_alpha_norm(v, 2, self.opts.alpha)?.value)
    }

    /// Budget for the assembled identity: `5h²·‖f‖_{C²} + 10·tol`.
    pub fn residual_budget(&self) -> f64 {
        let h = self.base.grid().h();
        5.0 * h * h * cm_norm(&self.f, 2) + 10.0 * self.opts.tol
    }
}

/// Iteration history of the fixed-point solve.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FixedPointTrace {
    /// `|v_k|_{C^{2,α}}` for `k = 1, 2, …`.
    pub norms: Vec<f64>,
    /// `|v_k|_{C^{3,α}}`, the regularity diagnostic.
    pub norms3: Vec<f64>,
    /// `|v_k − v_{k−1}|_{C^{2,α}}`.
    pub steps: Vec<f64>,
    /// `steps[k] / steps[k−1]`.
    pub ratios: Vec<f64>,
    /// Lower bound for `‖E‖_{2,α}`.
    pub e_norm: f64,
    /// `|E(0, f)|_{C^{2,α}}`.
    pub e0f_norm: f64,
    /// `‖E‖·|E(0, f)|`.
    pub gate: f64,
    pub theta: f64,
    pub gate_ok: bool,
    /// `max_k |v_k| / |E(0, f)|`.
    pub bound_ratio: f64,
    /// `|v_k| ≤ |v_0| + |E(0, f)|` along the trace.
    pub recursion_ok: bool,
    pub warnings: Vec<String>,
}

/// Converged perturbation with diagnostics.
#[derive(Clone, Debug)]
pub struct PerturbationSolution {
    pub v: Field<f64>,
    /// `u = a²v`.
    pub u: Field<f64>,
    pub trace: FixedPointTrace,
    /// `∂_i(F₀+u)·∂_j(F₀+u) − ∂_iF₀·∂_jF₀ − f_ij`.
    pub residual: Field<f64>,
    pub residual_max: f64,
    pub residual_budget: f64,
    /// `|u|_{C^{2,α}} / |E(0, f)|_{C^{2,α}}`.
    pub u_ratio: f64,
    /// `max |v − Φ(v)|` in `C^{2,α}` at the returned iterate.
    pub fixed_point_defect: f64,
    /// `F₀ + u` with jets (exact base jets plus finite-difference jets of `u`).
    pub record: FreeMapRecord,
}

/// Serializable summary of a [`PerturbationSolution`].
#[derive(Clone, Debug, Serialize)]
pub struct PerturbationSummary {
    pub iterations: usize,
    pub residual_max: f64,
    pub residual_budget: f64,
    pub u_ratio: f64,
    pub fixed_point_defect: f64,
    pub freeness_min: f64,
    pub trace: FixedPointTrace,
}

impl PerturbationSolution {
    pub fn summary(&self) -> PerturbationSummary {
        PerturbationSummary {
            iterations: self.trace.norms.len(),
            residual_max: self.residual_max,
            residual_budget: self.residual_budget,
            u_ratio: self.u_ratio,
            fixed_point_defect: self.fixed_point_defect,
            freeness_min: self.record.min_margin,
            trace: self.trace.clone(),
        }
    }
}

/// Pullback identity residual `∂_i(F₀+u)·∂_j(F₀+u) − ∂_iF₀·∂_jF₀ − f_ij` and the record of `F₀+u`.
pub fn verify_identity(base: &FreeMapRecord, u: &Field<f64>, f: &Field<f64>) -> (Field<f64>, FreeMapRecord) {
    let grid = base.grid();
    let n = grid.n();
    let uj = fd_jet(u);
    let mut jet = base.jet.clone();
    for (a, b) in jet.d1.iter_mut().zip(&uj.d1) {
        *a += b;
    }
    for (a, b) in jet.d2.iter_mut().zip(&uj.d2) {
        *a += b;
    }
    let rec = FreeMapRecord::from_parts(base.values.add(u), jet);
    let pairs = sym_pairs(n);
    let res = Field::zeros(grid, FieldKind::SymTensor).clone_with(|p, o| {
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            o[k] = dot(rec.jet.d1_at(p, i), rec.jet.d1_at(p, j)) - dot(base.jet.d1_at(p, i), base.jet.d1_at(p, j)) - f.get(p, k);
        }
    });
    (res, rec)
}

fn gate_stats(problem: &PerturbationProblem) -> Result<(f64, f64)> {
    let o = &problem.opts;
    let e_norm = problem.e.norm_estimate(o.alpha, o.probes, o.seed)?;
    let e0f = problem.norm2(&problem.e.apply_f(&problem.f))?;
    Ok((e_norm, e0f))
}

/// Fixed-point iteration `v_k = Φ(v_{k−1})` from `v_0 = 0`.
pub fn fixed_point_solve(problem: &PerturbationProblem) -> Result<PerturbationSolution> {
    let grid = problem.base.grid().clone();
    let v0 = Field::zeros(&grid, FieldKind::Vector(problem.base.q()));
    let (e_norm, e0f) = gate_stats(problem)?;
    fixed_point_from(problem, v0, e_norm, e0f)
}

fn fixed_point_from(problem: &PerturbationProblem, v0: Field<f64>, e_norm: f64, e0f: f64) -> Result<PerturbationSolution> {
    let o = &problem.opts;
    let mut trace = FixedPointTrace {
        e_norm,
        e0f_norm: e0f,
        gate: e_norm * e0f,
        theta: o.theta,
        ..Default::default()
    };
    trace.gate_ok = trace.gate <= o.theta;
    if !trace.gate_ok {
        trace.warnings.push(format!("gate {:e} exceeds theta {:e}", trace.gate, o.theta));
    }
    let start_norm = problem.norm2(&v0)?;
    let mut v = v0;
    let mut converged = false;
    let mut above_one = 0;
    for _ in 0..o.max_iter {
        let next = problem.phi(&v)?;
        let step = problem.norm2(&next.sub(&v))?;
        trace.norms.push(problem.norm2(&next)?);
        trace.norms3.push(cm_alpha_norm(&next, 3, o.alpha)?.value);
        if let Some(&prev) = trace.steps.last() {
            let r = if prev > 0.0 { step / prev } else { 0.0 };
            trace.ratios.push(r);
            above_one = if r >= 1.0 { above_one + 1 } else { 0 };
        }
        trace.steps.push(step);
        v = next;
        if step < o.tol {
            converged = true;
            break;
        }
        if above_one >= 3 {
            return Err(Error::NoConvergence(format!("fixed point diverges: steps {:?}", trace.steps)));
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "no convergence in {} iterations: steps {:?}",
            o.max_iter, trace.steps
        )));
    }
    trace.bound_ratio = if e0f > 0.0 {
        trace.norms.iter().cloned().fold(0.0, f64::max) / e0f
    } else {
        0.0
    };
    trace.recursion_ok = trace.norms.iter().all(|&a| a <= start_norm + e0f + 1e-300);
    let defect = problem.norm2(&problem.phi(&v)?.sub(&v))?;
    let calc = &problem.calculus;
    let u = v.mul_scalar_field(&calc.a.map(|a| a * a));
    let (residual, record) = verify_identity(&problem.base, &u, &problem.f);
    let nodes = grid_nodes(problem);
    let residual_max = residual.max_abs_on(&nodes);
    if !(record.min_margin > 0.0) {
        return Err(Error::Certification(format!(
            "perturbed map lost freeness (margin {:e})",
            record.min_margin
        )));
    }
    let u_norm = problem.norm2(&u)?;
    Ok(PerturbationSolution {
        v,
        u,
        trace,
        residual,
        residual_max,
        residual_budget: problem.residual_budget(),
        u_ratio: if e0f > 0.0 { u_norm / e0f } else { 0.0 },
        fixed_point_defect: defect,
        record,
    })
}

fn grid_nodes(problem: &PerturbationProblem) -> Vec<usize> {
    problem.base.grid().closed_ball_nodes()
}

/// One time slice of a family solve.
#[derive(Clone, Debug, Serialize)]
pub struct FamilySlice {
    pub t: f64,
    pub iterations: usize,
    pub residual_max: f64,
    pub residual_budget: f64,
    pub gate: f64,
}

/// Adjacent-slice stability check `|v(t₁) − v(t₂)| ≤ 1.1·|E(0, ĝ(t₁) − ĝ(t₂))|`.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityRow {
    pub t1: f64,
    pub t2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Continuity report of a family solve.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyReport {
    pub warm_start: bool,
    pub slices: Vec<FamilySlice>,
    pub stability: Vec<StabilityRow>,
    /// `max_x |Δ_t^r v| / Δt^r` for `r = 1, 2` (sup norm and first spatial derivatives).
    pub time_derivative_c0: Vec<f64>,
    pub time_derivative_c1: Vec<f64>,
}

/// Solutions `v(t)`, `u(t)` of a time family.
#[derive(Clone, Debug)]
pub struct FamilySolution {
    pub times: Vec<f64>,
    pub v: Vec<Field<f64>>,
    pub u: Vec<Field<f64>>,
    pub records: Vec<FreeMapRecord>,
    pub report: FamilyReport,
}

/// Solves `Φ[F₀, a, ĝ(·,t)]` on each slice of a uniform time grid.
pub fn family_solve(
    base: &FreeMapRecord,
    a: &dyn JetFn,
    times: &[f64],
    ghat: &[Field<f64>],
    warm_start: bool,
    opts: &PerturbationOptions,
) -> Result<FamilySolution> {
    if times.len() != ghat.len() || times.is_empty() {
        return invalid("times and family slices must have equal nonzero length");
    }
    if times.len() > 2 {
        let dt = times[1] - times[0];
        if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-12 * dt.abs().max(1.0)) {
            return invalid("time grid must be uniform");
        }
    }
    let grid = base.grid().clone();
    let calculus = Arc::new(Calculus::new(&grid, a)?);
    let e = Arc::new(build_e(base)?);
    let e_norm = e.norm_estimate(opts.alpha, opts.probes, opts.seed)?;
    let mut vs: Vec<Field<f64>> = Vec::new();
    let mut us = Vec::new();
    let mut recs = Vec::new();
    let mut slices = Vec::new();
    for (k, (&t, g)) in times.iter().zip(ghat).enumerate() {
        let problem = PerturbationProblem::with_parts(base.clone(), calculus.clone(), e.clone(), g.clone(), opts.clone())
            .map_err(|err| Error::NoConvergence(format!("slice t={t}: {err}")))?;
        let e0f = problem.norm2(&e.apply_f(g))?;
        let start = match (warm_start, vs.last()) {
            (true, Some(prev)) => prev.clone(),
            _ => Field::zeros(&grid, FieldKind::Vector(base.q())),
        };
        let sol = fixed_point_from(&problem, start, e_norm, e0f).map_err(|err| Error::NoConvergence(format!("slice t={t}: {err}")))?;
        slices.push(FamilySlice {
            t,
            iterations: sol.trace.norms.len(),
            residual_max: sol.residual_max,
            residual_budget: sol.residual_budget,
            gate: sol.trace.gate,
        });
        vs.push(sol.v);
        us.push(sol.u);
        recs.push(sol.record);
        let _ = k;
    }
    let mut stability = Vec::new();
    for k in 1..times.len() {
        let lhs = cm_alpha_norm(&vs[k].sub(&vs[k - 1]), 2, opts.alpha)?.value;
        let rhs = 1.1 * cm_alpha_norm(&e.apply_f(&ghat[k].sub(&ghat[k - 1])), 2, opts.alpha)?.value;
        stability.push(StabilityRow {
            t1: times[k - 1],
            t2: times[k],
            lhs,
            rhs,
            ok: lhs <= rhs,
        });
    }
    let mut c0 = Vec::new();
    let mut c1 = Vec::new();
    if times.len() > 1 {
        let dt = times[1] - times[0];
        let first: Vec<Field<f64>> = (1..vs.len()).map(|k| vs[k].sub(&vs[k - 1]).scale(1.0 / dt)).collect();
        c0.push(first.iter().map(|f| f.max_abs()).fold(0.0, f64::max));
        c1.push(first.iter().map(|f| cm_norm(f, 1)).fold(0.0, f64::max));
        if vs.len() > 2 {
            let second: Vec<Field<f64>> = (1..first.len()).map(|k| first[k].sub(&first[k - 1]).scale(1.0 / dt)).collect();
            c0.push(second.iter().map(|f| f.max_abs()).fold(0.0, f64::max));
            c1.push(second.iter().map(|f| cm_norm(f, 1)).fold(0.0, f64::max));
        }
    }
    Ok(FamilySolution {
        times: times.to_vec(),
        v: vs,
        u: us,
        records: recs,
        report: FamilyReport {
            warm_start,
            slices,
            stability,
            time_derivative_c0: c0,
            time_derivative_c1: c1,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;
    use crate::smooth::{Bump, Plateau, PolyMap, Zero};

    fn setup(n: usize, npts: usize, q: usize) -> (Arc<BallGrid<f64>>, FreeMapRecord) {
        let g = make_ball_grid::<f64>(n, npts).unwrap();
        let rec = FreeMapRecord::from_map(&g, &PolyMap::standard_free(n, q));
        (g, rec)
    }

    fn cutoff(n: usize) -> Plateau {
        Plateau::new(vec![0.0; n], 0.5, 0.8)
    }

    fn bump_f(g: &Arc<BallGrid<f64>>, amp: f64) -> Field<f64> {
        let b = Bump::new(vec![0.0; g.n()], 0.4).with_amplitude(amp);
        Field::from_fn(g, FieldKind::SymTensor, |x, o| {
            o.iter_mut().enumerate().for_each(|(k, v)| *v = b.eval(x) * (1.0 + 0.5 * k as f64))
        })
    }

    #[test]
    fn n_vanishes_for_constant_v_and_zero_cutoff() {
        let (g, _) = setup(1, 65, 7);
        let v = Field::from_fn(&g, FieldKind::Vector(7), |_, o| {
            o.iter_mut().enumerate().for_each(|(k, c)| *c = k as f64)
        });
        let calc = Calculus::new(&g, &cutoff(1)).unwrap();
        for nf in calc.op_n(&v) {
            assert!(nf.max_abs() < 1e-12);
        }
        let calc0 = Calculus::new(&g, &Zero(1)).unwrap();
        let w = Field::from_fn(&g, FieldKind::Vector(7), |x, o| {
            o.iter_mut().enumerate().for_each(|(k, c)| *c = (x[0] * (k + 1) as f64).sin())
        });
        for nf in calc0.op_n(&w) {
            assert_eq!(nf.max_abs(), 0.0);
        }
    }

    #[test]
    fn n_matches_hand_formula_in_one_dimension() {
        let (g, _) = setup(1, 257, 2);
        let a = cutoff(1);
        let calc = Calculus::new(&g, &a).unwrap();
        // v = (sin x, x²): v'' = (−sin x, 2), v' = (cos x, 2x)
        let v = Field::from_fn(&g, FieldKind::Vector(2), |x, o| {
            o[0] = x[0].sin();
            o[1] = x[0] * x[0];
        });
        let nf = &calc.op_n(&v)[0];
        let mut err: f64 = 0.0;
        for p in 0..g.len() {
            if !crate::fd::is_central_node(&g, p) {
                continue;
            }
            let x = g.coord_f64(p)[0];
            let j = a.jet(&[x], 1);
            let lv = -x.sin() * x.sin() + 2.0 * x * x;
            let ld = -x.sin() * x.cos() + 4.0 * x;
            let want = 2.0 * j.partial(&[1]) * lv + j.value() * ld;
            err = err.max((nf.get(p, 0) - want).abs());
        }
        assert!(err < 1e-3, "N error {err:e}");
    }

    #[test]
    fn u1_u2_symmetric_and_m_consistent() {
        let (g, _) = setup(2, 33, 5);
        let calc = Calculus::new(&g, &cutoff(2)).unwrap();
        let v = Field::from_fn(&g, FieldKind::Vector(5), |x, o| {
            o.iter_mut()
                .enumerate()
                .for_each(|(k, c)| *c = 0.1 * ((k + 1) as f64 * x[0] + x[1]).sin())
        });
        let w = calc.inverse_n(&v).unwrap();
        assert!(calc.op_u1(&w, 0, 1).sub(&calc.op_u1(&w, 1, 0)).max_abs() < 1e-15);
        assert!(calc.op_u2(&v, 0, 1).sub(&calc.op_u2(&v, 1, 0)).max_abs() < 1e-15);
        let m = calc.op_m(&v, 0, 1).unwrap();
        let back = dirichlet_solve(&calc.dirichlet, &m).unwrap();
        let u = calc.op_u2(&v, 0, 1).sub(&calc.op_u1(&w, 0, 1));
        let interior: Vec<usize> = (0..g.len()).filter(|&p| g.is_interior(p)).collect();
        let d = back.sub(&u).max_abs_on(&interior);
        assert!(d < 1e-8 * u.max_abs().max(1.0), "Δ⁻¹M − u = {d:e}");
    }

    #[test]
    fn e_is_a_right_inverse_and_linear() {
        let (g, rec) = setup(2, 17, 7);
        let e = build_e(&rec).unwrap();
        assert!(e.identity_error < 1e-10);
        let h = Field::from_fn(&g, FieldKind::Vector(2), |x, o| {
            o[0] = x[0];
            o[1] = x[1] * x[0];
        });
        let f = Field::from_fn(&g, FieldKind::SymTensor, |x, o| {
            o.iter_mut().enumerate().for_each(|(k, c)| *c = (k as f64 + x[0]).cos())
        });
        let out = e.apply(&h, &f);
        for p in 0..g.len() {
            let rows = rec.jet_vectors(p);
            let rhs: Vec<f64> = h.at(p).iter().chain(f.at(p)).copied().collect();
            for (r, want) in rows.iter().zip(rhs) {
                let got: f64 = r.iter().zip(out.at(p)).map(|(a, b)| a * b).sum();
                assert!((got - want).abs() < 1e-10);
            }
        }
        let zero = e.apply(&Field::zeros(&g, FieldKind::Vector(2)), &Field::zeros(&g, FieldKind::SymTensor));
        assert_eq!(zero.max_abs(), 0.0);
        let lin = e.apply(&h.scale(2.0), &f.scale(2.0)).sub(&out.scale(2.0)).max_abs();
        assert!(lin < 1e-12);
    }

    #[test]
    fn phi_at_zero_and_trivial_solve() {
        let (g, rec) = setup(1, 65, 7);
        let f = bump_f(&g, 1e-3);
        let pb = PerturbationProblem::new(rec.clone(), &cutoff(1), f.clone(), PerturbationOptions::default()).unwrap();
        let v0 = Field::zeros(&g, FieldKind::Vector(7));
        let want = pb.e.apply_f(&f.scale(0.5)).scale(-1.0);
        assert!(pb.phi(&v0).unwrap().sub(&want).max_abs() < 1e-15);
        let zero = PerturbationProblem::new(
            rec,
            &cutoff(1),
            Field::zeros(&g, FieldKind::SymTensor),
            PerturbationOptions::default(),
        )
        .unwrap();
        let sol = fixed_point_solve(&zero).unwrap();
        assert_eq!(sol.v.max_abs(), 0.0);
        assert_eq!(sol.u.max_abs(), 0.0);
    }

    #[test]
    fn rejects_f_outside_plateau() {
        let (g, rec) = setup(1, 65, 7);
        let f = Field::from_fn(&g, FieldKind::SymTensor, |_, o| o[0] = 1e-3);
        assert!(PerturbationProblem::new(rec, &cutoff(1), f, PerturbationOptions::default()).is_err());
    }

    #[test]
    fn bump_solve_meets_budget_and_bounds() {
        let (g, rec) = setup(1, 129, 7);
        let f = bump_f(&g, 2e-5);
        let pb = PerturbationProblem::new(rec, &cutoff(1), f, PerturbationOptions::default()).unwrap();
        let sol = fixed_point_solve(&pb).unwrap();
        let t = &sol.trace;
        assert!(t.gate_ok, "gate {:e}", t.gate);
        assert!(t.ratios.iter().all(|&r| r < 1.0), "{:?}", t.ratios);
        assert!(t.bound_ratio <= 1.1, "bound ratio {}", t.bound_ratio);
        assert!(t.recursion_ok);
        assert!(
            sol.residual_max <= sol.residual_budget,
            "{:e} > {:e}",
            sol.residual_max,
            sol.residual_budget
        );
        assert!(sol.record.min_margin > 0.0);
        assert!(sol.u_ratio.is_finite() && sol.u_ratio > 0.0);
    }

    #[test]
    fn family_warm_and_cold_agree() {
        let (g, rec) = setup(1, 65, 7);
        let times: Vec<f64> = (0..5).map(|k| 0.1 * k as f64).collect();
        let slices: Vec<Field<f64>> = times.iter().map(|&t| bump_f(&g, 1e-3 * (1.0 + t).cos())).collect();
        let opts = PerturbationOptions {
            probes: 4,
            ..Default::default()
        };
        let warm = family_solve(&rec, &cutoff(1), &times, &slices, true, &opts).unwrap();
        let cold = family_solve(&rec, &cutoff(1), &times, &slices, false, &opts).unwrap();
        for (a, b) in warm.v.iter().zip(&cold.v) {
            assert!(a.sub(b).max_abs() < 10.0 * opts.tol);
        }
        assert!(warm.report.stability.iter().all(|r| r.ok), "{:?}", warm.report.stability);
        assert_eq!(warm.report.time_derivative_c0.len(), 2);
    }
}
