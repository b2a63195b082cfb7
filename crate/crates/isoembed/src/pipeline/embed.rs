//! Embedding driver: one oscillatory step and one perturbation solve per primitive.

use super::metrics::builtin_metric;
use super::{collars, grid_for, pullback, verify_pullback, Budgeted, FinalRecord, RunConfig, SolveReport, StageFailure, StageRecord};
use crate::decomposition::{chart_inverse, chart_rotation, AnalyticPrimitive};
use crate::error::{Error, Result};
use crate::fd::fd_jet;
use crate::field::{Field, FieldKind};
use crate::free_maps::FreeMapRecord;
use crate::grid::BallGrid;
use crate::jet::Jet;
use crate::oscillator::{
    build_frames, build_profiles, build_u1, corrector_u2, injectivity_margin, step_fk, substitute, ProfilePack, SampleSet, StepState,
    Substituted, SubstitutedMap,
};
use crate::perturbation::{build_e, fixed_point_solve, Calculus, PerturbationOptions, PerturbationProblem};
use crate::smooth::{JetFn, JetMap, LinearPullback, Plateau, PolyMap};
use std::path::Path;
use std::sync::Arc;

/// Separation radius of the injectivity check.
pub const LEBESGUE: f64 = 0.1;
/// Bound on `max |Σ a_j⁴(c_j·dx)² − h|`.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Roundoff allowance for `|f|` dropped where the perturbation cutoff is below one; the
/// previous stage's measured residual is allowed on top, since it is already in the budget.
pub const TRUNCATION_TOL: f64 = 1e-12;
/// Halvings of `ε` allowed when a stage exceeds its displacement budget.
pub const MAX_RETRIES: usize = 4;
pub(crate) const T_SAMPLES: usize = 32;
const X_SAMPLES: usize = 40;
pub(crate) const PROFILE_SAMPLES: usize = 256;

/// `s · f`.
#[derive(Clone)]
struct ScaledFn {
    inner: Arc<dyn JetFn>,
    s: f64,
}

impl JetFn for ScaledFn {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.s * self.inner.eval(x)
    }
    fn jet(&self, x: &[f64], deg: usize) -> Jet {
        self.inner.jet(x, deg).scale(self.s)
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        self.inner.support()
    }
}

/// Outputs of an embedding run.
#[derive(Clone, Debug)]
pub struct EmbedRun {
    pub report: SolveReport,
    pub base: FreeMapRecord,
    /// Final map `F` with jets.
    pub record: FreeMapRecord,
    /// Accumulated perturbation.
    pub u: Field<f64>,
    /// `F*g_can − F₀*g_can − h`.
    pub residual: Field<f64>,
}

impl EmbedRun {
    /// Writes `report.json`, `F.csv`, `u.csv` and `residual.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.report.write(dir)?;
        self.record.values.write_csv(dir.join("F.csv"))?;
        self.u.write_csv(dir.join("u.csv"))?;
        self.residual.write_csv(dir.join("residual.csv"))?;
        Ok(())
    }
}

/// Builds `F` with `F*g_can = F₀*g_can + h` for the configured metric.
pub fn run_embed(cfg: &RunConfig) -> std::result::Result<EmbedRun, StageFailure> {
    let mut report = SolveReport::new(cfg);
    match embed_inner(cfg, &mut report) {
        Ok((base, record, u, residual)) => Ok(EmbedRun {
            report,
            base,
            record,
            u,
            residual,
        }),
        Err(error) => {
            report.error = Some(error.to_string());
            Err(StageFailure {
                error,
                report: Box::new(report),
            })
        }
    }
}

struct Oscillated {
    state: Arc<StepState>,
    chart: Vec<f64>,
    sub: Substituted,
}

pub(crate) fn with_jets(values: Field<f64>, jet: &crate::fd::Jet2<f64>, u: &Field<f64>) -> FreeMapRecord {
    let uj = fd_jet(u);
    let mut j = jet.clone();
    j.d1.iter_mut().zip(&uj.d1).for_each(|(a, b)| *a += b);
    j.d2.iter_mut().zip(&uj.d2).for_each(|(a, b)| *a += b);
    FreeMapRecord::from_parts(values.add(u), j)
}

/// Level-2 state of the oscillatory step for one primitive on the analytic base `g`.
pub(crate) fn level2(
    grid: &Arc<BallGrid<f64>>,
    g: Arc<dyn JetMap>,
    prim: &AnalyticPrimitive,
    profiles: &Arc<ProfilePack>,
) -> Result<(StepState, SampleSet, Vec<f64>)> {
    let n = grid.n();
    let c = &prim.form;
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let chart = chart_rotation(c)?;
    let ainv = chart_inverse(c)?;
    let to_hat = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| chart[i * n + j] * x[j]).sum()).collect() };
    let f0_hat: Arc<dyn JetMap> = Arc::new(LinearPullback {
        inner: g,
        ainv: ainv.clone(),
    });
    let a_hat: Arc<dyn JetFn> = Arc::new(LinearPullback {
        inner: Arc::new(ScaledFn {
            inner: prim.a.clone(),
            s: norm,
        }) as Arc<dyn JetFn>,
        ainv,
    });
    let support: Vec<usize> = grid
        .closed_ball_nodes()
        .into_iter()
        .filter(|&p| prim.a.eval(&grid.coord_f64(p)) != 0.0)
        .collect();
    if support.is_empty() {
        return Err(Error::GridTooCoarse("primitive support contains no grid node".into()));
    }
    let stride = support.len().div_ceil(X_SAMPLES);
    let xs: Vec<Vec<f64>> = support.iter().step_by(stride).map(|&p| to_hat(&grid.coord_f64(p))).collect();
    let samples = SampleSet::uniform(T_SAMPLES, xs);
    let reference = prim.a.support().map(|(c, _)| to_hat(&c)).unwrap_or(vec![0.0; n]);
    let frames = Arc::new(build_frames(f0_hat.clone(), grid, 1.0, &reference)?);
    let s1 = build_u1(f0_hat, a_hat, frames, profiles.clone(), &samples)?;
    Ok((corrector_u2(&s1, &samples)?, samples, chart))
}

/// Empirical `k₀` from `‖E[F_{ε,2}]‖` at `ε` and `ε/2`.
fn estimate_k0(state: &StepState, grid: &Arc<BallGrid<f64>>, chart: &[f64], cfg: &RunConfig) -> Result<f64> {
    let mut norms = Vec::new();
    for eps in [cfg.epsilon, cfg.epsilon / 2.0] {
        let sub = substitute(state, eps, grid, chart)?;
        norms.push(build_e(&sub.record)?.norm_estimate(cfg.alpha, 8, cfg.seed)?);
    }
    Ok((norms[1] / norms[0]).ln().max(0.0) / 2f64.ln())
}

fn oscillate(
    grid: &Arc<BallGrid<f64>>,
    g: &Arc<dyn JetMap>,
    prim: &AnalyticPrimitive,
    profiles: &Arc<ProfilePack>,
    eps: f64,
    cfg: &RunConfig,
    report: &mut SolveReport,
) -> Result<Oscillated> {
    let (s2, samples, chart) = level2(grid, g.clone(), prim, profiles)?;
    let k = match report.k.or(cfg.k) {
        Some(k) => {
            report.k = Some(k);
            report.k0 = report.k0.or(cfg.k0_override);
            k
        }
        None => {
            let k0 = match cfg.k0_override {
                Some(v) => v,
                None => estimate_k0(&s2, grid, &chart, cfg)?,
            };
            report.k0 = Some(k0);
            let k = cfg.choose_k(k0);
            report.k = Some(k);
            k
        }
    };
    let state = if k > 2 { step_fk(&s2, k, &samples)? } else { s2 };
    let sub = substitute(&state, eps, grid, &chart)?;
    Ok(Oscillated {
        state: Arc::new(state),
        chart,
        sub,
    })
}

/// `max_p |v(p)|` over the given nodes.
pub(crate) fn norm_on(v: &Field<f64>, nodes: &[usize]) -> f64 {
    nodes
        .iter()
        .map(|&p| v.at(p).iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

type EmbedOut = (FreeMapRecord, FreeMapRecord, Field<f64>, Field<f64>);

fn embed_inner(cfg: &RunConfig, report: &mut SolveReport) -> Result<EmbedOut> {
    let grid = grid_for(cfg)?;
    let (n, q) = (cfg.n, cfg.q);
    let f0: Arc<dyn JetMap> = Arc::new(PolyMap::standard_free(n, q));
    let base = FreeMapRecord::from_map(&grid, f0.as_ref());
    if !(base.min_margin > 0.0) {
        return Err(Error::Certification("base map is not free".into()));
    }
    let target = report.time("decomposition", |_| builtin_metric(&cfg.metric, &grid))?;
    let hfield = target.field(&grid);
    let base_pull = pullback(&base);
    let final_target = base_pull.add(&hfield);
    let nodes = grid.closed_ball_nodes();
    let recon = nodes
        .iter()
        .map(|&p| {
            let x = grid.coord_f64(p);
            target
                .primitive_sum(&x)
                .iter()
                .zip(hfield.at(p))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let reconstruction = Budgeted::new(recon, RECONSTRUCTION_TOL);
    report.stages.push(StageRecord::Decomposition {
        metric: target.name.clone(),
        primitives: target.primitives.len(),
        split_error: Budgeted::new(target.split_error, RECONSTRUCTION_TOL),
        reconstruction,
    });
    if !reconstruction.ok || target.split_error > RECONSTRUCTION_TOL {
        return Err(Error::Certification(format!("primitive reconstruction error {recon:e}")));
    }
    let mut budget_sum = RECONSTRUCTION_TOL;
    let mut u = Field::zeros(&grid, FieldKind::Vector(q));
    let mut record = base.clone();
    let (w1, w2) = collars(grid.h());
    let reach = target.support_center.iter().map(|v| v * v).sum::<f64>().sqrt() + target.support_radius;
    let region = reach + w2;
    if !target.is_zero() {
        if region > 1.0 - 2.0 * grid.h() {
            return Err(Error::GridTooCoarse(format!(
                "support radius {reach} plus collars {w2} leaves no room inside the ball at h = {}",
                grid.h()
            )));
        }
        let a_pert = Plateau::new(vec![0.0; n], reach + w1, region);
        let calculus = Arc::new(report.time("perturbation", |_| Calculus::new(&grid, &a_pert))?);
        let profiles = Arc::new(report.time("oscillation", |_| build_profiles(PROFILE_SAMPLES))?);
        let stage_budget = cfg.delta / target.primitives.len() as f64;
        let opts = PerturbationOptions {
            alpha: cfg.alpha,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            theta: cfg.theta,
            probes: 32,
            seed: cfg.seed,
        };
        let mut g: Arc<dyn JetMap> = f0.clone();
        let mut hsum = base_pull.clone();
        let mut carried = 0.0;
        for (i, prim) in target.primitives.iter().enumerate() {
            let tensor = Field::from_fn(&grid, FieldKind::SymTensor, |x, o| o.copy_from_slice(&prim.tensor(x)));
            hsum = hsum.add(&tensor);
            let mut eps = cfg.epsilon;
            let mut retries = 0;
            loop {
                let osc = report.time("oscillation", |r| oscillate(&grid, &g, prim, &profiles, eps, cfg, r))?;
                let sub = &osc.sub;
                let osc_res = eps.powi(sub.order as i32) * sub.residual.max_abs_on(&nodes);
                let osc_disp = Budgeted::new(sub.displacement_max, stage_budget);
                report.stages.push(StageRecord::Oscillation {
                    primitive: i,
                    epsilon: eps,
                    k: osc.state.level,
                    order: sub.order,
                    partition_delta: osc.state.delta,
                    residual: osc_res,
                    fd_error_bound: sub.fd_error_bound,
                    displacement: osc_disp,
                    freeness_min: sub.record.min_margin,
                    u1_identity_max: osc.state.report.u1_identity_max,
                    u1_integral_max: osc.state.report.u1_integral_max,
                    gram_min: osc.state.report.gram_min.clone(),
                    retries,
                });
                if !osc_disp.ok {
                    if retries < MAX_RETRIES {
                        report.warnings.push(format!(
                            "primitive {i}: displacement {:e} over budget at eps {eps}, halving",
                            sub.displacement_max
                        ));
                        eps /= 2.0;
                        retries += 1;
                        continue;
                    }
                    return Err(Error::Certification(format!(
                        "primitive {i}: displacement over budget after {MAX_RETRIES} halvings"
                    )));
                }
                let b = with_jets(sub.record.values.clone(), &sub.record.jet, &u);
                let pb = report.time("perturbation", |_| -> Result<_> {
                    let mut f = hsum.sub(&pullback(&b));
                    let mut truncated: f64 = 0.0;
                    for p in 0..grid.len() {
                        if calculus.a.get(p, 0) < 1.0 {
                            for v in f.at_mut(p) {
                                truncated = truncated.max(v.abs());
                                *v = 0.0;
                            }
                        }
                    }
                    if truncated > carried + TRUNCATION_TOL {
                        return Err(Error::Certification(format!(
                            "stage residual {truncated:e} outside the perturbation plateau"
                        )));
                    }
                    let before = f.max_abs_on(&nodes);
                    let problem = PerturbationProblem::with_parts(b.clone(), calculus.clone(), Arc::new(build_e(&b)?), f, opts.clone())?;
                    Ok((fixed_point_solve(&problem)?, truncated, before))
                })?;
                let (sol, truncated, before) = pb;
                let t = &sol.trace;
                let disp = Budgeted::new(norm_on(&sol.record.values.sub(&record.values), &nodes), stage_budget);
                let gate = Budgeted::new(t.gate, cfg.theta);
                if !gate.ok {
                    report
                        .warnings
                        .push(format!("primitive {i}: gate {:e} above theta {:e}", t.gate, cfg.theta));
                }
                report.stages.push(StageRecord::Perturbation {
                    primitive: i,
                    residual_before: before,
                    dominant: if before > sol.residual_max {
                        "oscillation".into()
                    } else {
                        "discretization".into()
                    },
                    residual_after: Budgeted::new(sol.residual_max, sol.residual_budget),
                    truncated_max: truncated,
                    gate,
                    e_norm: t.e_norm,
                    e0f_norm: t.e0f_norm,
                    iterations: t.norms.len(),
                    max_ratio: t.ratios.iter().cloned().fold(0.0, f64::max),
                    bound_ratio: t.bound_ratio,
                    u_ratio: sol.u_ratio,
                    freeness_min: sol.record.min_margin,
                    displacement: disp,
                });
                if !disp.ok {
                    if retries < MAX_RETRIES {
                        report.warnings.push(format!(
                            "primitive {i}: stage displacement {:e} over budget at eps {eps}, halving",
                            disp.value
                        ));
                        eps /= 2.0;
                        retries += 1;
                        continue;
                    }
                    return Err(Error::Certification(format!(
                        "primitive {i}: displacement over budget after {MAX_RETRIES} halvings"
                    )));
                }
                budget_sum += sol.residual_budget;
                carried = sol.residual_max;
                u = u.add(&sol.u);
                record = sol.record;
                g = Arc::new(SubstitutedMap {
                    state: osc.state.clone(),
                    eps,
                    chart: osc.chart.clone(),
                });
                break;
            }
        }
    }
    let check = report.time("verify", |_| verify_pullback(&record, &final_target, cfg.alpha))?;
    let inj = report.time("verify", |_| injectivity_margin(&record, LEBESGUE))?;
    let diff = record.values.sub(&base.values);
    let outside: Vec<usize> = (0..grid.len())
        .filter(|&p| grid.coord_f64(p).iter().map(|v| v * v).sum::<f64>().sqrt() > region)
        .collect();
    let support_violation_max = if target.is_zero() {
        norm_on(&diff, &nodes)
    } else {
        norm_on(&diff, &outside)
    };
    let residual = check.residual.clone();
    report.final_ = Some(FinalRecord {
        pullback_residual_max: check.max,
        pullback_residual_budget: budget_sum,
        pullback_norms: check.norms(),
        displacement_max: norm_on(&diff, &nodes),
        displacement_budget: cfg.delta,
        freeness_min: record.min_margin,
        injectivity_min: inj.min(),
        injectivity_pair_min: inj.pair_min,
        immersion_min: inj.immersion_min,
        lebesgue: LEBESGUE,
        region_radius: if target.is_zero() { 0.0 } else { region },
        support_violation_max,
    });
    Ok((base, record, u, residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> RunConfig {
        RunConfig::from_json(text).unwrap()
    }

    fn flagship() -> RunConfig {
        config(
            r#"{"n": 1, "N": 129, "epsilon": 0.1, "k": 3, "metric": {"name": "flat_plus_bump", "params": {"c": 1e-4, "r_out": 0.8}}, "out_dir": "out"}"#,
        )
    }

    #[test]
    fn zero_metric_returns_base_map() {
        let cfg = config(r#"{"n": 1, "N": 33, "epsilon": 0.1, "k": 3, "metric": {"name": "zero"}, "out_dir": "out"}"#);
        let run = run_embed(&cfg).unwrap();
        let fin = run.report.final_.unwrap();
        assert_eq!(fin.pullback_residual_max, 0.0);
        assert_eq!(fin.displacement_max, 0.0);
        assert_eq!(run.u.max_abs(), 0.0);
        assert_eq!(run.record.values.sub(&run.base.values).max_abs(), 0.0);
    }

    #[test]
    fn flagship_meets_budgets_and_is_deterministic() {
        let cfg = flagship();
        let a = run_embed(&cfg).unwrap();
        let fin = a.report.final_.clone().unwrap();
        assert!(fin.pullback_residual_max <= fin.pullback_residual_budget, "{fin:?}");
        assert!(fin.freeness_min > 0.0 && fin.injectivity_min > 0.0);
        assert_eq!(fin.support_violation_max, 0.0);
        assert!(fin.displacement_max > 0.0 && fin.displacement_max <= cfg.delta);
        let b = run_embed(&cfg).unwrap();
        assert_eq!(a.report.without_timing().unwrap(), b.report.without_timing().unwrap());
        assert_eq!(a.record.values.data(), b.record.values.data());
    }

    #[test]
    fn two_primitives_accumulate_stage_by_stage() {
        let cfg = config(
            r#"{"n": 1, "N": 129, "epsilon": 0.1, "k": 3, "out_dir": "out",
                "metric": {"name": "primitives", "params": {"items": [
                    {"amplitude": 0.1, "center": [-0.4], "r_out": 0.35},
                    {"amplitude": 0.1, "center": [0.4], "r_out": 0.35}]}}}"#,
        );
        let run = run_embed(&cfg).unwrap();
        let mut stages = 0;
        for st in &run.report.stages {
            if let StageRecord::Perturbation {
                residual_after,
                displacement,
                ..
            } = st
            {
                assert!(residual_after.ok && displacement.ok, "{st:?}");
                stages += 1;
            }
        }
        assert_eq!(stages, 2);
        let fin = run.report.final_.unwrap();
        assert!(fin.pullback_residual_max <= fin.pullback_residual_budget, "{fin:?}");
        assert!(fin.freeness_min > 0.0 && fin.injectivity_min > 0.0 && fin.support_violation_max == 0.0);
    }

    #[test]
    fn oversized_support_is_rejected_with_partial_report() {
        let cfg = config(
            r#"{"n": 1, "N": 65, "epsilon": 0.1, "k": 3, "metric": {"name": "flat_plus_bump", "params": {"r_out": 0.95}}, "out_dir": "out"}"#,
        );
        let fail = run_embed(&cfg).unwrap_err();
        assert!(matches!(fail.error, Error::GridTooCoarse(_)));
        assert_eq!(fail.report.stages.len(), 1);
        assert!(fail.report.error.is_some());
    }
}
