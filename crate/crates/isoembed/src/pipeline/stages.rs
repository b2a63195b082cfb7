//! Single-stage drivers behind the `decompose`, `oscillate`, `perturb` and `verify` commands.

use super::embed::{level2, PROFILE_SAMPLES};
use super::metrics::builtin_metric;
use super::{collars, grid_for, pullback, verify_pullback, Budgeted, PullbackNorms, RunConfig};
use crate::error::{Error, Result};
use crate::field::{Field, FieldKind};
use crate::free_maps::FreeMapRecord;
use crate::oscillator::{build_profiles, residual_ratio, step_fk, substitute};
use crate::perturbation::{fixed_point_solve, PerturbationOptions, PerturbationProblem, PerturbationSummary};
use crate::smooth::{JetMap, Plateau, PolyMap};
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

/// One primitive of a decomposition.
#[derive(Clone, Debug, Serialize)]
pub struct PrimitiveSummary {
    pub form: Vec<f64>,
    pub support_center: Option<Vec<f64>>,
    pub support_radius: Option<f64>,
    pub coefficient_field: String,
}

/// Output of [`decompose_metric`].
#[derive(Clone, Debug, Serialize)]
pub struct DecomposeReport {
    pub metric: String,
    pub primitives: Vec<PrimitiveSummary>,
    pub split_error: f64,
    /// `max |Σ a_j⁴(c_j·dx)² − h|` over the grid.
    pub reconstruction: Budgeted,
}

/// Decomposes the configured metric and writes `decomposition.json` plus `a_<j>.csv`.
pub fn decompose_metric(cfg: &RunConfig, dir: Option<&Path>) -> Result<DecomposeReport> {
    let grid = grid_for(cfg)?;
    let target = builtin_metric(&cfg.metric, &grid)?;
    let h = target.field(&grid);
    let mut err: f64 = 0.0;
    for p in grid.closed_ball_nodes() {
        let s = target.primitive_sum(&grid.coord_f64(p));
        err = s.iter().zip(h.at(p)).fold(err, |m, (a, b)| m.max((a - b).abs()));
    }
    let mut prims = Vec::new();
    for (j, prim) in target.primitives.iter().enumerate() {
        let name = format!("a_{j}.csv");
        if let Some(d) = dir {
            std::fs::create_dir_all(d)?;
            Field::scalar_fn(&grid, |x| prim.a.eval(x)).write_csv(d.join(&name))?;
        }
        let sup = prim.a.support();
        prims.push(PrimitiveSummary {
            form: prim.form.clone(),
            support_center: sup.as_ref().map(|s| s.0.clone()),
            support_radius: sup.map(|s| s.1),
            coefficient_field: name,
        });
    }
    let report = DecomposeReport {
        metric: target.name.clone(),
        primitives: prims,
        split_error: target.split_error,
        reconstruction: Budgeted::new(err, super::embed::RECONSTRUCTION_TOL),
    };
    if let Some(d) = dir {
        std::fs::write(d.join("decomposition.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Output of [`oscillate_first`].
#[derive(Clone, Debug, Serialize)]
pub struct OscillateReport {
    pub epsilon: f64,
    pub k: usize,
    pub order: usize,
    /// `residual(ε)/residual(ε/2)` of `F₂` and of `F_k` on the samples.
    pub ratio_f2: f64,
    pub ratio_fk: f64,
    pub residual_max: f64,
    pub displacement_max: f64,
    pub freeness_min: f64,
    pub fd_error_bound: f64,
}

/// Oscillatory step for the first primitive on `F₀`; writes `F_osc.csv` and `residual.csv`.
pub fn oscillate_first(cfg: &RunConfig, dir: Option<&Path>) -> Result<OscillateReport> {
    let grid = grid_for(cfg)?;
    let target = builtin_metric(&cfg.metric, &grid)?;
    let prim = target.primitives.first().ok_or_else(|| Error::Config {
        key: "metric".into(),
        msg: "metric has no primitive".into(),
    })?;
    let f0: Arc<dyn JetMap> = Arc::new(PolyMap::standard_free(cfg.n, cfg.q));
    let profiles = Arc::new(build_profiles(PROFILE_SAMPLES)?);
    let (s2, samples, chart) = level2(&grid, f0, prim, &profiles)?;
    let k = cfg.k.unwrap_or(cfg.choose_k(cfg.k0_override.unwrap_or(0.0)));
    let ratio_f2 = residual_ratio(&s2, cfg.epsilon, &samples)?;
    let sk = step_fk(&s2, k, &samples)?;
    let ratio_fk = residual_ratio(&sk, cfg.epsilon, &samples)?;
    let sub = substitute(&sk, cfg.epsilon, &grid, &chart)?;
    let nodes = grid.closed_ball_nodes();
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        sub.record.values.write_csv(d.join("F_osc.csv"))?;
        sub.residual.write_csv(d.join("residual.csv"))?;
    }
    Ok(OscillateReport {
        epsilon: cfg.epsilon,
        k,
        order: sub.order,
        ratio_f2,
        ratio_fk,
        residual_max: cfg.epsilon.powi(sub.order as i32) * sub.residual.max_abs_on(&nodes),
        displacement_max: sub.displacement_max,
        freeness_min: sub.record.min_margin,
        fd_error_bound: sub.fd_error_bound,
    })
}

/// Perturbation of `F₀` by `f = h`, with the cutoff built from the collars of `supp h`.
pub fn perturb_base(cfg: &RunConfig, dir: Option<&Path>) -> Result<PerturbationSummary> {
    let grid = grid_for(cfg)?;
    let target = builtin_metric(&cfg.metric, &grid)?;
    let base = FreeMapRecord::from_map(&grid, &PolyMap::standard_free(cfg.n, cfg.q));
    let (w1, w2) = collars(grid.h());
    let reach = target.support_center.iter().map(|v| v * v).sum::<f64>().sqrt() + target.support_radius;
    if reach + w2 > 1.0 - 2.0 * grid.h() {
        return Err(Error::GridTooCoarse(format!(
            "support radius {reach} plus collars {w2} does not fit in the ball"
        )));
    }
    let a = Plateau::new(vec![0.0; cfg.n], reach + w1, reach + w2);
    let opts = PerturbationOptions {
        alpha: cfg.alpha,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        theta: cfg.theta,
        probes: 32,
        seed: cfg.seed,
    };
    let sol = fixed_point_solve(&PerturbationProblem::new(base, &a, target.field(&grid), opts)?)?;
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        sol.u.write_csv(d.join("u.csv"))?;
        sol.residual.write_csv(d.join("residual.csv"))?;
    }
    Ok(sol.summary())
}

/// Output of [`verify_saved`].
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub norms: PullbackNorms,
    pub freeness_min: f64,
}

/// Checks a saved map `F.csv` against `F₀*g_can + h` with finite-difference jets.
pub fn verify_saved(cfg: &RunConfig, map_csv: &Path, dir: Option<&Path>) -> Result<VerifyReport> {
    let grid = grid_for(cfg)?;
    let target = builtin_metric(&cfg.metric, &grid)?;
    let values = Field::read_csv(&grid, FieldKind::Vector(cfg.q), map_csv)?;
    let base = FreeMapRecord::from_map(&grid, &PolyMap::standard_free(cfg.n, cfg.q));
    let rec = FreeMapRecord::from_values(values);
    let check = verify_pullback(&rec, &pullback(&base).add(&target.field(&grid)), cfg.alpha)?;
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        check.residual.write_csv(d.join("verify_residual.csv"))?;
    }
    Ok(VerifyReport {
        norms: check.norms(),
        freeness_min: rec.min_margin,
    })
}
