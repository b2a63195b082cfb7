//! Family driver: perturbation solves for `ĝ(t) = t h` with window halving.

use super::embed::norm_on;
use super::metrics::builtin_metric;
use super::{collars, grid_for, pullback, verify_pullback, Budgeted, RunConfig, SolveReport, StageFailure, StageRecord};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::free_maps::FreeMapRecord;
use crate::perturbation::{family_solve, FamilyReport, FamilySolution, PerturbationOptions};
use crate::smooth::{Plateau, PolyMap};
use std::path::Path;

/// Outputs of a family run.
#[derive(Clone, Debug)]
pub struct FamilyRun {
    pub report: SolveReport,
    pub solution: FamilySolution,
    pub detail: FamilyReport,
    /// Per-slice pullback residual maxima.
    pub slice_residuals: Vec<f64>,
    /// Achieved window `T̂`.
    pub window: f64,
    pub halvings: usize,
}

impl FamilyRun {
    /// Writes `report.json`, `family.json` and `u_<k>.csv` per slice.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.report.write(dir)?;
        std::fs::write(dir.join("family.json"), serde_json::to_string_pretty(&self.detail)?)?;
        for (k, u) in self.solution.u.iter().enumerate() {
            u.write_csv(dir.join(format!("u_{k}.csv")))?;
        }
        Ok(())
    }
}

/// Solves the family slice by slice, halving the time window while a slice fails.
pub fn run_family(cfg: &RunConfig) -> std::result::Result<FamilyRun, StageFailure> {
    let mut report = SolveReport::new(cfg);
    match family_inner(cfg, &mut report) {
        Ok(mut run) => {
            run.report = report;
            Ok(run)
        }
        Err(error) => {
            report.error = Some(error.to_string());
            Err(StageFailure {
                error,
                report: Box::new(report),
            })
        }
    }
}

fn family_inner(cfg: &RunConfig, report: &mut SolveReport) -> Result<FamilyRun> {
    let grid = grid_for(cfg)?;
    let (n, q) = (cfg.n, cfg.q);
    let base = FreeMapRecord::from_map(&grid, &PolyMap::standard_free(n, q));
    let target = builtin_metric(&cfg.metric, &grid)?;
    if target.slices < 2 || !(target.t_max > 0.0) {
        return Err(Error::Config {
            key: "metric.params.slices".into(),
            msg: "need at least 2 slices and t_max > 0".into(),
        });
    }
    let h = target.field(&grid);
    let (w1, w2) = collars(grid.h());
    let reach = target.support_center.iter().map(|v| v * v).sum::<f64>().sqrt() + target.support_radius;
    if reach + w2 > 1.0 - 2.0 * grid.h() {
        return Err(Error::GridTooCoarse(format!(
            "support radius {reach} plus collars {w2} does not fit in the ball"
        )));
    }
    let a = Plateau::new(vec![0.0; n], reach + w1, reach + w2);
    let opts = PerturbationOptions {
        alpha: cfg.alpha,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        theta: cfg.theta,
        probes: 32,
        seed: cfg.seed,
    };
    let dt = target.t_max / (target.slices - 1) as f64;
    let mut times: Vec<f64> = (0..target.slices).map(|k| k as f64 * dt).collect();
    let mut halvings = 0;
    let nodes = grid.closed_ball_nodes();
    let base_pull = pullback(&base);
    loop {
        if times.len() < 2 {
            return Err(Error::NoConvergence(format!(
                "time window shrank below two slices after {halvings} halvings"
            )));
        }
        let slices: Vec<Field<f64>> = times.iter().map(|&t| h.scale(t)).collect();
        let attempt = report.time("family", |_| family_solve(&base, &a, &times, &slices, true, &opts));
        let failure = match &attempt {
            Err(e) => Some(e.to_string()),
            Ok(sol) => sol
                .report
                .slices
                .iter()
                .find(|s| s.gate > cfg.theta)
                .map(|s| format!("gate {:e} above theta at t = {}", s.gate, s.t))
                .or_else(|| {
                    sol.records
                        .iter()
                        .position(|r| !(r.min_margin > 0.0))
                        .map(|k| format!("freeness lost at t = {}", times[k]))
                }),
        };
        if let Some(why) = failure {
            let window = times.last().copied().unwrap_or(0.0) / 2.0;
            report.warnings.push(format!("window {}: {why}; halving", times.last().unwrap()));
            times.retain(|&t| t <= window + 1e-12);
            halvings += 1;
            continue;
        }
        let sol = attempt?;
        let cold = report.time("family", |_| family_solve(&base, &a, &times, &slices, false, &opts))?;
        let warm_cold = sol
            .v
            .iter()
            .zip(&cold.v)
            .map(|(a, b)| norm_on(&a.sub(b), &nodes))
            .fold(0.0, f64::max);
        let mut residuals = Vec::new();
        let mut worst = Budgeted::new(0.0, f64::INFINITY);
        for (k, rec) in sol.records.iter().enumerate() {
            let chk = verify_pullback(rec, &base_pull.add(&slices[k]), cfg.alpha)?;
            let s = &sol.report.slices[k];
            residuals.push(chk.max);
            if k == 0 || chk.max / s.residual_budget > worst.value / worst.budget {
                worst = Budgeted::new(chk.max, s.residual_budget);
            }
        }
        let stability_ok = sol.report.stability.iter().all(|r| r.ok);
        let window = *times.last().unwrap();
        report.stages.push(StageRecord::Family {
            window,
            slices: times.len(),
            halvings,
            residual_max: worst,
            stability_ok,
            warm_cold_max: Budgeted::new(warm_cold, 10.0 * cfg.tol),
        });
        let detail = sol.report.clone();
        return Ok(FamilyRun {
            report: report.clone(),
            solution: sol,
            detail,
            slice_residuals: residuals,
            window,
            halvings,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: f64, slices: usize) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{"n": 1, "N": 129, "epsilon": 0.1, "metric": {{"name": "conformal_ramp", "params": {{"c": {c}, "radius": 0.7, "slices": {slices}}}}}, "out_dir": "out"}}"#
        ))
        .unwrap()
    }

    #[test]
    fn constant_family_needs_no_correction() {
        let cfg = RunConfig::from_json(r#"{"n": 1, "N": 65, "epsilon": 0.1, "metric": {"name": "zero"}, "out_dir": "out"}"#).unwrap();
        let run = run_family(&cfg).unwrap();
        assert_eq!(run.halvings, 0);
        assert_eq!(run.window, 1.0);
        assert!(run.solution.u.iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn linear_ramp_keeps_full_window() {
        let run = run_family(&ramp(5e-5, 5)).unwrap();
        assert_eq!((run.window, run.halvings, run.solution.times.len()), (1.0, 0, 5));
        match &run.report.stages[0] {
            StageRecord::Family {
                residual_max,
                stability_ok,
                warm_cold_max,
                ..
            } => {
                assert!(residual_max.ok && *stability_ok && warm_cold_max.ok, "{:?}", run.report.stages);
            }
            other => panic!("{other:?}"),
        }
        assert!(run.detail.slices.iter().all(|s| s.residual_max <= s.residual_budget));
    }

    #[test]
    fn aggressive_ramp_halves_the_window() {
        let run = run_family(&ramp(5e-4, 9)).unwrap();
        assert_eq!(run.halvings, 3);
        assert_eq!(run.window, 0.125);
        assert_eq!(run.report.warnings.len(), 3);
        assert!(run.detail.slices.iter().all(|s| s.gate <= 1e-2));
    }
}
