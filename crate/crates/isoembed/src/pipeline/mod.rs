//! End-to-end drivers: decomposition, oscillatory steps, perturbation, families and reports.

pub mod config;
pub mod embed;
pub mod family;
pub mod metrics;
pub mod stages;

pub use config::{MetricSpec, RunConfig};
pub use embed::{run_embed, EmbedRun};
pub use family::{run_family, FamilyRun};
pub use metrics::{builtin_metric, FourthRoot, MetricTarget};
pub use stages::{decompose_metric, oscillate_first, perturb_base, verify_saved};

use crate::error::{Error, Result};
use crate::field::{Field, FieldKind};
use crate::free_maps::FreeMapRecord;
use crate::grid::{sym_pairs, BallGrid};
use crate::holder::cm_alpha_norm;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

/// Inner collar `w₁ = max(3h, 0.05)` and outer collar `w₂ = w₁ + max(3h, 0.1)` around a support.
pub fn collars(h: f64) -> (f64, f64) {
    let w1 = (3.0 * h).max(0.05);
    (w1, w1 + (3.0 * h).max(0.1))
}

/// `∂_iF·∂_jF` at every node.
pub fn pullback(rec: &FreeMapRecord) -> Field<f64> {
    let grid = rec.grid();
    let pairs = sym_pairs(grid.n());
    let mut out = Field::zeros(grid, FieldKind::SymTensor);
    for p in 0..grid.len() {
        let o = out.at_mut(p);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            o[k] = rec.jet.d1_at(p, i).iter().zip(rec.jet.d1_at(p, j)).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Residual of a pullback identity with its norms over the closed ball.
#[derive(Clone, Debug)]
pub struct PullbackCheck {
    pub residual: Field<f64>,
    pub max: f64,
    pub l2: f64,
    /// Discrete `C^{0,α}` norm.
    pub holder: f64,
}

/// Serializable norms of a [`PullbackCheck`].
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PullbackNorms {
    pub max: f64,
    pub l2: f64,
    pub holder: f64,
}

impl PullbackCheck {
    pub fn norms(&self) -> PullbackNorms {
        PullbackNorms {
            max: self.max,
            l2: self.l2,
            holder: self.holder,
        }
    }
}

/// `r_ij = ∂_iF·∂_jF − target_ij` with max, `L²` and `C^{0,α}` norms.
pub fn verify_pullback(rec: &FreeMapRecord, target: &Field<f64>, alpha: f64) -> Result<PullbackCheck> {
    let grid = rec.grid();
    if target.kind() != FieldKind::SymTensor || target.grid().len() != grid.len() {
        return Err(Error::InvalidArgument(
            "target must be a symmetric tensor field on the map grid".into(),
        ));
    }
    let residual = pullback(rec).sub(target);
    let nodes = grid.closed_ball_nodes();
    let max = residual.max_abs_on(&nodes);
    let cell = grid.h().powi(grid.n() as i32);
    let l2 = (cell
        * nodes
            .iter()
            .map(|&p| residual.at(p).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>())
    .sqrt();
    let holder = cm_alpha_norm(&residual, 0, alpha)?.value;
    Ok(PullbackCheck { residual, max, l2, holder })
}

/// Value with the budget it is checked against.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Budgeted {
    pub value: f64,
    pub budget: f64,
    pub ok: bool,
}

impl Budgeted {
    pub fn new(value: f64, budget: f64) -> Self {
        Budgeted {
            value,
            budget,
            ok: value <= budget,
        }
    }
}

/// One stage of a run.
#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageRecord {
    Decomposition {
        metric: String,
        primitives: usize,
        /// Cone split of the constant tensor factor.
        split_error: Budgeted,
        /// `max |Σ a_j⁴(c_j·dx)² − h|` on the grid.
        reconstruction: Budgeted,
    },
    Oscillation {
        primitive: usize,
        epsilon: f64,
        k: usize,
        order: usize,
        partition_delta: f64,
        /// `ε^r max|f|` on the grid.
        residual: f64,
        /// `h²/3 max|∂³F|`.
        fd_error_bound: f64,
        displacement: Budgeted,
        freeness_min: f64,
        u1_identity_max: f64,
        u1_integral_max: f64,
        gram_min: Vec<(String, f64)>,
        retries: usize,
    },
    Perturbation {
        primitive: usize,
        residual_before: f64,
        /// `oscillation` when the solve lowers the residual, `discretization` when the
        /// finite-difference floor of the solve is at least the residual it was given.
        dominant: String,
        residual_after: Budgeted,
        /// Largest value of `f` dropped where the cutoff is below one.
        truncated_max: f64,
        gate: Budgeted,
        e_norm: f64,
        e0f_norm: f64,
        iterations: usize,
        max_ratio: f64,
        bound_ratio: f64,
        u_ratio: f64,
        freeness_min: f64,
        displacement: Budgeted,
    },
    Family {
        window: f64,
        slices: usize,
        halvings: usize,
        residual_max: Budgeted,
        stability_ok: bool,
        warm_cold_max: Budgeted,
    },
}

/// Final checks of an embedding run.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FinalRecord {
    pub pullback_residual_max: f64,
    /// Sum of the stage residual budgets.
    pub pullback_residual_budget: f64,
    pub pullback_norms: PullbackNorms,
    pub displacement_max: f64,
    pub displacement_budget: f64,
    pub freeness_min: f64,
    pub injectivity_min: f64,
    pub injectivity_pair_min: f64,
    pub immersion_min: f64,
    pub lebesgue: f64,
    /// Radius of the ball outside which `F = F₀` must hold.
    pub region_radius: f64,
    /// `max |F − F₀|` outside the region (must be 0).
    pub support_violation_max: f64,
}

/// Report written as `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub config: RunConfig,
    pub versions: BTreeMap<String, String>,
    pub k: Option<usize>,
    pub k0: Option<f64>,
    pub stages: Vec<StageRecord>,
    #[serde(rename = "final")]
    pub final_: Option<FinalRecord>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    /// Seconds per stage; the only nondeterministic entries.
    pub timing: BTreeMap<String, f64>,
}

impl SolveReport {
    pub fn new(config: &RunConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("isoembed".to_string(), env!("CARGO_PKG_VERSION").to_string());
        SolveReport {
            config: config.clone(),
            versions,
            k: None,
            k0: None,
            stages: vec![],
            final_: None,
            warnings: vec![],
            error: None,
            timing: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// JSON with the timing entries removed.
    pub fn without_timing(&self) -> Result<String> {
        let mut r = self.clone();
        r.timing.clear();
        Ok(serde_json::to_string(&r)?)
    }

    pub(crate) fn time<T>(&mut self, key: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = std::time::Instant::now();
        let out = f(self);
        *self.timing.entry(key.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }
}

/// A stage error together with the report gathered up to it.
#[derive(Debug)]
pub struct StageFailure {
    pub error: Error,
    pub report: Box<SolveReport>,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for StageFailure {}

pub(crate) fn grid_for(cfg: &RunConfig) -> Result<std::sync::Arc<BallGrid<f64>>> {
    crate::grid::make_ball_grid::<f64>(cfg.n, cfg.npts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;
    use crate::smooth::PolyMap;

    #[test]
    fn identity_chart_has_zero_residual() {
        let g = make_ball_grid::<f64>(2, 17).unwrap();
        let rec = FreeMapRecord::from_values(Field::from_fn(&g, FieldKind::Vector(2), |x, o| o.copy_from_slice(x)));
        let can = Field::from_fn(&g, FieldKind::SymTensor, |_, o| o.copy_from_slice(&[1.0, 0.0, 1.0]));
        let chk = verify_pullback(&rec, &can, 0.5).unwrap();
        for p in 0..g.len() {
            if crate::fd::is_central_node(&g, p) {
                assert!(chk.residual.at(p).iter().all(|v| v.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn standard_map_pullback_and_self_check() {
        let g = make_ball_grid::<f64>(1, 65).unwrap();
        let exact = FreeMapRecord::from_map(&g, &PolyMap::standard_free(1, 2));
        let target = Field::from_fn(&g, FieldKind::SymTensor, |x, o| o[0] = 1.0 + 4.0 * x[0] * x[0]);
        assert!(verify_pullback(&exact, &target, 0.5).unwrap().max < 1e-13);
        let fd = FreeMapRecord::from_values(exact.values.clone());
        // second differences of x² are exact, first differences carry no error on quadratics
        assert!(verify_pullback(&fd, &target, 0.5).unwrap().max < 1e-10);
        let own = pullback(&fd);
        let c = verify_pullback(&fd, &own, 0.5).unwrap();
        assert_eq!((c.max, c.l2, c.holder), (0.0, 0.0, 0.0));
    }

    #[test]
    fn collar_widths() {
        let (w1, w2) = collars(0.01);
        assert!((w1 - 0.05).abs() < 1e-15 && (w2 - 0.15).abs() < 1e-15);
        let (w1, w2) = collars(0.1);
        assert!((w1 - 0.3).abs() < 1e-15 && (w2 - 0.6).abs() < 1e-15);
    }
}
