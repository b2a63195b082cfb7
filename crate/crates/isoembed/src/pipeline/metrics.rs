//! Builtin target metrics, read relative to the pullback of the base map.

use super::config::MetricSpec;
use crate::decomposition::{cone_decompose, rank_one, AnalyticPrimitive};
use crate::error::{Error, Result};
use crate::field::{Field, FieldKind};
use crate::grid::{sym_pairs, BallGrid};
use crate::jet::Jet;
use crate::smooth::{Bump, JetFn, Plateau};
use serde::Deserialize;
use serde_json::Value;
use std::sync::Arc;

/// `scale · φ^{1/4}` with flat zeros where `φ = 0`.
#[derive(Clone)]
pub struct FourthRoot {
    pub phi: Arc<dyn JetFn>,
    pub scale: f64,
}

impl JetFn for FourthRoot {
    fn n(&self) -> usize {
        self.phi.n()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.scale * self.phi.eval(x).max(0.0).powf(0.25)
    }
    fn jet(&self, x: &[f64], deg: usize) -> Jet {
        let p = self.phi.jet(x, deg);
        if p.value() <= 0.0 {
            return Jet::zero(x.len(), deg);
        }
        p.powf(0.25).scale(self.scale)
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        self.phi.support()
    }
}

/// Target increment `h` with its primitive decomposition `h = Σ a_j⁴ (c_j·dx)²`.
#[derive(Clone)]
pub struct MetricTarget {
    pub name: String,
    pub n: usize,
    /// `h = φ H₀` when the metric has that form.
    pub profile: Option<(Arc<dyn JetFn>, Vec<f64>)>,
    pub primitives: Vec<AnalyticPrimitive>,
    /// Ball containing `supp h`.
    pub support_center: Vec<f64>,
    pub support_radius: f64,
    /// `max |Σ_j γ_j c_jc_jᵀ − H₀|` of the cone split.
    pub split_error: f64,
    /// Time window and slice count for families `ĝ(t) = t h`.
    pub t_max: f64,
    pub slices: usize,
}

impl MetricTarget {
    /// Tensor components of `h` at `x`.
    pub fn tensor(&self, x: &[f64]) -> Vec<f64> {
        match &self.profile {
            Some((phi, h0)) => {
                let p = phi.eval(x);
                h0.iter().map(|v| p * v).collect()
            }
            None => {
                let mut out = vec![0.0; sym_pairs(self.n).len()];
                for prim in &self.primitives {
                    out.iter_mut().zip(prim.tensor(x)).for_each(|(o, v)| *o += v);
                }
                out
            }
        }
    }

    pub fn field(&self, grid: &Arc<BallGrid<f64>>) -> Field<f64> {
        Field::from_fn(grid, FieldKind::SymTensor, |x, out| out.copy_from_slice(&self.tensor(x)))
    }

    /// `Σ_j a_j⁴ (c_j·dx)²` at `x`.
    pub fn primitive_sum(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sym_pairs(self.n).len()];
        for prim in &self.primitives {
            out.iter_mut().zip(prim.tensor(x)).for_each(|(o, v)| *o += v);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.primitives.is_empty()
    }
}

fn cfg_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: format!("metric.params.{key}"),
        msg: msg.into(),
    }
}

fn param<T: serde::de::DeserializeOwned>(params: &Value, key: &str, default: T) -> Result<T> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| cfg_err(key, e.to_string())),
    }
}

fn center(params: &Value, n: usize) -> Result<Vec<f64>> {
    let c: Vec<f64> = param(params, "center", vec![0.0; n])?;
    if c.len() != n {
        return Err(cfg_err("center", format!("expected {n} coordinates")));
    }
    Ok(c)
}

#[derive(Deserialize)]
struct PrimitiveItem {
    amplitude: f64,
    #[serde(default)]
    center: Option<Vec<f64>>,
    #[serde(default)]
    r_in: f64,
    r_out: f64,
    #[serde(default)]
    form: Option<Vec<f64>>,
}

fn plateau_primitive(n: usize, amp: f64, center: Vec<f64>, r_in: f64, r_out: f64, form: Vec<f64>) -> Result<AnalyticPrimitive> {
    if !(0.0 <= r_in && r_in < r_out) {
        return Err(cfg_err("r_out", "need 0 <= r_in < r_out"));
    }
    if form.len() != n || form.iter().all(|&v| v == 0.0) {
        return Err(cfg_err("form", "need a nonzero form of length n"));
    }
    Ok(AnalyticPrimitive {
        a: Arc::new(Plateau::new(center, r_in, r_out).with_amplitude(amp)),
        form,
    })
}

/// Splits a constant positive definite `H₀` into `Σ γ_j c_jc_jᵀ` with `γ_j > 0`.
type ConstantSplit = (Vec<(f64, Vec<f64>)>, f64);

fn split_constant(grid: &Arc<BallGrid<f64>>, h0: &[f64], center: &[f64]) -> Result<ConstantSplit> {
    let field = Field::from_fn(grid, FieldKind::SymTensor, |_, out| out.copy_from_slice(h0));
    let rep = cone_decompose(&field, center, 0.5)?;
    let p = rep.nodes[0];
    let terms: Vec<(f64, Vec<f64>)> = rep.terms.iter().map(|t| (t.coef.get(p, 0), t.form.clone())).collect();
    let mut err: f64 = 0.0;
    let mut sum = vec![0.0; h0.len()];
    for (g, c) in &terms {
        if !(*g > 0.0) {
            return Err(Error::Certification(format!("cone coefficient {g:e} is not positive")));
        }
        sum.iter_mut().zip(rank_one(c)).for_each(|(s, r)| *s += g * r);
    }
    for (s, h) in sum.iter().zip(h0) {
        err = err.max((s - h).abs());
    }
    Ok((terms, err))
}

/// Builds the target increment for a metric spec on the given grid.
pub fn builtin_metric(spec: &MetricSpec, grid: &Arc<BallGrid<f64>>) -> Result<MetricTarget> {
    let n = grid.n();
    let p = &spec.params;
    let np = sym_pairs(n).len();
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    let mut target = MetricTarget {
        name: spec.name.clone(),
        n,
        profile: None,
        primitives: vec![],
        support_center: vec![0.0; n],
        support_radius: 0.0,
        split_error: 0.0,
        t_max: param(p, "t_max", 1.0)?,
        slices: param(p, "slices", 5)?,
    };
    let scaled = |target: &mut MetricTarget, phi: Arc<dyn JetFn>, h0: Vec<f64>, c: Vec<f64>, radius: f64| -> Result<()> {
        let (terms, err) = split_constant(grid, &h0, &c)?;
        target.primitives = terms
            .into_iter()
            .map(|(g, form)| AnalyticPrimitive {
                a: Arc::new(FourthRoot {
                    phi: phi.clone(),
                    scale: g.powf(0.25),
                }),
                form,
            })
            .collect();
        target.profile = Some((phi, h0));
        target.split_error = err;
        target.support_center = c;
        target.support_radius = radius;
        Ok(())
    };
    match spec.name.as_str() {
        "zero" => {}
        "flat_plus_bump" => {
            let c: f64 = param(p, "c", 1e-4)?;
            let cen = center(p, n)?;
            let r_in: f64 = param(p, "r_in", 0.0)?;
            let r_out: f64 = param(p, "r_out", 0.8)?;
            if !(c > 0.0) {
                return Err(cfg_err("c", "must be positive"));
            }
            target
                .primitives
                .push(plateau_primitive(n, c.powf(0.25), cen.clone(), r_in, r_out, e1)?);
            target.support_center = cen;
            target.support_radius = r_out;
        }
        "conformal_ramp" => {
            let c: f64 = param(p, "c", 1e-4)?;
            let cen = center(p, n)?;
            let radius: f64 = param(p, "radius", 0.7)?;
            if !(c > 0.0 && radius > 0.0) {
                return Err(cfg_err("c", "c and radius must be positive"));
            }
            let mut h0 = vec![0.0; np];
            for (k, (i, j)) in sym_pairs(n).into_iter().enumerate() {
                h0[k] = if i == j { 1.0 } else { 0.0 };
            }
            scaled(
                &mut target,
                Arc::new(Bump::new(cen.clone(), radius).with_amplitude(c)),
                h0,
                cen,
                radius,
            )?;
        }
        "anisotropic" => {
            if n < 2 {
                return Err(Error::Config {
                    key: "metric.name".into(),
                    msg: "anisotropic needs n >= 2".into(),
                });
            }
            let c1: f64 = param(p, "c1", 1e-4)?;
            let c2: f64 = param(p, "c2", 2e-4)?;
            let cen = center(p, n)?;
            let radius: f64 = param(p, "radius", 0.7)?;
            if !(c1 > 0.0 && c2 > 0.0) {
                return Err(cfg_err("c1", "c1 and c2 must be positive"));
            }
            let mut h0 = vec![0.0; np];
            for (k, (i, j)) in sym_pairs(n).into_iter().enumerate() {
                if i == j {
                    h0[k] = if i == 0 { c1 } else { c2 };
                }
            }
            scaled(&mut target, Arc::new(Bump::new(cen.clone(), radius)), h0, cen, radius)?;
        }
        "primitives" => {
            let items: Vec<PrimitiveItem> = param(p, "items", vec![])?;
            for it in items {
                let cen = it.center.unwrap_or(vec![0.0; n]);
                if cen.len() != n {
                    return Err(cfg_err("items.center", format!("expected {n} coordinates")));
                }
                let reach = cen.iter().map(|v| v * v).sum::<f64>().sqrt() + it.r_out;
                target.support_radius = target.support_radius.max(reach);
                target.primitives.push(plateau_primitive(
                    n,
                    it.amplitude,
                    cen,
                    it.r_in,
                    it.r_out,
                    it.form.unwrap_or(e1.clone()),
                )?);
            }
        }
        other => {
            return Err(Error::Config {
                key: "metric.name".into(),
                msg: format!("unknown metric `{other}`"),
            })
        }
    }
    Ok(target)
}
