//! Normal frames `e₁ … e_{n+5}` and the unit fields `u, v` built from a periodic immersion.

use super::immersion::{periodic_immersion, PeriodicImmersion};
use crate::error::{invalid, Error, Result};
use crate::field::{Field, FieldKind};
use crate::free_maps::{jet_complement, jet_dim};
use crate::grid::BallGrid;
use crate::jet::{jdot, jvscale, jvsub, Jet, JetVec};
use crate::linalg::gram_det;
use crate::smooth::JetMap;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Lower bound for normalized Gram determinants in the frame certificates.
pub const FRAME_GRAM_FLOOR: f64 = 1e-8;
/// Values of `s` in the independence certificate.
pub const S_LATTICE: [f64; 11] = [0.0, 0.25, -0.25, 1.0, -1.0, 4.0, -4.0, 16.0, -16.0, 64.0, -64.0];
const ANGLES: usize = 8;

/// Jets of the frame at one point (over `n` variables).
#[derive(Clone, Debug)]
pub struct FrameJets {
    pub e: Vec<JetVec>,
    pub u: JetVec,
    pub v: JetVec,
}

/// Certified margins of a frame construction.
#[derive(Clone, Debug, Serialize)]
pub struct FrameCertificate {
    /// Minimum normalized Gram determinant of `e₁ … e_{n+5}`.
    pub frame_gram_min: f64,
    /// Minimum normalized Gram determinant of `u, v, e_i + sP(a∂_iu + b∂_iv)`.
    pub family_gram_min: f64,
    pub s_range: (f64, f64),
    pub max_orthonormality_error: f64,
}

/// Frame fields with their analytic evaluator.
#[derive(Clone)]
pub struct FrameFields {
    pub n: usize,
    pub q: usize,
    pub eps_frame: f64,
    pub f0: Arc<dyn JetMap>,
    /// Fixed vectors whose projections give the complement fields.
    pub reference: Vec<Vec<f64>>,
    pub immersion: PeriodicImmersion,
    pub certificate: FrameCertificate,
    pub e: Vec<Field<f64>>,
    pub u: Field<f64>,
    pub v: Field<f64>,
}

fn jnorm_inv(v: &[Jet]) -> Jet {
    jdot(v, v).powf(-0.5)
}

/// Appends the normalized component of `w` orthogonal to `basis`.
fn gs_push(basis: &mut Vec<JetVec>, w: &[Jet]) {
    let mut r: JetVec = w.to_vec();
    for _ in 0..2 {
        for b in basis.iter() {
            let c = jdot(&r, b);
            r = jvsub(&r, &jvscale(&c, b));
        }
    }
    let s = jnorm_inv(&r);
    basis.push(jvscale(&s, &r));
}

fn project_out(w: &[Jet], basis: &[JetVec]) -> JetVec {
    let mut r: JetVec = w.to_vec();
    for b in basis {
        let c = jdot(w, b);
        r = jvsub(&r, &jvscale(&c, b));
    }
    r
}

/// Multiplies degree-`j` coefficients by `s^j`.
fn scale_degrees(j: &Jet, s: f64) -> Jet {
    let mut out = j.clone();
    let sp = j.space();
    for (k, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c *= s.powi(sp.degree_of(k) as i32);
    }
    out
}

impl FrameFields {
    /// Frame jets at `x` of degree `deg` (uses the base map at degree `deg + 2`).
    pub fn jets(&self, x: &[f64], deg: usize) -> FrameJets {
        frame_jets(self.f0.as_ref(), &self.reference, &self.immersion, self.eps_frame, x, deg)
    }
}

fn frame_jets(f0: &dyn JetMap, reference: &[Vec<f64>], imm: &PeriodicImmersion, eps: f64, x: &[f64], deg: usize) -> FrameJets {
    let n = x.len();
    let q = f0.q();
    let f = f0.jet(x, deg + 2);
    let d1: Vec<JetVec> = (0..n).map(|i| f.iter().map(|c| c.deriv(i).truncate(deg)).collect()).collect();
    let d2 = |i: usize, j: usize| -> JetVec { f.iter().map(|c| c.deriv(i).deriv(j)).collect() };
    let mut bl: Vec<JetVec> = Vec::new();
    for w in &d1 {
        gs_push(&mut bl, w);
    }
    for i in 1..n {
        for j in i..n {
            gs_push(&mut bl, &d2(i, j));
        }
    }
    let mut bj = bl.clone();
    for j in 0..n {
        gs_push(&mut bj, &d2(0, j));
    }
    let mut comp: Vec<JetVec> = Vec::new();
    for r in reference {
        let rj: JetVec = r.iter().map(|&c| Jet::constant(n, deg, c)).collect();
        let mut all = bj.clone();
        all.extend(comp.iter().cloned());
        gs_push(&mut all, &rj);
        comp.push(all.pop().unwrap());
    }
    let mut e: Vec<JetVec> = Vec::with_capacity(n + 5);
    e.push(jvscale(&Jet::constant(n, deg, 0.5), &project_out(&d2(0, 0), &bl)));
    for i in 1..n {
        e.push(project_out(&d2(0, i), &bl));
    }
    e.extend(comp);
    let y: Vec<f64> = x.iter().map(|v| v / (eps * eps)).collect();
    let fy: Vec<Jet> = imm
        .jet(&y, deg)
        .iter()
        .map(|c| scale_degrees(c, 1.0 / (eps * eps)).scale(eps))
        .collect();
    let mut u = e[n + 3].clone();
    let mut v = e[n + 4].clone();
    for l in 0..=n {
        u = u.iter().zip(&e[l + 1]).map(|(a, b)| a.add(&fy[l].mul(b))).collect();
        v = v.iter().zip(&e[l + 2]).map(|(a, b)| a.add(&fy[l].mul(b))).collect();
    }
    let uh = jvscale(&jnorm_inv(&u), &u);
    let c = jdot(&v, &uh);
    let vr = jvsub(&v, &jvscale(&c, &uh));
    let vh = jvscale(&jnorm_inv(&vr), &vr);
    debug_assert_eq!(uh.len(), q);
    FrameJets { e, u: uh, v: vh }
}

fn normalized_gram(vs: &[Vec<f64>]) -> f64 {
    let nv: Vec<Vec<f64>> = vs
        .iter()
        .map(|v| {
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / s).collect()
        })
        .collect();
    gram_det(&nv).unwrap_or(0.0)
}

fn values(j: &[Jet]) -> Vec<f64> {
    j.iter().map(|c| c.value()).collect()
}

fn partial1(j: &[Jet], i: usize) -> Vec<f64> {
    j.iter().map(|c| c.deriv(i).value()).collect()
}

/// Builds and certifies the frame on the grid nodes of the closed ball.
///
/// The complement directions are fixed from the jet span at `reference_point`.
pub fn build_frames(f0: Arc<dyn JetMap>, grid: &Arc<BallGrid<f64>>, eps_frame: f64, reference_point: &[f64]) -> Result<FrameFields> {
    let n = f0.n();
    let q = f0.q();
    if q < jet_dim(n) + 5 {
        return invalid(format!("target dimension {q} below n(n+3)/2 + 5 = {}", jet_dim(n) + 5));
    }
    if !(eps_frame > 0.0 && eps_frame <= 1.0) {
        return invalid("eps_frame must lie in (0, 1]");
    }
    let immersion = periodic_immersion(n)?;
    let fr = f0.jet(reference_point, 2);
    let mut jv: Vec<Vec<f64>> = (0..n).map(|i| fr.iter().map(|c| c.deriv(i).value()).collect()).collect();
    for (i, j) in crate::grid::sym_pairs(n) {
        jv.push(fr.iter().map(|c| c.deriv(i).deriv(j).value()).collect());
    }
    let reference = jet_complement(&jv, 5)?;
    let nodes = grid.len();
    struct NodeOut {
        e: Vec<Vec<f64>>,
        u: Vec<f64>,
        v: Vec<f64>,
        frame_gram: f64,
        family_gram: f64,
        ortho: f64,
    }
    let per: Vec<NodeOut> = (0..nodes)
        .into_par_iter()
        .map(|p| {
            let x = grid.coord_f64(p);
            let fj = frame_jets(f0.as_ref(), &reference, &immersion, eps_frame, &x, 1);
            let e: Vec<Vec<f64>> = fj.e.iter().map(|v| values(v)).collect();
            let u = values(&fj.u);
            let v = values(&fj.v);
            let frame_gram = normalized_gram(&e);
            // projection onto the complement of the tangent/transverse span
            let f = f0.jet(&x, 2);
            let mut span: Vec<Vec<f64>> = (0..n).map(|i| f.iter().map(|c| c.deriv(i).value()).collect()).collect();
            for i in 1..n {
                for j in i..n {
                    span.push(f.iter().map(|c| c.deriv(i).deriv(j).value()).collect());
                }
            }
            let basis = crate::linalg::orthonormalize(&span).unwrap_or_default();
            let proj = |w: &[f64]| -> Vec<f64> {
                let mut r = w.to_vec();
                for b in &basis {
                    let c: f64 = w.iter().zip(b).map(|(a, b)| a * b).sum();
                    r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
                r
            };
            let du: Vec<Vec<f64>> = (0..n).map(|i| partial1(&fj.u, i)).collect();
            let dv: Vec<Vec<f64>> = (0..n).map(|i| partial1(&fj.v, i)).collect();
            let mut family_gram = f64::INFINITY;
            for &s in &S_LATTICE {
                for k in 0..ANGLES {
                    let th = std::f64::consts::PI * 2.0 * k as f64 / ANGLES as f64;
                    let (b, a) = th.sin_cos();
                    let mut vs = vec![u.clone(), v.clone()];
                    for i in 0..n {
                        let w: Vec<f64> = du[i].iter().zip(&dv[i]).map(|(x, y)| a * x + b * y).collect();
                        let pw = proj(&w);
                        vs.push(e[i].iter().zip(&pw).map(|(x, y)| x + s * y).collect());
                    }
                    family_gram = family_gram.min(normalized_gram(&vs));
                }
            }
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let ortho = (dot(&u, &u) - 1.0).abs().max((dot(&v, &v) - 1.0).abs()).max(dot(&u, &v).abs());
            NodeOut {
                e,
                u,
                v,
                frame_gram,
                family_gram,
                ortho,
            }
        })
        .collect();
    let mut certificate = FrameCertificate {
        frame_gram_min: f64::INFINITY,
        family_gram_min: f64::INFINITY,
        s_range: (
            S_LATTICE.iter().cloned().fold(f64::INFINITY, f64::min),
            S_LATTICE.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
        max_orthonormality_error: 0.0,
    };
    let mut e_fields: Vec<Field<f64>> = (0..n + 5).map(|_| Field::zeros(grid, FieldKind::Vector(q))).collect();
    let mut u_field = Field::zeros(grid, FieldKind::Vector(q));
    let mut v_field = Field::zeros(grid, FieldKind::Vector(q));
    for (p, o) in per.into_iter().enumerate() {
        if o.frame_gram < certificate.frame_gram_min {
            certificate.frame_gram_min = o.frame_gram;
        }
        if o.family_gram < certificate.family_gram_min {
            certificate.family_gram_min = o.family_gram;
            if !(o.family_gram >= FRAME_GRAM_FLOOR) {
                return Err(Error::Certification(format!(
                    "frame family degenerate at {:?} (gram {:.3e}); try a smaller eps_frame than {eps_frame}",
                    grid.coord_f64(p),
                    o.family_gram
                )));
            }
        }
        certificate.max_orthonormality_error = certificate.max_orthonormality_error.max(o.ortho);
        for (f, v) in e_fields.iter_mut().zip(&o.e) {
            f.at_mut(p).copy_from_slice(v);
        }
        u_field.at_mut(p).copy_from_slice(&o.u);
        v_field.at_mut(p).copy_from_slice(&o.v);
    }
    if !(certificate.frame_gram_min >= FRAME_GRAM_FLOOR) {
        return Err(Error::Certification(format!(
            "frame vectors degenerate (gram {:.3e})",
            certificate.frame_gram_min
        )));
    }
    Ok(FrameFields {
        n,
        q,
        eps_frame,
        f0,
        reference,
        immersion,
        certificate,
        e: e_fields,
        u: u_field,
        v: v_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;
    use crate::smooth::PolyMap;

    fn flagship_map() -> Arc<dyn JetMap> {
        Arc::new(PolyMap::standard_free(1, 7))
    }

    #[test]
    fn frame_is_orthonormal_and_certified() {
        let g = make_ball_grid::<f64>(1, 33).unwrap();
        let fr = build_frames(flagship_map(), &g, 1.0, &[0.0]).unwrap();
        assert!(fr.certificate.max_orthonormality_error < 1e-12);
        assert!(fr.certificate.family_gram_min > FRAME_GRAM_FLOOR);
        for p in 0..g.len() {
            let x = g.coord_f64(p);
            let f = fr.f0.jet(&x, 2);
            let d1: Vec<f64> = f.iter().map(|c| c.deriv(0).value()).collect();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            assert!(dot(&d1, fr.u.at(p)).abs() < 1e-12 && dot(&d1, fr.v.at(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_hessian_frame_oscillates_with_frame_scale() {
        // standard map in one variable has a constant Hessian direction
        let g = make_ball_grid::<f64>(1, 9).unwrap();
        let eps = 0.5;
        let fr = build_frames(flagship_map(), &g, eps, &[0.0]).unwrap();
        let x = [0.3];
        let j = fr.jets(&x, 0);
        let e: Vec<Vec<f64>> = j.e.iter().map(|v| values(v)).collect();
        let y = 0.3 / (eps * eps);
        let raw: Vec<f64> = (0..7)
            .map(|c| eps * y.cos() * e[1][c] + eps * y.sin() * e[2][c] + e[4][c])
            .collect();
        let s = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..7 {
            assert!((j.u[c].value() - raw[c] / s).abs() < 1e-12);
        }
    }
}
