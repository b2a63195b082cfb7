use crate::error::{invalid, Error, Result};
use crate::field::{Field, FieldKind};
use crate::grid::BallGrid;
use crate::holder::{cm_alpha_norm_with, HolderOptions};
use crate::real::Real;
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

const NONE: usize = usize::MAX;
/// Largest nodes-per-axis handled by the banded direct factorization.
pub const DIRECT_MAX_N: usize = 257;

/// Banded LU factors (no pivoting: the Shortley-Weller matrix is an M-matrix).
#[derive(Clone, Debug)]
struct BandLu<T> {
    n: usize,
    bw: usize,
    /// Row `i` stores columns `i - bw ..= i + bw`.
    a: Vec<T>,
}

impl<T: Real> BandLu<T> {
    fn factor(rows: &[Vec<(usize, T)>], bw: usize) -> Result<Self> {
        let n = rows.len();
        let w = 2 * bw + 1;
        let mut a = vec![T::zero(); n * w];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                a[i * w + (j + bw - i)] = v;
            }
        }
        for k in 0..n {
            let piv = a[k * w + bw];
            if piv == T::zero() || !piv.is_finite() {
                return Err(Error::Singular);
            }
            for i in k + 1..(k + bw + 1).min(n) {
                let lik_pos = i * w + (k + bw - i);
                let l = a[lik_pos] / piv;
                if l == T::zero() {
                    continue;
                }
                a[lik_pos] = l;
                for j in k + 1..(k + bw + 1).min(n) {
                    let ukj = a[k * w + (j + bw - k)];
                    if ukj != T::zero() {
                        a[i * w + (j + bw - i)] -= l * ukj;
                    }
                }
            }
        }
        Ok(BandLu { n, bw, a })
    }

    fn solve(&self, b: &mut [T]) {
        let (n, bw, w) = (self.n, self.bw, 2 * self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.a[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + bw + 1).min(n) {
                s -= self.a[i * w + (j + bw - i)] * b[j];
            }
            b[i] = s / self.a[i * w + bw];
        }
    }
}

/// Discrete Dirichlet Laplacian on the open unit ball with zero boundary values.
///
/// Unknowns are the interior nodes; arms that cross the unit sphere are shortened to
/// the crossing point (Shortley-Weller), where the value 0 is imposed.
#[derive(Clone, Debug)]
pub struct DirichletOperator<T: Real> {
    grid: Arc<BallGrid<T>>,
    unknowns: Vec<usize>,
    rows: Vec<Vec<(usize, T)>>,
    factor: Option<BandLu<T>>,
    /// Relative residual target of the iterative fallback.
    pub tol: T,
}

/// Algebraic residual and iteration count of one solve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveStats {
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Fraction `θ ∈ (0, 1]` of a step from `x` along `±e_axis` at which `|x| = 1`.
fn crossing<T: Real>(x: &[T], axis: usize, dir: T) -> T {
    // |x + s·dir·e|² = 1  →  s² + 2 s dir x_a + |x|² - 1 = 0, positive root
    let r2: T = x.iter().map(|&v| v * v).sum();
    let b = dir * x[axis];
    let disc = (b * b - (r2 - T::one())).max(T::zero());
    -b + disc.sqrt()
}

/// Assembles the Shortley-Weller Laplacian and factors it when `N <= 257`.
pub fn assemble<T: Real>(grid: &Arc<BallGrid<T>>) -> Result<DirichletOperator<T>> {
    let unknowns: Vec<usize> = (0..grid.len()).filter(|&p| grid.is_interior(p)).collect();
    if unknowns.is_empty() {
        return invalid("grid has no interior node");
    }
    let mut uidx = vec![NONE; grid.len()];
    for (k, &p) in unknowns.iter().enumerate() {
        uidx[p] = k;
    }
    let h = grid.h();
    let two = T::lit(2.0);
    let mut rows = Vec::with_capacity(unknowns.len());
    let mut bw = 0usize;
    for (k, &p) in unknowns.iter().enumerate() {
        let x = grid.coord(p);
        let mut row: Vec<(usize, T)> = Vec::with_capacity(2 * grid.n() + 1);
        let mut diag = T::zero();
        for axis in 0..grid.n() {
            let arm = |dir: isize| -> (T, Option<usize>) {
                match grid.neighbor(p, axis, dir).filter(|&q| uidx[q] != NONE) {
                    Some(q) => (h, Some(uidx[q])),
                    None => {
                        let s = crossing(x, axis, T::lit(dir as f64)).min(h).max(h * T::lit(1e-6));
                        (s, None)
                    }
                }
            };
            let (hl, ql) = arm(-1);
            let (hr, qr) = arm(1);
            let sum = hl + hr;
            if let Some(j) = ql {
                row.push((j, two / (hl * sum)));
                bw = bw.max(k.abs_diff(j));
            }
            if let Some(j) = qr {
                row.push((j, two / (hr * sum)));
                bw = bw.max(k.abs_diff(j));
            }
            diag -= two / (hl * hr);
        }
        row.push((k, diag));
        row.sort_by_key(|&(j, _)| j);
        rows.push(row);
    }
    let factor = if grid.npts() <= DIRECT_MAX_N {
        Some(BandLu::factor(&rows, bw)?)
    } else {
        None
    };
    Ok(DirichletOperator {
        grid: grid.clone(),
        unknowns,
        rows,
        factor,
        tol: T::lit(1e-12),
    })
}

impl<T: Real> DirichletOperator<T> {
    pub fn grid(&self) -> &Arc<BallGrid<T>> {
        &self.grid
    }
    /// Number of unknowns (interior nodes).
    pub fn size(&self) -> usize {
        self.unknowns.len()
    }
    /// Matrix rows as `(unknown, coefficient)` lists.
    pub fn rows(&self) -> &[Vec<(usize, T)>] {
        &self.rows
    }
    /// True when the operator uses the direct factorization.
    pub fn is_direct(&self) -> bool {
        self.factor.is_some()
    }

    fn matvec(&self, x: &[T]) -> Vec<T> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    /// Discrete Laplacian of a scalar field (interior values only; zero elsewhere).
    pub fn apply_scalar(&self, u: &[T]) -> Vec<T> {
        let x: Vec<T> = self.unknowns.iter().map(|&p| u[p]).collect();
        let y = self.matvec(&x);
        let mut out = vec![T::zero(); self.grid.len()];
        for (k, &p) in self.unknowns.iter().enumerate() {
            out[p] = y[k];
        }
        out
    }

    /// Discrete Laplacian applied componentwise.
    pub fn apply(&self, u: &Field<T>) -> Field<T> {
        self.componentwise(u, |c| Ok(self.apply_scalar(c))).expect("apply is infallible")
    }

    fn componentwise(&self, u: &Field<T>, mut f: impl FnMut(&[T]) -> Result<Vec<T>>) -> Result<Field<T>> {
        let nc = u.ncomp();
        let mut data = vec![T::zero(); u.data().len()];
        for c in 0..nc {
            let comp: Vec<T> = (0..self.grid.len()).map(|p| u.get(p, c)).collect();
            let r = f(&comp)?;
            for p in 0..self.grid.len() {
                data[p * nc + c] = r[p];
            }
        }
        Field::from_data(&self.grid, u.kind(), data)
    }

    /// Solves `Δu = f` for node-major scalar data; nodes outside the open ball get 0.
    pub fn solve_scalar(&self, f: &[T]) -> Result<(Vec<T>, SolveStats)> {
        let b: Vec<T> = self.unknowns.iter().map(|&p| f[p]).collect();
        let bnorm = b.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let mut out = vec![T::zero(); self.grid.len()];
        if bnorm == T::zero() {
            return Ok((
                out,
                SolveStats {
                    relative_residual: 0.0,
                    iterations: 0,
                },
            ));
        }
        let (x, iterations) = match &self.factor {
            Some(lu) => {
                let mut x = b.clone();
                lu.solve(&mut x);
                // one refinement pass
                let r: Vec<T> = self.matvec(&x).iter().zip(&b).map(|(&ax, &bi)| bi - ax).collect();
                let mut dx = r;
                lu.solve(&mut dx);
                x.iter_mut().zip(&dx).for_each(|(a, &d)| *a += d);
                (x, 1)
            }
            None => self.bicgstab(&b)?,
        };
        let res = self
            .matvec(&x)
            .iter()
            .zip(&b)
            .fold(T::zero(), |m, (&ax, &bi)| m.max((ax - bi).abs()));
        let scale = self
            .rows
            .iter()
            .zip(&x)
            .fold(T::zero(), |m, (r, _)| m.max(r.iter().map(|&(_, v)| v.abs()).sum::<T>()));
        let xnorm = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let rel = res / (bnorm + scale * xnorm);
        for (k, &p) in self.unknowns.iter().enumerate() {
            out[p] = x[k];
        }
        Ok((
            out,
            SolveStats {
                relative_residual: rel.f64(),
                iterations,
            },
        ))
    }

    fn bicgstab(&self, b: &[T]) -> Result<(Vec<T>, usize)> {
        let n = b.len();
        let dinv: Vec<T> = self
            .rows
            .iter()
            .enumerate()
            .map(|(k, r)| T::one() / r.iter().find(|&&(j, _)| j == k).unwrap().1)
            .collect();
        let prec = |v: &[T]| -> Vec<T> { v.iter().zip(&dinv).map(|(&a, &d)| a * d).collect() };
        let dot = |a: &[T], c: &[T]| -> T { a.iter().zip(c).map(|(&x, &y)| x * y).sum() };
        let bn = dot(b, b).sqrt();
        let mut x = vec![T::zero(); n];
        let mut r = b.to_vec();
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (T::one(), T::one(), T::one());
        let mut v = vec![T::zero(); n];
        let mut p = vec![T::zero(); n];
        let mut history = Vec::new();
        for it in 1..=20 * n.max(100) {
            let rho_new = dot(&r0, &r);
            if rho_new == T::zero() {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            let ph = prec(&p);
            v = self.matvec(&ph);
            alpha = rho / dot(&r0, &v);
            let s: Vec<T> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
            let sh = prec(&s);
            let t = self.matvec(&sh);
            omega = dot(&t, &s) / dot(&t, &t);
            for i in 0..n {
                x[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s[i] - omega * t[i];
            }
            let rn = dot(&r, &r).sqrt() / bn;
            history.push(rn.f64());
            if rn < self.tol {
                return Ok((x, it));
            }
            if !rn.is_finite() || omega == T::zero() {
                break;
            }
        }
        let tail: Vec<String> = history.iter().rev().take(5).map(|v| format!("{v:.3e}")).collect();
        Err(Error::NoConvergence(format!(
            "BiCGSTAB stalled; last residuals {}",
            tail.join(", ")
        )))
    }
}

/// Solves `Δu = f` with `u = 0` on the unit sphere, componentwise for vector fields.
pub fn dirichlet_solve<T: Real>(op: &DirichletOperator<T>, f: &Field<T>) -> Result<Field<T>> {
    op.componentwise(f, |c| op.solve_scalar(c).map(|(u, _)| u))
}

/// [`dirichlet_solve`] that also returns the worst relative residual.
pub fn dirichlet_solve_stats<T: Real>(op: &DirichletOperator<T>, f: &Field<T>) -> Result<(Field<T>, SolveStats)> {
    let mut worst = SolveStats {
        relative_residual: 0.0,
        iterations: 0,
    };
    let u = op.componentwise(f, |c| {
        let (u, s) = op.solve_scalar(c)?;
        worst.relative_residual = worst.relative_residual.max(s.relative_residual);
        worst.iterations = worst.iterations.max(s.iterations);
        Ok(u)
    })?;
    Ok((u, worst))
}

/// One rung of a refinement ladder.
#[derive(Clone, Debug, Serialize)]
pub struct LadderRow {
    #[serde(rename = "N")]
    pub npts: usize,
    pub max_error: f64,
    /// `log2(e_prev / e)`; absent on the first rung.
    pub order: Option<f64>,
    /// `|u|_{C^{2,α}} / |f|_{C^{0,α}}`.
    pub norm_ratio: f64,
    /// `|u|_{C^{2,α}} / ‖f‖_{C^0}`, the lower-order part of the interior split.
    pub sup_ratio: f64,
}

/// Convergence-order report of [`regularity_diagnostic`].
#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub rows: Vec<LadderRow>,
    /// Order between the last two rungs.
    pub order: f64,
    /// Order fitted by least squares over all rungs.
    pub fitted_order: f64,
    pub monotone: bool,
    /// Largest relative spread of `norm_ratio` across the ladder.
    pub ratio_spread: f64,
    /// True when the error is measured against `exact`, false when against the finest rung.
    pub exact_reference: bool,
}

impl OrderReport {
    /// Writes the ladder as CSV (`N,max_error,order,norm_ratio`).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["N", "max_error", "order", "norm_ratio"])?;
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:?}")).unwrap_or_default();
            w.write_record([
                r.npts.to_string(),
                format!("{:?}", r.max_error),
                order,
                format!("{:?}", r.norm_ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pointwise scalar function of the coordinates.
pub type ScalarFn<'a> = dyn Fn(&[f64]) -> f64 + 'a;

/// Solves `Δu = f` on a ladder of grids and reports the empirical convergence order.
///
/// Errors are measured on nodes of the closed ball against `exact` when given,
/// otherwise against the finest rung at shared nodes.
pub fn regularity_diagnostic<T: Real>(
    n: usize,
    ladder: &[usize],
    f: &ScalarFn<'_>,
    exact: Option<&ScalarFn<'_>>,
    alpha: T,
    hopts: HolderOptions,
) -> Result<OrderReport> {
    if ladder.len() < 2 {
        return invalid("ladder needs at least two grids");
    }
    let mut sols = Vec::new();
    for &npts in ladder {
        let g = crate::grid::make_ball_grid::<T>(n, npts)?;
        let op = assemble(&g)?;
        let fd = Field::scalar_fn(&g, |x| T::lit(f(&x.iter().map(|v| v.f64()).collect::<Vec<_>>())));
        let u = dirichlet_solve(&op, &fd)?;
        let un = cm_alpha_norm_with(&u, 2, alpha, hopts)?.value.f64();
        let fnm = cm_alpha_norm_with(&fd, 0, alpha, hopts)?.value.f64();
        let fsup = fd.max_abs().f64();
        sols.push((g, u, un / fnm, un / fsup));
    }
    let finest = sols.last().unwrap();
    let err = |g: &Arc<BallGrid<T>>, u: &Field<T>| -> Result<f64> {
        let mut e = 0.0f64;
        for p in g.closed_ball_nodes() {
            let x = g.coord_f64(p);
            let r = match exact {
                Some(ex) => ex(&x),
                None => {
                    let fg = &finest.0;
                    let step = (fg.npts() - 1) / (g.npts() - 1);
                    if step * (g.npts() - 1) != fg.npts() - 1 {
                        return invalid("ladder grids must nest");
                    }
                    let m: Vec<isize> = g.multi_index(p).iter().map(|&k| (k * step) as isize).collect();
                    let q = fg.node_at(&m).ok_or_else(|| Error::InvalidArgument("nested node missing".into()))?;
                    finest.1.get(q, 0).f64()
                }
            };
            e = e.max((u.get(p, 0).f64() - r).abs());
        }
        Ok(e)
    };
    let measured = if exact.is_some() { sols.len() } else { sols.len() - 1 };
    let mut rows: Vec<LadderRow> = Vec::new();
    for (k, (g, u, ratio, sratio)) in sols.iter().enumerate().take(measured) {
        let e = err(g, u)?;
        let order = rows
            .last()
            .map(|prev: &LadderRow| (prev.max_error / e).log2() / ((g.npts() - 1) as f64 / (prev.npts - 1) as f64).log2());
        rows.push(LadderRow {
            npts: ladder[k],
            max_error: e,
            order,
            norm_ratio: *ratio,
            sup_ratio: *sratio,
        });
    }
    if exact.is_none() {
        let (_, _, ratio, sratio) = finest;
        rows.push(LadderRow {
            npts: *ladder.last().unwrap(),
            max_error: 0.0,
            order: None,
            norm_ratio: *ratio,
            sup_ratio: *sratio,
        });
    }
    let measured_rows = &rows[..measured];
    let order = measured_rows.last().and_then(|r| r.order).unwrap_or(f64::NAN);
    let (xs, ys): (Vec<f64>, Vec<f64>) = measured_rows
        .iter()
        .map(|r| ((2.0 / (r.npts - 1) as f64).ln(), r.max_error.ln()))
        .unzip();
    let fitted_order = if xs.len() >= 2 {
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let monotone = measured_rows.windows(2).all(|w| w[1].max_error <= w[0].max_error);
    let rmax = rows.iter().map(|r| r.norm_ratio).fold(f64::MIN, f64::max);
    let rmin = rows.iter().map(|r| r.norm_ratio).fold(f64::MAX, f64::min);
    Ok(OrderReport {
        rows,
        order,
        fitted_order,
        monotone,
        ratio_spread: (rmax - rmin) / rmin,
        exact_reference: exact.is_some(),
    })
}

/// Scalar field helper for Poisson right-hand sides.
pub fn scalar_field<T: Real>(grid: &Arc<BallGrid<T>>, f: impl Fn(&[f64]) -> f64) -> Field<T> {
    Field::from_fn(grid, FieldKind::Scalar, |x, o| {
        o[0] = T::lit(f(&x.iter().map(|v| v.f64()).collect::<Vec<_>>()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;

    #[test]
    fn one_dimensional_tridiagonal() {
        let g = make_ball_grid::<f64>(1, 5).unwrap();
        let op = assemble(&g).unwrap();
        assert_eq!(op.size(), 3);
        let h2 = 0.25;
        assert_eq!(op.rows()[1], vec![(0, 1.0 / h2), (1, -2.0 / h2), (2, 1.0 / h2)]);
    }

    #[test]
    fn one_dimensional_quadratic_exact() {
        let g = make_ball_grid::<f64>(1, 33).unwrap();
        let op = assemble(&g).unwrap();
        let u = dirichlet_solve(&op, &Field::scalar_fn(&g, |_| 2.0)).unwrap();
        for p in g.closed_ball_nodes() {
            let x = g.coord(p)[0];
            assert!((u.get(p, 0) - (x * x - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn two_dimensional_analytic() {
        let g = make_ball_grid::<f64>(2, 65).unwrap();
        let op = assemble(&g).unwrap();
        let h2 = g.h() * g.h();
        let u = dirichlet_solve(&op, &Field::scalar_fn(&g, |_| 4.0)).unwrap();
        let e = g
            .closed_ball_nodes()
            .into_iter()
            .map(|p| (u.get(p, 0) - (g.radius2(p) - 1.0)).abs())
            .fold(0.0, f64::max);
        assert!(e <= 5.0 * h2, "err {e}");
        let u = dirichlet_solve(&op, &Field::scalar_fn(&g, |x| x[0] * x[0] + x[1] * x[1])).unwrap();
        let e = g
            .closed_ball_nodes()
            .into_iter()
            .map(|p| (u.get(p, 0) - (g.radius2(p).powi(2) - 1.0) / 16.0).abs())
            .fold(0.0, f64::max);
        assert!(e <= 5.0 * h2, "err {e}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = make_ball_grid::<f64>(2, 17).unwrap();
        let op = assemble(&g).unwrap();
        let u = dirichlet_solve(&op, &Field::zeros(&g, FieldKind::Scalar)).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_then_solve_roundtrip() {
        let g = make_ball_grid::<f64>(2, 33).unwrap();
        let op = assemble(&g).unwrap();
        let u = Field::scalar_fn(&g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < 0.5 {
                (-1.0 / (1.0 - r2 / 0.5)).exp() * (1.0 + x[0])
            } else {
                0.0
            }
        });
        let back = dirichlet_solve(&op, &op.apply(&u)).unwrap();
        assert!(back.sub(&u).max_abs() < 1e-12);
    }

    #[test]
    fn iterative_fallback_agrees() {
        let g = make_ball_grid::<f64>(2, 33).unwrap();
        let mut op = assemble(&g).unwrap();
        let f = Field::scalar_fn(&g, |x| (3.0 * x[0]).sin() + x[1]);
        let direct = dirichlet_solve(&op, &f).unwrap();
        op.factor = None;
        let (iter, stats) = dirichlet_solve_stats(&op, &f).unwrap();
        assert!(stats.iterations > 1);
        assert!(direct.sub(&iter).max_abs() < 1e-9);
    }

    #[test]
    fn f32_solve() {
        let g = make_ball_grid::<f32>(1, 17).unwrap();
        let op = assemble(&g).unwrap();
        let u = dirichlet_solve(&op, &Field::scalar_fn(&g, |_| 2.0f32)).unwrap();
        let c = (0..g.len()).find(|&p| g.coord(p)[0] == 0.0).unwrap();
        assert!((u.get(c, 0) + 1.0).abs() < 1e-5);
    }
}
