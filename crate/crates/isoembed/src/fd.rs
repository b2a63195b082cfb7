use crate::field::{Field, FieldKind};
use crate::grid::{sym_pairs, BallGrid};
use crate::real::Real;
use std::sync::Arc;

/// First and second derivatives of a field at every active node.
///
/// `d1` is laid out as `[node][i][comp]`, `d2` as `[node][pair][comp]` with pairs `i <= j`.
#[derive(Clone, Debug)]
pub struct Jet2<T: Real> {
    pub n: usize,
    pub ncomp: usize,
    pub d1: Vec<T>,
    pub d2: Vec<T>,
}

impl<T: Real> Jet2<T> {
    /// Zero jet for `nodes` nodes.
    pub fn zeros(n: usize, ncomp: usize, nodes: usize) -> Self {
        let np = n * (n + 1) / 2;
        Jet2 {
            n,
            ncomp,
            d1: vec![T::zero(); nodes * n * ncomp],
            d2: vec![T::zero(); nodes * np * ncomp],
        }
    }
    /// `∂_i u` at a node.
    pub fn d1_at(&self, node: usize, i: usize) -> &[T] {
        let o = (node * self.n + i) * self.ncomp;
        &self.d1[o..o + self.ncomp]
    }
    pub fn d1_at_mut(&mut self, node: usize, i: usize) -> &mut [T] {
        let o = (node * self.n + i) * self.ncomp;
        &mut self.d1[o..o + self.ncomp]
    }
    /// `∂_i ∂_j u` at a node, by pair index.
    pub fn d2_at(&self, node: usize, pair: usize) -> &[T] {
        let np = self.n * (self.n + 1) / 2;
        let o = (node * np + pair) * self.ncomp;
        &self.d2[o..o + self.ncomp]
    }
    pub fn d2_at_mut(&mut self, node: usize, pair: usize) -> &mut [T] {
        let np = self.n * (self.n + 1) / 2;
        let o = (node * np + pair) * self.ncomp;
        &mut self.d2[o..o + self.ncomp]
    }
    /// `∂_i u` as a field.
    pub fn d1_field(&self, grid: &Arc<BallGrid<T>>, i: usize) -> Field<T> {
        let nc = self.ncomp;
        let data: Vec<T> = (0..grid.len()).flat_map(|p| self.d1_at(p, i).to_vec()).collect();
        Field::from_data(grid, kind_for(nc), data).expect("shape")
    }
    /// `∂_i ∂_j u` as a field.
    pub fn d2_field(&self, grid: &Arc<BallGrid<T>>, pair: usize) -> Field<T> {
        let nc = self.ncomp;
        let data: Vec<T> = (0..grid.len()).flat_map(|p| self.d2_at(p, pair).to_vec()).collect();
        Field::from_data(grid, kind_for(nc), data).expect("shape")
    }
    /// Scales all derivatives.
    pub fn scaled(&self, s: T) -> Self {
        Jet2 {
            n: self.n,
            ncomp: self.ncomp,
            d1: self.d1.iter().map(|&v| v * s).collect(),
            d2: self.d2.iter().map(|&v| v * s).collect(),
        }
    }
}

fn kind_for(nc: usize) -> FieldKind {
    if nc == 1 {
        FieldKind::Scalar
    } else {
        FieldKind::Vector(nc)
    }
}

/// First derivative along `axis` of node-major data with `nc` components.
///
/// Central where both neighbors exist, second-order one-sided otherwise, then first-order,
/// then zero.
pub fn deriv1<T: Real>(grid: &BallGrid<T>, data: &[T], nc: usize, axis: usize) -> Vec<T> {
    let h = grid.h();
    let two = T::lit(2.0);
    let mut out = vec![T::zero(); data.len()];
    for p in 0..grid.len() {
        let v = |q: usize, c: usize| data[q * nc + c];
        let m1 = grid.neighbor(p, axis, -1);
        let p1 = grid.neighbor(p, axis, 1);
        let o = &mut out[p * nc..(p + 1) * nc];
        match (m1, p1) {
            (Some(a), Some(b)) => {
                for c in 0..nc {
                    o[c] = (v(b, c) - v(a, c)) / (two * h);
                }
            }
            _ => {
                let p2 = grid.neighbor(p, axis, 2);
                let m2 = grid.neighbor(p, axis, -2);
                if let (Some(b1), Some(b2)) = (p1, p2) {
                    for c in 0..nc {
                        o[c] = (-T::lit(3.0) * v(p, c) + T::lit(4.0) * v(b1, c) - v(b2, c)) / (two * h);
                    }
                } else if let (Some(a1), Some(a2)) = (m1, m2) {
                    for c in 0..nc {
                        o[c] = (T::lit(3.0) * v(p, c) - T::lit(4.0) * v(a1, c) + v(a2, c)) / (two * h);
                    }
                } else if let Some(b1) = p1 {
                    for c in 0..nc {
                        o[c] = (v(b1, c) - v(p, c)) / h;
                    }
                } else if let Some(a1) = m1 {
                    for c in 0..nc {
                        o[c] = (v(p, c) - v(a1, c)) / h;
                    }
                }
            }
        }
    }
    out
}

/// Second derivative along `axis`, same stencil policy as [`deriv1`].
pub fn deriv2<T: Real>(grid: &BallGrid<T>, data: &[T], nc: usize, axis: usize) -> Vec<T> {
    let h2 = grid.h() * grid.h();
    let mut out = vec![T::zero(); data.len()];
    for p in 0..grid.len() {
        let v = |q: usize, c: usize| data[q * nc + c];
        let m1 = grid.neighbor(p, axis, -1);
        let p1 = grid.neighbor(p, axis, 1);
        let o = &mut out[p * nc..(p + 1) * nc];
        if let (Some(a), Some(b)) = (m1, p1) {
            for c in 0..nc {
                o[c] = (v(b, c) - T::lit(2.0) * v(p, c) + v(a, c)) / h2;
            }
            continue;
        }
        let side = |s: isize| -> Option<[usize; 3]> {
            Some([
                grid.neighbor(p, axis, s)?,
                grid.neighbor(p, axis, 2 * s)?,
                grid.neighbor(p, axis, 3 * s)?,
            ])
        };
        let side2 = |s: isize| -> Option<[usize; 2]> { Some([grid.neighbor(p, axis, s)?, grid.neighbor(p, axis, 2 * s)?]) };
        if let Some([a, b, d]) = side(1).or_else(|| side(-1)) {
            for c in 0..nc {
                o[c] = (T::lit(2.0) * v(p, c) - T::lit(5.0) * v(a, c) + T::lit(4.0) * v(b, c) - v(d, c)) / h2;
            }
        } else if let Some([a, b]) = side2(1).or_else(|| side2(-1)) {
            for c in 0..nc {
                o[c] = (v(p, c) - T::lit(2.0) * v(a, c) + v(b, c)) / h2;
            }
        }
    }
    out
}

/// Finite-difference jet of a scalar or vector field.
///
/// Exact for polynomials of degree at most two wherever central stencils apply.
pub fn fd_jet<T: Real>(u: &Field<T>) -> Jet2<T> {
    let grid = u.grid();
    let n = grid.n();
    let nc = u.ncomp();
    let mut jet = Jet2::zeros(n, nc, grid.len());
    let d1s: Vec<Vec<T>> = (0..n).map(|i| deriv1(grid, u.data(), nc, i)).collect();
    for (pair, (i, j)) in sym_pairs(n).into_iter().enumerate() {
        let d = if i == j {
            deriv2(grid, u.data(), nc, i)
        } else {
            deriv1(grid, &d1s[j], nc, i)
        };
        for p in 0..grid.len() {
            jet.d2_at_mut(p, pair).copy_from_slice(&d[p * nc..(p + 1) * nc]);
        }
    }
    for (i, d) in d1s.iter().enumerate() {
        for p in 0..grid.len() {
            jet.d1_at_mut(p, i).copy_from_slice(&d[p * nc..(p + 1) * nc]);
        }
    }
    jet
}

/// Finite-difference Laplacian (sum of the axis second derivatives).
pub fn fd_laplacian<T: Real>(u: &Field<T>) -> Field<T> {
    let grid = u.grid();
    let nc = u.ncomp();
    let mut acc = vec![T::zero(); u.data().len()];
    for axis in 0..grid.n() {
        for (a, b) in acc.iter_mut().zip(deriv2(grid, u.data(), nc, axis)) {
            *a += b;
        }
    }
    Field::from_data(grid, u.kind(), acc).expect("shape")
}

/// Central-stencil nodes: every neighbor needed by the mixed central stencil is active.
pub fn is_central_node<T: Real>(grid: &BallGrid<T>, p: usize) -> bool {
    let n = grid.n();
    let m = grid.multi_index(p);
    let shifts = 3usize.pow(n as u32);
    (0..shifts).all(|s| {
        let mut r = s;
        let idx: Vec<isize> = m
            .iter()
            .map(|&k| {
                let off = (r % 3) as isize - 1;
                r /= 3;
                k as isize + off
            })
            .collect();
        grid.node_at(&idx).is_some()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;

    #[test]
    fn quadratic_1d_second_derivative() {
        let g = make_ball_grid::<f64>(1, 17).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0] * x[0]);
        let j = fd_jet(&u);
        for p in 0..g.len() {
            assert!((j.d2_at(p, 0)[0] - 2.0).abs() < 1e-12);
            assert!((j.d1_at(p, 0)[0] - 2.0 * g.coord(p)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_jet() {
        let g = make_ball_grid::<f64>(2, 11).unwrap();
        let u = Field::scalar_fn(&g, |_| 3.5);
        let j = fd_jet(&u);
        assert!(j.d1.iter().chain(j.d2.iter()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mixed_derivative_of_xy() {
        let g = make_ball_grid::<f64>(2, 21).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0] * x[1]);
        let j = fd_jet(&u);
        for p in 0..g.len() {
            if is_central_node(&g, p) {
                assert!((j.d2_at(p, 1)[0] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratics_exact_on_interior_stencils() {
        let g = make_ball_grid::<f64>(2, 15).unwrap();
        let u = Field::scalar_fn(&g, |x| {
            1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[0] + 3.0 * x[0] * x[1] - 2.0 * x[1] * x[1]
        });
        let j = fd_jet(&u);
        for p in 0..g.len() {
            if !is_central_node(&g, p) {
                continue;
            }
            let x = g.coord(p);
            assert!((j.d1_at(p, 0)[0] - (2.0 + x[0] + 3.0 * x[1])).abs() < 1e-12);
            assert!((j.d1_at(p, 1)[0] - (-1.0 + 3.0 * x[0] - 4.0 * x[1])).abs() < 1e-12);
            assert!((j.d2_at(p, 0)[0] - 1.0).abs() < 1e-12);
            assert!((j.d2_at(p, 1)[0] - 3.0).abs() < 1e-12);
            assert!((j.d2_at(p, 2)[0] + 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_sided_second_order() {
        let g = make_ball_grid::<f64>(1, 33).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0].powi(2) * 0.5 - x[0]);
        let j = fd_jet(&u);
        let end = g.len() - 1;
        assert!((j.d1_at(end, 0)[0] - 0.0).abs() < 1e-12);
        assert!((j.d2_at(end, 0)[0] - 1.0).abs() < 1e-12);
    }
}
