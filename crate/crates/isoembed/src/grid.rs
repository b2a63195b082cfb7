use crate::error::{invalid, Result};
use crate::real::Real;
use serde::Serialize;
use std::sync::Arc;

/// Classification of a lattice node relative to the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeClass {
    /// `|x| < 1`.
    Interior,
    /// Outside the open ball but within one lattice step (Chebyshev) of an interior node.
    BoundaryAdjacent,
    /// Everything else; carries no field values.
    Exterior,
}

/// Uniform Cartesian lattice on `[-1, 1]^n` restricted to the closed unit ball.
///
/// Field values live on the non-exterior ("active") nodes, stored in lexicographic
/// lattice order with `x1` as the most significant axis.
#[derive(Clone, Debug)]
pub struct BallGrid<T: Real> {
    n: usize,
    npts: usize,
    h: T,
    class: Vec<NodeClass>,
    active: Vec<usize>,
    slot: Vec<usize>,
    coords: Vec<T>,
}

const NONE: usize = usize::MAX;

/// Builds the ball grid with `npts` nodes per axis.
///
/// `npts` must be odd so the origin is a node.
pub fn make_ball_grid<T: Real>(n: usize, npts: usize) -> Result<Arc<BallGrid<T>>> {
    if !(1..=3).contains(&n) {
        return invalid(format!("dimension {n} not in 1..=3"));
    }
    if npts.is_multiple_of(2) || npts < 3 {
        return invalid(format!("nodes per axis must be odd and >= 3, got {npts}"));
    }
    let total = npts.pow(n as u32);
    let coord = |m: usize| -> T { T::lit(-1.0 + 2.0 * m as f64 / (npts - 1) as f64) };
    let multi = |idx: usize| -> Vec<usize> {
        let mut m = vec![0; n];
        let mut r = idx;
        for d in (0..n).rev() {
            m[d] = r % npts;
            r /= npts;
        }
        m
    };
    let radius2 = |m: &[usize]| -> f64 { m.iter().map(|&k| coord(k).f64().powi(2)).sum() };
    let mut interior = vec![false; total];
    for (idx, flag) in interior.iter_mut().enumerate() {
        *flag = radius2(&multi(idx)) < 1.0 - 1e-14;
    }
    let mut class = vec![NodeClass::Exterior; total];
    for idx in 0..total {
        if interior[idx] {
            class[idx] = NodeClass::Interior;
            continue;
        }
        let m = multi(idx);
        let mut near = false;
        let shifts = 3usize.pow(n as u32);
        for s in 0..shifts {
            let mut r = s;
            let mut nb = 0usize;
            let mut ok = true;
            for &md in m.iter() {
                let off = (r % 3) as isize - 1;
                r /= 3;
                let k = md as isize + off;
                if k < 0 || k >= npts as isize {
                    ok = false;
                    break;
                }
                nb = nb * npts + k as usize;
            }
            if ok && interior[nb] {
                near = true;
                break;
            }
        }
        if near {
            class[idx] = NodeClass::BoundaryAdjacent;
        }
    }
    let mut active = Vec::new();
    let mut slot = vec![NONE; total];
    let mut coords = Vec::new();
    for idx in 0..total {
        if class[idx] != NodeClass::Exterior {
            slot[idx] = active.len();
            active.push(idx);
            for md in multi(idx) {
                coords.push(coord(md));
            }
        }
    }
    Ok(Arc::new(BallGrid {
        n,
        npts,
        h: T::lit(2.0 / (npts - 1) as f64),
        class,
        active,
        slot,
        coords,
    }))
}

impl<T: Real> BallGrid<T> {
    /// Spatial dimension.
    pub fn n(&self) -> usize {
        self.n
    }
    /// Nodes per axis.
    pub fn npts(&self) -> usize {
        self.npts
    }
    /// Lattice spacing `2/(N-1)`.
    pub fn h(&self) -> T {
        self.h
    }
    /// Number of lattice nodes, including exterior ones.
    pub fn lattice_len(&self) -> usize {
        self.class.len()
    }
    /// Number of active (non-exterior) nodes.
    pub fn len(&self) -> usize {
        self.active.len()
    }
    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
    /// Class of a lattice node.
    pub fn lattice_class(&self, lattice_idx: usize) -> NodeClass {
        self.class[lattice_idx]
    }
    /// Class of an active node.
    pub fn class(&self, node: usize) -> NodeClass {
        self.class[self.active[node]]
    }
    /// Coordinates of an active node.
    pub fn coord(&self, node: usize) -> &[T] {
        &self.coords[node * self.n..(node + 1) * self.n]
    }
    /// Coordinates of an active node as `f64`.
    pub fn coord_f64(&self, node: usize) -> Vec<f64> {
        self.coord(node).iter().map(|v| v.f64()).collect()
    }
    /// Lattice multi-index of an active node.
    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut m = vec![0; self.n];
        let mut r = self.active[node];
        for d in (0..self.n).rev() {
            m[d] = r % self.npts;
            r /= self.npts;
        }
        m
    }
    /// Active node at a lattice multi-index, if any.
    pub fn node_at(&self, m: &[isize]) -> Option<usize> {
        let mut idx = 0usize;
        for &k in m {
            if k < 0 || k >= self.npts as isize {
                return None;
            }
            idx = idx * self.npts + k as usize;
        }
        let s = self.slot[idx];
        (s != NONE).then_some(s)
    }
    /// Active neighbor `offset` steps along `axis`, if it exists.
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> Option<usize> {
        let stride = self.npts.pow((self.n - 1 - axis) as u32);
        let m = (self.active[node] / stride) % self.npts;
        let k = m as isize + offset;
        if k < 0 || k >= self.npts as isize {
            return None;
        }
        let idx = (self.active[node] as isize + offset * stride as isize) as usize;
        let s = self.slot[idx];
        (s != NONE).then_some(s)
    }
    /// `|x|^2` of an active node.
    pub fn radius2(&self, node: usize) -> T {
        self.coord(node).iter().map(|&c| c * c).sum()
    }
    /// True for interior nodes (`|x| < 1`).
    pub fn is_interior(&self, node: usize) -> bool {
        self.class(node) == NodeClass::Interior
    }
    /// True for nodes in the closed ball `|x| <= 1`.
    pub fn in_closed_ball(&self, node: usize) -> bool {
        self.radius2(node).f64() <= 1.0 + 1e-12
    }
    /// Active nodes lying in the closed ball.
    pub fn closed_ball_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.in_closed_ball(i)).collect()
    }
    /// Number of interior nodes.
    pub fn interior_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_interior(i)).count()
    }
    /// Index pairs `(i, j)`, `i <= j`, in lexicographic order.
    pub fn sym_pairs(&self) -> Vec<(usize, usize)> {
        sym_pairs(self.n)
    }
}

/// Index pairs `(i, j)` with `i <= j < n` in lexicographic order.
pub fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

/// Position of `(i, j)` in [`sym_pairs`].
pub fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_five_nodes() {
        let g = make_ball_grid::<f64>(1, 5).unwrap();
        let xs: Vec<f64> = (0..g.len()).map(|i| g.coord(i)[0]).collect();
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let interior: Vec<f64> = (0..g.len()).filter(|&i| g.is_interior(i)).map(|i| xs[i]).collect();
        assert_eq!(interior, vec![-0.5, 0.0, 0.5]);
        assert_eq!(g.h() * 4.0, 2.0);
    }

    #[test]
    fn two_dimensional_three_nodes() {
        let g = make_ball_grid::<f64>(2, 3).unwrap();
        assert_eq!(g.lattice_len(), 9);
        assert_eq!(g.interior_count(), 1);
        let c = (0..g.len()).find(|&i| g.is_interior(i)).unwrap();
        assert_eq!(g.coord(c), &[0.0, 0.0]);
    }

    #[test]
    fn interior_count_matches_area() {
        let g = make_ball_grid::<f64>(2, 65).unwrap();
        // enumeration oracle
        assert_eq!(g.interior_count(), 3205);
        // area over cell size
        let h = 2.0 / 64.0;
        let expect = std::f64::consts::PI / (h * h);
        let rel = (g.interior_count() as f64 - expect).abs() / expect;
        assert!(rel < 0.02, "rel {rel}");
    }

    #[test]
    fn rejects_even_or_tiny() {
        assert!(make_ball_grid::<f64>(2, 64).is_err());
        assert!(make_ball_grid::<f64>(2, 1).is_err());
        assert!(make_ball_grid::<f64>(4, 5).is_err());
    }

    #[test]
    fn sym_index_roundtrip() {
        for n in 1..4 {
            for (k, (i, j)) in sym_pairs(n).into_iter().enumerate() {
                assert_eq!(sym_index(n, i, j), k);
                assert_eq!(sym_index(n, j, i), k);
            }
        }
    }

    #[test]
    fn f32_grid() {
        let g = make_ball_grid::<f32>(2, 9).unwrap();
        assert!(!g.is_empty());
        assert_eq!(g.h(), 0.25f32);
    }
}
