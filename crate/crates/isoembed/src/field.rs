use crate::error::{invalid, Error, Result};
use crate::grid::BallGrid;
use crate::real::Real;
use std::path::Path;
use std::sync::Arc;

/// Layout of the per-node components of a [`Field`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    /// `q` components.
    Vector(usize),
    /// `n(n+1)/2` components indexed by pairs `i <= j`.
    SymTensor,
}

/// Samples on the active nodes of a [`BallGrid`], `ncomp` values per node.
#[derive(Clone, Debug)]
pub struct Field<T: Real> {
    grid: Arc<BallGrid<T>>,
    kind: FieldKind,
    ncomp: usize,
    data: Vec<T>,
}

fn ncomp_of<T: Real>(grid: &BallGrid<T>, kind: FieldKind) -> usize {
    match kind {
        FieldKind::Scalar => 1,
        FieldKind::Vector(q) => q,
        FieldKind::SymTensor => grid.n() * (grid.n() + 1) / 2,
    }
}

impl<T: Real> Field<T> {
    /// All-zero field.
    pub fn zeros(grid: &Arc<BallGrid<T>>, kind: FieldKind) -> Self {
        let ncomp = ncomp_of(grid, kind);
        Field {
            grid: grid.clone(),
            kind,
            ncomp,
            data: vec![T::zero(); grid.len() * ncomp],
        }
    }

    /// Field from raw node-major data.
    pub fn from_data(grid: &Arc<BallGrid<T>>, kind: FieldKind, data: Vec<T>) -> Result<Self> {
        let ncomp = ncomp_of(grid, kind);
        if data.len() != grid.len() * ncomp {
            return invalid(format!("field data length {} != {}", data.len(), grid.len() * ncomp));
        }
        Ok(Field {
            grid: grid.clone(),
            kind,
            ncomp,
            data,
        })
    }

    /// Samples `f(x, out)` at every active node.
    pub fn from_fn(grid: &Arc<BallGrid<T>>, kind: FieldKind, mut f: impl FnMut(&[T], &mut [T])) -> Self {
        let mut out = Self::zeros(grid, kind);
        let nc = out.ncomp;
        for i in 0..grid.len() {
            f(grid.coord(i), &mut out.data[i * nc..(i + 1) * nc]);
        }
        out
    }

    /// Scalar field from `f(x)`.
    pub fn scalar_fn(grid: &Arc<BallGrid<T>>, f: impl Fn(&[T]) -> T) -> Self {
        Self::from_fn(grid, FieldKind::Scalar, |x, o| o[0] = f(x))
    }

    pub fn grid(&self) -> &Arc<BallGrid<T>> {
        &self.grid
    }
    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn ncomp(&self) -> usize {
        self.ncomp
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    /// Components at an active node.
    pub fn at(&self, node: usize) -> &[T] {
        &self.data[node * self.ncomp..(node + 1) * self.ncomp]
    }
    pub fn at_mut(&mut self, node: usize) -> &mut [T] {
        &mut self.data[node * self.ncomp..(node + 1) * self.ncomp]
    }
    /// Value of component `c` at `node`.
    pub fn get(&self, node: usize, c: usize) -> T {
        self.data[node * self.ncomp + c]
    }
    /// Single component as a scalar field.
    pub fn component(&self, c: usize) -> Field<T> {
        let data = (0..self.grid.len()).map(|i| self.get(i, c)).collect();
        Field {
            grid: self.grid.clone(),
            kind: FieldKind::Scalar,
            ncomp: 1,
            data,
        }
    }
    /// Stacks fields with equal grids into one vector field.
    pub fn stack(parts: &[&Field<T>]) -> Result<Field<T>> {
        let grid = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty stack".into()))?
            .grid
            .clone();
        let q: usize = parts.iter().map(|p| p.ncomp).sum();
        let mut data = Vec::with_capacity(grid.len() * q);
        for i in 0..grid.len() {
            for p in parts {
                data.extend_from_slice(p.at(i));
            }
        }
        Ok(Field {
            grid,
            kind: FieldKind::Vector(q),
            ncomp: q,
            data,
        })
    }

    /// Pointwise `self + s * other`.
    pub fn axpy(&self, s: T, other: &Field<T>) -> Field<T> {
        assert_eq!(self.data.len(), other.data.len());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + s * b).collect();
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            ncomp: self.ncomp,
            data,
        }
    }
    pub fn add(&self, other: &Field<T>) -> Field<T> {
        self.axpy(T::one(), other)
    }
    pub fn sub(&self, other: &Field<T>) -> Field<T> {
        self.axpy(-T::one(), other)
    }
    pub fn scale(&self, s: T) -> Field<T> {
        self.map(|v| v * s)
    }
    pub fn map(&self, f: impl Fn(T) -> T) -> Field<T> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            ncomp: self.ncomp,
            data,
        }
    }
    /// Multiplies every component by a scalar field.
    pub fn mul_scalar_field(&self, s: &Field<T>) -> Field<T> {
        assert_eq!(s.ncomp, 1);
        let mut out = self.clone();
        for i in 0..self.grid.len() {
            let f = s.data[i];
            for v in out.at_mut(i) {
                *v *= f;
            }
        }
        out
    }
    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }
    /// Largest Euclidean norm of the per-node component vectors.
    pub fn max_norm(&self) -> T {
        (0..self.grid.len())
            .map(|i| self.at(i).iter().map(|&v| v * v).sum::<T>().sqrt())
            .fold(T::zero(), |m, v| m.max(v))
    }
    /// Largest absolute entry restricted to the given nodes.
    pub fn max_abs_on(&self, nodes: &[usize]) -> T {
        nodes
            .iter()
            .flat_map(|&i| self.at(i).iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Writes the CSV dump: header `x1[,x2],c0[,c1,...]`, one row per active node.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.grid.n();
        let mut header: Vec<String> = (1..=n).map(|d| format!("x{d}")).collect();
        header.extend((0..self.ncomp).map(|c| format!("c{c}")));
        w.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.coord(i).iter().map(|v| format!("{v:?}")).collect();
            row.extend(self.at(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV dump written by [`Field::write_csv`] onto `grid`.
    pub fn read_csv(grid: &Arc<BallGrid<T>>, kind: FieldKind, path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let n = grid.n();
        let ncomp = ncomp_of(grid, kind);
        let headers = r.headers()?.clone();
        if headers.len() != n + ncomp {
            return invalid(format!("csv has {} columns, expected {}", headers.len(), n + ncomp));
        }
        let mut data = Vec::with_capacity(grid.len() * ncomp);
        let mut rows = 0usize;
        for rec in r.records() {
            let rec = rec?;
            if rows >= grid.len() {
                return invalid("csv has more rows than grid nodes");
            }
            for d in 0..n {
                let x: T = parse(&rec[d])?;
                if (x - grid.coord(rows)[d]).abs().f64() > 1e-12 {
                    return invalid(format!("csv row {rows} coordinate mismatch"));
                }
            }
            for c in 0..ncomp {
                data.push(parse(&rec[n + c])?);
            }
            rows += 1;
        }
        if rows != grid.len() {
            return invalid(format!("csv has {rows} rows, grid has {} nodes", grid.len()));
        }
        Field::from_data(grid, kind, data)
    }
}

fn parse<T: Real>(s: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::InvalidArgument(format!("bad number `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;

    #[test]
    fn csv_roundtrip_bit_exact() {
        let g = make_ball_grid::<f64>(2, 9).unwrap();
        let f = Field::from_fn(&g, FieldKind::Vector(2), |x, o| {
            o[0] = (x[0] * 3.1).sin() / 7.0;
            o[1] = 1e-300 * x[1] + std::f64::consts::PI;
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p).unwrap();
        let back = Field::read_csv(&g, FieldKind::Vector(2), &p).unwrap();
        for (a, b) in f.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x1,x2,c0,c1"));
    }

    #[test]
    fn csv_rejects_wrong_shape() {
        let g = make_ball_grid::<f64>(1, 5).unwrap();
        let f = Field::zeros(&g, FieldKind::Scalar);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p).unwrap();
        assert!(Field::read_csv(&g, FieldKind::Vector(2), &p).is_err());
    }
}
