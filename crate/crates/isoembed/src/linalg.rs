use crate::error::{invalid, Error, Result};
use crate::real::Real;
use std::ops::{Index, IndexMut};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }
    /// Matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("matrix data length {} != {rows}x{cols}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix has non-finite entries");
        }
        Ok(DenseMatrix { rows, cols, data })
    }
    /// Matrix whose rows are the given vectors.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("rows of unequal length");
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }
    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }
    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn axpy<T: Real>(y: &mut [T], s: T, x: &[T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += s * b;
    }
}

/// Householder QR of a tall matrix (`rows >= cols`), returning the reflectors and `R`.
struct Qr<T> {
    /// Householder vectors, one per column.
    vs: Vec<Vec<T>>,
    r: DenseMatrix<T>,
}

fn householder_qr<T: Real>(a: &DenseMatrix<T>) -> Qr<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut r = a.clone();
    let mut vs = Vec::with_capacity(n);
    for k in 0..n.min(m) {
        let x: Vec<T> = (k..m).map(|i| r[(i, k)]).collect();
        let alpha = norm(&x);
        let mut v = x.clone();
        let sign = if x[0] >= T::zero() { T::one() } else { -T::one() };
        v[0] += sign * alpha;
        let vn = norm(&v);
        if vn > T::zero() {
            v.iter_mut().for_each(|e| *e /= vn);
            for j in k..n {
                let s: T = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
                for i in k..m {
                    r[(i, j)] -= T::lit(2.0) * v[i - k] * s;
                }
            }
        }
        vs.push(v);
    }
    Qr { vs, r }
}

impl<T: Real> Qr<T> {
    /// Applies `Q` to a vector of length `rows`.
    fn apply_q(&self, y: &mut [T]) {
        let m = y.len();
        for (k, v) in self.vs.iter().enumerate().rev() {
            let s: T = (k..m).map(|i| v[i - k] * y[i]).sum();
            for i in k..m {
                y[i] -= T::lit(2.0) * v[i - k] * s;
            }
        }
    }
}

/// Rank tolerance on a Gram determinant of `k` vectors of size `scale`.
pub fn rank_tol<T: Real>(scale: T, k: usize) -> T {
    T::lit(1e-12) * scale.powi(2 * k as i32)
}

/// Minimum-norm solution of the underdetermined full-row-rank system `Ax = b`.
pub fn least_norm_solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let (k, q) = (a.rows(), a.cols());
    if b.len() != k {
        return invalid(format!("rhs length {} != {k}", b.len()));
    }
    if k > q {
        return Err(Error::RankDeficient { gram_det: 0.0 });
    }
    let qr = householder_qr(&a.transpose());
    let gd: T = (0..k).map(|i| qr.r[(i, i)] * qr.r[(i, i)]).fold(T::one(), |p, v| p * v);
    let scale = (0..k).map(|i| norm(a.row(i))).fold(T::zero(), T::max).max(T::min_positive_value());
    if !(gd > rank_tol(scale, k)) {
        return Err(Error::RankDeficient { gram_det: gd.f64() });
    }
    // A = Rᵀ Qᵀ, so x = Q [R⁻ᵀ b; 0]
    let mut y = vec![T::zero(); q];
    for i in 0..k {
        let s: T = (0..i).map(|j| qr.r[(j, i)] * y[j]).sum();
        y[i] = (b[i] - s) / qr.r[(i, i)];
    }
    qr.apply_q(&mut y);
    Ok(y)
}

/// Determinant of the Gram matrix of the given vectors.
pub fn gram_det<T: Real>(vectors: &[Vec<T>]) -> Result<T> {
    let q = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty vector list".into()))?
        .len();
    if vectors.iter().any(|v| v.len() != q) {
        return invalid("vectors of unequal length");
    }
    let k = vectors.len();
    if k > q {
        return Ok(T::zero());
    }
    let a = DenseMatrix::from_rows(vectors)?;
    let qr = householder_qr(&a.transpose());
    Ok((0..k).map(|i| qr.r[(i, i)] * qr.r[(i, i)]).fold(T::one(), |p, v| p * v))
}

/// Orthonormal basis of the span (modified Gram-Schmidt, twice); errors on dependence.
pub fn orthonormalize<T: Real>(vectors: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let scale = vectors.iter().map(|v| norm(v)).fold(T::zero(), T::max);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for e in &basis {
                let c = dot(&w, e);
                axpy(&mut w, -c, e);
            }
        }
        let nw = norm(&w);
        if !(nw > T::lit(1e-12) * scale) {
            let gd = gram_det(vectors).map(|g| g.f64()).unwrap_or(0.0);
            return Err(Error::RankDeficient { gram_det: gd });
        }
        w.iter_mut().for_each(|x| *x /= nw);
        basis.push(w);
    }
    Ok(basis)
}

/// `z` minus its orthogonal projection onto the span of `span_vectors`.
pub fn project_complement<T: Real>(span_vectors: &[Vec<T>], z: &[T]) -> Result<Vec<T>> {
    if span_vectors.iter().any(|v| v.len() != z.len()) {
        return invalid("span vectors and z differ in length");
    }
    let basis = orthonormalize(span_vectors)?;
    let mut w = z.to_vec();
    for _ in 0..2 {
        for e in &basis {
            let c = dot(&w, e);
            axpy(&mut w, -c, e);
        }
    }
    Ok(w)
}

/// Upper-triangular `C` with positive diagonal and `CᵀC = Z`; pivots are 1-based in errors.
pub fn cholesky_upper<T: Real>(z: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if !z.is_square() {
        return invalid("cholesky needs a square matrix");
    }
    let n = z.rows();
    let tol = T::lit(1e-12) * z.norm_inf();
    for i in 0..n {
        for j in 0..i {
            if (z[(i, j)] - z[(j, i)]).abs() > tol {
                return invalid("cholesky needs a symmetric matrix");
            }
        }
    }
    let mut c = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let s: T = (0..i).map(|k| c[(k, i)] * c[(k, i)]).sum();
        let d = z[(i, i)] - s;
        if !(d > T::zero()) {
            return Err(Error::NotPositiveDefinite { pivot: i + 1 });
        }
        let dii = d.sqrt();
        c[(i, i)] = dii;
        for j in i + 1..n {
            let s: T = (0..i).map(|k| c[(k, i)] * c[(k, j)]).sum();
            c[(i, j)] = (z[(i, j)] - s) / dii;
        }
    }
    Ok(c)
}

/// Solves the square system `Ax = b` by LU with partial pivoting.
pub fn solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    if !a.is_square() || a.rows() != b.len() {
        return invalid("solve needs a square system");
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.norm_inf().max(T::min_positive_value());
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().partial_cmp(&m[(j, k)].abs()).unwrap())
            .unwrap();
        if !(m[(p, k)].abs() > T::lit(1e-14) * scale) {
            return Err(Error::Singular);
        }
        if p != k {
            for j in 0..n {
                let t = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            if f != T::zero() {
                for j in k..n {
                    let v = m[(k, j)];
                    m[(i, j)] -= f * v;
                }
                let v = x[k];
                x[i] -= f * v;
            }
        }
    }
    for i in (0..n).rev() {
        let s: T = (i + 1..n).map(|j| m[(i, j)] * x[j]).sum();
        x[i] = (x[i] - s) / m[(i, i)];
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
pub fn sym_eigenvalues<T: Real>(a: &DenseMatrix<T>) -> Vec<T> {
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= T::lit(1e-30) * m.norm_inf().powi(2).max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Generator with its representation over a dictionary of rank-one linear forms.
#[derive(Clone, Debug)]
pub struct ConeGenerator<T> {
    pub vector: Vec<T>,
    /// `(β, c)` pairs: the generator equals `Σ β · sym(c ⊗ c)`.
    pub dictionary: Vec<(T, Vec<T>)>,
}

/// `q` linearly independent cone generators.
#[derive(Clone, Debug)]
pub struct ConeFrame<T> {
    pub generators: Vec<ConeGenerator<T>>,
}

impl<T: Real> ConeFrame<T> {
    /// Frame without dictionary data.
    pub fn from_vectors(vectors: Vec<Vec<T>>) -> Self {
        ConeFrame {
            generators: vectors
                .into_iter()
                .map(|vector| ConeGenerator {
                    vector,
                    dictionary: Vec::new(),
                })
                .collect(),
        }
    }
    pub fn vectors(&self) -> Vec<Vec<T>> {
        self.generators.iter().map(|g| g.vector.clone()).collect()
    }
    /// Matrix with the generators as columns.
    pub fn matrix(&self) -> DenseMatrix<T> {
        DenseMatrix::from_rows(&self.vectors()).expect("equal lengths").transpose()
    }
}

/// Coefficients `λ` with `Vλ = z` and whether all exceed `coeff_tol`.
#[derive(Clone, Debug)]
pub struct ConeTest<T> {
    pub interior: bool,
    pub lambda: Vec<T>,
}

/// Default strict-positivity margin for cone coefficients.
pub const COEFF_TOL: f64 = 1e-10;

/// Tests `z ∈ int ccone(v_1..v_q)` by solving `Vλ = z`.
pub fn cone_interior_test<T: Real>(frame: &ConeFrame<T>, z: &[T]) -> Result<ConeTest<T>> {
    let v = frame.matrix();
    if !v.is_square() || v.rows() != z.len() {
        return invalid("cone frame must have q generators in R^q");
    }
    let lambda = solve(&v, z)?;
    let tol = T::lit(COEFF_TOL);
    Ok(ConeTest {
        interior: lambda.iter().all(|&l| l > tol),
        lambda,
    })
}

/// Frame `v_i = z + (ε/2) e_i` in coordinates where `z` is a multiple of `Σ e_i`.
pub fn perturbed_cone_frame<T: Real>(z: &[T], eps: T) -> Result<ConeFrame<T>> {
    let q = z.len();
    let nz = norm(z);
    if q == 0 || !(nz > T::zero()) {
        return invalid("cone frame center must be nonzero");
    }
    if !(eps > T::zero()) {
        return invalid("cone frame radius must be positive");
    }
    let sq = T::lit(q as f64).sqrt();
    let s = nz / sq;
    // reflection H taking (Σe_i)/√q to z/|z|
    let w: Vec<T> = (0..q).map(|i| T::one() / sq - z[i] / nz).collect();
    let ww = dot(&w, &w);
    let reflect = |x: &mut Vec<T>| {
        if ww > T::lit(1e-30) {
            let c = T::lit(2.0) * dot(&w, x) / ww;
            axpy(x, -c, &w);
        }
    };
    let vectors = (0..q)
        .map(|i| {
            let mut v = vec![s; q];
            v[i] += eps / T::lit(2.0);
            reflect(&mut v);
            v
        })
        .collect();
    Ok(ConeFrame::from_vectors(vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn least_norm_examples() {
        let x = least_norm_solve(&m(&[&[1.0, 0.0, 0.0]]), &[2.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && x[1].abs() < 1e-15 && x[2].abs() < 1e-15);
        let x = least_norm_solve(&m(&[&[3.0, 4.0]]), &[5.0]).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-15 && (x[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn least_norm_rank_deficient() {
        let err = least_norm_solve(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn gram_det_examples() {
        assert!((gram_det::<f64>(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap() - 1.0).abs() < 1e-15);
        assert!((gram_det::<f64>(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap() - 4.0).abs() < 1e-14);
        assert!(gram_det::<f64>(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let p = project_complement(&[vec![1.0, 0.0]], &[1.0, 2.0]).unwrap();
        assert_eq!(p, vec![0.0, 2.0]);
        let r = 0.5f64.sqrt();
        let p = project_complement(&[vec![r, r]], &[1.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] + 0.5).abs() < 1e-15);
        assert!(project_complement(&[vec![1.0, 0.0], vec![2.0, 0.0]], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let c = cholesky_upper(&m(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(c, m(&[&[2.0, 1.0], &[0.0, 2.0]]));
        let e = cholesky_upper(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(e, Error::NotPositiveDefinite { pivot: 2 }));
    }

    #[test]
    fn cone_examples() {
        let f = ConeFrame::from_vectors(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = cone_interior_test(&f, &[1.0, 1.0]).unwrap();
        assert!(t.interior && t.lambda == vec![1.0, 1.0]);
        assert!(!cone_interior_test(&f, &[1.0, -1.0]).unwrap().interior);
        let f = perturbed_cone_frame::<f64>(&[1.0, 1.0], 0.5).unwrap();
        assert_eq!(f.vectors(), vec![vec![1.25, 1.0], vec![1.0, 1.25]]);
        let t = cone_interior_test(&f, &[1.0, 1.0]).unwrap();
        assert!(t.interior && t.lambda.iter().all(|&l| (l - 1.0 / 2.25).abs() < 1e-14));
        let f = perturbed_cone_frame(&[3.0], 1.0).unwrap();
        assert_eq!(f.vectors(), vec![vec![3.5]]);
    }

    #[test]
    fn eigenvalues_of_small_matrices() {
        let e = sym_eigenvalues(&m(&[&[2.0, 1.0], &[1.0, 2.0]]));
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn f32_least_norm() {
        let a = DenseMatrix::<f32>::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let x = least_norm_solve(&a, &[5.0]).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-6);
    }
}
