//! Decomposition of symmetric tensor fields into primitive terms `a⁴ (dℓ)²`.

use crate::error::{invalid, Error, Result};
use crate::field::{Field, FieldKind};
use crate::grid::{sym_pairs, BallGrid};
use crate::jet::Jet;
use crate::linalg::{cholesky_upper, norm, perturbed_cone_frame, solve, sym_eigenvalues, ConeFrame, DenseMatrix};
use crate::smooth::{Bump, JetFn, JetMap};
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

/// Symmetric matrix from its `i <= j` components.
pub fn sym_from_vec(n: usize, v: &[f64]) -> DenseMatrix<f64> {
    let mut m = vec![0.0; n * n];
    for (k, (i, j)) in sym_pairs(n).into_iter().enumerate() {
        m[i * n + j] = v[k];
        m[j * n + i] = v[k];
    }
    DenseMatrix::from_vec(n, n, m).expect("finite")
}

/// `i <= j` components of a symmetric matrix.
pub fn vec_from_sym(m: &DenseMatrix<f64>) -> Vec<f64> {
    sym_pairs(m.rows()).into_iter().map(|(i, j)| m[(i, j)]).collect()
}

/// `i <= j` components of `c cᵀ`.
pub fn rank_one(c: &[f64]) -> Vec<f64> {
    sym_pairs(c.len()).into_iter().map(|(i, j)| c[i] * c[j]).collect()
}

/// Linear forms `ℓ_k` (rows of the Cholesky factor) with `h0 = Σ dℓ_k ⊗ dℓ_k`.
pub fn cholesky_seed(h0: &DenseMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let c = cholesky_upper(h0)?;
    Ok((0..c.rows()).map(|k| c.row(k).to_vec()).collect())
}

/// One positive term `coef · dℓ ⊗ dℓ`.
#[derive(Clone, Debug)]
pub struct ConeTerm {
    /// Index of the frame generator the term comes from.
    pub generator: usize,
    pub form: Vec<f64>,
    /// `γ_j(x) β`, zero outside the decomposition ball.
    pub coef: Field<f64>,
}

/// Positive-coefficient representation of a tensor field on a ball.
#[derive(Clone, Debug)]
pub struct ConeRepresentation {
    pub center: Vec<f64>,
    pub rho: f64,
    pub frame: ConeFrame<f64>,
    /// `V⁻¹` (rows give `γ_j` as linear functionals of the tensor components).
    pub frame_inverse: DenseMatrix<f64>,
    pub terms: Vec<ConeTerm>,
    /// Nodes inside the decomposition ball.
    pub nodes: Vec<usize>,
    pub coeff_tol: f64,
    /// Radius of the tensor ball around `h(center)` inside the cone.
    pub cone_margin: f64,
    pub max_error: f64,
}

fn center_value(h: &Field<f64>, center: &[f64]) -> Result<(usize, Vec<f64>)> {
    let grid = h.grid();
    let p = (0..grid.len())
        .min_by(|&a, &b| {
            let da: f64 = grid.coord_f64(a).iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum();
            let db: f64 = grid.coord_f64(b).iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum();
            da.partial_cmp(&db).unwrap()
        })
        .ok_or_else(|| Error::InvalidArgument("empty grid".into()))?;
    Ok((p, h.at(p).to_vec()))
}

/// Builds a cone frame around `h(center)` whose generators are Cholesky-split, then finds
/// the largest grid ball of radius `<= rho_init` on which all frame coefficients stay positive.
pub fn cone_decompose(h: &Field<f64>, center: &[f64], rho_init: f64) -> Result<ConeRepresentation> {
    let grid = h.grid();
    let n = grid.n();
    if h.kind() != FieldKind::SymTensor {
        return invalid("cone_decompose expects a symmetric tensor field");
    }
    let (_, z) = center_value(h, center)?;
    let zm = sym_from_vec(n, &z);
    let lmin = sym_eigenvalues(&zm)[0];
    if !(lmin > 0.0) {
        return invalid(format!("tensor not positive definite at center (min eigenvalue {lmin:e})"));
    }
    let scale = norm(&z);
    let coeff_tol = 1e-6 * scale;
    // frame vectors lie within eps/2 of z; spectral distance at most eps/sqrt(2) < lmin
    let eps = lmin;
    let mut frame = perturbed_cone_frame(&z, eps)?;
    for g in frame.generators.iter_mut() {
        let forms = cholesky_seed(&sym_from_vec(n, &g.vector))?;
        g.dictionary = forms.into_iter().map(|c| (1.0, c)).collect();
    }
    let vmat = frame.matrix();
    let d = z.len();
    let mut inv = vec![0.0; d * d];
    for col in 0..d {
        let mut e = vec![0.0; d];
        e[col] = 1.0;
        let x = solve(&vmat, &e)?;
        for row in 0..d {
            inv[row * d + col] = x[row];
        }
    }
    let vinv = DenseMatrix::from_vec(d, d, inv)?;
    let dist = |p: usize| -> f64 {
        grid.coord_f64(p)
            .iter()
            .zip(center)
            .map(|(x, c)| (x - c).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut order: Vec<usize> = grid.closed_ball_nodes().into_iter().filter(|&p| dist(p) <= rho_init).collect();
    order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(a.cmp(&b)));
    let mut rho = rho_init;
    let mut gammas: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut k = 0;
    while k < order.len() {
        // nodes at equal distance enter together
        let r = dist(order[k]);
        let mut shell = Vec::new();
        while k < order.len() && dist(order[k]) - r < 1e-12 {
            shell.push(order[k]);
            k += 1;
        }
        let vals: Vec<(usize, Vec<f64>)> = shell.iter().map(|&p| (p, vinv.matvec(h.at(p)))).collect();
        if vals.iter().any(|(_, g)| g.iter().any(|&x| !(x > coeff_tol))) {
            rho = gammas.last().map_or(0.0, |(p, _)| dist(*p));
            break;
        }
        gammas.extend(vals);
    }
    if rho < 2.0 * grid.h() {
        return Err(Error::Certification(format!(
            "decomposition radius {rho:.3e} below two grid steps around {center:?}"
        )));
    }
    let nodes: Vec<usize> = gammas.iter().map(|(p, _)| *p).collect();
    let mut terms = Vec::new();
    for (j, g) in frame.generators.iter().enumerate() {
        for (beta, c) in &g.dictionary {
            let mut coef = Field::zeros(grid, FieldKind::Scalar);
            for (p, gam) in &gammas {
                coef.at_mut(*p)[0] = gam[j] * beta;
            }
            terms.push(ConeTerm {
                generator: j,
                form: c.clone(),
                coef,
            });
        }
    }
    let mut rep = ConeRepresentation {
        center: center.to_vec(),
        rho,
        frame,
        frame_inverse: vinv,
        terms,
        nodes,
        coeff_tol,
        cone_margin: (1.0 - std::f64::consts::FRAC_1_SQRT_2) * eps,
        max_error: 0.0,
    };
    rep.max_error = rep.reconstruction_error(h);
    Ok(rep)
}

impl ConeRepresentation {
    /// `Σ coef · dℓ⊗dℓ` at a node.
    pub fn reconstruct_at(&self, p: usize) -> Vec<f64> {
        let d = self.frame_inverse.rows();
        let mut out = vec![0.0; d];
        for t in &self.terms {
            let c = t.coef.get(p, 0);
            for (o, r) in out.iter_mut().zip(rank_one(&t.form)) {
                *o += c * r;
            }
        }
        out
    }
    /// Max reconstruction error over the decomposition ball.
    pub fn reconstruction_error(&self, h: &Field<f64>) -> f64 {
        self.nodes
            .iter()
            .map(|&p| {
                self.reconstruct_at(p)
                    .iter()
                    .zip(h.at(p))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
    /// Minimum coefficient over the ball.
    pub fn min_coefficient(&self) -> f64 {
        self.terms
            .iter()
            .flat_map(|t| self.nodes.iter().map(move |&p| t.coef.get(p, 0)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Primitive term `a⁴ (dℓ)²` with chart data.
#[derive(Clone, Debug)]
pub struct PrimitiveTensor {
    pub a: Field<f64>,
    pub form: Vec<f64>,
    /// Row-major `A` with `x̂ = A x`; the first column of `A⁻¹` is the form vector.
    pub rotation: Vec<f64>,
    pub support_center: Vec<f64>,
    pub support_radius: f64,
}

/// Row-major `A⁻¹ = [c, c⊥…]` with orthogonal columns after the first.
pub fn chart_inverse(c: &[f64]) -> Result<Vec<f64>> {
    let n = c.len();
    let nc = norm(c);
    if !(nc > 0.0) {
        return invalid("linear form must be nonzero");
    }
    let mut cols: Vec<Vec<f64>> = vec![c.to_vec()];
    for i in 0..n {
        if cols.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for _ in 0..2 {
            for b in &cols {
                let s = crate::linalg::dot(&e, b) / crate::linalg::dot(b, b);
                e.iter_mut().zip(b).for_each(|(x, y)| *x -= s * y);
            }
        }
        let ne = norm(&e);
        if ne > 1e-8 {
            cols.push(e.iter().map(|x| x / ne).collect());
        }
    }
    let mut m = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            m[i * n + j] = col[i];
        }
    }
    Ok(m)
}

/// Row-major `A` from `A⁻¹ = [c, c⊥…]`.
pub fn chart_rotation(c: &[f64]) -> Result<Vec<f64>> {
    let n = c.len();
    let ainv = DenseMatrix::from_vec(n, n, chart_inverse(c)?)?;
    let mut a = vec![0.0; n * n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve(&ainv, &e)?;
        for row in 0..n {
            a[row * n + col] = x[row];
        }
    }
    Ok(a)
}

impl PrimitiveTensor {
    /// Tensor components `a⁴ c cᵀ` at a node.
    pub fn tensor_at(&self, p: usize) -> Vec<f64> {
        let a4 = self.a.get(p, 0).powi(4);
        rank_one(&self.form).into_iter().map(|r| a4 * r).collect()
    }
}

/// Primitives with their summed residual.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub primitives: Vec<PrimitiveTensor>,
    /// Target `Σψ⁴h` minus the primitive sum.
    pub residual: Field<f64>,
    pub max_error: f64,
}

#[derive(Serialize)]
struct PrimitiveJson {
    support_center: Vec<f64>,
    support_radius: f64,
    linear_form: Vec<f64>,
    rotation: Vec<f64>,
    coefficient_field: String,
}

impl DecompositionResult {
    /// Writes `decomposition.json` and one coefficient CSV per primitive into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut items = Vec::new();
        for (k, p) in self.primitives.iter().enumerate() {
            let name = format!("primitive_{k}.csv");
            p.a.write_csv(dir.join(&name))?;
            items.push(PrimitiveJson {
                support_center: p.support_center.clone(),
                support_radius: p.support_radius,
                linear_form: p.form.clone(),
                rotation: p.rotation.clone(),
                coefficient_field: name,
            });
        }
        std::fs::write(dir.join("decomposition.json"), serde_json::to_string_pretty(&items)?)?;
        Ok(())
    }
}

/// Turns each term times `ψ⁴` into a primitive with `a = ψ coef^{1/4}`.
pub fn localize_primitives(rep: &ConeRepresentation, h: &Field<f64>, cutoffs: &[Field<f64>]) -> Result<DecompositionResult> {
    let grid = h.grid();
    let inside: std::collections::HashSet<usize> = rep.nodes.iter().copied().collect();
    for (k, psi) in cutoffs.iter().enumerate() {
        if let Some(p) = (0..grid.len()).find(|&p| psi.get(p, 0) != 0.0 && !inside.contains(&p)) {
            return invalid(format!(
                "cutoff {k} is nonzero at {:?}, outside the decomposition ball",
                grid.coord_f64(p)
            ));
        }
    }
    let mut primitives = Vec::new();
    for psi in cutoffs {
        let support: Vec<usize> = (0..grid.len()).filter(|&p| psi.get(p, 0) != 0.0).collect();
        let support_radius = support
            .iter()
            .map(|&p| {
                grid.coord_f64(p)
                    .iter()
                    .zip(&rep.center)
                    .map(|(x, c)| (x - c).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        for t in &rep.terms {
            let mut a = Field::zeros(grid, FieldKind::Scalar);
            for &p in &support {
                let c = t.coef.get(p, 0);
                if c < 0.0 {
                    return invalid(format!("negative coefficient {c:e} at {:?}", grid.coord_f64(p)));
                }
                a.at_mut(p)[0] = psi.get(p, 0) * c.powf(0.25);
            }
            primitives.push(PrimitiveTensor {
                a,
                form: t.form.clone(),
                rotation: chart_rotation(&t.form)?,
                support_center: rep.center.clone(),
                support_radius,
            });
        }
    }
    let mut residual = Field::zeros(grid, FieldKind::SymTensor);
    for p in 0..grid.len() {
        let w: f64 = cutoffs.iter().map(|psi| psi.get(p, 0).powi(4)).sum();
        let mut r: Vec<f64> = h.at(p).iter().map(|v| w * v).collect();
        for prim in &primitives {
            for (x, y) in r.iter_mut().zip(prim.tensor_at(p)) {
                *x -= y;
            }
        }
        residual.at_mut(p).copy_from_slice(&r);
    }
    let max_error = residual.max_abs();
    Ok(DecompositionResult {
        primitives,
        residual,
        max_error,
    })
}

/// Ball region of a partition.
#[derive(Clone, Debug, Serialize)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Analytic quartic partition `ψ_i = φ_i / (Σ φ_j⁴)^{1/4}` from bumps over the regions.
#[derive(Clone, Debug)]
pub struct QuarticPartition {
    pub bumps: Vec<Bump>,
}

impl QuarticPartition {
    pub fn new(regions: &[Region]) -> Self {
        QuarticPartition {
            bumps: regions.iter().map(|r| Bump::new(r.center.clone(), r.radius)).collect(),
        }
    }
    pub fn len(&self) -> usize {
        self.bumps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }
    /// `ψ_i(x)`.
    pub fn eval(&self, i: usize, x: &[f64]) -> f64 {
        let s: f64 = self.bumps.iter().map(|b| b.eval(x).powi(4)).sum();
        if s == 0.0 {
            0.0
        } else {
            self.bumps[i].eval(x) / s.powf(0.25)
        }
    }
    /// Jet of `ψ_i` at `x`.
    pub fn jet(&self, i: usize, x: &[f64], deg: usize) -> Jet {
        let n = x.len();
        let phi = self.bumps[i].jet(x, deg);
        if phi.is_zero() {
            return Jet::zero(n, deg);
        }
        let mut s = Jet::zero(n, deg);
        for b in &self.bumps {
            s = s.add(&b.jet(x, deg).powi(4));
        }
        phi.mul(&s.powf(-0.25))
    }
    /// The `i`-th function as a [`JetFn`].
    pub fn member(self: &Arc<Self>, i: usize) -> PartitionMember {
        PartitionMember {
            partition: self.clone(),
            index: i,
        }
    }
}

/// One function of a [`QuarticPartition`].
#[derive(Clone, Debug)]
pub struct PartitionMember {
    pub partition: Arc<QuarticPartition>,
    pub index: usize,
}

impl JetFn for PartitionMember {
    fn n(&self) -> usize {
        self.partition.bumps[self.index].center.len()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.partition.eval(self.index, x)
    }
    fn jet(&self, x: &[f64], deg: usize) -> Jet {
        self.partition.jet(self.index, x, deg)
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        self.partition.bumps[self.index].support()
    }
}

/// Samples the partition on the grid; every node in `working` must be covered.
pub fn quartic_partition(grid: &Arc<BallGrid<f64>>, regions: &[Region], working: &[usize]) -> Result<Vec<Field<f64>>> {
    let part = QuarticPartition::new(regions);
    for &p in working {
        let x = grid.coord_f64(p);
        if part.bumps.iter().all(|b| b.eval(&x) == 0.0) {
            return invalid(format!("node {x:?} is not covered by any region"));
        }
    }
    Ok((0..part.len()).map(|i| Field::scalar_fn(grid, |x| part.eval(i, x))).collect())
}

/// Analytic coefficient `a(x) = ψ(x) (w · h(x))^{1/4}` of a primitive derived from a cone
/// representation of an analytic tensor `h`.
#[derive(Clone)]
pub struct PrimitiveCutoff {
    pub psi: Arc<dyn JetFn>,
    /// Tensor components of `h` as a map into `ℝ^{n(n+1)/2}`.
    pub metric: Arc<dyn JetMap>,
    /// Row of `V⁻¹` times the dictionary coefficient.
    pub weights: Vec<f64>,
}

impl JetFn for PrimitiveCutoff {
    fn n(&self) -> usize {
        self.psi.n()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        let p = self.psi.eval(x);
        if p == 0.0 {
            return 0.0;
        }
        let c: f64 = self.metric.eval(x).iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        p * c.max(0.0).powf(0.25)
    }
    fn jet(&self, x: &[f64], deg: usize) -> Jet {
        let p = self.psi.jet(x, deg);
        if p.is_zero() {
            return p;
        }
        let hj = self.metric.jet(x, deg);
        let mut c = Jet::zero(x.len(), deg);
        for (a, w) in hj.iter().zip(&self.weights) {
            c.axpy(*w, a);
        }
        p.mul(&c.powf(0.25))
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        self.psi.support()
    }
}

/// Analytic primitive `a⁴ (dℓ)²`.
#[derive(Clone)]
pub struct AnalyticPrimitive {
    pub a: Arc<dyn JetFn>,
    pub form: Vec<f64>,
}

impl AnalyticPrimitive {
    /// Tensor components at `x`.
    pub fn tensor(&self, x: &[f64]) -> Vec<f64> {
        let a4 = self.a.eval(x).powi(4);
        rank_one(&self.form).into_iter().map(|r| a4 * r).collect()
    }
}

/// Analytic primitives `ψ_i⁴ γ_j (dℓ)²` for a cone representation of an analytic metric.
pub fn analytic_primitives(rep: &ConeRepresentation, metric: Arc<dyn JetMap>, partition: &[Arc<dyn JetFn>]) -> Vec<AnalyticPrimitive> {
    let mut out = Vec::new();
    for psi in partition {
        for t in &rep.terms {
            let weights = rep.frame_inverse.row(t.generator).to_vec();
            let beta = rep.frame.generators[t.generator]
                .dictionary
                .iter()
                .find(|(_, c)| *c == t.form)
                .map_or(1.0, |(b, _)| *b);
            let weights = weights.iter().map(|w| w * beta).collect();
            out.push(AnalyticPrimitive {
                a: Arc::new(PrimitiveCutoff {
                    psi: psi.clone(),
                    metric: metric.clone(),
                    weights,
                }),
                form: t.form.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;

    fn tensor_field(grid: &Arc<BallGrid<f64>>, f: impl Fn(&[f64]) -> Vec<f64>) -> Field<f64> {
        Field::from_fn(grid, FieldKind::SymTensor, |x, out| {
            let x: Vec<f64> = x.to_vec();
            out.copy_from_slice(&f(&x));
        })
    }

    #[test]
    fn cholesky_seed_examples() {
        let h = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 5.0]]).unwrap();
        let f = cholesky_seed(&h).unwrap();
        assert_eq!(f, vec![vec![2.0, 1.0], vec![0.0, 2.0]]);
        let rec: Vec<f64> = rank_one(&f[0]).iter().zip(rank_one(&f[1])).map(|(a, b)| a + b).collect();
        assert!(rec.iter().zip(&[4.0, 2.0, 5.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        let id = cholesky_seed(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(id, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let bad = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(cholesky_seed(&bad).is_err());
    }

    #[test]
    fn constant_identity_decomposes_exactly() {
        let g = make_ball_grid::<f64>(2, 17).unwrap();
        let h = tensor_field(&g, |_| vec![1.0, 0.0, 1.0]);
        let rep = cone_decompose(&h, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(rep.rho, 0.5);
        assert!(rep.min_coefficient() > 0.0);
        assert!(rep.max_error < 1e-12);
    }

    #[test]
    fn degenerating_metric_shrinks_radius() {
        let g = make_ball_grid::<f64>(2, 33).unwrap();
        let r = 0.6;
        let h = tensor_field(&g, |x| vec![1.0, 0.0, 1.0 - (x[0] * x[0] + x[1] * x[1]) / (r * r)]);
        let rep = cone_decompose(&h, &[0.0, 0.0], 0.9).unwrap();
        assert!(rep.rho < r && rep.rho > 0.1);
        assert!(rep.max_error < 1e-10);
    }

    #[test]
    fn localize_single_form() {
        let g = make_ball_grid::<f64>(2, 9).unwrap();
        let a = chart_inverse(&[1.0, 1.0]).unwrap();
        assert_eq!((a[0], a[2]), (1.0, 1.0));
        let rot = chart_rotation(&[1.0, 1.0]).unwrap();
        // ∂̂₁ℓ = c · (first column of A⁻¹) = |c|²
        assert!((a[0] * 1.0 + a[2] * 1.0 - 2.0).abs() < 1e-15);
        assert!((rot[0] * a[0] + rot[1] * a[2] - 1.0).abs() < 1e-15);
        let coef = Field::scalar_fn(&g, |_| 16.0);
        let rep = ConeRepresentation {
            center: vec![0.0, 0.0],
            rho: 2.0,
            frame: ConeFrame::from_vectors(vec![vec![1.0, 0.0, 0.0]]),
            frame_inverse: DenseMatrix::identity(3),
            terms: vec![ConeTerm {
                generator: 0,
                form: vec![1.0, 0.0],
                coef,
            }],
            nodes: (0..g.len()).collect(),
            coeff_tol: 1e-10,
            cone_margin: 0.0,
            max_error: 0.0,
        };
        let h = tensor_field(&g, |_| vec![16.0, 0.0, 0.0]);
        let psi = Field::scalar_fn(&g, |_| 1.0);
        let d = localize_primitives(&rep, &h, &[psi]).unwrap();
        assert!(d.primitives[0].a.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
        assert_eq!(d.primitives[0].rotation, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(d.max_error < 1e-12);
    }

    #[test]
    fn partition_sums_to_one() {
        let g = make_ball_grid::<f64>(1, 41).unwrap();
        let regions = [
            Region {
                center: vec![-0.3],
                radius: 0.6,
            },
            Region {
                center: vec![0.4],
                radius: 0.6,
            },
        ];
        let working: Vec<usize> = (0..g.len()).filter(|&p| g.coord_f64(p)[0].abs() < 0.7).collect();
        let psi = quartic_partition(&g, &regions, &working).unwrap();
        for &p in &working {
            let s: f64 = psi.iter().map(|f| f.get(p, 0).powi(4)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(quartic_partition(&g, &regions[..1], &working).is_err());
        let one = quartic_partition(
            &g,
            &[Region {
                center: vec![0.0],
                radius: 2.0,
            }],
            &(0..g.len()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(one[0].data().iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn partition_jet_matches_values() {
        let part = Arc::new(QuarticPartition::new(&[
            Region {
                center: vec![-0.3],
                radius: 0.6,
            },
            Region {
                center: vec![0.4],
                radius: 0.6,
            },
        ]));
        let m = part.member(1);
        let x = [0.1];
        let j = m.jet(&x, 2);
        let h = 1e-6;
        let fd = (m.eval(&[x[0] + h]) - m.eval(&[x[0] - h])) / (2.0 * h);
        assert!((j.value() - m.eval(&x)).abs() < 1e-15 && (j.partial(&[1]) - fd).abs() < 1e-7);
    }
}
