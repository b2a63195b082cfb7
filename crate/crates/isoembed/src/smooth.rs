//! Smooth cutoffs and maps that can report Taylor jets at a point.

use crate::jet::{Jet, JetVec};
use std::sync::Arc;

/// Exponent beyond which `exp(-1/w)` underflows to zero.
const EXP_CUT: f64 = 700.0;

/// Scalar function on `ℝⁿ` with Taylor jets.
pub trait JetFn: Send + Sync {
    fn n(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// Jet over `n` variables at `x` of total degree `deg`.
    fn jet(&self, x: &[f64], deg: usize) -> Jet;
    /// Closed ball `(center, radius)` containing the support, if compact.
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// Map `ℝⁿ → ℝ^q` with Taylor jets.
pub trait JetMap: Send + Sync {
    fn n(&self) -> usize;
    fn q(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let j = self.jet(x, 0);
        j.iter().map(|c| c.value()).collect()
    }
    /// Componentwise jets over `n` variables at `x`.
    fn jet(&self, x: &[f64], deg: usize) -> JetVec;
}

/// `exp(-1/w)` for `w > 0`, zero otherwise.
pub fn psi(w: f64) -> f64 {
    if w <= 0.0 || 1.0 / w > EXP_CUT {
        0.0
    } else {
        (-1.0 / w).exp()
    }
}

fn psi_jet(w: &Jet) -> Jet {
    let w0 = w.value();
    if w0 <= 0.0 || 1.0 / w0 > EXP_CUT {
        return Jet::zero(w.nv(), w.deg());
    }
    w.recip().neg().exp()
}

/// Smooth step: 0 for `y ≤ 0`, 1 for `y ≥ 1`, `ψ(y)/(ψ(y)+ψ(1-y))` between.
pub fn smooth_step(y: f64) -> f64 {
    let a = psi(y);
    let b = psi(1.0 - y);
    if a + b == 0.0 {
        return if y >= 0.5 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Jet of [`smooth_step`] applied to `y`.
pub fn smooth_step_jet(y: &Jet) -> Jet {
    let y0 = y.value();
    if y0 <= 0.0 || 1.0 / y0 > EXP_CUT {
        return Jet::zero(y.nv(), y.deg());
    }
    if y0 >= 1.0 || 1.0 / (1.0 - y0) > EXP_CUT {
        return Jet::constant(y.nv(), y.deg(), 1.0);
    }
    let a = psi_jet(y);
    let b = psi_jet(&y.neg().add_const(1.0));
    a.div(&a.add(&b))
}

fn dist2_jet(x: &[f64], center: &[f64], deg: usize) -> Jet {
    let n = x.len();
    let mut s = Jet::zero(n, deg);
    for i in 0..n {
        let d = Jet::var(n, deg, i, x[i] - center[i]);
        s = s.add(&d.mul(&d));
    }
    s
}

fn dist2(x: &[f64], center: &[f64]) -> f64 {
    x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Bump `exp(-1/(1 - |x-x₀|²/r²))` inside `B_r(x₀)`, zero outside.
#[derive(Clone, Debug)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Bump {
            center,
            radius,
            amplitude: 1.0,
        }
    }
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }
}

impl JetFn for Bump {
    fn n(&self) -> usize {
        self.center.len()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.amplitude * psi(1.0 - dist2(x, &self.center) / (self.radius * self.radius))
    }
    fn jet(&self, x: &[f64], deg: usize) -> Jet {
        let s = dist2_jet(x, &self.center, deg).scale(1.0 / (self.radius * self.radius));
        psi_jet(&s.neg().add_const(1.0)).scale(self.amplitude)
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.center.clone(), self.radius))
    }
}

/// Plateau: `amplitude` on `B_{r_in}(x₀)`, zero outside `B_{r_out}(x₀)`, smooth in `|x-x₀|²`.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub center: Vec<f64>,
    pub r_in: f64,
    pub r_out: f64,
    pub amplitude: f64,
}

impl Plateau {
    pub fn new(center: Vec<f64>, r_in: f64, r_out: f64) -> Self {
        assert!(0.0 <= r_in && r_in < r_out, "plateau radii must satisfy 0 <= r_in < r_out");
        Plateau {
            center,
            r_in,
            r_out,
            amplitude: 1.0,
        }
    }
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }
    fn arg_scale(&self) -> f64 {
        1.0 / (self.r_out * self.r_out - self.r_in * self.r_in)
    }
}

impl JetFn for Plateau {
    fn n(&self) -> usize {
        self.center.len()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        let y = (self.r_out * self.r_out - dist2(x, &self.center)) * self.arg_scale();
        self.amplitude * smooth_step(y)
    }
    fn jet(&self, x: &[f64], deg: usize) -> Jet {
        let s = dist2_jet(x, &self.center, deg);
        let y = s.neg().add_const(self.r_out * self.r_out).scale(self.arg_scale());
        smooth_step_jet(&y).scale(self.amplitude)
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.center.clone(), self.r_out))
    }
}

/// Identically zero function.
#[derive(Clone, Debug)]
pub struct Zero(pub usize);

impl JetFn for Zero {
    fn n(&self) -> usize {
        self.0
    }
    fn eval(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn jet(&self, _x: &[f64], deg: usize) -> Jet {
        Jet::zero(self.0, deg)
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        Some((vec![0.0; self.0], 0.0))
    }
}

/// `f(A⁻¹ x̂)` for a function `f` given in original coordinates.
#[derive(Clone)]
pub struct LinearPullback<F: ?Sized> {
    pub inner: Arc<F>,
    /// Row-major `n × n` matrix `A⁻¹`.
    pub ainv: Vec<f64>,
}

fn linear_subs(n: usize, ainv: &[f64], xh: &[f64], deg: usize) -> (Vec<f64>, Vec<Jet>) {
    let x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| ainv[i * n + j] * xh[j]).sum()).collect();
    let subs = (0..n)
        .map(|i| {
            let mut s = Jet::zero(n, deg.max(1));
            for j in 0..n {
                s.axpy(ainv[i * n + j], &Jet::var(n, deg.max(1), j, 0.0));
            }
            s
        })
        .collect();
    (x, subs)
}

impl<F: JetFn + ?Sized> JetFn for LinearPullback<F> {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn eval(&self, xh: &[f64]) -> f64 {
        let n = self.n();
        let x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.ainv[i * n + j] * xh[j]).sum()).collect();
        self.inner.eval(&x)
    }
    fn jet(&self, xh: &[f64], deg: usize) -> Jet {
        let (x, subs) = linear_subs(self.n(), &self.ainv, xh, deg);
        self.inner.jet(&x, deg).compose(&subs).truncate(deg)
    }
}

impl<F: JetMap + ?Sized> JetMap for LinearPullback<F> {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn q(&self) -> usize {
        self.inner.q()
    }
    fn eval(&self, xh: &[f64]) -> Vec<f64> {
        let n = JetMap::n(self);
        let x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.ainv[i * n + j] * xh[j]).sum()).collect();
        self.inner.eval(&x)
    }
    fn jet(&self, xh: &[f64], deg: usize) -> JetVec {
        let (x, subs) = linear_subs(JetMap::n(self), &self.ainv, xh, deg);
        self.inner.jet(&x, deg).iter().map(|c| c.compose(&subs).truncate(deg)).collect()
    }
}

/// Polynomial map given by monomial terms `(component, coefficient, exponents)`.
#[derive(Clone, Debug)]
pub struct PolyMap {
    pub n: usize,
    pub q: usize,
    pub terms: Vec<(usize, f64, Vec<u32>)>,
}

impl PolyMap {
    /// `x ↦ (x, {xⁱxʲ}_{i≤j}, 0, …)` padded with zeros to length `q`.
    pub fn standard_free(n: usize, q: usize) -> Self {
        let mut terms = Vec::new();
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = 1;
            terms.push((i, 1.0, e));
        }
        let mut c = n;
        for i in 0..n {
            for j in i..n {
                let mut e = vec![0; n];
                e[i] += 1;
                e[j] += 1;
                terms.push((c, 1.0, e));
                c += 1;
            }
        }
        assert!(q >= c, "target dimension {q} below {c}");
        PolyMap { n, q, terms }
    }
    /// Multiplies every component by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self
    }
}

impl JetMap for PolyMap {
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        for (c, a, e) in &self.terms {
            out[*c] += a * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>();
        }
        out
    }
    fn jet(&self, x: &[f64], deg: usize) -> JetVec {
        let n = self.n;
        let vars: Vec<Jet> = (0..n).map(|i| Jet::var(n, deg, i, x[i])).collect();
        let mut out = vec![Jet::zero(n, deg); self.q];
        for (c, a, e) in &self.terms {
            let mut m = Jet::constant(n, deg, *a);
            for (i, &k) in e.iter().enumerate() {
                for _ in 0..k {
                    m = m.mul(&vars[i]);
                }
            }
            out[*c] = out[*c].add(&m);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_support_and_peak() {
        let b = Bump::new(vec![0.0], 0.5);
        assert!((b.eval(&[0.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(b.eval(&[0.5]), 0.0);
        assert_eq!(b.eval(&[0.7]), 0.0);
        assert!(b.jet(&[0.6], 4).is_zero());
    }

    #[test]
    fn bump_jet_matches_differences() {
        let b = Bump::new(vec![0.1, -0.2], 0.8);
        let x = [0.3, 0.1];
        let j = b.jet(&x, 3);
        let h = 1e-5;
        let fd = (b.eval(&[x[0] + h, x[1]]) - b.eval(&[x[0] - h, x[1]])) / (2.0 * h);
        assert!((j.partial(&[1, 0]) - fd).abs() < 1e-8);
        let fd2 = (b.eval(&[x[0], x[1] + h]) - 2.0 * b.eval(&x) + b.eval(&[x[0], x[1] - h])) / (h * h);
        assert!((j.partial(&[0, 2]) - fd2).abs() < 1e-4);
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(1.2), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for &y in &[0.1, 0.3, 0.77] {
            assert!((smooth_step(y) + smooth_step(1.0 - y) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn plateau_levels() {
        let p = Plateau::new(vec![0.0], 0.4, 0.8);
        assert_eq!(p.eval(&[0.3]), 1.0);
        assert_eq!(p.eval(&[0.85]), 0.0);
        let v = p.eval(&[0.6]);
        assert!(v > 0.0 && v < 1.0);
        let j = p.jet(&[0.6], 2);
        let h = 1e-6;
        let fd = (p.eval(&[0.6 + h]) - p.eval(&[0.6 - h])) / (2.0 * h);
        assert!((j.partial(&[1]) - fd).abs() < 1e-7);
    }

    #[test]
    fn standard_free_values() {
        let f = PolyMap::standard_free(1, 2);
        assert_eq!(f.eval(&[2.0]), vec![2.0, 4.0]);
        let g = PolyMap::standard_free(2, 5);
        assert_eq!(g.eval(&[1.0, 1.0]), vec![1.0; 5]);
        let j = g.jet(&[0.5, -1.0], 2);
        assert!((j[3].partial(&[1, 1]) - 1.0).abs() < 1e-15);
        assert!((j[2].partial(&[2, 0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_pullback_chain_rule() {
        let b = Arc::new(Bump::new(vec![0.0, 0.0], 1.0));
        let lp = LinearPullback {
            inner: b.clone(),
            ainv: vec![1.0, -1.0, 1.0, 1.0],
        };
        let xh = [0.2, 0.1];
        let j = JetFn::jet(&lp, &xh, 2);
        let h = 1e-6;
        let fd = (JetFn::eval(&lp, &[0.2 + h, 0.1]) - JetFn::eval(&lp, &[0.2 - h, 0.1])) / (2.0 * h);
        assert!((j.partial(&[1, 0]) - fd).abs() < 1e-8);
        assert!((j.value() - b.eval(&[0.1, 0.3])).abs() < 1e-15);
    }
}
