//! Truncated multivariate Taylor polynomials.
//!
//! A [`Jet`] holds the Taylor coefficients of a function around a fixed point in
//! graded monomial order, so a lower-degree jet is a prefix of a higher one.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Highest supported total degree for `nv` variables.
pub fn max_degree(nv: usize) -> usize {
    match nv {
        1 => 40,
        2 => 24,
        3 => 16,
        _ => 8,
    }
}
/// Highest supported number of variables.
pub const MAXVARS: usize = 4;

/// Monomial tables for a fixed number of variables.
#[derive(Debug)]
pub struct JetSpace {
    pub nv: usize,
    pub maxdeg: usize,
    exps: Vec<[u8; MAXVARS]>,
    /// `deg_start[d]` is the index of the first monomial of degree `d`.
    deg_start: Vec<usize>,
    /// `(i, j, k)` with `x^i x^j = x^k`, sorted by the degree of `k`.
    mul: Vec<(u32, u32, u32)>,
    /// Number of `mul` entries whose output degree is at most `d`.
    mul_end: Vec<usize>,
    /// Per variable and target monomial `k`: source `x^{k + e_v}` and factor `k_v + 1`.
    deriv: Vec<Vec<(u32, f64)>>,
    index: HashMap<[u8; MAXVARS], usize>,
}

impl JetSpace {
    fn build(nv: usize) -> JetSpace {
        let maxdeg = max_degree(nv);
        let mut exps: Vec<[u8; MAXVARS]> = Vec::new();
        let mut deg_start = Vec::with_capacity(maxdeg + 2);
        for d in 0..=maxdeg {
            deg_start.push(exps.len());
            let mut cur = [0u8; MAXVARS];
            gen(nv, d, 0, &mut cur, &mut exps);
        }
        deg_start.push(exps.len());
        let index: HashMap<[u8; MAXVARS], usize> = exps.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let degree = |e: &[u8; MAXVARS]| e.iter().map(|&v| v as usize).sum::<usize>();
        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                if degree(a) + degree(b) > maxdeg {
                    continue;
                }
                let mut c = [0u8; MAXVARS];
                for v in 0..MAXVARS {
                    c[v] = a[v] + b[v];
                }
                mul.push((i as u32, j as u32, index[&c] as u32));
            }
        }
        mul.sort_by_key(|&(_, _, k)| k);
        let mut mul_end = vec![0; maxdeg + 1];
        for (d, end) in mul_end.iter_mut().enumerate() {
            *end = mul.partition_point(|&(_, _, k)| (k as usize) < deg_start[d + 1]);
        }
        let mut deriv = Vec::with_capacity(nv);
        for v in 0..nv {
            let mut tab = Vec::with_capacity(exps.len());
            for e in &exps {
                let mut s = *e;
                s[v] += 1;
                match index.get(&s) {
                    Some(&src) => tab.push((src as u32, s[v] as f64)),
                    None => tab.push((u32::MAX, 0.0)),
                }
            }
            deriv.push(tab);
        }
        JetSpace {
            nv,
            maxdeg,
            exps,
            deg_start,
            mul,
            mul_end,
            deriv,
            index,
        }
    }

    /// Number of monomials of degree at most `d`.
    pub fn size(&self, d: usize) -> usize {
        self.deg_start[d + 1]
    }
    /// Exponent vector of monomial `k`.
    pub fn exponents(&self, k: usize) -> &[u8] {
        &self.exps[k][..self.nv]
    }
    /// Total degree of monomial `k`.
    pub fn degree_of(&self, k: usize) -> usize {
        self.deg_start.partition_point(|&s| s <= k) - 1
    }
    /// Index of the monomial with the given exponents.
    pub fn index_of(&self, e: &[u8]) -> Option<usize> {
        let mut key = [0u8; MAXVARS];
        key[..e.len()].copy_from_slice(e);
        self.index.get(&key).copied()
    }
}

fn gen(nv: usize, d: usize, v: usize, cur: &mut [u8; MAXVARS], out: &mut Vec<[u8; MAXVARS]>) {
    if v + 1 == nv {
        cur[v] = d as u8;
        out.push(*cur);
        cur[v] = 0;
        return;
    }
    for k in (0..=d).rev() {
        cur[v] = k as u8;
        gen(nv, d - k, v + 1, cur, out);
    }
    cur[v] = 0;
}

/// Shared monomial tables for `nv` variables.
pub fn space(nv: usize) -> &'static JetSpace {
    assert!((1..=MAXVARS).contains(&nv), "jet variable count {nv} unsupported");
    static CACHE: OnceLock<Mutex<[Option<&'static JetSpace>; MAXVARS + 1]>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new([None; MAXVARS + 1]));
    let mut guard = cache.lock().expect("jet space cache");
    if let Some(sp) = guard[nv] {
        return sp;
    }
    let sp: &'static JetSpace = Box::leak(Box::new(JetSpace::build(nv)));
    guard[nv] = Some(sp);
    sp
}

/// Truncated Taylor polynomial of total degree `deg`.
#[derive(Clone, Debug)]
pub struct Jet {
    sp: &'static JetSpace,
    deg: usize,
    c: Vec<f64>,
}

impl Jet {
    /// Zero jet.
    pub fn zero(nv: usize, deg: usize) -> Jet {
        let sp = space(nv);
        assert!(deg <= sp.maxdeg, "jet degree {deg} exceeds {}", sp.maxdeg);
        Jet {
            sp,
            deg,
            c: vec![0.0; sp.size(deg)],
        }
    }
    /// Constant jet.
    pub fn constant(nv: usize, deg: usize, v: f64) -> Jet {
        let mut j = Jet::zero(nv, deg);
        j.c[0] = v;
        j
    }
    /// Jet of the coordinate `value + δ_var`.
    pub fn var(nv: usize, deg: usize, var: usize, value: f64) -> Jet {
        let mut j = Jet::constant(nv, deg, value);
        if deg >= 1 {
            let mut e = [0u8; MAXVARS];
            e[var] = 1;
            let k = j.sp.index_of(&e[..nv]).expect("linear monomial");
            j.c[k] = 1.0;
        }
        j
    }
    /// Jet from raw coefficients in graded order.
    pub fn from_coeffs(nv: usize, deg: usize, c: Vec<f64>) -> Jet {
        let sp = space(nv);
        assert_eq!(c.len(), sp.size(deg));
        Jet { sp, deg, c }
    }
    pub fn nv(&self) -> usize {
        self.sp.nv
    }
    pub fn deg(&self) -> usize {
        self.deg
    }
    pub fn space(&self) -> &'static JetSpace {
        self.sp
    }
    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }
    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }
    /// Value at the expansion point.
    pub fn value(&self) -> f64 {
        self.c[0]
    }
    /// Coefficient of the monomial with exponents `e` (zero beyond the degree).
    pub fn coeff(&self, e: &[u8]) -> f64 {
        match self.sp.index_of(e) {
            Some(k) if k < self.c.len() => self.c[k],
            _ => 0.0,
        }
    }
    /// Partial derivative `∂^e` at the expansion point.
    pub fn partial(&self, e: &[u8]) -> f64 {
        let fact: f64 = e.iter().map(|&k| (1..=k as u64).product::<u64>() as f64).product();
        self.coeff(e) * fact
    }
    /// True when every coefficient is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }
    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    /// Drops terms above degree `d`.
    pub fn truncate(&self, d: usize) -> Jet {
        let d = d.min(self.deg);
        Jet {
            sp: self.sp,
            deg: d,
            c: self.c[..self.sp.size(d)].to_vec(),
        }
    }
    /// Raises the nominal degree by zero padding (only valid for exact polynomials).
    pub fn pad(&self, d: usize) -> Jet {
        let mut c = self.c.clone();
        c.resize(self.sp.size(d.max(self.deg)), 0.0);
        Jet {
            sp: self.sp,
            deg: d.max(self.deg),
            c,
        }
    }

    fn check(&self, o: &Jet) {
        debug_assert!(std::ptr::eq(self.sp, o.sp), "jets over different variable sets");
    }
    pub fn add(&self, o: &Jet) -> Jet {
        self.check(o);
        let d = self.deg.min(o.deg);
        let c = (0..self.sp.size(d)).map(|k| self.c[k] + o.c[k]).collect();
        Jet { sp: self.sp, deg: d, c }
    }
    pub fn sub(&self, o: &Jet) -> Jet {
        self.check(o);
        let d = self.deg.min(o.deg);
        let c = (0..self.sp.size(d)).map(|k| self.c[k] - o.c[k]).collect();
        Jet { sp: self.sp, deg: d, c }
    }
    /// `self += s * o`, truncating to the lower degree.
    pub fn axpy(&mut self, s: f64, o: &Jet) {
        self.check(o);
        if o.deg < self.deg {
            *self = self.truncate(o.deg);
        }
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += s * b;
        }
    }
    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            sp: self.sp,
            deg: self.deg,
            c: self.c.iter().map(|v| v * s).collect(),
        }
    }
    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }
    pub fn add_const(&self, v: f64) -> Jet {
        let mut j = self.clone();
        j.c[0] += v;
        j
    }
    pub fn mul(&self, o: &Jet) -> Jet {
        self.check(o);
        let d = self.deg.min(o.deg);
        let mut c = vec![0.0; self.sp.size(d)];
        for &(i, j, k) in &self.sp.mul[..self.sp.mul_end[d]] {
            let a = self.c[i as usize];
            if a != 0.0 {
                c[k as usize] += a * o.c[j as usize];
            }
        }
        Jet { sp: self.sp, deg: d, c }
    }
    /// Derivative in variable `v`; the degree drops by one.
    pub fn deriv(&self, v: usize) -> Jet {
        assert!(self.deg >= 1, "derivative of a degree-0 jet");
        let d = self.deg - 1;
        let tab = &self.sp.deriv[v];
        let c = (0..self.sp.size(d)).map(|k| {
            let (src, f) = tab[k];
            f * self.c[src as usize]
        });
        Jet {
            sp: self.sp,
            deg: d,
            c: c.collect(),
        }
    }
    /// Antiderivative in variable `v` vanishing on `δ_v = 0`; the degree rises by one.
    pub fn integrate(&self, v: usize) -> Jet {
        let d = (self.deg + 1).min(self.sp.maxdeg);
        let mut c = vec![0.0; self.sp.size(d)];
        let tab = &self.sp.deriv[v];
        for k in 0..self.sp.size(self.deg.min(d - 1)) {
            let (dst, f) = tab[k];
            c[dst as usize] = self.c[k] / f;
        }
        Jet { sp: self.sp, deg: d, c }
    }
    /// Evaluates the polynomial at displacement `dx`.
    pub fn eval(&self, dx: &[f64]) -> f64 {
        let nv = self.sp.nv;
        let mut pw = vec![vec![1.0; self.deg + 1]; nv];
        for v in 0..nv {
            for k in 1..=self.deg {
                pw[v][k] = pw[v][k - 1] * dx[v];
            }
        }
        self.c
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let e = &self.sp.exps[k];
                a * (0..nv).map(|v| pw[v][e[v] as usize]).product::<f64>()
            })
            .sum()
    }

    /// `f(self)` from the Taylor coefficients `taylor[k] = f^{(k)}(self(0)) / k!`.
    pub fn compose_uni(&self, taylor: &[f64]) -> Jet {
        let d = self.deg;
        let mut g = self.clone();
        g.c[0] = 0.0;
        let top = d.min(taylor.len() - 1);
        let mut acc = Jet::constant(self.sp.nv, d, taylor[top]);
        for k in (0..top).rev() {
            acc = acc.mul(&g);
            acc.c[0] += taylor[k];
        }
        acc
    }
    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let mut t = vec![e; self.deg + 1];
        for k in 1..t.len() {
            t[k] = t[k - 1] / k as f64;
        }
        self.compose_uni(&t)
    }
    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose_uni(&trig_taylor(s, c, self.deg))
    }
    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose_uni(&trig_taylor(c, -s, self.deg))
    }
    /// `self^p` for real `p`, requires a positive value.
    pub fn powf(&self, p: f64) -> Jet {
        let g0 = self.value();
        let mut t = vec![g0.powf(p); self.deg + 1];
        for k in 1..t.len() {
            t[k] = t[k - 1] * (p - (k - 1) as f64) / (k as f64 * g0);
        }
        self.compose_uni(&t)
    }
    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }
    pub fn recip(&self) -> Jet {
        let g0 = self.value();
        let mut t = vec![1.0 / g0; self.deg + 1];
        for k in 1..t.len() {
            t[k] = -t[k - 1] / g0;
        }
        self.compose_uni(&t)
    }
    pub fn div(&self, o: &Jet) -> Jet {
        self.mul(&o.recip())
    }
    pub fn powi(&self, p: u32) -> Jet {
        let mut acc = Jet::constant(self.sp.nv, self.deg, 1.0);
        for _ in 0..p {
            acc = acc.mul(self);
        }
        acc
    }

    /// Substitutes `δ_v = subs[v]` (jets with zero constant term over another variable set).
    pub fn compose(&self, subs: &[Jet]) -> Jet {
        let nv = self.sp.nv;
        assert_eq!(subs.len(), nv);
        let tsp = subs[0].sp;
        let d = subs.iter().map(|s| s.deg).min().unwrap();
        let td = self.deg.max(1);
        debug_assert!(subs.iter().all(|s| s.c[0].abs() < 1e-300 || s.deg == 0));
        let mut pw: Vec<Vec<Jet>> = Vec::with_capacity(nv);
        for s in subs {
            let s = s.truncate(d);
            let mut p = vec![Jet::constant(tsp.nv, d, 1.0)];
            for k in 1..=td.min(d) {
                let next = p[k - 1].mul(&s);
                p.push(next);
            }
            pw.push(p);
        }
        let mut out = Jet::zero(tsp.nv, d);
        for (k, &a) in self.c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let e = &self.sp.exps[k];
            if e[..nv].iter().map(|&x| x as usize).sum::<usize>() > d {
                continue;
            }
            let mut term: Option<Jet> = None;
            for v in 0..nv {
                let ev = e[v] as usize;
                if ev == 0 {
                    continue;
                }
                term = Some(match term {
                    None => pw[v][ev].clone(),
                    Some(t) => t.mul(&pw[v][ev]),
                });
            }
            match term {
                None => out.c[0] += a,
                Some(t) => out.axpy(a, &t),
            }
        }
        out
    }

    /// Re-expresses the jet over `target_nv` variables, variable `v` becoming `var_map[v]`.
    pub fn embed(&self, target_nv: usize, var_map: &[usize]) -> Jet {
        let tsp = space(target_nv);
        let mut c = vec![0.0; tsp.size(self.deg)];
        for (k, &a) in self.c.iter().enumerate() {
            let e = &self.sp.exps[k];
            let mut t = [0u8; MAXVARS];
            for v in 0..self.sp.nv {
                t[var_map[v]] += e[v];
            }
            c[tsp.index[&t]] += a;
        }
        Jet { sp: tsp, deg: self.deg, c }
    }

    /// Restricts to the variables in `keep` (others set to zero displacement).
    pub fn restrict(&self, keep: &[usize]) -> Jet {
        let tsp = space(keep.len());
        let mut c = vec![0.0; tsp.size(self.deg)];
        for (k, &a) in self.c.iter().enumerate() {
            let e = &self.sp.exps[k];
            if (0..self.sp.nv).any(|v| e[v] != 0 && !keep.contains(&v)) {
                continue;
            }
            let mut t = [0u8; MAXVARS];
            for (i, &v) in keep.iter().enumerate() {
                t[i] = e[v];
            }
            c[tsp.index[&t]] += a;
        }
        Jet { sp: tsp, deg: self.deg, c }
    }
}

fn trig_taylor(f0: f64, f1: f64, deg: usize) -> Vec<f64> {
    // derivatives cycle f0, f1, -f0, -f1
    let mut t = Vec::with_capacity(deg + 1);
    let mut fact = 1.0;
    for k in 0..=deg {
        if k > 0 {
            fact *= k as f64;
        }
        let v = match k % 4 {
            0 => f0,
            1 => f1,
            2 => -f0,
            _ => -f1,
        };
        t.push(v / fact);
    }
    t
}

/// Vector of jets.
pub type JetVec = Vec<Jet>;

/// `Σ a_i b_i`.
pub fn jdot(a: &[Jet], b: &[Jet]) -> Jet {
    let mut acc = a[0].mul(&b[0]);
    for (x, y) in a.iter().zip(b).skip(1) {
        let p = x.mul(y);
        acc = acc.add(&p);
    }
    acc
}

/// Componentwise `a + b`.
pub fn jvadd(a: &[Jet], b: &[Jet]) -> JetVec {
    a.iter().zip(b).map(|(x, y)| x.add(y)).collect()
}

/// Componentwise `a - b`.
pub fn jvsub(a: &[Jet], b: &[Jet]) -> JetVec {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

/// Scalar-jet times vector.
pub fn jvscale(s: &Jet, a: &[Jet]) -> JetVec {
    a.iter().map(|x| x.mul(s)).collect()
}

/// Constant times vector.
pub fn jvscale_f(s: f64, a: &[Jet]) -> JetVec {
    a.iter().map(|x| x.scale(s)).collect()
}

/// Componentwise derivative.
pub fn jvderiv(a: &[Jet], v: usize) -> JetVec {
    a.iter().map(|x| x.deriv(v)).collect()
}

/// Componentwise truncation.
pub fn jvtrunc(a: &[Jet], d: usize) -> JetVec {
    a.iter().map(|x| x.truncate(d)).collect()
}

/// Values at the expansion point.
pub fn jvvalue(a: &[Jet]) -> Vec<f64> {
    a.iter().map(|x| x.value()).collect()
}

/// Vector of constant jets.
pub fn jvconst(nv: usize, deg: usize, v: &[f64]) -> JetVec {
    v.iter().map(|&x| Jet::constant(nv, deg, x)).collect()
}

/// Solves the square system `A x = b` with jet entries (Gaussian elimination with
/// pivoting on the constant terms). `a` is row-major `k × k`.
pub fn jsolve(a: &[Jet], b: &[Jet]) -> Option<JetVec> {
    let k = b.len();
    let mut m: Vec<Jet> = a.to_vec();
    let mut x: Vec<Jet> = b.to_vec();
    for col in 0..k {
        let p = (col..k).max_by(|&i, &j| m[i * k + col].value().abs().partial_cmp(&m[j * k + col].value().abs()).unwrap())?;
        if m[p * k + col].value().abs() < 1e-300 {
            return None;
        }
        if p != col {
            for j in 0..k {
                m.swap(col * k + j, p * k + j);
            }
            x.swap(col, p);
        }
        let inv = m[col * k + col].recip();
        for i in col + 1..k {
            let f = m[i * k + col].mul(&inv);
            if f.is_zero() {
                continue;
            }
            for j in col..k {
                let t = f.mul(&m[col * k + j]);
                m[i * k + j] = m[i * k + j].sub(&t);
            }
            let t = f.mul(&x[col]);
            x[i] = x[i].sub(&t);
        }
    }
    for i in (0..k).rev() {
        let mut s = x[i].clone();
        for j in i + 1..k {
            let t = m[i * k + j].mul(&x[j]);
            s = s.sub(&t);
        }
        x[i] = s.div(&m[i * k + i]);
    }
    Some(x)
}

/// Least-norm solution `x = Aᵀ(AAᵀ)⁻¹b` of `A x = b` with jet-valued rows `A` (each of length `q`).
///
/// Returns the solution and the Gram determinant of the rows at the expansion point.
pub fn jleast_norm(rows: &[JetVec], b: &[Jet]) -> Option<(JetVec, f64)> {
    let k = rows.len();
    let mut g = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            g.push(if j < i {
                Jet::clone(&g[j * k + i])
            } else {
                jdot(&rows[i], &rows[j])
            });
        }
    }
    let g0: Vec<Vec<f64>> = rows.iter().map(|r| jvvalue(r)).collect();
    let gd = crate::linalg::gram_det(&g0).ok()?;
    let y = jsolve(&g, b)?;
    let q = rows[0].len();
    let mut x: JetVec = (0..q).map(|c| rows[0][c].mul(&y[0])).collect();
    for i in 1..k {
        for c in 0..q {
            let t = rows[i][c].mul(&y[i]);
            x[c] = x[c].add(&t);
        }
    }
    Some((x, gd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_order_and_sizes() {
        let sp = space(2);
        assert_eq!(sp.size(0), 1);
        assert_eq!(sp.size(1), 3);
        assert_eq!(sp.size(2), 6);
        assert_eq!(sp.exponents(1), &[1, 0]);
        assert_eq!(sp.exponents(2), &[0, 1]);
        assert_eq!(sp.degree_of(5), 2);
    }

    #[test]
    fn product_and_derivative() {
        let x = Jet::var(2, 4, 0, 0.5);
        let y = Jet::var(2, 4, 1, -1.0);
        let p = x.mul(&y).mul(&x);
        // p = x² y: ∂x = 2xy, ∂y = x²
        assert!((p.value() - (-0.25)).abs() < 1e-15);
        assert!((p.deriv(0).value() - (-1.0)).abs() < 1e-15);
        assert!((p.deriv(1).value() - 0.25).abs() < 1e-15);
        assert!((p.partial(&[2, 1]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn elementary_functions() {
        let x = Jet::var(1, 8, 0, 0.3);
        let s = x.sin();
        let c = x.cos();
        let one = s.mul(&s).add(&c.mul(&c));
        assert!((one.value() - 1.0).abs() < 1e-15);
        assert!(one.coeffs()[1..].iter().all(|v| v.abs() < 1e-14));
        let e = x.exp();
        for k in 0..=8u8 {
            assert!((e.partial(&[k]) - 0.3f64.exp()).abs() < 1e-11);
        }
        let r = x.sqrt().mul(&x.sqrt());
        assert!((r.value() - 0.3).abs() < 1e-15 && (r.coeffs()[1] - 1.0).abs() < 1e-13);
        let q = x.recip().mul(&x);
        assert!(q.coeffs()[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn composition_chain_rule() {
        // f(u, v) = u v², u = sin s, v = s²  (expanded at s0 = 0.7, u0, v0)
        let s0: f64 = 0.7;
        let f = Jet::var(2, 5, 0, s0.sin()).mul(&Jet::var(2, 5, 1, s0 * s0).powi(2));
        let s = Jet::var(1, 5, 0, s0);
        let du = s.sin().add_const(-s0.sin());
        let dv = s.mul(&s).add_const(-s0 * s0);
        let g = f.compose(&[du, dv]);
        let direct = s.sin().mul(&s.mul(&s).powi(2));
        for (a, b) in g.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn integrate_inverts_derivative() {
        let x = Jet::var(2, 6, 0, 0.2);
        let y = Jet::var(2, 6, 1, 0.1);
        let f = x.mul(&y).exp();
        let back = f.deriv(0).integrate(0);
        // equal up to the part independent of δ_x
        let diff = f.truncate(6).sub(&back);
        for k in 0..diff.coeffs().len() {
            if diff.space().exponents(k)[0] > 0 {
                assert!(diff.coeffs()[k].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn embed_and_restrict() {
        let x = Jet::var(1, 3, 0, 2.0);
        let f = x.mul(&x);
        let g = f.embed(3, &[2]);
        assert!((g.partial(&[0, 0, 1]) - 4.0).abs() < 1e-15);
        assert!((g.restrict(&[2]).coeffs()[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn jet_least_norm_matches_pointwise() {
        let t = Jet::var(1, 4, 0, 0.4);
        let rows = vec![vec![t.cos(), t.sin(), Jet::constant(1, 4, 0.5)]];
        let b = vec![t.clone()];
        let (x, gd) = jleast_norm(&rows, &b).unwrap();
        assert!((gd - 1.25).abs() < 1e-14);
        let dt = 1e-3;
        let pt = |tv: f64| {
            let a = crate::linalg::DenseMatrix::from_rows(&[vec![tv.cos(), tv.sin(), 0.5]]).unwrap();
            crate::linalg::least_norm_solve(&a, &[tv]).unwrap()
        };
        let (lo, hi) = (pt(0.4 - dt), pt(0.4 + dt));
        for c in 0..3 {
            assert!((x[c].value() - pt(0.4)[c]).abs() < 1e-14);
            assert!((x[c].coeffs()[1] - (hi[c] - lo[c]) / (2.0 * dt)).abs() < 1e-6);
        }
    }
}
