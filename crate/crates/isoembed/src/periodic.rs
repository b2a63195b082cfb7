use crate::error::{invalid, Result};
use crate::real::Real;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Smooth `2π`-periodic function sampled at `t_k = -π + 2πk/M`, `M` a power of two.
#[derive(Clone, Debug)]
pub struct PeriodicProfile<T: Real> {
    samples: Vec<T>,
    deriv: Option<Vec<T>>,
}

/// Uniform sample points `t_k = -π + 2πk/M`.
pub fn sample_points<T: Real>(m: usize) -> Vec<T> {
    let pi = std::f64::consts::PI;
    (0..m).map(|k| T::lit(-pi + 2.0 * pi * k as f64 / m as f64)).collect()
}

impl<T: Real> PeriodicProfile<T> {
    /// Profile from samples; `M` must be a power of two, at least 2.
    pub fn new(samples: Vec<T>) -> Result<Self> {
        let m = samples.len();
        if m < 2 || !m.is_power_of_two() {
            return invalid(format!("profile sample count {m} is not a power of two >= 2"));
        }
        Ok(PeriodicProfile { samples, deriv: None })
    }
    /// Samples `f` at the uniform points.
    pub fn from_fn(m: usize, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(sample_points::<T>(m).into_iter().map(f).collect())
    }
    /// Attaches exact derivative samples.
    pub fn with_derivative(mut self, d: Vec<T>) -> Result<Self> {
        if d.len() != self.samples.len() {
            return invalid("derivative sample count mismatch");
        }
        self.deriv = Some(d);
        Ok(self)
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn samples(&self) -> &[T] {
        &self.samples
    }
    /// Derivative samples: stored ones if present, otherwise spectral.
    pub fn derivative(&self) -> Vec<T> {
        match &self.deriv {
            Some(d) => d.clone(),
            None => spectral_derivative(self).samples,
        }
    }
    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len());
        let s = self.samples.iter().zip(&other.samples).map(|(&a, &b)| a * b).collect();
        PeriodicProfile { samples: s, deriv: None }
    }
    /// Pointwise map.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        PeriodicProfile {
            samples: self.samples.iter().map(|&v| f(v)).collect(),
            deriv: None,
        }
    }
    /// Mean value `(1/2π) ∫ p`.
    pub fn mean(&self) -> T {
        self.samples.iter().copied().sum::<T>() / T::lit(self.len() as f64)
    }
    /// Trigonometric interpolant for off-grid evaluation.
    pub fn series(&self) -> FourierSeries<T> {
        FourierSeries::from_samples(&self.samples)
    }
}

/// Trapezoid rule `∫_{-π}^{π} p dt` on the periodic grid.
pub fn periodic_quadrature<T: Real>(p: &PeriodicProfile<T>) -> T {
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    p.samples.iter().copied().sum::<T>() * two_pi / T::lit(p.len() as f64)
}

/// Normalized DFT coefficients `c_k` with `p(t_j) = Σ c_k e^{ik(t_j+π)}`, FFT order.
fn dft<T: Real>(v: &[T]) -> Vec<Complex<T>> {
    let m = v.len();
    let mut buf: Vec<Complex<T>> = v.iter().map(|&x| Complex::new(x, T::zero())).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let inv = T::one() / T::lit(m as f64);
    buf.iter_mut().for_each(|c| *c = *c * inv);
    buf
}

fn idft<T: Real>(mut c: Vec<Complex<T>>) -> Vec<T> {
    let m = c.len();
    FftPlanner::new().plan_fft_inverse(m).process(&mut c);
    c.into_iter().map(|z| z.re).collect()
}

fn wavenumber(k: usize, m: usize) -> f64 {
    if k <= m / 2 {
        k as f64
    } else {
        k as f64 - m as f64
    }
}

/// Spectral derivative (Nyquist mode dropped).
pub fn spectral_derivative<T: Real>(p: &PeriodicProfile<T>) -> PeriodicProfile<T> {
    let m = p.len();
    let mut c = dft(&p.samples);
    for (k, ck) in c.iter_mut().enumerate() {
        let w = wavenumber(k, m);
        *ck = if k == m / 2 {
            Complex::new(T::zero(), T::zero())
        } else {
            *ck * Complex::new(T::zero(), T::lit(w))
        };
    }
    PeriodicProfile {
        samples: idft(c),
        deriv: None,
    }
}

/// Splits `∫ p` into `mean·t + P(t)` and returns `(mean, P)` with `P` periodic and zero-mean.
pub fn spectral_antiderivative<T: Real>(p: &PeriodicProfile<T>) -> (T, PeriodicProfile<T>) {
    let m = p.len();
    let mut c = dft(&p.samples);
    let mean = c[0].re;
    for (k, ck) in c.iter_mut().enumerate() {
        let w = wavenumber(k, m);
        *ck = if k == 0 || k == m / 2 {
            Complex::new(T::zero(), T::zero())
        } else {
            *ck / Complex::new(T::zero(), T::lit(w))
        };
    }
    let deriv = p.samples.iter().map(|&v| v - mean).collect();
    (
        mean,
        PeriodicProfile {
            samples: idft(c),
            deriv: Some(deriv),
        },
    )
}

/// Real trigonometric series `a_0 + Σ_k a_k cos kt + b_k sin kt`.
#[derive(Clone, Debug)]
pub struct FourierSeries<T: Real> {
    pub a: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> FourierSeries<T> {
    /// Interpolant of samples at `t_j = -π + 2πj/M`.
    pub fn from_samples(v: &[T]) -> Self {
        let m = v.len();
        let c = dft(v);
        let half = m / 2;
        let mut a = vec![T::zero(); half + 1];
        let mut b = vec![T::zero(); half + 1];
        a[0] = c[0].re;
        for k in 1..=half {
            // shift from s = t + π to t: factor (-1)^k
            let sign = if k % 2 == 0 { T::one() } else { -T::one() };
            let ck = c[k] * sign;
            if k == half {
                a[k] = ck.re;
            } else {
                a[k] = T::lit(2.0) * ck.re;
                b[k] = -T::lit(2.0) * ck.im;
            }
        }
        FourierSeries { a, b }
    }
    /// Value at `t`.
    pub fn eval(&self, t: T) -> T {
        self.eval_derivs(t, 0)[0]
    }
    /// Derivatives of orders `0..=order` at `t`.
    pub fn eval_derivs(&self, t: T, order: usize) -> Vec<T> {
        let mut out = vec![T::zero(); order + 1];
        out[0] = self.a[0];
        let (s1, c1) = t.sin_cos();
        let (mut s, mut c) = (T::zero(), T::one());
        for k in 1..self.a.len() {
            let ns = s * c1 + c * s1;
            let nc = c * c1 - s * s1;
            s = ns;
            c = nc;
            let kk = T::lit(k as f64);
            // d^r/dt^r of a cos + b sin cycles through (cos, -sin, -cos, sin)
            let mut w = T::one();
            for (r, o) in out.iter_mut().enumerate() {
                let term = match r % 4 {
                    0 => self.a[k] * c + self.b[k] * s,
                    1 => -self.a[k] * s + self.b[k] * c,
                    2 => -self.a[k] * c - self.b[k] * s,
                    _ => self.a[k] * s - self.b[k] * c,
                };
                *o += w * term;
                w *= kk;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sin_squared_integral() {
        let p = PeriodicProfile::<f64>::from_fn(64, |t| t.sin().powi(2)).unwrap();
        assert!((periodic_quadrature(&p) - PI).abs() < 1e-14);
        let c = PeriodicProfile::<f64>::from_fn(64, |t| t.cos()).unwrap();
        assert!(periodic_quadrature(&c).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(PeriodicProfile::<f64>::new(vec![0.0; 12]).is_err());
    }

    #[test]
    fn derivative_and_antiderivative() {
        let f = |t: f64| (3.0 * t).sin() + 0.5 * (t).cos() + 0.2;
        let p = PeriodicProfile::from_fn(64, f).unwrap();
        let d = spectral_derivative(&p);
        for (t, v) in sample_points::<f64>(64).into_iter().zip(d.samples()) {
            assert!((v - (3.0 * (3.0 * t).cos() - 0.5 * t.sin())).abs() < 1e-12);
        }
        let (mean, a) = spectral_antiderivative(&p);
        assert!((mean - 0.2).abs() < 1e-14);
        for (t, v) in sample_points::<f64>(64).into_iter().zip(a.samples()) {
            assert!((v - (-(3.0 * t).cos() / 3.0 + 0.5 * t.sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn series_evaluates_off_grid() {
        let f = |t: f64| (2.0 * t).sin() - (5.0 * t).cos();
        let s = PeriodicProfile::from_fn(32, f).unwrap().series();
        for &t in &[0.1, -2.7, 3.0] {
            let v = s.eval_derivs(t, 2);
            assert!((v[0] - f(t)).abs() < 1e-13);
            assert!((v[1] - (2.0 * (2.0 * t).cos() + 5.0 * (5.0 * t).sin())).abs() < 1e-12);
            assert!((v[2] - (-4.0 * (2.0 * t).sin() + 25.0 * (5.0 * t).cos())).abs() < 1e-11);
        }
    }

    #[test]
    fn f32_quadrature() {
        let p = PeriodicProfile::<f32>::from_fn(64, |t| t.sin().powi(2)).unwrap();
        assert!((periodic_quadrature(&p) - std::f32::consts::PI).abs() < 1e-5);
    }
}
