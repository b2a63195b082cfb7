//! Periodic profiles `α₁, α₂`, the speed `ϱ`, its antiderivative `P` and the inverse `β`.

use crate::error::{invalid, Error, Result};
use crate::jet::Jet;
use crate::periodic::{spectral_antiderivative, FourierSeries, PeriodicProfile};

const SQRT3: f64 = 1.732_050_807_568_877_2;
/// Internal sample count for the antiderivative tables.
pub const TABLE_SAMPLES: usize = 1024;

/// Profile curve and derived tables.
#[derive(Clone, Debug)]
pub struct ProfilePack {
    pub m: usize,
    pub alpha1: PeriodicProfile<f64>,
    pub alpha2: PeriodicProfile<f64>,
    pub dalpha1: PeriodicProfile<f64>,
    pub dalpha2: PeriodicProfile<f64>,
    pub ddalpha1: PeriodicProfile<f64>,
    pub ddalpha2: PeriodicProfile<f64>,
    pub rho: PeriodicProfile<f64>,
    /// `P(t) = p_mean·t + p_periodic(t) − p_periodic(0)`.
    pub p_mean: f64,
    pub p_periodic: FourierSeries<f64>,
    /// Zero-mean antiderivatives of `ϱα₁` and `ϱα₂`.
    pub phi_rho_alpha: [FourierSeries<f64>; 2],
    pub rho_min: f64,
    pub rho_max: f64,
    /// `β` sampled on a working interval.
    pub beta_grid: Vec<(f64, f64)>,
}

/// `(α₁, α₂, α₁', α₂', α₁'', α₂'')` at `t`.
pub fn alpha_values(t: f64) -> [f64; 6] {
    let (s1, c1) = t.sin_cos();
    let (s3, c3) = (3.0 * t).sin_cos();
    [
        c1 - c3 / SQRT3,
        s1 + s3 / SQRT3,
        -s1 + SQRT3 * s3,
        c1 + SQRT3 * c3,
        -c1 + 3.0 * SQRT3 * c3,
        -s1 - 3.0 * SQRT3 * s3,
    ]
}

/// `ϱ(t) = √(4 + 2√3 cos 4t)`.
pub fn rho_value(t: f64) -> f64 {
    (4.0 + 2.0 * SQRT3 * (4.0 * t).cos()).sqrt()
}

/// `ϱ²` in the form `8√3(sin⁴t + cos⁴t) − 6√3 + 4`.
pub fn rho_squared_quartic(t: f64) -> f64 {
    let (s, c) = t.sin_cos();
    8.0 * SQRT3 * (s.powi(4) + c.powi(4)) - 6.0 * SQRT3 + 4.0
}

/// Jets `(α₁, α₂)` in one variable at `t`.
pub fn alpha_jets(t: f64, deg: usize) -> [Jet; 2] {
    let tj = Jet::var(1, deg, 0, t);
    let t3 = tj.scale(3.0);
    [
        tj.cos().sub(&t3.cos().scale(1.0 / SQRT3)),
        tj.sin().add(&t3.sin().scale(1.0 / SQRT3)),
    ]
}

/// Jet of `ϱ` in one variable at `t`.
pub fn rho_jet(t: f64, deg: usize) -> Jet {
    let tj = Jet::var(1, deg, 0, t);
    tj.scale(4.0).cos().scale(2.0 * SQRT3).add_const(4.0).sqrt()
}

/// Jets in `t` used by the corrector chain.
#[derive(Clone, Debug)]
pub struct TimeJets {
    pub alpha: [Jet; 2],
    pub rho: Jet,
    pub rho_inv: Jet,
    /// Zero-mean antiderivatives of `ϱα₁`, `ϱα₂`.
    pub phi_rho_alpha: [Jet; 2],
    /// `½(α₁² + α₂²)` minus its mean.
    pub phi_norm: Jet,
    /// Zero-mean antiderivative of `α₁'α₂ − α₂'α₁`.
    pub phi_wronski: Jet,
}

impl ProfilePack {
    /// `P(t)`.
    pub fn p(&self, t: f64) -> f64 {
        self.p_mean * t + self.p_periodic.eval(t) - self.p_periodic.eval(0.0)
    }

    /// `β(s)` with `P(β(s)) = s` by safeguarded Newton.
    pub fn beta(&self, s: f64) -> Result<f64> {
        let (mut lo, mut hi) = if s >= 0.0 {
            (s / self.rho_max, s / self.rho_min)
        } else {
            (s / self.rho_min, s / self.rho_max)
        };
        let mut t = s / self.p_mean;
        for _ in 0..100 {
            let r = self.p(t) - s;
            if r.abs() <= 1e-14 * (1.0 + s.abs()) {
                return Ok(t);
            }
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let next = t - r / rho_value(t);
            t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 * (1.0 + s.abs()) {
                return Ok(t);
            }
        }
        Err(Error::NoConvergence(format!("inverse of P at {s}")))
    }

    /// Taylor jet of `β` in one variable at `s`.
    pub fn beta_jet(&self, s: f64, deg: usize) -> Result<Jet> {
        let b0 = self.beta(s)?;
        let rho_t = rho_jet(b0, deg);
        let p_t = rho_t.integrate(0).add_const(self.p(b0));
        let target = Jet::var(1, deg, 0, s);
        let mut b = Jet::constant(1, deg, b0);
        // Newton on jets: each pass at least doubles the number of correct coefficients
        for _ in 0..=deg {
            let pb = b.compose_uni(p_t.coeffs());
            let rb = b.compose_uni(rho_t.coeffs());
            let r = pb.sub(&target);
            let next = b.sub(&r.div(&rb));
            let done = next.sub(&b).max_abs() == 0.0;
            b = next;
            if done {
                break;
            }
        }
        Ok(b)
    }

    /// Time jets at `t` over one variable.
    pub fn time_jets(&self, t: f64, deg: usize) -> TimeJets {
        let alpha = alpha_jets(t, deg);
        let rho = rho_jet(t, deg);
        let rho_inv = rho.recip();
        let phi_rho_alpha = [0, 1].map(|i| {
            rho.mul(&alpha[i])
                .truncate(deg.saturating_sub(1))
                .integrate(0)
                .add_const(self.phi_rho_alpha[i].eval(t))
        });
        let phi_norm = alpha[0]
            .mul(&alpha[0])
            .add(&alpha[1].mul(&alpha[1]))
            .scale(0.5)
            .add_const(-2.0 / 3.0);
        let (s4, _) = (4.0 * t).sin_cos();
        let w = alpha[0].deriv(0).mul(&alpha[1]).sub(&alpha[1].deriv(0).mul(&alpha[0]));
        let phi_wronski = w.integrate(0).add_const(-s4 / (2.0 * SQRT3));
        TimeJets {
            alpha,
            rho,
            rho_inv,
            phi_rho_alpha,
            phi_norm,
            phi_wronski,
        }
    }
}

/// Builds the profile pack from `m` samples (power of two, at least 64).
pub fn build_profiles(m: usize) -> Result<ProfilePack> {
    if m < 64 || !m.is_power_of_two() {
        return invalid(format!("profile sample count {m} must be a power of two >= 64"));
    }
    let prof = |k: usize| PeriodicProfile::from_fn(m, move |t: f64| alpha_values(t)[k]);
    let rho = PeriodicProfile::from_fn(m, rho_value)?;
    let rho_t = PeriodicProfile::from_fn(TABLE_SAMPLES, rho_value)?;
    let (p_mean, p_per) = spectral_antiderivative(&rho_t);
    let mut phi = Vec::new();
    for k in 0..2 {
        let f = PeriodicProfile::from_fn(TABLE_SAMPLES, |t: f64| rho_value(t) * alpha_values(t)[k])?;
        let (mean, anti) = spectral_antiderivative(&f);
        if mean.abs() > 1e-12 {
            return invalid(format!("profile moment {k} has nonzero mean {mean:e}"));
        }
        phi.push(anti.series());
    }
    let rho_min = (4.0 - 2.0 * SQRT3).sqrt();
    let rho_max = (4.0 + 2.0 * SQRT3).sqrt();
    let mut pack = ProfilePack {
        m,
        alpha1: prof(0)?,
        alpha2: prof(1)?,
        dalpha1: prof(2)?,
        dalpha2: prof(3)?,
        ddalpha1: prof(4)?,
        ddalpha2: prof(5)?,
        rho,
        p_mean,
        p_periodic: p_per.series(),
        phi_rho_alpha: [phi[0].clone(), phi[1].clone()],
        rho_min,
        rho_max,
        beta_grid: Vec::new(),
    };
    let mut grid = Vec::new();
    for k in 0..=200 {
        let s = -10.0 + 0.1 * k as f64;
        grid.push((s, pack.beta(s)?));
    }
    pack.beta_grid = grid;
    Ok(pack)
}

/// Pointwise Wronskian `α₁'α₂'' − α₂'α₁''` at the profile samples.
pub fn wronskian(p: &ProfilePack) -> Vec<f64> {
    let (d1, d2, e1, e2) = (p.dalpha1.samples(), p.dalpha2.samples(), p.ddalpha1.samples(), p.ddalpha2.samples());
    (0..p.m).map(|k| d1[k] * e2[k] - d2[k] * e1[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic::periodic_quadrature;

    #[test]
    fn closed_forms() {
        assert!((rho_value(0.0) - (1.0 + SQRT3)).abs() < 1e-14);
        let v = alpha_values(0.0);
        assert!(v[2].abs() < 1e-15 && (v[3] - (1.0 + SQRT3)).abs() < 1e-14);
        let w0 = v[2] * v[5] - v[3] * v[4];
        assert!((w0 - (-2.0 * SQRT3 - 8.0)).abs() < 1e-12);
        for k in 0..50 {
            let t = -3.0 + 0.13 * k as f64;
            assert!((rho_value(t).powi(2) - rho_squared_quartic(t)).abs() < 1e-12);
            let a = alpha_values(t);
            assert!((a[2].hypot(a[3]) - rho_value(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn moments_vanish() {
        let p = build_profiles(256).unwrap();
        for a in [&p.alpha1, &p.alpha2] {
            assert!(periodic_quadrature(&a.mul(&p.rho)).abs() < 1e-10);
        }
        assert!(wronskian(&p).iter().all(|&w| w <= 2.0 * SQRT3 - 8.0 + 1e-9));
        assert!((p.rho_min - p.rho.samples().iter().cloned().fold(f64::INFINITY, f64::min)).abs() < 1e-10);
    }

    #[test]
    fn beta_inverts_p() {
        let p = build_profiles(64).unwrap();
        for &(s, b) in &p.beta_grid {
            assert!((p.p(b) - s).abs() < 1e-8);
        }
        let j = p.beta_jet(0.7, 6).unwrap();
        let b = j.value();
        assert!((j.partial(&[1]) * rho_value(b) - 1.0).abs() < 1e-12);
        // second derivative: β'' = −ϱ'(β)β'/ϱ² = −ϱ'(β)/ϱ³
        let r = rho_jet(b, 2);
        let expect = -r.partial(&[1]) / rho_value(b).powi(3);
        assert!((j.partial(&[2]) - expect).abs() < 1e-11);
    }

    #[test]
    fn time_jets_are_antiderivatives() {
        let p = build_profiles(64).unwrap();
        let t = 0.4;
        let tj = p.time_jets(t, 5);
        let h = 1e-5;
        for i in 0..2 {
            let fd = (p.phi_rho_alpha[i].eval(t + h) - p.phi_rho_alpha[i].eval(t - h)) / (2.0 * h);
            assert!((fd - rho_value(t) * alpha_values(t)[i]).abs() < 1e-8);
            assert!((tj.phi_rho_alpha[i].partial(&[1]) - rho_value(t) * alpha_values(t)[i]).abs() < 1e-13);
        }
        // ½(α₁²+α₂²) − 2/3 = −cos(4t)/√3
        assert!((tj.phi_norm.value() + (4.0 * t).cos() / SQRT3).abs() < 1e-14);
        let w = -2.0 / SQRT3 * (4.0 * t).cos();
        assert!((tj.phi_wronski.partial(&[1]) - w).abs() < 1e-13);
    }
}
