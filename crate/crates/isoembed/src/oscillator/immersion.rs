//! Periodic immersions `ℝⁿ → ℝ^{n+1}` with a triangular derivative pattern.

use crate::error::{Error, Result};
use crate::jet::{space, Jet, JetVec};
use crate::linalg::{sym_eigenvalues, DenseMatrix};

/// Level scales tried before certification gives up.
const MAX_HALVINGS: usize = 30;

/// Immersion built level by level: `F⁽¹⁾ = (cos, sin)` and
/// `F⁽ᵐ⁺¹⁾(y₁, y') = (ε cos y₁, F⁽ᵐ⁾(y') + ε sin y₁ N⁽ᵐ⁾(y'))` with the unit normal `N⁽ᵐ⁾`.
#[derive(Clone, Debug)]
pub struct PeriodicImmersion {
    pub n: usize,
    /// Scale of each level from 2 on.
    pub level_eps: Vec<f64>,
    /// Smallest singular value of the derivative over the certification lattice.
    pub min_singular: f64,
}

/// Signed cofactor normal of `n` column vectors in `ℝ^{n+1}` (jets).
fn cofactor_normal(cols: &[JetVec]) -> JetVec {
    let m = cols.len();
    let rows = m + 1;
    (0..rows)
        .map(|k| {
            let keep: Vec<usize> = (0..rows).filter(|&r| r != k).collect();
            let d = jet_det(
                &keep
                    .iter()
                    .map(|&r| cols.iter().map(|c| c[r].clone()).collect())
                    .collect::<Vec<Vec<Jet>>>(),
            );
            if k % 2 == 0 {
                d
            } else {
                d.neg()
            }
        })
        .collect()
}

/// Determinant by cofactor expansion (small sizes only).
fn jet_det(m: &[Vec<Jet>]) -> Jet {
    let k = m.len();
    if k == 1 {
        return m[0][0].clone();
    }
    let mut acc: Option<Jet> = None;
    for c in 0..k {
        let minor: Vec<Vec<Jet>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, v)| v.clone()).collect())
            .collect();
        let t = m[0][c].mul(&jet_det(&minor));
        let t = if c % 2 == 0 { t } else { t.neg() };
        acc = Some(match acc {
            None => t,
            Some(a) => a.add(&t),
        });
    }
    acc.unwrap()
}

impl PeriodicImmersion {
    /// Jet of the level-`m` map at `y` (`m` variables) of degree `deg`.
    fn level_jet(&self, m: usize, y: &[f64], deg: usize) -> JetVec {
        if m == 1 {
            let t = Jet::var(1, deg, 0, y[0]);
            return vec![t.cos(), t.sin()];
        }
        let eps = self.level_eps[m - 2];
        let inner = self.level_jet(m - 1, &y[1..], deg + 1);
        let cols: Vec<JetVec> = (0..m - 1).map(|i| inner.iter().map(|c| c.deriv(i)).collect()).collect();
        let nrm = cofactor_normal(&cols);
        let len = nrm.iter().fold(Jet::zero(m - 1, deg), |acc, c| acc.add(&c.mul(c))).sqrt().recip();
        let map: Vec<usize> = (1..m).collect();
        let y1 = Jet::var(m, deg, 0, y[0]);
        let (s, c) = (y1.sin(), y1.cos());
        let mut out = vec![c.scale(eps)];
        for (f, nv) in inner.iter().zip(&nrm) {
            let f = f.truncate(deg).embed(m, &map);
            let nu = nv.mul(&len).embed(m, &map);
            out.push(f.add(&s.mul(&nu).scale(eps)));
        }
        out
    }

    /// Jet over `n` variables at `y`.
    pub fn jet(&self, y: &[f64], deg: usize) -> JetVec {
        self.level_jet(self.n, y, deg)
    }

    /// Value at `y`.
    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        self.jet(y, 0).iter().map(|c| c.value()).collect()
    }

    /// Derivative matrix columns `∂_i F` at `y`.
    pub fn derivative(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let j = self.jet(y, 1);
        let sp = space(self.n);
        (0..self.n)
            .map(|i| {
                let mut e = vec![0u8; self.n];
                e[i] = 1;
                let k = sp.index_of(&e).unwrap();
                j.iter().map(|c| c.coeffs()[k]).collect()
            })
            .collect()
    }
}

fn min_singular(cols: &[Vec<f64>]) -> f64 {
    let k = cols.len();
    let mut g = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            g[i * k + j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        }
    }
    let ev = sym_eigenvalues(&DenseMatrix::from_vec(k, k, g).expect("finite"));
    ev[0].max(0.0).sqrt()
}

fn lattice(n: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in &pts {
            for k in 0..per_axis {
                let mut q: Vec<f64> = p.clone();
                q.push(2.0 * std::f64::consts::PI * (k as f64 + 0.25) / per_axis as f64);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// Builds the level-`n` immersion, halving each level scale from `1/2` until the derivative's
/// smallest singular value stays above `scale/10` on a test lattice.
pub fn periodic_immersion(n: usize) -> Result<PeriodicImmersion> {
    if n == 0 {
        return Err(Error::InvalidArgument("immersion dimension must be at least 1".into()));
    }
    let mut imm = PeriodicImmersion {
        n: 1,
        level_eps: Vec::new(),
        min_singular: 1.0,
    };
    for m in 2..=n {
        let pts = lattice(m, if m <= 2 { 16 } else { 6 });
        let mut eps = 0.5;
        let mut ok = false;
        for _ in 0..MAX_HALVINGS {
            let mut trial = imm.clone();
            trial.n = m;
            trial.level_eps.push(eps);
            let sv = pts.iter().map(|y| min_singular(&trial.derivative(y))).fold(f64::INFINITY, f64::min);
            if sv >= 0.1 * eps {
                trial.min_singular = sv;
                imm = trial;
                ok = true;
                break;
            }
            eps *= 0.5;
        }
        if !ok {
            return Err(Error::Certification(format!("no immersion scale certified at level {m}")));
        }
    }
    Ok(imm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_levels_match_closed_forms() {
        let f1 = periodic_immersion(1).unwrap();
        assert_eq!(f1.eval(&[0.0]), vec![1.0, 0.0]);
        let f2 = periodic_immersion(2).unwrap();
        assert_eq!(f2.level_eps, vec![0.5]);
        for &(x1, x2) in &[(0.3, -1.2), (2.0, 0.7), (-0.4, 3.0)] {
            let v = f2.eval(&[x1, x2]);
            let r = 1.0 + 0.5 * f64::sin(x1);
            let expect = [0.5 * f64::cos(x1), r * f64::cos(x2), r * f64::sin(x2)];
            for (a, b) in v.iter().zip(expect) {
                assert!((a - b).abs() < 1e-14);
            }
            let d = f2.derivative(&[x1, x2]);
            let cross = [
                d[0][1] * d[1][2] - d[0][2] * d[1][1],
                d[0][2] * d[1][0] - d[0][0] * d[1][2],
                d[0][0] * d[1][1] - d[0][1] * d[1][0],
            ];
            let len = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((len - (0.5 + 0.25 * f64::sin(x1))).abs() < 1e-14);
        }
    }

    #[test]
    fn triangular_pattern_and_rank() {
        for n in 1..=3 {
            let f = periodic_immersion(n).unwrap();
            assert!(f.min_singular > 0.0);
            for y in lattice(n, 3) {
                let d = f.derivative(&y);
                for l in 0..n.saturating_sub(1) {
                    for i in l + 1..n {
                        assert!(d[i][l].abs() < 1e-14, "n={n} l={l} i={i}: {}", d[i][l]);
                    }
                }
                // 2π-periodic in every argument
                for i in 0..n {
                    let mut z = y.clone();
                    z[i] += 2.0 * std::f64::consts::PI;
                    let (a, b) = (f.eval(&y), f.eval(&z));
                    assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
                }
            }
        }
    }
}
