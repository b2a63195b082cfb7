use crate::error::{invalid, Result};
use crate::fd::{deriv1, deriv2};
use crate::field::Field;
use crate::grid::BallGrid;
use crate::real::Real;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Node budget and seed for the Hölder estimators.
#[derive(Clone, Copy, Debug)]
pub struct HolderOptions {
    /// Above this many closed-ball nodes the pair search is sampled.
    pub p_max: usize,
    pub seed: u64,
}

impl Default for HolderOptions {
    fn default() -> Self {
        HolderOptions { p_max: 5000, seed: 0 }
    }
}

/// Discrete Hölder seminorm; `exact` is false when the value is a sampled lower bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HolderEstimate<T> {
    pub value: T,
    pub exact: bool,
}

/// One derivative term of a [`HolderNorm`].
#[derive(Clone, Debug, Serialize)]
pub struct HolderTerm<T> {
    /// Differentiation axes, e.g. `[0, 0, 1]` for `∂₁∂₁∂₂`.
    pub axes: Vec<usize>,
    pub sup: T,
    pub seminorm: T,
}

/// Discrete `C^{m,α}` norm with its per-term breakdown.
#[derive(Clone, Debug, Serialize)]
pub struct HolderNorm<T> {
    pub alpha: T,
    pub m: usize,
    pub value: T,
    /// The `C^{0,α}` part.
    pub base: HolderTerm<T>,
    /// One entry per multi-index of order `m` (empty for `m = 0`).
    pub terms: Vec<HolderTerm<T>>,
    pub exact: bool,
}

/// Seminorm of node-major scalar `vals` over the given `nodes`.
fn seminorm_on<T: Real>(grid: &BallGrid<T>, vals: &[T], nodes: &[usize], alpha: T, opts: HolderOptions) -> HolderEstimate<T> {
    let half_alpha = alpha / T::lit(2.0);
    let ratio = |i: usize, j: usize| -> T {
        let d2: T = grid.coord(i).iter().zip(grid.coord(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
        if d2 <= T::zero() {
            return T::zero();
        }
        (vals[i] - vals[j]).abs() / d2.powf(half_alpha)
    };
    let all_pairs = |set: &[usize]| -> T {
        let mut best = T::zero();
        for (a, &i) in set.iter().enumerate() {
            for &j in &set[a + 1..] {
                best = best.max(ratio(i, j));
            }
        }
        best
    };
    if nodes.len() <= opts.p_max {
        return HolderEstimate {
            value: all_pairs(nodes),
            exact: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picked: Vec<usize> = sample(&mut rng, nodes.len(), opts.p_max).into_iter().map(|k| nodes[k]).collect();
    let mut best = all_pairs(&picked);
    let mut member = vec![false; grid.len()];
    for &i in nodes {
        member[i] = true;
    }
    for &i in nodes {
        for axis in 0..grid.n() {
            if let Some(j) = grid.neighbor(i, axis, 1).filter(|&j| member[j]) {
                best = best.max(ratio(i, j));
            }
        }
    }
    HolderEstimate { value: best, exact: false }
}

/// Hölder seminorm `sup |u(x) - u(y)| / |x - y|^α` over closed-ball node pairs.
pub fn holder_seminorm<T: Real>(u: &Field<T>, alpha: T) -> Result<HolderEstimate<T>> {
    holder_seminorm_with(u, alpha, HolderOptions::default())
}

/// [`holder_seminorm`] with explicit node budget and seed.
pub fn holder_seminorm_with<T: Real>(u: &Field<T>, alpha: T, opts: HolderOptions) -> Result<HolderEstimate<T>> {
    check_alpha(alpha)?;
    if u.ncomp() != 1 {
        return invalid("holder_seminorm expects a scalar field");
    }
    let nodes = u.grid().closed_ball_nodes();
    Ok(seminorm_on(u.grid(), u.data(), &nodes, alpha, opts))
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    let a = alpha.f64();
    if !(a > 0.0 && a < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {a}"));
    }
    Ok(())
}

/// Multi-indices of order `m` in `n` variables as sorted axis lists.
pub fn multi_indices(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, m: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for a in start..n {
            cur.push(a);
            rec(n, m, a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, 0, &mut Vec::new(), &mut out);
    out
}

/// Iterated finite-difference derivative along sorted `axes`.
pub fn fd_derivative<T: Real>(grid: &BallGrid<T>, data: &[T], nc: usize, axes: &[usize]) -> Vec<T> {
    let mut cur = data.to_vec();
    let mut k = 0;
    while k < axes.len() {
        if k + 1 < axes.len() && axes[k] == axes[k + 1] {
            cur = deriv2(grid, &cur, nc, axes[k]);
            k += 2;
        } else {
            cur = deriv1(grid, &cur, nc, axes[k]);
            k += 1;
        }
    }
    cur
}

fn term<T: Real>(
    grid: &BallGrid<T>,
    data: &[T],
    nc: usize,
    axes: Vec<usize>,
    nodes: &[usize],
    alpha: T,
    opts: HolderOptions,
) -> (HolderTerm<T>, bool) {
    let d = fd_derivative(grid, data, nc, &axes);
    let mut sup = T::zero();
    let mut semi = T::zero();
    let mut exact = true;
    for c in 0..nc {
        let comp: Vec<T> = (0..grid.len()).map(|p| d[p * nc + c]).collect();
        sup += nodes.iter().fold(T::zero(), |m, &p| m.max(comp[p].abs()));
        let est = seminorm_on(grid, &comp, nodes, alpha, opts);
        semi += est.value;
        exact &= est.exact;
    }
    (HolderTerm { axes, sup, seminorm: semi }, exact)
}

/// Discrete `C^{m,α}` norm: `|u|_{C^{0,α}} + Σ_{|s|=m} |∂^s u|_{C^{0,α}}`, components summed.
pub fn cm_alpha_norm<T: Real>(u: &Field<T>, m: usize, alpha: T) -> Result<HolderNorm<T>> {
    cm_alpha_norm_with(u, m, alpha, HolderOptions::default())
}

/// [`cm_alpha_norm`] with explicit node budget and seed.
pub fn cm_alpha_norm_with<T: Real>(u: &Field<T>, m: usize, alpha: T, opts: HolderOptions) -> Result<HolderNorm<T>> {
    check_alpha(alpha)?;
    if m > 3 {
        return invalid(format!("derivative order {m} exceeds 3"));
    }
    let grid = u.grid();
    let nodes = grid.closed_ball_nodes();
    let (base, mut exact) = term(grid, u.data(), u.ncomp(), Vec::new(), &nodes, alpha, opts);
    let mut value = base.sup + base.seminorm;
    let mut terms = Vec::new();
    if m > 0 {
        for axes in multi_indices(grid.n(), m) {
            let (t, e) = term(grid, u.data(), u.ncomp(), axes, &nodes, alpha, opts);
            value += t.sup + t.seminorm;
            exact &= e;
            terms.push(t);
        }
    }
    Ok(HolderNorm {
        alpha,
        m,
        value,
        base,
        terms,
        exact,
    })
}

/// Discrete `C^m` norm: largest absolute value of all derivatives of order `<= m` on the closed ball.
pub fn cm_norm<T: Real>(u: &Field<T>, m: usize) -> T {
    let grid = u.grid();
    let nodes = grid.closed_ball_nodes();
    let nc = u.ncomp();
    let mut best = T::zero();
    for k in 0..=m {
        for axes in multi_indices(grid.n(), k) {
            let d = fd_derivative(grid, u.data(), nc, &axes);
            for &p in &nodes {
                for c in 0..nc {
                    best = best.max(d[p * nc + c].abs());
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_ball_grid;

    #[test]
    fn constant_has_zero_seminorm() {
        let g = make_ball_grid::<f64>(2, 9).unwrap();
        let u = Field::scalar_fn(&g, |_| 2.0);
        assert_eq!(holder_seminorm(&u, 0.3).unwrap().value, 0.0);
    }

    #[test]
    fn identity_seminorm_sqrt2() {
        let g = make_ball_grid::<f64>(1, 33).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0]);
        let s = holder_seminorm(&u, 0.5).unwrap();
        assert!(s.exact);
        assert!((s.value - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cm_norm_of_identity() {
        let g = make_ball_grid::<f64>(1, 33).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0]);
        let h = cm_alpha_norm(&u, 1, 0.5).unwrap();
        assert!((h.value - (2.0 + 2f64.sqrt())).abs() < 1e-12);
        let one = Field::scalar_fn(&g, |_| 1.0);
        assert!((cm_alpha_norm(&one, 0, 0.5).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_order_and_alpha() {
        let g = make_ball_grid::<f64>(1, 9).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0]);
        assert!(cm_alpha_norm(&u, 4, 0.5).is_err());
        assert!(holder_seminorm(&u, 1.0).is_err());
    }

    #[test]
    fn sampled_estimate_is_flagged() {
        let g = make_ball_grid::<f64>(2, 41).unwrap();
        let u = Field::scalar_fn(&g, |x| x[0] * x[1]);
        let opts = HolderOptions { p_max: 200, seed: 3 };
        let s = holder_seminorm_with(&u, 0.5, opts).unwrap();
        let full = holder_seminorm_with(&u, 0.5, HolderOptions { p_max: 100_000, seed: 0 }).unwrap();
        assert!(!s.exact && full.exact);
        assert!(s.value <= full.value + 1e-15);
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 3).len(), 4);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(1, 0), vec![Vec::<usize>::new()]);
    }
}
