//! Minimization of `H(x, mu, v, a) = l(x, mu, a/h) h + a . v` over an
//! admissible set.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{AdmissibleSet, CostModel, GameSpec};

/// KKT tolerance of the inner minimization.
pub const EPS_INNER: f64 = 1e-10;
/// Iteration cap of the generic inner solver.
pub const MAX_INNER: usize = 10_000;

#[derive(Clone, Copy, Debug)]
pub struct HamiltonianProblem<'a> {
    pub x: usize,
    pub mu: &'a [f64],
    pub v: &'a [f64],
    pub h: f64,
    pub adm: &'a AdmissibleSet,
    pub cost: &'a dyn CostModel,
    pub gamma: f64,
}

impl HamiltonianProblem<'_> {
    pub fn value_at(&self, a: &[f64]) -> f64 {
        let rate: Vec<f64> = a.iter().map(|v| v / self.h).collect();
        self.cost.running(self.x, self.mu, &rate) * self.h + dot(a, self.v)
    }

    /// Gradient in `a`: `grad l(a/h) + v`.
    pub fn gradient_at(&self, a: &[f64]) -> Vec<f64> {
        let rate: Vec<f64> = a.iter().map(|v| v / self.h).collect();
        let mut g = self.cost.running_subgrad(self.x, self.mu, &rate);
        for (gi, vi) in g.iter_mut().zip(self.v) {
            *gi += vi;
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()
}

/// Projection of `target` onto `{b >= lb, sum b = total}` (when `exact`)
/// or `{b >= lb, sum b <= total}` by shifted-threshold water filling.
fn water_fill(target: &[f64], lb: f64, total: f64, exact: bool) -> Vec<f64> {
    let clipped: Vec<f64> = target.iter().map(|&t| t.max(lb)).collect();
    if !exact && clipped.iter().sum::<f64>() <= total {
        return clipped;
    }
    // Find tau with sum max(lb, t - tau) = total. Breakpoints are t_i - lb.
    let mut shifted: Vec<f64> = target.iter().map(|&t| t - lb).collect();
    shifted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let free = total - lb * target.len() as f64;
    let mut cum = 0.0;
    let mut tau = shifted[0] - free;
    for (k, &s) in shifted.iter().enumerate() {
        cum += s;
        let candidate = (cum - free) / (k + 1) as f64;
        let next = shifted.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if candidate >= next {
            tau = candidate;
            break;
        }
    }
    target.iter().map(|&t| (t - tau).max(lb)).collect()
}

/// Euclidean projection of `y` onto `{a : sum a = 1, a >= lb on support,
/// a = 0 off support}`.
pub fn project_simplex_lb(y: &[f64], lb: f64, support: &[usize]) -> Result<Vec<f64>> {
    if lb < 0.0 || lb * support.len() as f64 > 1.0 + 1e-15 || support.is_empty() {
        return Err(Error::Infeasible {
            state: usize::MAX,
            count: support.len(),
            floor: lb,
        });
    }
    let target: Vec<f64> = support.iter().map(|&s| y[s]).collect();
    let proj = water_fill(&target, lb, 1.0, true);
    let mut out = vec![0.0; y.len()];
    for (&s, p) in support.iter().zip(proj) {
        out[s] = p;
    }
    Ok(out)
}

/// Unique minimizer of the Hamiltonian and its value.
pub fn minimize_hamiltonian(p: &HamiltonianProblem<'_>) -> Result<(Vec<f64>, f64)> {
    if !(p.gamma > 0.0) {
        return Err(Error::Domain(
            "strong convexity constant must be positive to identify a unique minimizer".into(),
        ));
    }
    if p.v.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("continuation values must be finite".into()));
    }
    let a = if p.cost.is_separable_quadratic() {
        quadratic_argmin(p)
    } else {
        projected_gradient(p)?
    };
    Ok((a.clone(), p.value_at(&a)))
}

/// Closed form for `0.5 sum_{y != x} rate_y^2 + c(mu)`: the off-diagonal
/// block is `max(lb, -h (v_y - v_x + lambda))` with the multiplier of the
/// mass constraint found by water filling.
fn quadratic_argmin(p: &HamiltonianProblem<'_>) -> Vec<f64> {
    let d = p.v.len();
    let lb = p.adm.floor;
    let mut a = vec![0.0; d];
    if p.adm.support.contains(&p.x) {
        let moves: Vec<usize> = p.adm.support.iter().copied().filter(|&y| y != p.x).collect();
        let target: Vec<f64> = moves.iter().map(|&y| -p.h * (p.v[y] - p.v[p.x])).collect();
        let off = water_fill(&target, lb, 1.0 - lb, false);
        let mut rest = 1.0;
        for (&y, val) in moves.iter().zip(off) {
            a[y] = val;
            rest -= val;
        }
        a[p.x] = rest.max(lb);
    } else {
        let target: Vec<f64> = p.adm.support.iter().map(|&y| -p.h * p.v[y]).collect();
        for (&y, val) in p.adm.support.iter().zip(water_fill(&target, lb, 1.0, true)) {
            a[y] = val;
        }
    }
    a
}

/// Projected gradient with backtracking, started from the reference control.
fn projected_gradient(p: &HamiltonianProblem<'_>) -> Result<Vec<f64>> {
    let d = p.v.len();
    let mut a = p.adm.reference(d);
    let mut step = p.h / p.cost.curvature_bound(1.0 / p.h);
    let mut f = p.value_at(&a);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_INNER {
        let g = p.gradient_at(&a);
        loop {
            let trial: Vec<f64> = a.iter().zip(&g).map(|(ai, gi)| ai - step * gi).collect();
            let next = project_simplex_lb(&trial, p.adm.floor, &p.adm.support)?;
            let diff: Vec<f64> = next.iter().zip(&a).map(|(n, o)| n - o).collect();
            let f_next = p.value_at(&next);
            let sq: f64 = diff.iter().map(|v| v * v).sum();
            if f_next <= f + dot(&g, &diff) + sq / (2.0 * step) + 1e-15 {
                residual = diff.iter().map(|v| v.abs()).sum::<f64>() / step;
                a = next;
                f = f_next;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::InnerNonConvergence { iterations: 0, residual });
            }
        }
        if residual * p.h <= EPS_INNER {
            return Ok(a);
        }
    }
    Err(Error::InnerNonConvergence {
        iterations: MAX_INNER,
        residual,
    })
}

/// Smallest first-order optimality slack over the vertices of the
/// admissible polytope: `min_vertex (grad + v) . (vertex - a*)`. Nonnegative
/// (up to tolerance) exactly when `a*` is a minimizer.
pub fn kkt_slack(p: &HamiltonianProblem<'_>, a_star: &[f64]) -> f64 {
    let g = p.gradient_at(a_star);
    p.adm
        .vertices(a_star.len())
        .iter()
        .map(|vx| {
            let diff: Vec<f64> = vx.iter().zip(a_star).map(|(u, w)| u - w).collect();
            dot(&g, &diff)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest observed `|a*(v1) - a*(v2)|_1 / |v1 - v2|_1` over random pairs,
/// to be compared with `h / gamma`.
pub fn argmin_lipschitz_audit<R: Rng + ?Sized>(
    spec: &GameSpec,
    h: f64,
    x: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let adm = spec.admissible_set(h, x)?;
    let d = spec.d;
    let mu = vec![1.0 / d as f64; d];
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let scale = 10f64.powf(rng.random_range(-3.0..1.0));
        let v1: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) / h).collect();
        let v2: Vec<f64> = v1.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
        let dv = l1(&v1, &v2);
        if dv == 0.0 {
            continue;
        }
        let problem = |v| HamiltonianProblem {
            x,
            mu: &mu,
            v,
            h,
            adm: &adm,
            cost: spec.cost.as_ref(),
            gamma: spec.gamma,
        };
        let (a1, _) = minimize_hamiltonian(&problem(&v1))?;
        let (a2, _) = minimize_hamiltonian(&problem(&v2))?;
        worst = worst.max(l1(&a1, &a2) / dv);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_quadratic_nearest_neighbor, GameSpec, QuadraticCost};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Projection oracle: enumerate which coordinates sit at the bound; the
    /// free ones share a common shift. Keep the feasible candidate closest
    /// to `y`.
    fn active_set_projection(y: &[f64], lb: f64) -> Vec<f64> {
        let d = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << d) {
            let free: Vec<usize> = (0..d).filter(|i| mask & (1 << i) == 0).collect();
            if free.is_empty() {
                continue;
            }
            let fixed = (d - free.len()) as f64 * lb;
            let shift = (1.0 - fixed - free.iter().map(|&i| y[i]).sum::<f64>()) / free.len() as f64;
            let mut a = vec![lb; d];
            for &i in &free {
                a[i] = y[i] + shift;
            }
            if a.iter().any(|&v| v < lb - 1e-12) {
                continue;
            }
            let dist: f64 = a.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                best = Some((dist, a));
            }
        }
        best.unwrap().1
    }

    fn problem<'a>(
        spec: &'a GameSpec,
        adm: &'a AdmissibleSet,
        x: usize,
        mu: &'a [f64],
        v: &'a [f64],
        h: f64,
    ) -> HamiltonianProblem<'a> {
        HamiltonianProblem {
            x,
            mu,
            v,
            h,
            adm,
            cost: spec.cost.as_ref(),
            gamma: spec.gamma,
        }
    }

    #[test]
    fn projection_fixed_points_and_vertices() {
        let sup = [0, 1, 2];
        let y = [0.2, 0.3, 0.5];
        let p = project_simplex_lb(&y, 0.1, &sup).unwrap();
        assert!(l1(&p, &y) < 1e-15);
        let p = project_simplex_lb(&[10.0, 0.0], 0.0, &[0, 1]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(project_simplex_lb(&[0.0; 3], 0.4, &sup).is_err());
    }

    #[test]
    fn projection_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = project_simplex_lb(&y, 0.05, &[0, 1, 2, 3]).unwrap();
            let o = active_set_projection(&y, 0.05);
            assert!(l1(&p, &o) < 1e-9, "{p:?} vs {o:?}");
        }
    }

    #[test]
    fn two_state_reduced_form_is_a_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &sigma2 in &[0.0, 0.05, 0.2] {
            let spec = build_quadratic_nearest_neighbor(2, sigma2, None).unwrap();
            let h = 0.7;
            let adm = spec.admissible_set(h, 0).unwrap();
            for _ in 0..100 {
                let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let (a, _) = minimize_hamiltonian(&problem(&spec, &adm, 0, &[0.5, 0.5], &v, h)).unwrap();
                let delta = v[1] - v[0];
                let expect = (-h * delta).clamp(sigma2 * h, 1.0 - sigma2 * h);
                assert!((a[1] - expect).abs() < 1e-14);
            }
            let (a, _) = minimize_hamiltonian(&problem(&spec, &adm, 0, &[0.5, 0.5], &[0.0, 1.0], h)).unwrap();
            assert!((a[1] - sigma2 * h).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_values_mean_stay() {
        let spec = build_quadratic_nearest_neighbor(4, 0.0, None).unwrap();
        let adm = spec.admissible_set(0.3, 2).unwrap();
        let (a, val) =
            minimize_hamiltonian(&problem(&spec, &adm, 2, &[0.25; 4], &[1.5; 4], 0.3)).unwrap();
        assert_eq!(a, vec![0.0, 0.0, 1.0, 0.0]);
        assert!((val - 1.5).abs() < 1e-15);
    }

    #[test]
    fn matches_grid_search_on_three_states() {
        let spec = build_quadratic_nearest_neighbor(3, 0.0, None).unwrap();
        let h = 0.25;
        let v = [0.0, 0.4, -0.2];
        let mu = [1.0 / 3.0; 3];
        let adm = spec.admissible_set(h, 0).unwrap();
        let p = problem(&spec, &adm, 0, &mu, &v, h);
        let (a, val) = minimize_hamiltonian(&p).unwrap();
        let mesh = 1000;
        let mut best = (f64::INFINITY, vec![]);
        for i in 0..=mesh {
            for j in 0..=(mesh - i) {
                let c = vec![i as f64 / mesh as f64, j as f64 / mesh as f64, (mesh - i - j) as f64 / mesh as f64];
                let f = p.value_at(&c);
                if f < best.0 {
                    best = (f, c);
                }
            }
        }
        assert!(l1(&a, &best.1) < 2e-3);
        assert!(val <= best.0 + 1e-12);
    }

    #[test]
    fn kkt_and_mesh_optimality() {
        let spec = build_quadratic_nearest_neighbor(3, 0.1, None).unwrap();
        let h = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x = rng.random_range(0..3);
            let adm = spec.admissible_set(h, x).unwrap();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu = [0.2, 0.3, 0.5];
            let p = problem(&spec, &adm, x, &mu, &v, h);
            let (a, val) = minimize_hamiltonian(&p).unwrap();
            assert!(adm.contains(&a, 1e-12));
            assert!(kkt_slack(&p, &a) >= -EPS_INNER);
            for i in 0..=100 {
                for j in 0..=(100 - i) {
                    let raw = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                    let c = project_simplex_lb(&raw, adm.floor, &adm.support).unwrap();
                    assert!(val <= p.value_at(&c) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn generic_path_agrees_with_closed_form() {
        let spec = build_quadratic_nearest_neighbor(4, 0.05, None).unwrap();
        // A quartic coefficient of zero still routes through projected gradient
        // when wrapped; use a tiny positive one and compare loosely, and an
        // exactly-zero one for the tight comparison via a forced generic cost.
        #[derive(Debug)]
        struct Generic(QuadraticCost);
        impl CostModel for Generic {
            fn running(&self, x: usize, mu: &[f64], r: &[f64]) -> f64 {
                self.0.running(x, mu, r)
            }
            fn running_subgrad(&self, x: usize, mu: &[f64], r: &[f64]) -> Vec<f64> {
                self.0.running_subgrad(x, mu, r)
            }
            fn terminal(&self, x: usize, mu: &[f64]) -> f64 {
                self.0.terminal(x, mu)
            }
            fn curvature_bound(&self, b: f64) -> f64 {
                self.0.curvature_bound(b)
            }
        }
        let generic = Generic(QuadraticCost::new(spec.supports.clone(), 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 0.4;
        for _ in 0..100 {
            let x = rng.random_range(0..4);
            let adm = spec.admissible_set(h, x).unwrap();
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mu = [0.25; 4];
            let closed = minimize_hamiltonian(&problem(&spec, &adm, x, &mu, &v, h)).unwrap().0;
            let p = HamiltonianProblem { cost: &generic, ..problem(&spec, &adm, x, &mu, &v, h) };
            let pg = minimize_hamiltonian(&p).unwrap().0;
            assert!(l1(&closed, &pg) < 1e-8, "{closed:?} vs {pg:?}");
            // uniqueness from a second start: perturbing v by nothing must agree
            assert!(kkt_slack(&p, &pg) >= -1e-8);
        }
    }

    #[test]
    fn quartic_cost_uses_generic_solver() {
        let sup = crate::game::torus_supports(3);
        let cost = QuadraticCost::new(sup.clone(), 0.0, 0.0).with_quartic(0.5);
        let spec = GameSpec::from_quadratic(3, 0.0, sup, cost).unwrap();
        let h = 0.5;
        let adm = spec.admissible_set(h, 1).unwrap();
        let v = [-1.0, 0.3, -0.6];
        let mu = [0.3; 3];
        let p = problem(&spec, &adm, 1, &mu, &v, h);
        let (a, _) = minimize_hamiltonian(&p).unwrap();
        assert!(adm.contains(&a, 1e-12));
        assert!(kkt_slack(&p, &a) >= -1e-8);
    }

    #[test]
    fn refuses_zero_gamma() {
        let mut spec = build_quadratic_nearest_neighbor(3, 0.0, None).unwrap();
        spec.gamma = 0.0;
        let adm = spec.admissible_set(0.1, 0).unwrap();
        assert!(minimize_hamiltonian(&problem(&spec, &adm, 0, &[0.3; 3], &[0.0; 3], 0.1)).is_err());
    }

    #[test]
    fn argmin_is_h_over_gamma_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = build_quadratic_nearest_neighbor(4, 0.0, None).unwrap();
        let h = 0.1;
        let ratio = argmin_lipschitz_audit(&spec, h, 1, 1000, &mut rng).unwrap();
        assert!(ratio <= h / spec.gamma + 1e-9, "{ratio}");
    }

    #[test]
    fn reduced_clamp_slope_is_at_most_h() {
        let h = 0.1;
        let clamp = |delta: f64| (-h * delta).clamp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(-20.0..20.0);
            let b: f64 = rng.random_range(-20.0..20.0);
            if a != b {
                assert!((clamp(a) - clamp(b)).abs() / (a - b).abs() <= h + 1e-9);
            }
        }
    }
}
