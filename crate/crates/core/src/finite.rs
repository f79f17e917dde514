//! Finite-player Nash-Lasry-Lions equation.
//!
//! The backward recursion alternates a one-step fixed point for the common
//! feedback rule with the evaluation of the minimized Hamiltonian. The
//! one-step map is iterated synchronously: every node reads the previous
//! iterate, so results do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{AdmissibleSet, GameSpec, TimeGrid};
use crate::hamiltonian::{l1, minimize_hamiltonian, HamiltonianProblem};
use crate::kernel::{exact_law, expect_under};
use crate::lattice::{EmpiricalDist, SimplexLattice};

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Max over nodes of the ℓ₁ change produced by the last application of the map.
    pub residual: f64,
    /// Ratio of the last two residuals.
    pub contraction_estimate: f64,
    /// `h L_phi / gamma < 1`.
    pub contractive: bool,
    pub l_phi: f64,
    pub damped: bool,
    pub residuals: Vec<f64>,
}

/// Outer fixed-point settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub eps_fp: f64,
    pub max_outer: usize,
    /// Relaxation weight used when the map is not known to contract.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_fp: 1e-11,
            max_outer: 500,
            damping: 0.5,
        }
    }
}

/// Starting iterate of the one-step fixed point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Reference,
    /// Independent uniform admissible points, seeded per backward step.
    Random(u64),
}

/// `v(t, x, z)` for `t = 0..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueN {
    pub k: usize,
    pub d: usize,
    pub nz: usize,
    pub data: Vec<f64>,
}

impl ValueN {
    fn zeros(k: usize, d: usize, nz: usize) -> Self {
        Self {
            k,
            d,
            nz,
            data: vec![0.0; (k + 1) * d * nz],
        }
    }

    pub fn get(&self, t: usize, x: usize, zi: usize) -> f64 {
        self.data[(t * self.d + x) * self.nz + zi]
    }

    /// The `(x, z)` layer at time index `t`.
    pub fn layer(&self, t: usize) -> &[f64] {
        let w = self.d * self.nz;
        &self.data[t * w..(t + 1) * w]
    }

    fn layer_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.d * self.nz;
        &mut self.data[t * w..(t + 1) * w]
    }

    /// Linear interpolation in the population variable.
    pub fn interpolate(&self, lattice: &SimplexLattice, t: usize, x: usize, mu: &[f64]) -> Result<f64> {
        let layer = &self.layer(t)[x * self.nz..(x + 1) * self.nz];
        lattice.interpolate(layer, mu)
    }
}

/// `alpha(t, x, z)` for `t = 0..K-1`, one simplex vector per node.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyN {
    pub k: usize,
    pub d: usize,
    pub nz: usize,
    pub data: Vec<f64>,
}

impl PolicyN {
    pub fn row(&self, t: usize, x: usize, zi: usize) -> &[f64] {
        let i = ((t * self.d + x) * self.nz + zi) * self.d;
        &self.data[i..i + self.d]
    }

    pub fn row_mut(&mut self, t: usize, x: usize, zi: usize) -> &mut [f64] {
        let i = ((t * self.d + x) * self.nz + zi) * self.d;
        &mut self.data[i..i + self.d]
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        let w = self.d * self.nz * self.d;
        &self.data[t * w..(t + 1) * w]
    }

    /// Row `alpha(t, x, .)` interpolated at `mu`.
    pub fn interpolate(&self, lattice: &SimplexLattice, t: usize, x: usize, mu: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        for (zi, w) in lattice.barycentric(mu)? {
            for (o, r) in out.iter_mut().zip(self.row(t, x, zi)) {
                *o += w * r;
            }
        }
        Ok(out)
    }
}

/// Solution of the finite-player equation with per-step reports.
#[derive(Clone, Debug)]
pub struct NllSolution {
    pub grid: TimeGrid,
    pub lattice: SimplexLattice,
    pub values: ValueN,
    pub policy: PolicyN,
    /// `reports[k]` belongs to time index `k`.
    pub reports: Vec<FixedPointReport>,
}

/// Output of a single one-step solve: the policy layer and the values
/// `H(x, z, E(x, z, phi, alpha), alpha(x, z))`.
#[derive(Clone, Debug)]
pub struct OneStep {
    /// Flat `[x][z][y]`.
    pub alpha: Vec<f64>,
    /// Flat `[x][z]`.
    pub values: Vec<f64>,
    pub report: FixedPointReport,
}

/// `m` times the largest ratio `|phi(x, z') - phi(x, z)| / |z' - z|_1` over
/// single-agent moves; moves connect the grid by ℓ₁ geodesics, so this is
/// the grid Lipschitz constant.
pub fn estimate_grid_lipschitz(phi: &[f64], lattice: &SimplexLattice, m: usize) -> f64 {
    let nz = lattice.len();
    let d = lattice.dim();
    let step = 2.0 / f64::from(lattice.resolution());
    let mut worst: f64 = 0.0;
    for x in 0..d {
        let layer = &phi[x * nz..(x + 1) * nz];
        for (zi, z) in lattice.points().iter().enumerate() {
            for from in 0..d {
                for to in 0..d {
                    if to == from {
                        continue;
                    }
                    if let Some(zn) = z.shifted(to, from) {
                        let j = lattice.index_of(&zn.counts).expect("lattice closed under moves");
                        worst = worst.max((layer[j] - layer[zi]).abs() / step);
                    }
                }
            }
        }
    }
    m as f64 * worst
}

/// Largest ℓ₁ Lipschitz ratio of the rows `alpha(x, ·)` over single-agent moves.
pub fn policy_grid_lipschitz(alpha: &[f64], lattice: &SimplexLattice) -> f64 {
    let nz = lattice.len();
    let d = lattice.dim();
    let step = 2.0 / f64::from(lattice.resolution());
    let row = |x: usize, zi: usize| &alpha[(x * nz + zi) * d..(x * nz + zi + 1) * d];
    let mut worst: f64 = 0.0;
    for x in 0..d {
        for (zi, z) in lattice.points().iter().enumerate() {
            for from in 0..d {
                for to in 0..d {
                    if to != from {
                        if let Some(zn) = z.shifted(to, from) {
                            let j = lattice.index_of(&zn.counts).unwrap();
                            worst = worst.max(l1(row(x, j), row(x, zi)) / step);
                        }
                    }
                }
            }
        }
    }
    worst
}

struct StepContext<'a> {
    spec: &'a GameSpec,
    lattice: &'a SimplexLattice,
    adm: Vec<AdmissibleSet>,
    h: f64,
    nodes: Vec<(usize, usize)>,
    z_simplex: Vec<Vec<f64>>,
}

impl<'a> StepContext<'a> {
    fn new(spec: &'a GameSpec, lattice: &'a SimplexLattice, h: f64) -> Result<Self> {
        let adm = spec.admissible_sets(h)?;
        let nz = lattice.len();
        let nodes = (0..spec.d).flat_map(|x| (0..nz).map(move |zi| (x, zi))).collect();
        let z_simplex = lattice.points().iter().map(EmpiricalDist::to_simplex).collect();
        Ok(Self {
            spec,
            lattice,
            adm,
            h,
            nodes,
            z_simplex,
        })
    }

    fn row<'b>(&self, alpha: &'b [f64], x: usize, zi: usize) -> &'b [f64] {
        let d = self.spec.d;
        let i = (x * self.lattice.len() + zi) * d;
        &alpha[i..i + d]
    }

    /// Continuation vector `E(x, z, phi, beta)` at one node.
    fn expectation(&self, x: usize, zi: usize, phi: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
        let nz = self.lattice.len();
        let z = self.lattice.point(zi);
        let law = exact_law(x, z, |y, zz| {
            let j = self.lattice.index_of(&zz.counts).expect("shifted point on lattice");
            self.row(beta, y, j).to_vec()
        })?;
        Ok(expect_under(&law, |y, zn| {
            phi[y * nz + self.lattice.index_of(&zn.counts).expect("next point on lattice")]
        }))
    }

    fn problem<'b>(&'b self, x: usize, zi: usize, v: &'b [f64]) -> HamiltonianProblem<'b> {
        HamiltonianProblem {
            x,
            mu: &self.z_simplex[zi],
            v,
            h: self.h,
            adm: &self.adm[x],
            cost: self.spec.cost.as_ref(),
            gamma: self.spec.gamma,
        }
    }

    /// One synchronous application of the one-step map.
    fn apply(&self, phi: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = self
            .nodes
            .par_iter()
            .map(|&(x, zi)| {
                let e = self.expectation(x, zi, phi, alpha)?;
                Ok(minimize_hamiltonian(&self.problem(x, zi, &e))?.0)
            })
            .collect::<Result<_>>()?;
        Ok(rows.concat())
    }

    fn values(&self, phi: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        self.nodes
            .par_iter()
            .map(|&(x, zi)| {
                let e = self.expectation(x, zi, phi, alpha)?;
                Ok(self.problem(x, zi, &e).value_at(self.row(alpha, x, zi)))
            })
            .collect()
    }

    fn initial(&self, init: Init, salt: u64) -> Vec<f64> {
        let d = self.spec.d;
        match init {
            Init::Reference => self.nodes.iter().flat_map(|&(x, _)| self.adm[x].reference(d)).collect(),
            Init::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                self.nodes
                    .iter()
                    .flat_map(|&(x, _)| self.adm[x].sample(d, &mut rng))
                    .collect()
            }
        }
    }
}

/// Generic fixed-point driver shared by the finite-player and mean-field
/// one-step problems. `apply` maps an iterate to its image.
pub(crate) fn iterate_fixed_point<F>(
    mut alpha: Vec<f64>,
    row_len: usize,
    contractive: bool,
    l_phi: f64,
    opts: &SolverOptions,
    apply: F,
) -> Result<(Vec<f64>, FixedPointReport)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut residuals = Vec::new();
    let damped = !contractive;
    for it in 1..=opts.max_outer {
        let next = apply(&alpha)?;
        let residual = next
            .chunks(row_len)
            .zip(alpha.chunks(row_len))
            .map(|(a, b)| l1(a, b))
            .fold(0.0, f64::max);
        residuals.push(residual);
        let report = |iterations, residuals: Vec<f64>| {
            let n = residuals.len();
            let contraction_estimate = if n >= 2 && residuals[n - 2] > 0.0 {
                residuals[n - 1] / residuals[n - 2]
            } else {
                0.0
            };
            FixedPointReport {
                iterations,
                residual: residuals[n - 1],
                contraction_estimate,
                contractive,
                l_phi,
                damped,
                residuals,
            }
        };
        if residual <= opts.eps_fp {
            return Ok((next, report(it, residuals)));
        }
        if it == opts.max_outer {
            return Err(Error::NonConvergence {
                step: None,
                report: report(it, residuals),
            });
        }
        alpha = if damped {
            alpha
                .iter()
                .zip(&next)
                .map(|(a, b)| (1.0 - opts.damping) * a + opts.damping * b)
                .collect()
        } else {
            next
        };
    }
    unreachable!("max_outer is at least one iteration")
}

/// Solves `alpha(x, z) = argmin_a H(x, z, E(x, z, phi, alpha), a)` on the
/// lattice of `N` untagged players. `phi` is flat `[x][z]`.
pub fn solve_one_step(
    spec: &GameSpec,
    h: f64,
    lattice: &SimplexLattice,
    phi: &[f64],
    opts: &SolverOptions,
    init: Init,
) -> Result<OneStep> {
    solve_one_step_salted(spec, h, lattice, phi, opts, init, 0)
}

fn solve_one_step_salted(
    spec: &GameSpec,
    h: f64,
    lattice: &SimplexLattice,
    phi: &[f64],
    opts: &SolverOptions,
    init: Init,
    salt: u64,
) -> Result<OneStep> {
    if opts.max_outer == 0 || !(opts.eps_fp > 0.0) {
        return Err(Error::Config("solver tolerances must be positive".into()));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("continuation values must be finite".into()));
    }
    let ctx = StepContext::new(spec, lattice, h)?;
    let l_phi = estimate_grid_lipschitz(phi, lattice, spec.m);
    let contractive = h * l_phi < spec.gamma;
    let start = ctx.initial(init, salt);
    let (alpha, report) =
        iterate_fixed_point(start, spec.d, contractive, l_phi, opts, |a| ctx.apply(phi, a))?;
    let values = ctx.values(phi, &alpha)?;
    Ok(OneStep {
        alpha,
        values,
        report,
    })
}

/// Terminal layer `g(x, z)` on the lattice.
pub fn terminal_layer(spec: &GameSpec, lattice: &SimplexLattice) -> Vec<f64> {
    (0..spec.d)
        .flat_map(|x| {
            lattice
                .points()
                .iter()
                .map(move |z| spec.cost.terminal(x, &z.to_simplex()))
        })
        .collect()
}

/// Backward solve of the finite-player equation for `N` untagged players.
pub fn solve_nll(
    spec: &GameSpec,
    grid: TimeGrid,
    n: u32,
    opts: &SolverOptions,
    init: Init,
) -> Result<NllSolution> {
    let lattice = SimplexLattice::new(n, spec.d)?;
    let d = spec.d;
    let nz = lattice.len();
    let mut values = ValueN::zeros(grid.k, d, nz);
    values.layer_mut(grid.k).copy_from_slice(&terminal_layer(spec, &lattice));
    let mut policy = PolicyN {
        k: grid.k,
        d,
        nz,
        data: vec![0.0; grid.k * d * nz * d],
    };
    let mut reports = vec![None; grid.k];
    for k in (0..grid.k).rev() {
        let phi = values.layer(k + 1).to_vec();
        let step = solve_one_step_salted(spec, grid.h, &lattice, &phi, opts, init, k as u64)
            .map_err(|e| e.at_step(k))?;
        values.layer_mut(k).copy_from_slice(&step.values);
        let w = d * nz * d;
        policy.data[k * w..(k + 1) * w].copy_from_slice(&step.alpha);
        reports[k] = Some(step.report);
    }
    Ok(NllSolution {
        grid,
        lattice,
        values,
        policy,
        reports: reports.into_iter().map(Option::unwrap).collect(),
    })
}

/// Best-response gap of a symmetric feedback rule.
///
/// Evaluates the tagged player's cost of following `policy` against
/// opponents following `policy`, and the exact best-response value against
/// the same opponents by backward dynamic programming. Returns the largest
/// excess over all `(t, x, z)`; zero certifies a symmetric equilibrium.
pub fn verify_equilibrium(
    spec: &GameSpec,
    grid: TimeGrid,
    lattice: &SimplexLattice,
    policy: &PolicyN,
) -> Result<f64> {
    let ctx = StepContext::new(spec, lattice, grid.h)?;
    let terminal = terminal_layer(spec, lattice);
    let mut follow = terminal.clone();
    let mut best = terminal;
    let mut gap: f64 = 0.0;
    for k in (0..grid.k).rev() {
        let beta = policy.layer(k);
        for &(x, zi) in &ctx.nodes {
            if !ctx.adm[x].contains(ctx.row(beta, x, zi), 1e-9) {
                return Err(Error::Domain(format!("policy at (t={k}, x={x}, z={zi}) is not admissible")));
            }
        }
        let layers: Vec<(f64, f64)> = ctx
            .nodes
            .par_iter()
            .map(|&(x, zi)| {
                let nzl = lattice.len();
                let z = lattice.point(zi);
                let law = exact_law(x, z, |y, zz| {
                    ctx.row(beta, y, lattice.index_of(&zz.counts).unwrap()).to_vec()
                })?;
                let idx = |zn: &EmpiricalDist| lattice.index_of(&zn.counts).unwrap();
                let e_follow = expect_under(&law, |y, zn| follow[y * nzl + idx(zn)]);
                let e_best = expect_under(&law, |y, zn| best[y * nzl + idx(zn)]);
                let j = ctx.problem(x, zi, &e_follow).value_at(ctx.row(beta, x, zi));
                let (_, v) = minimize_hamiltonian(&ctx.problem(x, zi, &e_best))?;
                Ok((j, v))
            })
            .collect::<Result<_>>()?;
        follow = layers.iter().map(|p| p.0).collect();
        best = layers.iter().map(|p| p.1).collect();
        gap = layers.iter().map(|(j, v)| j - v).fold(gap, f64::max);
    }
    Ok(gap)
}

/// Moves `mass` from coordinate `from` to `to` at one node and projects the
/// row back onto the admissible set.
pub fn perturb_policy(
    spec: &GameSpec,
    h: f64,
    policy: &mut PolicyN,
    node: (usize, usize, usize),
    from: usize,
    to: usize,
    mass: f64,
) -> Result<()> {
    let (t, x, zi) = node;
    let adm = spec.admissible_set(h, x)?;
    let row = policy.row_mut(t, x, zi);
    let moved = mass.min(row[from]);
    row[from] -= moved;
    row[to] += moved;
    let projected = crate::hamiltonian::project_simplex_lb(row, adm.floor, &adm.support)?;
    row.copy_from_slice(&projected);
    Ok(())
}

/// Two players on two states with terminal cost `w (1 - z_x)`: the tagged
/// player's best-response switching probability at state 0, facing an
/// opponent at state 0 who switches with probability `a`.
pub fn pair_switching_map(spec: &GameSpec, h: f64, a: f64) -> Result<f64> {
    if spec.d != 2 {
        return Err(Error::Domain("the pair map needs two states".into()));
    }
    let adm = spec.admissible_set(h, 0)?;
    let z = EmpiricalDist::new(vec![1, 0]);
    let law = exact_law(0, &z, |_, _| vec![1.0 - a, a])?;
    let v = expect_under(&law, |y, zn| spec.cost.terminal(y, &zn.to_simplex()));
    let mu = z.to_simplex();
    let p = HamiltonianProblem {
        x: 0,
        mu: &mu,
        v: &v,
        h,
        adm: &adm,
        cost: spec.cost.as_ref(),
        gamma: spec.gamma,
    };
    Ok(minimize_hamiltonian(&p)?.0[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_quadratic_nearest_neighbor, Couplings};
    use crate::lattice::enumerate_empirical;

    fn two_player(sigma2: f64) -> GameSpec {
        let c = Couplings { term_crowd: 1.0, ..Default::default() };
        build_quadratic_nearest_neighbor(2, sigma2, Some(c)).unwrap()
    }

    #[test]
    fn constant_phi_converges_immediately() {
        let spec = build_quadratic_nearest_neighbor(3, 0.0, None).unwrap();
        let lat = SimplexLattice::new(2, 3).unwrap();
        let phi = vec![0.7; 3 * lat.len()];
        let out = solve_one_step(&spec, 0.2, &lat, &phi, &SolverOptions::default(), Init::Reference).unwrap();
        assert_eq!(out.report.iterations, 1);
        assert_eq!(out.report.l_phi, 0.0);
        for x in 0..3 {
            for zi in 0..lat.len() {
                let i = (x * lat.len() + zi) * 3;
                let mut stay = vec![0.0; 3];
                stay[x] = 1.0;
                assert_eq!(&out.alpha[i..i + 3], stay.as_slice());
            }
        }
    }

    /// Bisection on `a = clamp(h (2a - 1), lo, hi)` for a root of the
    /// tagged-and-opponent-at-0 equation.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_player_one_step_satisfies_scalar_system() {
        let sigma2 = 0.05;
        let h = 0.2;
        let spec = two_player(sigma2);
        let lat = SimplexLattice::new(1, 2).unwrap();
        let phi = terminal_layer(&spec, &lat);
        let out = solve_one_step(&spec, h, &lat, &phi, &SolverOptions::default(), Init::Reference).unwrap();
        let (lo, hi) = (sigma2 * h, 1.0 - sigma2 * h);
        let clamp = |v: f64| v.clamp(lo, hi);
        // lattice order: (0,1) = opponent at 1, (1,0) = opponent at 0
        let change = |x: usize, zi: usize| out.alpha[(x * 2 + zi) * 2 + (1 - x)];
        let a00 = change(0, 1);
        let a01 = change(0, 0);
        let a10 = change(1, 1);
        let a11 = change(1, 0);
        let root = bisect(|a| clamp(h * (2.0 * a - 1.0)) - a, lo, hi);
        assert!((a00 - root).abs() < 1e-10);
        assert!((a00 - clamp(h * (2.0 * a00 - 1.0))).abs() < 1e-10);
        assert!((a01 - clamp(h * (1.0 - 2.0 * a10))).abs() < 1e-10);
        assert!((a10 - clamp(h * (1.0 - 2.0 * a01))).abs() < 1e-10);
        assert!((a11 - a00).abs() < 1e-10);
        let sym = bisect(|a| clamp(h * (1.0 - 2.0 * a)) - a, lo, hi);
        assert!((a01 - sym).abs() < 1e-10);
    }

    #[test]
    fn pair_map_has_both_pure_solutions_without_noise() {
        let spec = two_player(0.0);
        assert_eq!(pair_switching_map(&spec, 1.5, 0.0).unwrap(), 0.0);
        assert_eq!(pair_switching_map(&spec, 1.5, 1.0).unwrap(), 1.0);
        let spec = two_player(0.05);
        let a: f64 = 0.3;
        let expected = (0.2 * (2.0 * a - 1.0)).clamp(0.01, 0.99);
        assert!((pair_switching_map(&spec, 0.2, a).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn large_step_is_flagged_non_contractive() {
        let spec = two_player(0.0);
        let lat = SimplexLattice::new(1, 2).unwrap();
        let phi = terminal_layer(&spec, &lat);
        match solve_one_step(&spec, 1.5, &lat, &phi, &SolverOptions::default(), Init::Reference) {
            Ok(out) => {
                assert!(!out.report.contractive && out.report.damped);
                assert!(out.report.residual <= 1e-11);
            }
            Err(Error::NonConvergence { report, .. }) => assert!(!report.contractive),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn zero_horizon_is_terminal_cost() {
        let spec = two_player(0.1);
        let sol = solve_nll(&spec, TimeGrid::new(0.1, 0).unwrap(), 3, &SolverOptions::default(), Init::Reference)
            .unwrap();
        assert!(sol.policy.data.is_empty());
        assert_eq!(sol.values.layer(0), terminal_layer(&spec, &sol.lattice).as_slice());
        assert_eq!(verify_equilibrium(&spec, sol.grid, &sol.lattice, &sol.policy).unwrap(), 0.0);
    }

    #[test]
    fn costless_game_has_zero_value() {
        let spec = build_quadratic_nearest_neighbor(3, 0.0, None).unwrap();
        let sol = solve_nll(&spec, TimeGrid::new(0.1, 3).unwrap(), 2, &SolverOptions::default(), Init::Reference)
            .unwrap();
        assert!(sol.values.data.iter().all(|&v| v == 0.0));
    }

    /// Exhaustive expectation over the joint next states of both players.
    #[test]
    fn one_step_value_matches_exhaustive_expectation() {
        let sigma2 = 0.01;
        let h = 0.1;
        let spec = two_player(sigma2);
        let sol = solve_nll(&spec, TimeGrid::new(h, 1).unwrap(), 1, &SolverOptions::default(), Init::Reference)
            .unwrap();
        let lat = &sol.lattice;
        for x in 0..2 {
            for other in 0..2 {
                let counts = if other == 0 { vec![1, 0] } else { vec![0, 1] };
                let zi = lat.index_of(&counts).unwrap();
                let a = sol.policy.row(0, x, zi);
                // opponent at `other` sees the tagged player at x
                let opp_view = lat.index_of(&if x == 0 { vec![1, 0] } else { vec![0, 1] }).unwrap();
                let b = sol.policy.row(0, other, opp_view);
                let mut expected = 0.5 * (a[1 - x] / h).powi(2) * h;
                for nx in 0..2 {
                    for no in 0..2 {
                        expected += a[nx] * b[no] * f64::from(u8::from(nx != no));
                    }
                }
                assert!((sol.values.get(0, x, zi) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grid_lipschitz_examples() {
        let lat = SimplexLattice::new(4, 2).unwrap();
        assert_eq!(estimate_grid_lipschitz(&vec![3.0; 2 * lat.len()], &lat, 2), 0.0);
        let phi: Vec<f64> = (0..2)
            .flat_map(|_| lat.points().iter().map(|z| z.to_simplex()[0]))
            .collect();
        assert!((estimate_grid_lipschitz(&phi, &lat, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_lipschitz_equals_all_pairs() {
        use rand::Rng;
        let lat = SimplexLattice::new(4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi: Vec<f64> = (0..3 * lat.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = enumerate_empirical(4, 3).unwrap();
        let mut brute: f64 = 0.0;
        for x in 0..3 {
            for (i, a) in pts.iter().enumerate() {
                for (j, b) in pts.iter().enumerate() {
                    if i != j {
                        let r = (phi[x * lat.len() + i] - phi[x * lat.len() + j]).abs() / a.l1_distance(b);
                        brute = brute.max(r);
                    }
                }
            }
        }
        assert!((estimate_grid_lipschitz(&phi, &lat, 1) - brute).abs() < 1e-12);
    }

    #[test]
    fn affine_functions_interpolate_exactly() {
        use rand::Rng;
        let lat = SimplexLattice::new(4, 3).unwrap();
        let f = |mu: &[f64]| 0.3 + 1.7 * mu[0] - 0.4 * mu[1] + 2.2 * mu[2];
        let v = ValueN {
            k: 0,
            d: 1,
            nz: lat.len(),
            data: lat.points().iter().map(|z| f(&z.to_simplex())).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let e: Vec<f64> = (0..3).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            let mu: Vec<f64> = e.iter().map(|v| v / s).collect();
            let got = v.interpolate(&lat, 0, 0, &mu).unwrap();
            assert!((got - f(&mu)).abs() < 1e-12);
        }
        assert!(v.interpolate(&lat, 0, 0, &[0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn perturbation_creates_positive_gap() {
        let c = Couplings { term_crowd: 1.0, ..Default::default() };
        let spec = build_quadratic_nearest_neighbor(3, 0.1, Some(c)).unwrap();
        let grid = TimeGrid::new(0.05, 3).unwrap();
        let sol = solve_nll(&spec, grid, 2, &SolverOptions::default(), Init::Reference).unwrap();
        let gap = verify_equilibrium(&spec, grid, &sol.lattice, &sol.policy).unwrap();
        assert!(gap <= 1e-8, "{gap}");
        let mut bad = sol.policy.clone();
        perturb_policy(&spec, grid.h, &mut bad, (1, 0, 2), 0, 1, 0.1).unwrap();
        let gap = verify_equilibrium(&spec, grid, &sol.lattice, &bad).unwrap();
        assert!(gap > 1e-4, "{gap}");
    }
}
