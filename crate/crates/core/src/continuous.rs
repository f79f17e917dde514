//! Continuous-time finite-player equation, used as the reference for the
//! vanishing-step limit of the discrete scheme.
//!
//! With `tau = T - t` the system reads
//! `dv/dtau (x, z) = min_a [l(x, z, a) + a . D_x v] + L^{alpha} v (x, z)`,
//! where `D_x v(y) = v(y, z) - v(x, z)` and the untagged players use the
//! minimizing rates `alpha`. It is integrated with the classical four-stage
//! Runge-Kutta scheme; the minimization is redone at every stage.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finite::{solve_nll, Init, SolverOptions};
use crate::game::{GameSpec, TimeGrid};
use crate::lattice::SimplexLattice;

/// Minimizing off-diagonal rates at `(x, z)` for the value increments
/// `dv[y] = v(y) - v(x)`; entry `x` holds minus the sum of the others.
///
/// Rates live in `[sigma^2, inf)` on the moves of `x` and vanish elsewhere.
pub fn cts_hamiltonian_min(spec: &GameSpec, x: usize, mu: &[f64], dv: &[f64]) -> Result<Vec<f64>> {
    let d = spec.d;
    let floor = spec.sigma2;
    let mut rate = vec![0.0; d];
    let moves: Vec<usize> = spec.supports[x].iter().copied().filter(|&y| y != x).collect();
    if spec.cost.is_separable_quadratic() {
        for &y in &moves {
            rate[y] = floor.max(-dv[y]);
        }
    } else {
        for &y in &moves {
            rate[y] = coordinate_argmin(spec, x, mu, y, dv[y], floor)?;
        }
    }
    rate[x] = -moves.iter().map(|&y| rate[y]).sum::<f64>();
    Ok(rate)
}

/// Minimizes `r -> l(x, mu, r e_y) + r dv` over `r >= floor` by bisection on
/// the derivative.
fn coordinate_argmin(spec: &GameSpec, x: usize, mu: &[f64], y: usize, dv: f64, floor: f64) -> Result<f64> {
    let d = spec.d;
    let slope = |r: f64| {
        let mut rate = vec![0.0; d];
        rate[y] = r;
        spec.cost.running_subgrad(x, mu, &rate)[y] + dv
    };
    if slope(floor) >= 0.0 {
        return Ok(floor);
    }
    let mut hi = floor.max(1.0);
    while slope(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Domain(format!(
                "running cost is not coercive in the rate towards state {y} from {x}"
            )));
        }
    }
    let mut lo = floor;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `L^beta phi(x, z) = sum_y sum_{w != y} z_y beta_w(y, z + e_x - e_y) [phi(x, z + e_w - e_y) - phi(x, z)]`
/// with `z` in counts. `beta(y, j)` gives the rates of an untagged player
/// at `y` facing lattice point `j`; `phi` is flat `[x][z]`.
pub fn generator_apply<B>(lattice: &SimplexLattice, beta: B, phi: &[f64]) -> Vec<f64>
where
    B: Fn(usize, usize) -> Vec<f64> + Sync,
{
    let d = lattice.dim();
    let nz = lattice.len();
    (0..d * nz)
        .into_par_iter()
        .map(|node| generator_at(lattice, &beta, phi, node / nz, node % nz))
        .collect()
}

fn generator_at<B>(lattice: &SimplexLattice, beta: &B, phi: &[f64], x: usize, zi: usize) -> f64
where
    B: Fn(usize, usize) -> Vec<f64>,
{
    let d = lattice.dim();
    let nz = lattice.len();
    let z = lattice.point(zi);
    let here = phi[x * nz + zi];
    let mut acc = 0.0;
    for y in 0..d {
        let Some(view) = z.shifted(x, y) else { continue };
        let rates = beta(y, lattice.index_of(&view.counts).unwrap());
        let count = f64::from(z.counts[y]);
        for w in 0..d {
            if w == y || rates[w] == 0.0 {
                continue;
            }
            let next = z.shifted(w, y).unwrap();
            acc += count * rates[w] * (phi[x * nz + lattice.index_of(&next.counts).unwrap()] - here);
        }
    }
    acc
}

/// Dense samples `v(t_j, x, z)`, `t_j = j T / M`.
#[derive(Clone, Debug)]
pub struct CtsValue {
    pub horizon: f64,
    pub steps: usize,
    pub lattice: SimplexLattice,
    /// `layers[j]` is flat `[x][z]` at `t_j`.
    pub layers: Vec<Vec<f64>>,
}

impl CtsValue {
    pub fn delta(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Piecewise-linear interpolation in time.
    pub fn at_time(&self, t: f64) -> Vec<f64> {
        let s = (t / self.delta()).clamp(0.0, self.steps as f64);
        let j = (s.floor() as usize).min(self.steps.saturating_sub(1));
        let w = s - j as f64;
        if self.steps == 0 {
            return self.layers[0].clone();
        }
        self.layers[j]
            .iter()
            .zip(&self.layers[j + 1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect()
    }

    /// Minimizing rates at `t_j`, flat `[x][z][y]`.
    pub fn rates(&self, spec: &GameSpec, j: usize) -> Result<Vec<f64>> {
        rates_of(spec, &self.lattice, &self.layers[j])
    }
}

fn rates_of(spec: &GameSpec, lattice: &SimplexLattice, v: &[f64]) -> Result<Vec<f64>> {
    let d = spec.d;
    let nz = lattice.len();
    let rows: Vec<Vec<f64>> = (0..d * nz)
        .into_par_iter()
        .map(|node| {
            let (x, zi) = (node / nz, node % nz);
            let dv: Vec<f64> = (0..d).map(|y| v[y * nz + zi] - v[x * nz + zi]).collect();
            cts_hamiltonian_min(spec, x, &lattice.point(zi).to_simplex(), &dv)
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

fn right_side(spec: &GameSpec, lattice: &SimplexLattice, v: &[f64]) -> Result<Vec<f64>> {
    let d = spec.d;
    let nz = lattice.len();
    let rates = rates_of(spec, lattice, v)?;
    let row = |x: usize, zi: usize| &rates[(x * nz + zi) * d..(x * nz + zi + 1) * d];
    let gen = generator_apply(lattice, |y, j| row(y, j).to_vec(), v);
    Ok((0..d * nz)
        .map(|node| {
            let (x, zi) = (node / nz, node % nz);
            let r = row(x, zi);
            let mu = lattice.point(zi).to_simplex();
            let mut ham = spec.cost.running(x, &mu, r);
            for y in 0..d {
                if y != x {
                    ham += r[y] * (v[y * nz + zi] - v[x * nz + zi]);
                }
            }
            ham + gen[node]
        })
        .collect())
}

fn integrate(spec: &GameSpec, lattice: &SimplexLattice, horizon: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let d = spec.d;
    let nz = lattice.len();
    let terminal: Vec<f64> = (0..d * nz)
        .map(|node| spec.cost.terminal(node / nz, &lattice.point(node % nz).to_simplex()))
        .collect();
    let delta = horizon / steps as f64;
    let mut layers = vec![Vec::new(); steps + 1];
    layers[steps] = terminal;
    let axpy = |v: &[f64], k: &[f64], s: f64| -> Vec<f64> { v.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for j in (0..steps).rev() {
        let v = &layers[j + 1];
        let k1 = right_side(spec, lattice, v)?;
        let k2 = right_side(spec, lattice, &axpy(v, &k1, 0.5 * delta))?;
        let k3 = right_side(spec, lattice, &axpy(v, &k2, 0.5 * delta))?;
        let k4 = right_side(spec, lattice, &axpy(v, &k3, delta))?;
        let next: Vec<f64> = (0..v.len())
            .map(|i| v[i] + delta / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("continuous-time value became non-finite".into()));
        }
        layers[j] = next;
    }
    Ok(layers)
}

/// Integrator settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtsOptions {
    pub steps: usize,
    /// Maximal disagreement with the half-resolution run; `None` skips the check.
    pub halving_tol: Option<f64>,
}

impl Default for CtsOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            halving_tol: Some(1e-6),
        }
    }
}

/// Backward integration of the continuous-time equation for `N` untagged players.
pub fn solve_cts_nll(spec: &GameSpec, n: u32, horizon: f64, opts: &CtsOptions) -> Result<CtsValue> {
    if !(horizon >= 0.0) || opts.steps == 0 {
        return Err(Error::Config("horizon must be nonnegative and the step count positive".into()));
    }
    let lattice = SimplexLattice::new(n, spec.d)?;
    let layers = integrate(spec, &lattice, horizon, opts.steps)?;
    if let Some(tol) = opts.halving_tol {
        if opts.steps % 2 == 0 && opts.steps >= 2 {
            let coarse = integrate(spec, &lattice, horizon, opts.steps / 2)?;
            let disagreement = coarse
                .iter()
                .enumerate()
                .flat_map(|(i, c)| c.iter().zip(&layers[2 * i]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if disagreement > tol {
                return Err(Error::Accuracy {
                    disagreement,
                    tolerance: tol,
                });
            }
        }
    }
    Ok(CtsValue {
        horizon,
        steps: opts.steps,
        lattice,
        layers,
    })
}

/// One row of the vanishing-step table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub k: usize,
    pub h: f64,
    pub err_value: f64,
    pub err_rate: f64,
}

/// Sup-norm distances between discrete solutions with `K` steps, linearly
/// interpolated in time, and the continuous reference, sampled on the
/// reference time grid. Rates of the discrete scheme are `(alpha - e_x) / h`.
pub fn compare_discrete_to_cts(
    spec: &GameSpec,
    n: u32,
    reference: &CtsValue,
    k_list: &[usize],
    opts: &SolverOptions,
) -> Result<Vec<ConvergenceRow>> {
    let d = spec.d;
    let horizon = reference.horizon;
    let nz = reference.lattice.len();
    let ref_rates: Vec<Vec<f64>> = (0..=reference.steps)
        .map(|j| reference.rates(spec, j))
        .collect::<Result<_>>()?;
    k_list
        .iter()
        .map(|&k| {
            let grid = TimeGrid::from_horizon(horizon, k)?;
            let sol = solve_nll(spec, grid, n, opts, Init::Reference)?;
            let rate_layer = |i: usize| -> Vec<f64> {
                let layer = sol.policy.layer(i.min(k - 1));
                let mut out = layer.to_vec();
                for x in 0..d {
                    for zi in 0..nz {
                        let row = &mut out[(x * nz + zi) * d..(x * nz + zi + 1) * d];
                        row[x] -= 1.0;
                        for r in row.iter_mut() {
                            *r /= grid.h;
                        }
                    }
                }
                out
            };
            let rate_layers: Vec<Vec<f64>> = (0..=k).map(rate_layer).collect();
            let mut err_value: f64 = 0.0;
            let mut err_rate: f64 = 0.0;
            for j in 0..=reference.steps {
                let t = j as f64 * reference.delta();
                let s = (t / grid.h).clamp(0.0, k as f64);
                let i = (s.floor() as usize).min(k.saturating_sub(1));
                let w = s - i as f64;
                let (v0, v1) = (sol.values.layer(i), sol.values.layer((i + 1).min(k)));
                for (node, r) in reference.layers[j].iter().enumerate() {
                    err_value = err_value.max(((1.0 - w) * v0[node] + w * v1[node] - r).abs());
                }
                let (r0, r1) = (&rate_layers[i], &rate_layers[(i + 1).min(k)]);
                for (idx, r) in ref_rates[j].iter().enumerate() {
                    if idx % d == (idx / d) / nz {
                        continue;
                    }
                    err_rate = err_rate.max(((1.0 - w) * r0[idx] + w * r1[idx] - r).abs());
                }
            }
            Ok(ConvergenceRow {
                k,
                h: grid.h,
                err_value,
                err_rate,
            })
        })
        .collect()
}
