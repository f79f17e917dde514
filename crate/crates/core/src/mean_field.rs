//! Mean-field limit: the master equation on a discretized simplex, measure
//! flows generated by its feedback rule, and Picard iteration on the
//! forward-backward system.
//!
//! Values and policies are stored at the nodes of a [`SimplexLattice`] of
//! resolution `R` and evaluated elsewhere by barycentric interpolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finite::{
    estimate_grid_lipschitz, iterate_fixed_point, FixedPointReport, Init, NllSolution, PolicyN, SolverOptions,
    ValueN,
};
use crate::game::{AdmissibleSet, GameSpec, TimeGrid};
use crate::hamiltonian::{l1, minimize_hamiltonian, project_simplex_lb, HamiltonianProblem};
use crate::lattice::SimplexLattice;

/// `nu_w = sum_y mu_y rows[y][w]`.
pub fn push_forward(mu: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let d = mu.len();
    let mut nu = vec![0.0; d];
    for (y, row) in rows.iter().enumerate() {
        for w in 0..d {
            nu[w] += mu[y] * row[w];
        }
    }
    nu
}

fn rows_of(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}

fn problem<'a>(
    spec: &'a GameSpec,
    adm: &'a AdmissibleSet,
    h: f64,
    x: usize,
    mu: &'a [f64],
    v: &'a [f64],
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

/// Solution of the one-step mean-field problem at a single population state.
#[derive(Clone, Debug)]
pub struct MfOneStep {
    /// Row-stochastic `d x d` matrix, flat.
    pub alpha: Vec<f64>,
    /// `H(x, mu, phi(., mu alpha), alpha(x))` for every `x`.
    pub values: Vec<f64>,
    pub report: FixedPointReport,
}

/// Solves `alpha(x) = argmin_a H(x, mu, phi(., mu alpha), a)` for all `x`.
///
/// `l_phi` is a Lipschitz constant of `phi` in the population argument; it
/// decides whether the plain or the damped iteration is used.
pub fn solve_mf_one_step<P>(
    spec: &GameSpec,
    h: f64,
    phi: P,
    mu: &[f64],
    l_phi: f64,
    opts: &SolverOptions,
    init: Init,
) -> Result<MfOneStep>
where
    P: Fn(usize, &[f64]) -> Result<f64>,
{
    let adm = spec.admissible_sets(h)?;
    solve_with_sets(spec, &adm, h, &phi, mu, l_phi, opts, init)
}

#[allow(clippy::too_many_arguments)]
fn solve_with_sets<P>(
    spec: &GameSpec,
    adm: &[AdmissibleSet],
    h: f64,
    phi: &P,
    mu: &[f64],
    l_phi: f64,
    opts: &SolverOptions,
    init: Init,
) -> Result<MfOneStep>
where
    P: Fn(usize, &[f64]) -> Result<f64>,
{
    let d = spec.d;
    if mu.len() != d {
        return Err(Error::Domain(format!("population vector has {} entries, expected {d}", mu.len())));
    }
    let continuation = |alpha: &[f64]| -> Result<Vec<f64>> {
        let nu = push_forward(mu, &rows_of(alpha, d));
        (0..d).map(|y| phi(y, &nu)).collect()
    };
    let apply = |alpha: &[f64]| -> Result<Vec<f64>> {
        let v = continuation(alpha)?;
        let mut out = Vec::with_capacity(d * d);
        for x in 0..d {
            out.extend(minimize_hamiltonian(&problem(spec, &adm[x], h, x, mu, &v))?.0);
        }
        Ok(out)
    };
    let start: Vec<f64> = match init {
        Init::Reference => (0..d).flat_map(|x| adm[x].reference(d)).collect(),
        Init::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..d).flat_map(|x| adm[x].sample(d, &mut rng)).collect()
        }
    };
    let contractive = h * l_phi < spec.gamma;
    let (alpha, report) = iterate_fixed_point(start, d, contractive, l_phi, opts, apply)?;
    let v = continuation(&alpha)?;
    let values = (0..d)
        .map(|x| problem(spec, &adm[x], h, x, mu, &v).value_at(&alpha[x * d..(x + 1) * d]))
        .collect();
    Ok(MfOneStep {
        alpha,
        values,
        report,
    })
}

/// Solution of the master equation on a simplex lattice.
#[derive(Clone, Debug)]
pub struct MfSolution {
    pub grid: TimeGrid,
    pub lattice: SimplexLattice,
    pub values: ValueN,
    pub policy: PolicyN,
    /// Per time index, the worst node: largest iteration count and residual.
    pub reports: Vec<FixedPointReport>,
    adm: Vec<AdmissibleSet>,
}

impl MfSolution {
    pub fn value_at(&self, t: usize, x: usize, mu: &[f64]) -> Result<f64> {
        self.values.interpolate(&self.lattice, t, x, mu)
    }

    /// Interpolated feedback rule at `mu`, rows projected back onto the
    /// admissible sets.
    pub fn policy_at(&self, t: usize, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.lattice.dim())
            .map(|x| {
                let raw = self.policy.interpolate(&self.lattice, t, x, mu)?;
                project_simplex_lb(&raw, self.adm[x].floor, &self.adm[x].support)
            })
            .collect()
    }
}

fn merge_reports(reports: &[FixedPointReport]) -> FixedPointReport {
    let mut out = FixedPointReport {
        iterations: 0,
        residual: 0.0,
        contraction_estimate: 0.0,
        contractive: true,
        l_phi: 0.0,
        damped: false,
        residuals: Vec::new(),
    };
    for r in reports {
        out.iterations = out.iterations.max(r.iterations);
        out.residual = out.residual.max(r.residual);
        out.contraction_estimate = out.contraction_estimate.max(r.contraction_estimate);
        out.contractive &= r.contractive;
        out.l_phi = out.l_phi.max(r.l_phi);
        out.damped |= r.damped;
    }
    out
}

/// Backward solve of the master equation at the nodes of `lattice`.
pub fn solve_mf_nll(
    spec: &GameSpec,
    grid: TimeGrid,
    lattice: SimplexLattice,
    opts: &SolverOptions,
    init: Init,
) -> Result<MfSolution> {
    let d = spec.d;
    if lattice.dim() != d {
        return Err(Error::Config(format!("lattice dimension {} differs from d = {d}", lattice.dim())));
    }
    let adm = spec.admissible_sets(grid.h)?;
    let nz = lattice.len();
    let mut values = ValueN {
        k: grid.k,
        d,
        nz,
        data: vec![0.0; (grid.k + 1) * d * nz],
    };
    let mut policy = PolicyN {
        k: grid.k,
        d,
        nz,
        data: vec![0.0; grid.k * d * nz * d],
    };
    let layer_len = d * nz;
    for x in 0..d {
        for (zi, z) in lattice.points().iter().enumerate() {
            values.data[grid.k * layer_len + x * nz + zi] = spec.cost.terminal(x, &z.to_simplex());
        }
    }
    let mut reports = vec![None; grid.k];
    for k in (0..grid.k).rev() {
        let next = values.data[(k + 1) * layer_len..(k + 2) * layer_len].to_vec();
        let l_phi = estimate_grid_lipschitz(&next, &lattice, spec.m);
        let phi = |y: usize, nu: &[f64]| lattice.interpolate(&next[y * nz..(y + 1) * nz], &clean(nu));
        let nodes: Vec<MfOneStep> = (0..nz)
            .into_par_iter()
            .map(|zi| {
                let mu = lattice.point(zi).to_simplex();
                let node_init = match init {
                    Init::Random(seed) => Init::Random(seed ^ ((k * nz + zi) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                    other => other,
                };
                solve_with_sets(spec, &adm, grid.h, &phi, &mu, l_phi, opts, node_init)
            })
            .collect::<Result<_>>()
            .map_err(|e| e.at_step(k))?;
        for (zi, node) in nodes.iter().enumerate() {
            for x in 0..d {
                values.data[k * layer_len + x * nz + zi] = node.values[x];
                policy.row_mut(k, x, zi).copy_from_slice(&node.alpha[x * d..(x + 1) * d]);
            }
        }
        let step_reports: Vec<FixedPointReport> = nodes.into_iter().map(|n| n.report).collect();
        reports[k] = Some(merge_reports(&step_reports));
    }
    Ok(MfSolution {
        grid,
        lattice,
        values,
        policy,
        reports: reports.into_iter().map(Option::unwrap).collect(),
        adm,
    })
}

/// Clips rounding noise so that a pushforward stays in the simplex.
fn clean(nu: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = nu.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    clipped.iter().map(|v| v / s).collect()
}

/// Population flow `mu_{t0}, ..., mu_K` with the values `v(s, x)` along it.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFlow {
    pub t0: usize,
    pub mus: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl MeasureFlow {
    /// Largest per-time ℓ₁ distance between two flows of equal length.
    pub fn distance(&self, other: &MeasureFlow) -> f64 {
        self.mus
            .iter()
            .zip(&other.mus)
            .map(|(a, b)| l1(a, b))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, h: f64) -> std::io::Result<()> {
        let d = self.mus.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..d).map(|i| format!("mu_{i}")).collect();
        writeln!(w, "s,{}", header.join(","))?;
        for (i, mu) in self.mus.iter().enumerate() {
            let cells: Vec<String> = mu.iter().map(|&v| crate::artifact::fmt17(v)).collect();
            writeln!(w, "{},{}", crate::artifact::fmt17((self.t0 + i) as f64 * h), cells.join(","))?;
        }
        Ok(())
    }
}

/// Forward flow of the interpolated feedback rule from `mu0` at `t0`.
pub fn mfg_flow(sol: &MfSolution, t0: usize, mu0: &[f64]) -> Result<MeasureFlow> {
    if t0 > sol.grid.k {
        return Err(Error::Domain(format!("start index {t0} beyond horizon {}", sol.grid.k)));
    }
    let d = sol.lattice.dim();
    let mut mus = vec![mu0.to_vec()];
    let mut values = Vec::new();
    for s in t0..sol.grid.k {
        let mu = mus.last().unwrap().clone();
        values.push((0..d).map(|x| sol.value_at(s, x, &mu)).collect::<Result<Vec<f64>>>()?);
        mus.push(push_forward(&mu, &sol.policy_at(s, &mu)?));
    }
    let last = mus.last().unwrap();
    values.push((0..d).map(|x| sol.value_at(sol.grid.k, x, last)).collect::<Result<Vec<f64>>>()?);
    Ok(MeasureFlow { t0, mus, values })
}

/// Best responses along a frozen flow: returns the feedback rows per time
/// and the values `v(s, x)`.
pub fn best_response(
    spec: &GameSpec,
    grid: TimeGrid,
    t0: usize,
    mus: &[Vec<f64>],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
    let d = spec.d;
    let adm = spec.admissible_sets(grid.h)?;
    let steps = grid.k - t0;
    let mut values = vec![Vec::new(); steps + 1];
    let mut rows = vec![Vec::new(); steps];
    values[steps] = (0..d).map(|x| spec.cost.terminal(x, &mus[steps])).collect();
    for i in (0..steps).rev() {
        let mut v = Vec::with_capacity(d);
        let mut r = Vec::with_capacity(d);
        for x in 0..d {
            let (a, val) = minimize_hamiltonian(&problem(spec, &adm[x], grid.h, x, &mus[i], &values[i + 1]))?;
            v.push(val);
            r.push(a);
        }
        values[i] = v;
        rows[i] = r;
    }
    Ok((rows, values))
}

/// Image of a flow under one best-response-then-Kolmogorov sweep.
pub fn picard_map(spec: &GameSpec, grid: TimeGrid, t0: usize, mus: &[Vec<f64>]) -> Result<MeasureFlow> {
    let (rows, values) = best_response(spec, grid, t0, mus)?;
    let mut out = vec![mus[0].clone()];
    for r in &rows {
        out.push(push_forward(out.last().unwrap(), r));
    }
    Ok(MeasureFlow {
        t0,
        mus: out,
        values,
    })
}

/// Settings of the Picard search for equilibria of the forward-backward system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub dedup: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 5_000,
            dedup: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MfgSystemResult {
    pub equilibria: Vec<MeasureFlow>,
    /// Starts whose iteration did not reach the tolerance.
    pub dropped: usize,
}

/// Random-start damped Picard iteration on measure flows; returns the
/// distinct converged flows.
pub fn solve_mfg_system(
    spec: &GameSpec,
    grid: TimeGrid,
    t0: usize,
    mu0: &[f64],
    starts: usize,
    seed: u64,
    opts: &PicardOptions,
) -> Result<MfgSystemResult> {
    if t0 > grid.k {
        return Err(Error::Domain(format!("start index {t0} beyond horizon {}", grid.k)));
    }
    if mu0.len() != spec.d {
        return Err(Error::Domain("initial distribution has the wrong dimension".into()));
    }
    let steps = grid.k - t0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial: Vec<Vec<Vec<f64>>> = (0..starts.max(1))
        .map(|_| {
            let mut flow = vec![mu0.to_vec()];
            for _ in 0..steps {
                let e: Vec<f64> = (0..spec.d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                flow.push(e.iter().map(|v| v / s).collect());
            }
            flow
        })
        .collect();
    let outcomes: Vec<Option<MeasureFlow>> = initial
        .into_par_iter()
        .map(|mut mus| -> Result<Option<MeasureFlow>> {
            for _ in 0..opts.max_iter {
                let image = picard_map(spec, grid, t0, &mus)?;
                let residual = mus
                    .iter()
                    .zip(&image.mus)
                    .map(|(a, b)| l1(a, b))
                    .fold(0.0, f64::max);
                if residual <= opts.tol {
                    let (_, values) = best_response(spec, grid, t0, &image.mus)?;
                    return Ok(Some(MeasureFlow { values, ..image }));
                }
                for (m, n) in mus.iter_mut().zip(&image.mus) {
                    for (a, b) in m.iter_mut().zip(n) {
                        *a = (1.0 - opts.damping) * *a + opts.damping * b;
                    }
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    let mut equilibria: Vec<MeasureFlow> = Vec::new();
    let mut dropped = 0;
    for o in outcomes {
        match o {
            Some(flow) => {
                if equilibria.iter().all(|e| e.distance(&flow) > opts.dedup) {
                    equilibria.push(flow);
                }
            }
            None => dropped += 1,
        }
    }
    equilibria.sort_by(|a, b| {
        let ka = a.mus.last().unwrap();
        let kb = b.mus.last().unwrap();
        ka.partial_cmp(kb).unwrap()
    });
    Ok(MfgSystemResult { equilibria, dropped })
}

/// Sup-norm distances between an `N`-player solution, linearly
/// interpolated in the population variable, and the master-equation
/// solution at its lattice nodes: `(values, policies in ℓ₁)`.
pub fn distance_to_master(finite: &NllSolution, mf: &MfSolution) -> Result<(f64, f64)> {
    if finite.grid != mf.grid || finite.lattice.dim() != mf.lattice.dim() {
        return Err(Error::Config("solutions live on different grids".into()));
    }
    let d = mf.lattice.dim();
    let k = mf.grid.k;
    let per_node: Vec<(f64, f64)> = (0..mf.lattice.len())
        .into_par_iter()
        .map(|zi| -> Result<(f64, f64)> {
            let mu = mf.lattice.point(zi).to_simplex();
            let (mut ev, mut ea) = (0.0f64, 0.0f64);
            for t in 0..=k {
                for x in 0..d {
                    let v = finite.values.interpolate(&finite.lattice, t, x, &mu)?;
                    ev = ev.max((v - mf.values.get(t, x, zi)).abs());
                    if t < k {
                        let a = finite.policy.interpolate(&finite.lattice, t, x, &mu)?;
                        ea = ea.max(l1(&a, mf.policy.row(t, x, zi)));
                    }
                }
            }
            Ok((ev, ea))
        })
        .collect::<Result<_>>()?;
    Ok(per_node
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, e)| (f64::max(a, c), f64::max(b, e))))
}
