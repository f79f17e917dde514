//! The two-state, one-period mean-field example.
//!
//! Players at state `x` pay `1 - mu_h(x)` at the terminal time, so they want
//! to end up with the majority. Starting from `mu0`, an equilibrium is a
//! fixed point `mu_h = mu0 + alpha_0 (1 - mu0) - alpha_1 mu0`, where `mu`
//! denotes the mass of state 1 and `alpha_x` is the switching probability
//! from `x` under the best response to `mu_h`.

use crate::error::{Error, Result};
use crate::game::{build_quadratic_nearest_neighbor, Couplings, GameSpec};
use crate::hamiltonian::minimize_hamiltonian;
use crate::hamiltonian::HamiltonianProblem;

/// Root-finding tolerance for sign-change bisection.
pub const ROOT_TOL: f64 = 1e-12;
/// `|F|` below which a local minimum without sign change counts as a root.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Roots closer than this are merged.
pub const MERGE_TOL: f64 = 1e-7;

/// Largest `sigma^2` for which the multiplicity window exists.
pub fn sigma2_limit() -> f64 {
    3.0 - 2.0 * 2f64.sqrt()
}

/// The two steps at which the number of equilibria from `mu0 = 1/2`
/// changes between one and five.
pub fn critical_steps(sigma2: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0 && sigma2 < sigma2_limit()) {
        return Err(Error::Domain(format!(
            "sigma^2 = {sigma2} outside (0, {})",
            sigma2_limit()
        )));
    }
    let disc = (1.0 - (6.0 - sigma2) * sigma2).sqrt();
    let lo = (1.0 + sigma2 - disc) / (4.0 * sigma2);
    let hi = (1.0 + sigma2 + disc) / (4.0 * sigma2);
    Ok((lo, hi))
}

/// One-period fixed-point map of the example, evaluated through the
/// Hamiltonian minimizer of the game it is built from.
#[derive(Debug)]
pub struct OneStepMap {
    pub spec: GameSpec,
    pub h: f64,
    pub mu0: f64,
    adm: [crate::game::AdmissibleSet; 2],
}

impl OneStepMap {
    pub fn new(sigma2: f64, h: f64, mu0: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !(h > 0.0) || !(0.0..=1.0).contains(&mu0) {
            return Err(Error::Domain(format!(
                "need sigma^2 >= 0, h > 0, mu0 in [0, 1]; got {sigma2}, {h}, {mu0}"
            )));
        }
        let c = Couplings {
            term_crowd: 1.0,
            ..Default::default()
        };
        let spec = build_quadratic_nearest_neighbor(2, sigma2, Some(c))?;
        let adm = [spec.admissible_set(h, 0)?, spec.admissible_set(h, 1)?];
        Ok(Self { spec, h, mu0, adm })
    }

    /// Best-response switching probabilities `(alpha_0, alpha_1)` against `mu_h`.
    pub fn switching(&self, mu_h: f64) -> Result<(f64, f64)> {
        let nu = [1.0 - mu_h, mu_h];
        let v = [self.spec.cost.terminal(0, &nu), self.spec.cost.terminal(1, &nu)];
        let mu_now = [1.0 - self.mu0, self.mu0];
        let mut out = [0.0; 2];
        for x in 0..2 {
            let p = HamiltonianProblem {
                x,
                mu: &mu_now,
                v: &v,
                h: self.h,
                adm: &self.adm[x],
                cost: self.spec.cost.as_ref(),
                gamma: self.spec.gamma,
            };
            out[x] = minimize_hamiltonian(&p)?.0[1 - x];
        }
        Ok((out[0], out[1]))
    }

    pub fn rhs(&self, mu_h: f64) -> Result<f64> {
        let (a0, a1) = self.switching(mu_h)?;
        Ok(self.mu0 + (a0 * (1.0 - self.mu0) - a1 * self.mu0))
    }

    /// `F(mu) = RHS(mu) - mu`.
    pub fn residual(&self, mu_h: f64) -> Result<f64> {
        Ok(self.rhs(mu_h)? - mu_h)
    }

    /// `F` sampled on `mesh + 1` equispaced points of `[0, 1]`.
    pub fn curve(&self, mesh: usize) -> Result<Vec<(f64, f64)>> {
        (0..=mesh)
            .map(|i| {
                let mu = i as f64 / mesh as f64;
                Ok((mu, self.residual(mu)?))
            })
            .collect()
    }

    /// All roots of `F` in `[0, 1]`, sorted.
    pub fn roots(&self, mesh: usize) -> Result<Vec<Root>> {
        let mesh = mesh.max(2);
        let pts = self.curve(mesh)?;
        let mut roots = Vec::new();
        for (i, &(mu, f)) in pts.iter().enumerate() {
            if f == 0.0 {
                roots.push(mu);
            }
            if let Some(&(mu_next, f_next)) = pts.get(i + 1) {
                if f * f_next < 0.0 {
                    roots.push(self.bisect(mu, mu_next, f)?);
                }
            }
            if i > 0 && i < mesh {
                let (fa, fb) = (pts[i - 1].1, pts[i + 1].1);
                let local_min = f.abs() <= fa.abs() && f.abs() <= fb.abs();
                let no_crossing = f != 0.0 && fa * f > 0.0 && f * fb > 0.0;
                if local_min && no_crossing {
                    let (m, val) = self.min_abs(pts[i - 1].0, pts[i + 1].0)?;
                    if val.abs() < TANGENCY_TOL {
                        roots.push(m);
                    }
                }
            }
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut merged: Vec<f64> = Vec::new();
        for r in roots {
            if merged.last().is_none_or(|&last| r - last > MERGE_TOL) {
                merged.push(r);
            }
        }
        merged
            .into_iter()
            .map(|mu| Ok(Root { mu, residual: self.residual(mu)? }))
            .collect()
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, mut f_lo: f64) -> Result<f64> {
        while hi - lo > ROOT_TOL {
            let mid = 0.5 * (lo + hi);
            let f_mid = self.residual(mid)?;
            if f_mid == 0.0 {
                return Ok(mid);
            }
            if f_lo * f_mid < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                f_lo = f_mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Ternary search for the minimum of `|F|` on `[lo, hi]`.
    fn min_abs(&self, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
        for _ in 0..200 {
            if hi - lo <= ROOT_TOL {
                break;
            }
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if self.residual(a)?.abs() <= self.residual(b)?.abs() {
                hi = b;
            } else {
                lo = a;
            }
        }
        let m = 0.5 * (lo + hi);
        Ok((m, self.residual(m)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Root {
    pub mu: f64,
    pub residual: f64,
}

/// Default number of mesh intervals of the scan.
pub const DEFAULT_MESH: usize = 10_000;

/// Equilibria of the example starting from the uniform distribution.
pub fn scan_equilibria_onestep(sigma2: f64, h: f64, mesh: usize) -> Result<Vec<Root>> {
    OneStepMap::new(sigma2, h, 0.5)?.roots(mesh)
}

/// Number of equilibria from the uniform distribution for each step in `hs`.
pub fn bifurcation_scan(sigma2: f64, hs: &[f64], mesh: usize) -> Result<Vec<(f64, Vec<Root>)>> {
    hs.iter()
        .map(|&h| Ok((h, scan_equilibria_onestep(sigma2, h, mesh)?)))
        .collect()
}
