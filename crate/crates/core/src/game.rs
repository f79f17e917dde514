//! Static game data: states, admissible transition sets, cost models and
//! the Lipschitz budget that decides which step sizes are contractive.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::SimplexLattice;

/// Running and terminal costs of a symmetric game.
///
/// `rate` is the transition-rate vector `a / h`. Only coordinates in the
/// support of the current state are ever nonzero.
pub trait CostModel: Send + Sync + fmt::Debug {
    fn running(&self, x: usize, mu: &[f64], rate: &[f64]) -> f64;

    /// One element of the subgradient of `running` in `rate`.
    fn running_subgrad(&self, x: usize, mu: &[f64], rate: &[f64]) -> Vec<f64>;

    fn terminal(&self, x: usize, mu: &[f64]) -> f64;

    /// `true` when the running cost is `0.5 * sum_{y != x} rate_y^2 + c(x, mu)`,
    /// which enables the closed-form minimizer.
    fn is_separable_quadratic(&self) -> bool {
        false
    }

    /// Upper bound on the curvature of `running` in `rate` over rates
    /// bounded by `rate_bound`; used to pick projected-gradient steps.
    fn curvature_bound(&self, rate_bound: f64) -> f64;
}

/// `0.5 sum_{y in S(x)\{x}} rate_y^2 + (quartic/4) sum rate_y^4 + run_crowd (1 - mu_x)`
/// with terminal cost `term_crowd (1 - mu_x) + term_offset[x]`.
///
/// With `term_crowd = 1` this covers both two-state examples: for a single
/// opponent `1 - z_x` is the mismatch indicator, and in the mean-field case
/// it is the mass outside the player's state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    #[serde(default)]
    pub run_crowd: f64,
    #[serde(default)]
    pub term_crowd: f64,
    #[serde(default)]
    pub term_offset: Vec<f64>,
    #[serde(default)]
    pub quartic: f64,
    #[serde(skip)]
    supports: Vec<Vec<usize>>,
}

impl QuadraticCost {
    pub fn new(supports: Vec<Vec<usize>>, run_crowd: f64, term_crowd: f64) -> Self {
        Self {
            run_crowd,
            term_crowd,
            term_offset: Vec::new(),
            quartic: 0.0,
            supports,
        }
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        self.term_offset = offset;
        self
    }

    pub fn with_quartic(mut self, quartic: f64) -> Self {
        self.quartic = quartic;
        self
    }

    fn moves(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.supports[x].iter().copied().filter(move |&y| y != x)
    }
}

impl CostModel for QuadraticCost {
    fn running(&self, x: usize, mu: &[f64], rate: &[f64]) -> f64 {
        let mut s = 0.0;
        for y in self.moves(x) {
            let r = rate[y];
            s += 0.5 * r * r + 0.25 * self.quartic * r.powi(4);
        }
        s + self.run_crowd * (1.0 - mu[x])
    }

    fn running_subgrad(&self, x: usize, _mu: &[f64], rate: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; rate.len()];
        for y in self.moves(x) {
            g[y] = rate[y] + self.quartic * rate[y].powi(3);
        }
        g
    }

    fn terminal(&self, x: usize, mu: &[f64]) -> f64 {
        self.term_crowd * (1.0 - mu[x]) + self.term_offset.get(x).copied().unwrap_or(0.0)
    }

    fn is_separable_quadratic(&self) -> bool {
        self.quartic == 0.0
    }

    fn curvature_bound(&self, rate_bound: f64) -> f64 {
        1.0 + 3.0 * self.quartic * rate_bound * rate_bound
    }
}

/// Declarative cost description, the serialized form of a [`CostModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub kind: String,
    #[serde(default = "default_params")]
    pub params: toml::Table,
}

fn default_params() -> toml::Table {
    toml::Table::new()
}

/// Static description of a finite-state symmetric game.
#[derive(Clone, Debug)]
pub struct GameSpec {
    pub d: usize,
    pub supports: Vec<Vec<usize>>,
    pub sigma2: f64,
    pub cost: Arc<dyn CostModel>,
    pub cost_config: CostConfig,
    pub gamma: f64,
    pub lip_ell: f64,
    pub lip_g: f64,
    pub lip_dell: f64,
    pub m: usize,
}

/// Serialized form of [`GameSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSpecFile {
    pub d: usize,
    pub sigma2: f64,
    #[serde(default)]
    pub supports: Option<Vec<Vec<usize>>>,
    pub cost: CostConfig,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub lip_ell: Option<f64>,
    #[serde(default)]
    pub lip_g: Option<f64>,
    #[serde(default)]
    pub lip_dell: Option<f64>,
}

/// Nearest-neighbor supports on the discrete torus with `d` sites.
pub fn torus_supports(d: usize) -> Vec<Vec<usize>> {
    (0..d)
        .map(|x| {
            let mut s = vec![(x + d - 1) % d, x, (x + 1) % d];
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect()
}

/// Convexity constant of the quadratic torus cost: `1/4` is exact for the
/// two-site torus, `1/(6 sqrt 3)` holds for three supported states.
pub fn quadratic_gamma(m: usize) -> f64 {
    if m <= 2 {
        0.25
    } else {
        1.0 / (6.0 * 3f64.sqrt())
    }
}

/// Optional μ-dependent terms of the quadratic nearest-neighbor game.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Couplings {
    pub run_crowd: f64,
    pub term_crowd: f64,
    pub term_offset: Vec<f64>,
}

/// Quadratic nearest-neighbor game on the `d`-site torus.
pub fn build_quadratic_nearest_neighbor(
    d: usize,
    sigma2: f64,
    couplings: Option<Couplings>,
) -> Result<GameSpec> {
    if d < 2 {
        return Err(Error::Domain(format!("torus needs at least 2 states, got {d}")));
    }
    let c = couplings.unwrap_or_default();
    let supports = torus_supports(d);
    let cost = QuadraticCost::new(supports.clone(), c.run_crowd, c.term_crowd)
        .with_offset(c.term_offset.clone());
    GameSpec::from_quadratic(d, sigma2, supports, cost)
}

impl GameSpec {
    /// Assembles a spec around a [`QuadraticCost`], deriving γ and the
    /// Lipschitz constants. A probability-vector coordinate moves by at most
    /// half the ℓ₁ distance, so `(1 - mu_x)` terms are `1/2`-Lipschitz.
    pub fn from_quadratic(
        d: usize,
        sigma2: f64,
        supports: Vec<Vec<usize>>,
        cost: QuadraticCost,
    ) -> Result<Self> {
        let m = supports.iter().map(Vec::len).max().unwrap_or(0);
        let mut cost = cost;
        cost.supports = supports.clone();
        let mut params = toml::Table::new();
        params.insert("run_crowd".into(), cost.run_crowd.into());
        params.insert("term_crowd".into(), cost.term_crowd.into());
        if !cost.term_offset.is_empty() {
            params.insert(
                "term_offset".into(),
                toml::Value::Array(cost.term_offset.iter().map(|&v| v.into()).collect()),
            );
        }
        if cost.quartic != 0.0 {
            params.insert("quartic".into(), cost.quartic.into());
        }
        let spec = Self {
            d,
            supports,
            sigma2,
            gamma: quadratic_gamma(m),
            lip_ell: 0.5 * cost.run_crowd.abs(),
            lip_g: 0.5 * cost.term_crowd.abs(),
            lip_dell: 0.0,
            m,
            cost: Arc::new(cost),
            cost_config: CostConfig {
                kind: "quadratic".into(),
                params,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.supports.len() != self.d {
            return Err(Error::Config(format!(
                "need one support per state: d = {}, {} supports",
                self.d,
                self.supports.len()
            )));
        }
        for (x, s) in self.supports.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Config(format!("support of state {x} is empty")));
            }
            if s.iter().any(|&y| y >= self.d) {
                return Err(Error::Config(format!("support of state {x} names an unknown state")));
            }
        }
        if self.m != self.supports.iter().map(Vec::len).max().unwrap_or(0) {
            return Err(Error::Config("m must equal the largest support size".into()));
        }
        for (name, v) in [
            ("sigma2", self.sigma2),
            ("gamma", self.gamma),
            ("lip_ell", self.lip_ell),
            ("lip_g", self.lip_g),
            ("lip_dell", self.lip_dell),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Largest step for which every admissible set is nonempty.
    pub fn max_feasible_step(&self) -> f64 {
        if self.sigma2 == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (self.sigma2 * self.m as f64)
        }
    }

    pub fn admissible_set(&self, h: f64, x: usize) -> Result<AdmissibleSet> {
        AdmissibleSet::new(self.supports[x].clone(), h * self.sigma2, x)
    }

    /// Admissible sets of every state at step `h`.
    pub fn admissible_sets(&self, h: f64) -> Result<Vec<AdmissibleSet>> {
        (0..self.d).map(|x| self.admissible_set(h, x)).collect()
    }

    /// The reference control: mass `h sigma2` on every other supported
    /// state and the remainder on staying put (or spread evenly when the
    /// current state is not supported).
    pub fn reference_control(&self, h: f64, x: usize) -> Result<Vec<f64>> {
        Ok(self.admissible_set(h, x)?.reference(self.d))
    }

    pub fn from_file(file: &GameSpecFile) -> Result<Self> {
        let supports = file.supports.clone().unwrap_or_else(|| torus_supports(file.d));
        let mut spec = match file.cost.kind.as_str() {
            "quadratic" => {
                let cost: QuadraticCost = file
                    .cost
                    .params
                    .clone()
                    .try_into()
                    .map_err(|e| Error::Config(format!("cost.params: {e}")))?;
                Self::from_quadratic(file.d, file.sigma2, supports, cost)?
            }
            other => return Err(Error::Config(format!("unknown cost kind {other:?}"))),
        };
        if let Some(g) = file.gamma {
            spec.gamma = g;
        }
        if let Some(v) = file.lip_ell {
            spec.lip_ell = v;
        }
        if let Some(v) = file.lip_g {
            spec.lip_g = v;
        }
        if let Some(v) = file.lip_dell {
            spec.lip_dell = v;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_file(&self) -> GameSpecFile {
        GameSpecFile {
            d: self.d,
            sigma2: self.sigma2,
            supports: Some(self.supports.clone()),
            cost: self.cost_config.clone(),
            gamma: Some(self.gamma),
            lip_ell: Some(self.lip_ell),
            lip_g: Some(self.lip_g),
            lip_dell: Some(self.lip_dell),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: GameSpecFile =
            toml::from_str(s).map_err(|e| Error::Config(format!("game spec: {e}")))?;
        Self::from_file(&file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("game spec serializes")
    }

    /// SHA-256 of the canonical serialized form.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    /// Finite-difference audit of the declared `lip_ell` and `lip_g` over
    /// pairs of points of a coarse simplex lattice, at the reference rates
    /// for step `h`. Returns the observed `(lip_ell, lip_g)`.
    pub fn audit_lipschitz(&self, h: f64, resolution: u32) -> Result<(f64, f64)> {
        let lat = SimplexLattice::new(resolution, self.d)?;
        let pts: Vec<Vec<f64>> = lat.points().iter().map(|p| p.to_simplex()).collect();
        let mut le: f64 = 0.0;
        let mut lg: f64 = 0.0;
        for x in 0..self.d {
            let rate: Vec<f64> = self.reference_control(h, x)?.iter().map(|a| a / h).collect();
            for (i, a) in pts.iter().enumerate() {
                for b in &pts[i + 1..] {
                    let dist: f64 = a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum();
                    let dl = (self.cost.running(x, a, &rate) - self.cost.running(x, b, &rate)).abs();
                    let dg = (self.cost.terminal(x, a) - self.cost.terminal(x, b)).abs();
                    le = le.max(dl / dist);
                    lg = lg.max(dg / dist);
                }
            }
        }
        Ok((le, lg))
    }
}

/// `{a in simplex : a_y >= floor on support, a_y = 0 off support}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibleSet {
    pub support: Vec<usize>,
    pub floor: f64,
    pub state: usize,
}

impl AdmissibleSet {
    pub fn new(support: Vec<usize>, floor: f64, state: usize) -> Result<Self> {
        if support.is_empty() || floor * support.len() as f64 > 1.0 + 1e-15 || floor < 0.0 {
            return Err(Error::Infeasible {
                state,
                count: support.len(),
                floor,
            });
        }
        Ok(Self {
            support,
            floor,
            state,
        })
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > tol {
            return false;
        }
        a.iter().enumerate().all(|(y, &v)| {
            if self.support.contains(&y) {
                v >= self.floor - tol
            } else {
                v.abs() <= tol
            }
        })
    }

    pub fn reference(&self, d: usize) -> Vec<f64> {
        let mut a = vec![0.0; d];
        if self.support.contains(&self.state) {
            for &y in &self.support {
                a[y] = self.floor;
            }
            a[self.state] = 1.0 - self.floor * (self.support.len() - 1) as f64;
        } else {
            let w = 1.0 / self.support.len() as f64;
            for &y in &self.support {
                a[y] = w;
            }
        }
        a
    }

    /// Uniformly random point of the set.
    pub fn sample<R: rand::Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<f64> {
        let k = self.support.len();
        let free = 1.0 - self.floor * k as f64;
        // Uniform point of the unit simplex via normalized exponentials.
        let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = e.iter().sum();
        let mut a = vec![0.0; d];
        for (j, &y) in self.support.iter().enumerate() {
            a[y] = self.floor + free * e[j] / total;
        }
        a
    }

    /// Vertices of the polytope: all free mass on one supported state.
    pub fn vertices(&self, d: usize) -> Vec<Vec<f64>> {
        let k = self.support.len();
        let free = 1.0 - self.floor * k as f64;
        self.support
            .iter()
            .map(|&top| {
                let mut a = vec![0.0; d];
                for &y in &self.support {
                    a[y] = self.floor;
                }
                a[top] += free;
                a
            })
            .collect()
    }
}

/// Integer-indexed time grid `{0, h, ..., K h}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub h: f64,
    pub k: usize,
}

impl TimeGrid {
    pub fn new(h: f64, k: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {h}")));
        }
        Ok(Self { h, k })
    }

    /// `K` steps of size `T / K`.
    pub fn from_horizon(t: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("horizon split needs K >= 1".into()));
        }
        Self::new(t / k as f64, k)
    }

    pub fn horizon(&self) -> f64 {
        self.k as f64 * self.h
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.h
    }
}

/// Lipschitz budget recursion and the resulting uniqueness thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzBudget {
    /// `L(0..=K)` with `L(0) = m L_g`.
    pub l: Vec<f64>,
    pub cap: f64,
    /// `m L_l + M (L_dl + M) / (gamma - h M)`; infinite when `gamma <= h M`.
    pub m_tilde: f64,
    pub h_star: f64,
    pub t_star: f64,
    pub h_star_nt: f64,
    pub b_star: f64,
    /// `L(k) <= M` for every `k <= K`.
    pub within_cap: bool,
    /// `h < gamma / M`.
    pub contractive: bool,
}

pub fn lipschitz_budget(spec: &GameSpec, h: f64, k: usize, n: u32, cap: f64) -> Result<LipschitzBudget> {
    let m = spec.m as f64;
    let l0 = m * spec.lip_g;
    if !(cap > l0) {
        return Err(Error::Domain(format!("budget cap {cap} must exceed m L_g = {l0}")));
    }
    let mut l = Vec::with_capacity(k + 1);
    l.push(l0);
    let mut within_cap = true;
    for i in 1..=k {
        let prev = l[i - 1];
        let denom = spec.gamma - h * prev;
        let next = if denom > 0.0 {
            prev + h * (m * spec.lip_ell + prev * (spec.lip_dell + prev) / denom)
        } else {
            f64::INFINITY
        };
        within_cap &= next <= cap;
        l.push(next);
    }
    let denom = spec.gamma - h * cap;
    let m_tilde = if denom > 0.0 {
        m * spec.lip_ell + cap * (spec.lip_dell + cap) / denom
    } else {
        f64::INFINITY
    };
    let horizon = k as f64 * h;
    let b_star = estimate_b_star(spec, h, horizon)?;
    Ok(LipschitzBudget {
        within_cap,
        contractive: h < spec.gamma / cap,
        h_star: spec.gamma / cap,
        t_star: (cap - l0) / m_tilde,
        h_star_nt: h_star_nt(spec, n, horizon, b_star),
        b_star,
        m_tilde,
        cap,
        l,
    })
}

/// `gamma / (2 m N b* (1 + T))`.
pub fn h_star_nt(spec: &GameSpec, n: u32, horizon: f64, b_star: f64) -> f64 {
    spec.gamma / (2.0 * spec.m as f64 * f64::from(n) * b_star * (1.0 + horizon))
}

/// Value bound per unit time: `max(sup g, sup l(x, mu, a*/h))` over a coarse
/// lattice of population states, so that the value of the reference control
/// over a horizon `T` is at most `b* (1 + T)`.
pub fn estimate_b_star(spec: &GameSpec, h: f64, _horizon: f64) -> Result<f64> {
    const SAMPLE_RESOLUTION: u32 = 8;
    let lat = SimplexLattice::new(SAMPLE_RESOLUTION, spec.d)?;
    let mut b: f64 = 0.0;
    for x in 0..spec.d {
        let rate: Vec<f64> = spec.reference_control(h, x)?.iter().map(|a| a / h).collect();
        for p in lat.points() {
            let mu = p.to_simplex();
            b = b.max(spec.cost.terminal(x, &mu).abs());
            b = b.max(spec.cost.running(x, &mu, &rate).abs());
        }
    }
    Ok(b)
}
