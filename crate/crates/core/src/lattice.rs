//! Integer lattices on the probability simplex.
//!
//! The same structure serves two roles: the empirical-distribution grid of
//! `N` untagged players (counts summing to `N`) and the discretization of
//! the population variable of the master equation (counts summing to the
//! resolution `R`). Points are stored as integer counts so that population
//! shifts such as "one agent moves from `y` to `w`" are exact.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Default cap on the number of lattice points that may be materialized.
pub const DEFAULT_LATTICE_CAP: u128 = 2_000_000;

/// A point of the lattice: `d` nonnegative counts summing to `n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmpiricalDist {
    pub counts: Vec<u32>,
}

impl EmpiricalDist {
    pub fn new(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// The associated simplex point `counts / n`.
    pub fn to_simplex(&self) -> Vec<f64> {
        let n = f64::from(self.total());
        self.counts.iter().map(|&c| f64::from(c) / n).collect()
    }

    /// `z + e_to - e_from` in counts; `None` when `from` is unoccupied.
    /// A move with `to == from` is the identity.
    pub fn shifted(&self, to: usize, from: usize) -> Option<Self> {
        if self.counts[from] == 0 {
            return None;
        }
        let mut counts = self.counts.clone();
        counts[from] -= 1;
        counts[to] += 1;
        Some(Self { counts })
    }

    /// ℓ₁ distance between the associated simplex points.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        let n = f64::from(self.total());
        let diff: u64 = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum();
        diff as f64 / n
    }
}

/// `C(n + d - 1, d - 1)`, the number of compositions of `n` into `d` parts.
pub fn composition_count(n: u32, d: usize) -> u128 {
    let k = (d as u128).saturating_sub(1);
    let top = u128::from(n) + k;
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc * (top - k + i) / i;
    }
    acc
}

/// All compositions of `n` into `d` nonnegative parts in lexicographic order.
pub fn enumerate_empirical(n: u32, d: usize) -> Result<Vec<EmpiricalDist>> {
    enumerate_empirical_capped(n, d, DEFAULT_LATTICE_CAP)
}

pub fn enumerate_empirical_capped(n: u32, d: usize, cap: u128) -> Result<Vec<EmpiricalDist>> {
    if d == 0 {
        return Err(Error::Domain("state count must be positive".into()));
    }
    let count = composition_count(n, d);
    if count > cap {
        return Err(Error::SizeCap {
            what: format!("C({}, {})", u128::from(n) + d as u128 - 1, d - 1),
            count,
            cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0u32; d];
    fill(&mut current, 0, n, &mut out);
    Ok(out)
}

fn fill(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<EmpiricalDist>) {
    let d = current.len();
    if pos == d - 1 {
        current[pos] = remaining;
        out.push(EmpiricalDist::new(current.clone()));
        return;
    }
    for c in 0..=remaining {
        current[pos] = c;
        fill(current, pos + 1, remaining - c, out);
    }
}

/// Materialized lattice with index lookup and barycentric interpolation on
/// the Kuhn triangulation of mesh `1/n`.
#[derive(Clone, Debug)]
pub struct SimplexLattice {
    d: usize,
    n: u32,
    points: Vec<EmpiricalDist>,
    index: HashMap<Vec<u32>, usize>,
}

impl SimplexLattice {
    pub fn new(n: u32, d: usize) -> Result<Self> {
        Self::with_cap(n, d, DEFAULT_LATTICE_CAP)
    }

    pub fn with_cap(n: u32, d: usize, cap: u128) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("lattice resolution must be positive".into()));
        }
        let points = enumerate_empirical_capped(n, d, cap)?;
        let index = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.counts.clone(), i))
            .collect();
        Ok(Self { d, n, points, index })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn resolution(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[EmpiricalDist] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &EmpiricalDist {
        &self.points[i]
    }

    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    /// Barycentric weights of `mu` as `(node index, weight)` pairs. Weights
    /// are nonnegative and sum to one; zero-weight vertices are dropped.
    pub fn barycentric(&self, mu: &[f64]) -> Result<Vec<(usize, f64)>> {
        const TOL: f64 = 1e-9;
        if mu.len() != self.d {
            return Err(Error::Domain(format!(
                "point has {} coordinates, lattice has {}",
                mu.len(),
                self.d
            )));
        }
        let sum: f64 = mu.iter().sum();
        if mu.iter().any(|&m| !(m >= -TOL)) || (sum - 1.0).abs() > TOL {
            return Err(Error::Domain(format!("{mu:?} is not in the simplex")));
        }
        let d = self.d;
        if d == 1 {
            return Ok(vec![(0, 1.0)]);
        }
        let n = f64::from(self.n);
        // Cumulative coordinates c_k = n * sum_{j >= k} mu_j, k = 1..d-1,
        // which satisfy n >= c_1 >= ... >= c_{d-1} >= 0.
        let mut c = vec![0.0; d - 1];
        let mut tail = 0.0;
        for k in (1..d).rev() {
            tail += mu[k].max(0.0);
            c[k - 1] = (n * tail).clamp(0.0, n);
        }
        for k in 1..d - 1 {
            if c[k] > c[k - 1] {
                c[k] = c[k - 1];
            }
        }
        let mut base: Vec<i64> = c.iter().map(|v| v.floor() as i64).collect();
        let mut frac: Vec<f64> = c.iter().zip(&base).map(|(v, b)| v - *b as f64).collect();
        for k in 0..d - 1 {
            if base[k] == i64::from(self.n) {
                base[k] -= 1;
                frac[k] = 1.0;
            }
        }
        let mut order: Vec<usize> = (0..d - 1).collect();
        // Stable: ties keep lower index first, which preserves monotonicity.
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap());

        let mut out = Vec::with_capacity(d);
        let mut vertex = base.clone();
        let mut prev = 1.0;
        for (step, &k) in order.iter().enumerate() {
            let w = prev - frac[k];
            if w > 0.0 {
                out.push((self.cumulative_to_index(&vertex)?, w));
            }
            prev = frac[k];
            vertex[k] += 1;
            if step == order.len() - 1 && prev > 0.0 {
                out.push((self.cumulative_to_index(&vertex)?, prev));
            }
        }
        Ok(out)
    }

    fn cumulative_to_index(&self, c: &[i64]) -> Result<usize> {
        let d = self.d;
        let n = i64::from(self.n);
        let mut counts = vec![0u32; d];
        let mut prev = n;
        for k in 1..d {
            let ck = c[k - 1];
            if ck < 0 || ck > prev {
                return Err(Error::Domain("interpolation vertex left the lattice".into()));
            }
            counts[k - 1] = (prev - ck) as u32;
            prev = ck;
        }
        counts[d - 1] = prev as u32;
        self.index_of(&counts)
            .ok_or_else(|| Error::Domain("interpolation vertex not indexed".into()))
    }

    /// Piecewise-linear interpolation of nodal values `values[i]`.
    pub fn interpolate(&self, values: &[f64], mu: &[f64]) -> Result<f64> {
        Ok(self
            .barycentric(mu)?
            .into_iter()
            .map(|(i, w)| w * values[i])
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(v: &[EmpiricalDist]) -> Vec<Vec<u32>> {
        v.iter().map(|p| p.counts.clone()).collect()
    }

    #[test]
    fn enumerates_two_states_in_lex_order() {
        let pts = enumerate_empirical(2, 2).unwrap();
        assert_eq!(counts(&pts), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        let pts = enumerate_empirical(4, 2).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0].counts, vec![0, 4]);
        assert_eq!(pts[4].counts, vec![4, 0]);
    }

    #[test]
    fn stars_and_bars_cardinality() {
        assert_eq!(enumerate_empirical(3, 3).unwrap().len(), 10);
        for n in 0..6 {
            for d in 1..5 {
                let pts = enumerate_empirical(n, d).unwrap();
                assert_eq!(pts.len() as u128, composition_count(n, d));
                let mut dedup = counts(&pts);
                dedup.dedup();
                assert_eq!(dedup.len(), pts.len());
                assert!(pts.iter().all(|p| p.total() == n));
            }
        }
    }

    #[test]
    fn cap_error_names_binomial() {
        let err = enumerate_empirical_capped(100, 4, 1000).unwrap_err();
        match err {
            Error::SizeCap { what, count, .. } => {
                assert_eq!(what, "C(103, 3)");
                assert_eq!(count, 176_851);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interpolation_exact_at_nodes() {
        let lat = SimplexLattice::new(4, 3).unwrap();
        let values: Vec<f64> = (0..lat.len()).map(|i| (i as f64).sin()).collect();
        for (i, p) in lat.points().iter().enumerate() {
            let v = lat.interpolate(&values, &p.to_simplex()).unwrap();
            assert!((v - values[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn midpoint_is_mean_in_two_states() {
        let lat = SimplexLattice::new(4, 2).unwrap();
        let values: Vec<f64> = vec![0.0, 1.0, 5.0, 2.0, 7.0];
        // nodes (0,4)->0, (1,3)->1; midpoint mu = (1/8, 7/8)
        let v = lat.interpolate(&values, &[0.125, 0.875]).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_points_off_simplex() {
        let lat = SimplexLattice::new(4, 2).unwrap();
        assert!(lat.barycentric(&[0.6, 0.6]).is_err());
        assert!(lat.barycentric(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn shift_moves_one_agent() {
        let z = EmpiricalDist::new(vec![1, 2, 0]);
        assert_eq!(z.shifted(2, 1).unwrap().counts, vec![1, 1, 1]);
        assert_eq!(z.shifted(0, 0).unwrap().counts, vec![1, 2, 0]);
        assert!(z.shifted(0, 2).is_none());
    }
}
