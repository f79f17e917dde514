//! Law of the one-step update of the untagged population.
//!
//! Given the tagged player at `x` and untagged counts `z`, each of the
//! `z_y` agents at `y` moves independently according to
//! `beta(y, z + e_x - e_y)`: the agent sees the tagged player in place of
//! itself. The next counts are a sum of independent multinomials, one per
//! occupied source state.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{composition_count, EmpiricalDist};

/// Cap on the number of outcomes of any single multinomial factor and of
/// the convolved law.
pub const DEFAULT_SUPPORT_CAP: u128 = 1_000_000;

const SIMPLEX_TOL: f64 = 1e-9;

/// Exact pmf of the next untagged counts.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionLaw {
    pub support: Vec<EmpiricalDist>,
    pub probs: Vec<f64>,
    pub state: usize,
    pub source: EmpiricalDist,
}

impl TransitionLaw {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EmpiricalDist, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    /// Probability of a given count vector (zero off the support).
    pub fn prob_of(&self, counts: &[u32]) -> f64 {
        self.iter()
            .find(|(p, _)| p.counts == counts)
            .map_or(0.0, |(_, q)| q)
    }

    /// Rows `counts..., prob` with a header `c0,...,c{d-1},prob`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.source.dim();
        let header: Vec<String> = (0..d).map(|j| format!("c{j}")).chain(["prob".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (p, q) in self.iter() {
            let cells: Vec<String> = p.counts.iter().map(u32::to_string).collect();
            writeln!(w, "{},{:.17e}", cells.join(","), q)?;
        }
        Ok(())
    }
}

fn check_simplex(p: &[f64], d: usize) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.len() != d || p.iter().any(|&v| !(v >= -1e-12)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("control {p:?} is not a probability vector")));
    }
    Ok(())
}

/// Exact multinomial pmf of `n` draws from `p` as sparse (counts, prob).
pub fn multinomial_pmf(n: u32, p: &[f64], cap: u128) -> Result<Vec<(Vec<u32>, f64)>> {
    let cats: Vec<usize> = (0..p.len()).filter(|&j| p[j] > 0.0).collect();
    if cats.is_empty() {
        return Err(Error::Domain("control has no mass".into()));
    }
    let count = composition_count(n, cats.len());
    if count > cap {
        return Err(Error::SizeCap {
            what: format!("multinomial support of {n} agents over {} states", cats.len()),
            count,
            cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut parts = vec![0u32; cats.len()];
    multinomial_rec(n, p, &cats, 0, n, 1.0, &mut parts, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn multinomial_rec(
    n: u32,
    p: &[f64],
    cats: &[usize],
    pos: usize,
    remaining: u32,
    weight: f64,
    parts: &mut Vec<u32>,
    out: &mut Vec<(Vec<u32>, f64)>,
) {
    if pos == cats.len() - 1 {
        parts[pos] = remaining;
        let w = weight * p[cats[pos]].powi(remaining as i32);
        let mut counts = vec![0u32; p.len()];
        for (j, &c) in cats.iter().enumerate() {
            counts[c] = parts[j];
        }
        out.push((counts, w));
        return;
    }
    for k in 0..=remaining {
        parts[pos] = k;
        let w = weight * binomial(remaining, k) * p[cats[pos]].powi(k as i32);
        multinomial_rec(n, p, cats, pos + 1, remaining - k, w, parts, out);
    }
}

/// `C(n, k)` as a float, exact while it fits in 53 bits.
pub fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc as f64
}

/// Exact law of the untagged counts after one step.
pub fn exact_law<F>(x: usize, z: &EmpiricalDist, beta: F) -> Result<TransitionLaw>
where
    F: Fn(usize, &EmpiricalDist) -> Vec<f64>,
{
    exact_law_capped(x, z, beta, DEFAULT_SUPPORT_CAP)
}

pub fn exact_law_capped<F>(x: usize, z: &EmpiricalDist, beta: F, cap: u128) -> Result<TransitionLaw>
where
    F: Fn(usize, &EmpiricalDist) -> Vec<f64>,
{
    let d = z.dim();
    let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    acc.insert(vec![0; d], 1.0);
    for y in 0..d {
        if z.counts[y] == 0 {
            continue;
        }
        let viewed = z.shifted(x, y).expect("source state occupied");
        let p = beta(y, &viewed);
        check_simplex(&p, d)?;
        let factor = multinomial_pmf(z.counts[y], &p, cap)?;
        let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (base, pb) in &acc {
            for (inc, pi) in &factor {
                let key: Vec<u32> = base.iter().zip(inc).map(|(a, b)| a + b).collect();
                *next.entry(key).or_insert(0.0) += pb * pi;
            }
        }
        if next.len() as u128 > cap {
            return Err(Error::SizeCap {
                what: "convolved transition law".into(),
                count: next.len() as u128,
                cap,
            });
        }
        acc = next;
    }
    let (support, probs) = acc
        .into_iter()
        .filter(|(_, q)| *q > 0.0)
        .map(|(c, q)| (EmpiricalDist::new(c), q))
        .unzip();
    Ok(TransitionLaw {
        support,
        probs,
        state: x,
        source: z.clone(),
    })
}

/// `E(x, z, phi, beta)`: the vector `(E[phi(y, Z')])_y`.
pub fn expect_value<P, F>(x: usize, z: &EmpiricalDist, phi: P, beta: F) -> Result<Vec<f64>>
where
    P: Fn(usize, &EmpiricalDist) -> f64,
    F: Fn(usize, &EmpiricalDist) -> Vec<f64>,
{
    let law = exact_law(x, z, beta)?;
    Ok(expect_under(&law, phi))
}

/// Expectation of `phi(y, ·)` under an already-built law, for every `y`.
pub fn expect_under<P>(law: &TransitionLaw, phi: P) -> Vec<f64>
where
    P: Fn(usize, &EmpiricalDist) -> f64,
{
    let d = law.source.dim();
    (0..d)
        .map(|y| law.iter().map(|(zn, q)| q * phi(y, zn)).sum())
        .collect()
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 {
            last = j;
            acc += pj;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Independent draws of the next untagged counts.
pub fn sample_law<F, R>(x: usize, z: &EmpiricalDist, beta: F, rng: &mut R, n: usize) -> Vec<EmpiricalDist>
where
    F: Fn(usize, &EmpiricalDist) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let d = z.dim();
    let rows: Vec<Option<Vec<f64>>> = (0..d)
        .map(|y| z.shifted(x, y).map(|v| beta(y, &v)))
        .collect();
    (0..n)
        .map(|_| {
            let mut counts = vec![0u32; d];
            for y in 0..d {
                if let Some(p) = &rows[y] {
                    for _ in 0..z.counts[y] {
                        counts[categorical(p, rng)] += 1;
                    }
                }
            }
            EmpiricalDist::new(counts)
        })
        .collect()
}

/// Mean and standard error of a coupled distance estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledStats {
    pub mean: f64,
    pub std_err: f64,
    pub samples: Vec<f64>,
}

/// Shared-uniform coupling of two population updates.
///
/// Agents at `y` common to both populations (`min(z_y, z~_y)` of them) share
/// one uniform `xi` each; coordinate `j` of each update counts the agents
/// with `xi <= p_j`. Surplus agents draw their own uniforms. Each coordinate
/// therefore has the correct marginal law, and the returned quantity is
/// `sum_j |Z'_j - Z~'_j|` under this coupling.
#[allow(clippy::too_many_arguments)]
pub fn coupled_sample<F, G, R>(
    x: usize,
    z: &EmpiricalDist,
    z_tilde: &EmpiricalDist,
    alpha: F,
    alpha_tilde: G,
    rng: &mut R,
    n: usize,
) -> CoupledStats
where
    F: Fn(usize, &EmpiricalDist) -> Vec<f64>,
    G: Fn(usize, &EmpiricalDist) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let d = z.dim();
    let total = f64::from(z.total());
    let rows: Vec<Option<Vec<f64>>> = (0..d).map(|y| z.shifted(x, y).map(|v| alpha(y, &v))).collect();
    let rows_t: Vec<Option<Vec<f64>>> = (0..d)
        .map(|y| z_tilde.shifted(x, y).map(|v| alpha_tilde(y, &v)))
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut diff = vec![0i64; d];
    for _ in 0..n {
        diff.iter_mut().for_each(|v| *v = 0);
        for y in 0..d {
            let shared = z.counts[y].min(z_tilde.counts[y]);
            for _ in 0..shared {
                let xi: f64 = rng.random();
                let p = rows[y].as_ref().unwrap();
                let q = rows_t[y].as_ref().unwrap();
                for j in 0..d {
                    diff[j] += i64::from(xi < p[j]) - i64::from(xi < q[j]);
                }
            }
            for _ in shared..z.counts[y] {
                let xi: f64 = rng.random();
                let p = rows[y].as_ref().unwrap();
                for j in 0..d {
                    diff[j] += i64::from(xi < p[j]);
                }
            }
            for _ in shared..z_tilde.counts[y] {
                let xi: f64 = rng.random();
                let q = rows_t[y].as_ref().unwrap();
                for j in 0..d {
                    diff[j] -= i64::from(xi < q[j]);
                }
            }
        }
        samples.push(diff.iter().map(|v| v.unsigned_abs() as f64).sum::<f64>() / total);
    }
    let mean = if n == 0 { 0.0 } else { samples.iter().sum::<f64>() / n as f64 };
    let var = if n < 2 {
        0.0
    } else {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    CoupledStats {
        mean,
        std_err: (var / n.max(1) as f64).sqrt(),
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coin(_: usize, _: &EmpiricalDist) -> Vec<f64> {
        vec![0.5, 0.5]
    }

    #[test]
    fn single_agent_law_is_its_row() {
        let z = EmpiricalDist::new(vec![0, 1, 0]);
        let beta = |y: usize, v: &EmpiricalDist| {
            assert_eq!(y, 1);
            // tagged player at 2 replaces the moving agent
            assert_eq!(v.counts, vec![0, 0, 1]);
            vec![0.2, 0.5, 0.3]
        };
        let law = exact_law(2, &z, beta).unwrap();
        assert_eq!(law.len(), 3);
        assert!((law.prob_of(&[1, 0, 0]) - 0.2).abs() < 1e-15);
        assert!((law.prob_of(&[0, 1, 0]) - 0.5).abs() < 1e-15);
        assert!((law.prob_of(&[0, 0, 1]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn coin_flips_are_binomial() {
        let z = EmpiricalDist::new(vec![2, 1]);
        let law = exact_law(0, &z, coin).unwrap();
        let expect = [1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0];
        for (k, e) in expect.iter().enumerate() {
            let c = [3 - k as u32, k as u32];
            assert!((law.prob_of(&c) - e).abs() < 1e-15);
        }
        let phi = |_: usize, zn: &EmpiricalDist| f64::from(zn.counts[1]) / 3.0;
        let e = expect_value(0, &z, phi, coin).unwrap();
        assert!(e.iter().all(|v| (v - 0.5).abs() < 1e-15));
        let e = expect_value(1, &z, |_, _| 4.25, coin).unwrap();
        assert!(e.iter().all(|v| (v - 4.25).abs() < 1e-15));
    }

    #[test]
    fn degenerate_control_is_point_mass() {
        let z = EmpiricalDist::new(vec![2, 1, 3]);
        let beta = |y: usize, _: &EmpiricalDist| {
            let mut p = vec![0.0; 3];
            p[(y + 1) % 3] = 1.0;
            p
        };
        let law = exact_law(1, &z, beta).unwrap();
        assert_eq!(law.len(), 1);
        assert_eq!(law.support[0].counts, vec![3, 2, 1]);
        assert_eq!(law.probs[0], 1.0);
    }

    #[test]
    fn rejects_non_simplex_controls() {
        let z = EmpiricalDist::new(vec![1, 1]);
        assert!(exact_law(0, &z, |_, _| vec![0.7, 0.7]).is_err());
        assert!(exact_law(0, &z, |_, _| vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn support_cap_is_enforced() {
        let z = EmpiricalDist::new(vec![30, 0, 0, 0]);
        let err = exact_law_capped(0, &z, |_, _| vec![0.25; 4], 100).unwrap_err();
        assert!(matches!(err, Error::SizeCap { .. }));
    }

    #[test]
    fn sampler_matches_binomial() {
        let z = EmpiricalDist::new(vec![2, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_law(0, &z, coin, &mut rng, 0).is_empty());
        let draws = sample_law(0, &z, coin, &mut rng, 100_000);
        let mut freq = [0.0; 4];
        for s in &draws {
            freq[s.counts[1] as usize] += 1.0 / draws.len() as f64;
        }
        let exact = [0.125, 0.375, 0.375, 0.125];
        let tv: f64 = freq.iter().zip(exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn identical_coupling_has_zero_distance() {
        let z = EmpiricalDist::new(vec![2, 1, 1]);
        let beta = |y: usize, _: &EmpiricalDist| {
            let mut p = vec![0.2; 3];
            p[y] = 0.6;
            p
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = coupled_sample(0, &z, &z, beta, beta, &mut rng, 1000);
        assert_eq!(s.mean, 0.0);
    }
}
