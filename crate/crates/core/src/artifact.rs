//! Persistence of solved tensors.
//!
//! Binary layout (little endian): magic `NLLA`, format version, kind byte,
//! spec fingerprint, length-prefixed spec TOML, lattice size `N` or `R`,
//! `d`, `h`, `K`, tolerances, value and policy tensors, per-step reports,
//! and a trailing SHA-256 of everything before it.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::finite::{FixedPointReport, NllSolution, PolicyN, SolverOptions, ValueN};
use crate::game::{GameSpec, TimeGrid};
use crate::hamiltonian::EPS_INNER;
use crate::lattice::SimplexLattice;
use crate::mean_field::MfSolution;

const MAGIC: &[u8; 4] = b"NLLA";
pub const FORMAT_VERSION: u32 = 1;

/// Float formatting with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArtifactKind {
    Finite,
    MeanField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub kind: ArtifactKind,
    pub spec_toml: String,
    pub fingerprint: [u8; 32],
    /// Number of untagged players, or the simplex resolution.
    pub n: u32,
    pub d: usize,
    pub h: f64,
    pub k: usize,
    pub eps_fp: f64,
    pub eps_inner: f64,
    pub values: ValueN,
    pub policy: PolicyN,
    pub reports: Vec<FixedPointReport>,
}

impl Artifact {
    pub fn from_nll(spec: &GameSpec, sol: &NllSolution, opts: &SolverOptions) -> Self {
        Self::build(ArtifactKind::Finite, spec, sol.grid, &sol.lattice, &sol.values, &sol.policy, &sol.reports, opts)
    }

    pub fn from_mf(spec: &GameSpec, sol: &MfSolution, opts: &SolverOptions) -> Self {
        Self::build(ArtifactKind::MeanField, spec, sol.grid, &sol.lattice, &sol.values, &sol.policy, &sol.reports, opts)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: ArtifactKind,
        spec: &GameSpec,
        grid: TimeGrid,
        lattice: &SimplexLattice,
        values: &ValueN,
        policy: &PolicyN,
        reports: &[FixedPointReport],
        opts: &SolverOptions,
    ) -> Self {
        Self {
            kind,
            spec_toml: spec.to_toml_string(),
            fingerprint: spec.fingerprint(),
            n: lattice.resolution(),
            d: spec.d,
            h: grid.h,
            k: grid.k,
            eps_fp: opts.eps_fp,
            eps_inner: EPS_INNER,
            values: values.clone(),
            policy: policy.clone(),
            reports: reports.to_vec(),
        }
    }

    pub fn spec(&self) -> Result<GameSpec> {
        GameSpec::from_toml_str(&self.spec_toml)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.h, self.k)
    }

    pub fn lattice(&self) -> Result<SimplexLattice> {
        SimplexLattice::new(self.n, self.d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.push(match self.kind {
            ArtifactKind::Finite => 0,
            ArtifactKind::MeanField => 1,
        });
        b.extend_from_slice(&self.fingerprint);
        put_u64(&mut b, self.spec_toml.len() as u64);
        b.extend_from_slice(self.spec_toml.as_bytes());
        b.extend_from_slice(&self.n.to_le_bytes());
        put_u64(&mut b, self.d as u64);
        put_f64(&mut b, self.h);
        put_u64(&mut b, self.k as u64);
        put_f64(&mut b, self.eps_fp);
        put_f64(&mut b, self.eps_inner);
        put_u64(&mut b, self.values.nz as u64);
        for &v in self.values.data.iter().chain(&self.policy.data) {
            put_f64(&mut b, v);
        }
        put_u64(&mut b, self.reports.len() as u64);
        for r in &self.reports {
            put_u64(&mut b, r.iterations as u64);
            put_f64(&mut b, r.residual);
            put_f64(&mut b, r.contraction_estimate);
            put_f64(&mut b, r.l_phi);
            b.push(u8::from(r.contractive));
            b.push(u8::from(r.damped));
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::Integrity("missing artifact header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Integrity(format!("unsupported format version {version}")));
        }
        let kind = match r.take(1)?[0] {
            0 => ArtifactKind::Finite,
            1 => ArtifactKind::MeanField,
            other => return Err(Error::Integrity(format!("unknown artifact kind {other}"))),
        };
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let len = r.u64()? as usize;
        let spec_toml = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Integrity("spec is not UTF-8".into()))?;
        let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let d = r.u64()? as usize;
        let h = r.f64()?;
        let k = r.u64()? as usize;
        let eps_fp = r.f64()?;
        let eps_inner = r.f64()?;
        let nz = r.u64()? as usize;
        let values = ValueN {
            k,
            d,
            nz,
            data: r.f64s((k + 1) * d * nz)?,
        };
        let policy = PolicyN {
            k,
            d,
            nz,
            data: r.f64s(k * d * nz * d)?,
        };
        let count = r.u64()? as usize;
        let mut reports = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let iterations = r.u64()? as usize;
            let residual = r.f64()?;
            let contraction_estimate = r.f64()?;
            let l_phi = r.f64()?;
            let flags = r.take(2)?;
            reports.push(FixedPointReport {
                iterations,
                residual,
                contraction_estimate,
                contractive: flags[0] != 0,
                l_phi,
                damped: flags[1] != 0,
                residuals: Vec::new(),
            });
        }
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after payload".into()));
        }
        let artifact = Self {
            kind,
            spec_toml,
            fingerprint,
            n,
            d,
            h,
            k,
            eps_fp,
            eps_inner,
            values,
            policy,
            reports,
        };
        if artifact.spec()?.fingerprint() != fingerprint {
            return Err(Error::Integrity("embedded spec does not match its fingerprint".into()));
        }
        Ok(artifact)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rows `t, x, c_0..c_{d-1}, v, a_0..a_{d-1}`; policy cells are empty at `t = T`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let lattice = self.lattice()?;
        let d = self.d;
        let mut header = vec!["t".to_string(), "x".to_string()];
        header.extend((0..d).map(|i| format!("c{i}")));
        header.push("v".into());
        header.extend((0..d).map(|i| format!("a{i}")));
        writeln!(w, "{}", header.join(","))?;
        for t in 0..=self.k {
            for x in 0..d {
                for (zi, z) in lattice.points().iter().enumerate() {
                    let mut cells = vec![fmt17(t as f64 * self.h), x.to_string()];
                    cells.extend(z.counts.iter().map(u32::to_string));
                    cells.push(fmt17(self.values.get(t, x, zi)));
                    if t < self.k {
                        cells.extend(self.policy.row(t, x, zi).iter().map(|&a| fmt17(a)));
                    } else {
                        cells.extend(std::iter::repeat_n(String::new(), d));
                    }
                    writeln!(w, "{}", cells.join(","))?;
                }
            }
        }
        Ok(())
    }
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity("truncated artifact".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Integrity("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::{solve_nll, Init};
    use crate::game::{build_quadratic_nearest_neighbor, Couplings};

    fn sample() -> Artifact {
        let c = Couplings { term_crowd: 1.0, ..Default::default() };
        let spec = build_quadratic_nearest_neighbor(2, 0.1, Some(c)).unwrap();
        let opts = SolverOptions::default();
        let sol = solve_nll(&spec, TimeGrid::new(0.1, 2).unwrap(), 2, &opts, Init::Reference).unwrap();
        Artifact::from_nll(&spec, &sol, &opts)
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let b = Artifact::from_bytes(&a.to_bytes()).unwrap();
        let mut expected = a.clone();
        for r in &mut expected.reports {
            r.residuals.clear();
        }
        assert_eq!(b, expected);
        assert_eq!(b.to_bytes(), a.to_bytes());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut header = bytes.clone();
        header[0] = b'X';
        assert!(matches!(Artifact::from_bytes(&header), Err(Error::Integrity(_))));
        let mut payload = bytes.clone();
        let mid = payload.len() / 2;
        payload[mid] ^= 1;
        assert!(matches!(Artifact::from_bytes(&payload), Err(Error::Integrity(_))));
        assert!(matches!(Artifact::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Integrity(_))));
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let a = sample();
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x,c0,c1,v,a0,a1");
        assert_eq!(lines.count(), 3 * 2 * 3);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt17(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
