use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nlllab::finite::{Init, SolverOptions};
use nlllab::game::{GameSpec, GameSpecFile, TimeGrid};
use nlllab::{Error, Result};

/// One experiment per file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub game: Option<GameSource>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub cts: CtsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    File { file: PathBuf },
    Inline(GameSpecFile),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: Option<f64>,
    pub k: Option<usize>,
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n: Option<u32>,
    pub n_list: Option<Vec<u32>>,
    pub resolution: Option<u32>,
    pub mu0: Option<Vec<f64>>,
    pub starts: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub eps_fp: Option<f64>,
    pub max_outer: Option<usize>,
    pub init: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub sigma2: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub steps: Option<usize>,
    pub mesh: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtsConfig {
    pub steps: Option<usize>,
    pub k_list: Option<Vec<usize>>,
    pub halving_tol: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(GameSource::File { file }) = &mut cfg.game {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn check_kind(&self, expected: &str) -> Result<()> {
        match self.kind.as_deref() {
            None => Ok(()),
            Some(k) if k == expected => Ok(()),
            Some(k) => Err(Error::Config(format!("config is for {k:?}, not {expected:?}"))),
        }
    }

    pub fn spec(&self) -> Result<GameSpec> {
        match &self.game {
            None => Err(Error::Config("missing [game] section".into())),
            Some(GameSource::Inline(file)) => GameSpec::from_file(file),
            Some(GameSource::File { file }) => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", file.display())))?;
                GameSpec::from_toml_str(&text)
            }
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let g = &self.grid;
        match (g.h, g.k, g.horizon) {
            (Some(h), Some(k), None) => TimeGrid::new(h, k),
            (None, Some(k), Some(t)) => TimeGrid::from_horizon(t, k),
            (Some(h), None, Some(t)) => {
                let k = (t / h).round();
                if (k * h - t).abs() > 1e-9 * t.max(1.0) {
                    return Err(Error::Config(format!("horizon {t} is not a multiple of h = {h}")));
                }
                TimeGrid::new(h, k as usize)
            }
            _ => Err(Error::Config("[grid] needs exactly two of h, k, horizon".into())),
        }
    }

    /// `grid.horizon`, or `h K` when only the step grid is given.
    pub fn horizon(&self) -> Result<f64> {
        match (self.grid.horizon, self.grid.h, self.grid.k) {
            (Some(t), _, _) => Ok(t),
            (None, Some(_), Some(_)) => Ok(self.time_grid()?.horizon()),
            _ => Err(Error::Config("[grid] needs a horizon".into())),
        }
    }

    pub fn solver(&self) -> Result<SolverOptions> {
        let mut o = SolverOptions::default();
        if let Some(e) = self.solver.eps_fp {
            if !(e > 0.0) {
                return Err(Error::Config("solver.eps_fp must be positive".into()));
            }
            o.eps_fp = e;
        }
        if let Some(m) = self.solver.max_outer {
            if m == 0 {
                return Err(Error::Config("solver.max_outer must be positive".into()));
            }
            o.max_outer = m;
        }
        Ok(o)
    }

    pub fn init(&self) -> Result<Init> {
        match self.solver.init.as_deref() {
            None | Some("reference") => Ok(Init::Reference),
            Some("random") => Ok(Init::Random(self.seed)),
            Some(other) => Err(Error::Config(format!("unknown solver.init {other:?}"))),
        }
    }

    pub fn n(&self) -> Result<u32> {
        self.population
            .n
            .ok_or_else(|| Error::Config("missing population.n".into()))
    }

    pub fn resolution(&self, d: usize) -> u32 {
        self.population
            .resolution
            .unwrap_or(if d <= 2 { 64 } else { 16 })
    }

    /// Canonical text used for fingerprints and cache keys.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
kind = "solve-n"
seed = 3

[game]
d = 2
sigma2 = 0.1
cost = { kind = "quadratic", params = { run_crowd = 0.5, term_crowd = 1.0 } }

[grid]
h = 0.05
k = 4

[population]
n = 4
"#;

    #[test]
    fn parses_inline_game() {
        let cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        let spec = cfg.spec().unwrap();
        assert_eq!(spec.d, 2);
        assert_eq!(cfg.time_grid().unwrap().k, 4);
        assert_eq!(cfg.n().unwrap(), 4);
        assert!(cfg.check_kind("solve-n").is_ok());
        assert!(cfg.check_kind("solve-mf").is_err());
    }

    #[test]
    fn grid_from_horizon() {
        let mut cfg = RunConfig::default();
        cfg.grid = GridConfig { h: None, k: Some(8), horizon: Some(0.5) };
        assert_eq!(cfg.time_grid().unwrap().h, 0.0625);
        cfg.grid = GridConfig { h: Some(0.1), k: None, horizon: Some(0.55) };
        assert!(cfg.time_grid().is_err());
        cfg.grid = GridConfig { h: Some(0.1), k: Some(3), horizon: Some(0.3) };
        assert!(cfg.time_grid().is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = SAMPLE.replace("seed = 3", "sed = 3");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
    }
}
