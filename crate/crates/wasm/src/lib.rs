//! Browser bindings for the interactive demo in `www/`.
//!
//! Every exported function returns a flat `Float64Array`; the layouts are
//! documented on the native counterparts in [`ops`].

use wasm_bindgen::prelude::*;

pub mod ops {
    use nlllab::finite::{Init, SolverOptions};
    use nlllab::game::{build_quadratic_nearest_neighbor, Couplings, TimeGrid};
    use nlllab::lattice::SimplexLattice;
    use nlllab::mean_field::{mfg_flow, solve_mf_nll, solve_mfg_system, PicardOptions};
    use nlllab::onestep::{bifurcation_scan, critical_steps, OneStepMap};

    pub type Result<T> = std::result::Result<T, String>;

    fn err(e: nlllab::Error) -> String {
        e.to_string()
    }

    /// `[h_low, h_high]`, or an empty vector outside the multiplicity range.
    pub fn thresholds(sigma2: f64) -> Vec<f64> {
        critical_steps(sigma2).map(|(a, b)| vec![a, b]).unwrap_or_default()
    }

    /// `F` on `mesh + 1` points followed by the roots:
    /// `[mesh + 1 pairs (mu, F)] ++ [root count] ++ [roots]`.
    pub fn fixed_point_curve(sigma2: f64, h: f64, mesh: usize) -> Result<Vec<f64>> {
        let map = OneStepMap::new(sigma2, h, 0.5).map_err(err)?;
        let mut out: Vec<f64> = map
            .curve(mesh.max(2))
            .map_err(err)?
            .into_iter()
            .flat_map(|(m, f)| [m, f])
            .collect();
        let roots = map.roots(10_000).map_err(err)?;
        out.push(roots.len() as f64);
        out.extend(roots.iter().map(|r| r.mu));
        Ok(out)
    }

    /// Pairs `(h, count)` over `steps` equispaced steps in `[h_min, h_max]`.
    pub fn bifurcation(sigma2: f64, h_min: f64, h_max: f64, steps: usize, mesh: usize) -> Result<Vec<f64>> {
        let hs: Vec<f64> = match steps {
            0 => Vec::new(),
            1 => vec![h_min],
            s => (0..s)
                .map(|i| h_min + (h_max - h_min) * i as f64 / (s - 1) as f64)
                .collect(),
        };
        Ok(bifurcation_scan(sigma2, &hs, mesh.max(2))
            .map_err(err)?
            .into_iter()
            .flat_map(|(h, roots)| [h, roots.len() as f64])
            .collect())
    }

    /// Equilibrium flows of the two-state crowd game from `mu0`, the mass
    /// of state 1: `[count, k + 1, flow_0 ..., flow_1 ..., ...]` followed by
    /// the master-equation flow from the same start.
    pub fn flows(sigma2: f64, h: f64, k: usize, mu0: f64, starts: usize, seed: u64) -> Result<Vec<f64>> {
        let c = Couplings {
            term_crowd: 1.0,
            ..Default::default()
        };
        let spec = build_quadratic_nearest_neighbor(2, sigma2, Some(c)).map_err(err)?;
        let grid = TimeGrid::new(h, k).map_err(err)?;
        let start = [1.0 - mu0, mu0];
        let res = solve_mfg_system(&spec, grid, 0, &start, starts.max(1), seed, &PicardOptions::default())
            .map_err(err)?;
        let mut out = vec![res.equilibria.len() as f64, (k + 1) as f64];
        for e in &res.equilibria {
            out.extend(e.mus.iter().map(|m| m[1]));
        }
        let lattice = SimplexLattice::new(128, 2).map_err(err)?;
        let sol = solve_mf_nll(&spec, grid, lattice, &SolverOptions::default(), Init::Reference).map_err(err)?;
        out.extend(mfg_flow(&sol, 0, &start).map_err(err)?.mus.iter().map(|m| m[1]));
        Ok(out)
    }
}

fn js(r: ops::Result<Vec<f64>>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn thresholds(sigma2: f64) -> Vec<f64> {
    ops::thresholds(sigma2)
}

#[wasm_bindgen(js_name = fixedPointCurve)]
pub fn fixed_point_curve(sigma2: f64, h: f64, mesh: usize) -> Result<Vec<f64>, JsError> {
    js(ops::fixed_point_curve(sigma2, h, mesh))
}

#[wasm_bindgen]
pub fn bifurcation(sigma2: f64, h_min: f64, h_max: f64, steps: usize, mesh: usize) -> Result<Vec<f64>, JsError> {
    js(ops::bifurcation(sigma2, h_min, h_max, steps, mesh))
}

#[wasm_bindgen]
pub fn flows(sigma2: f64, h: f64, k: usize, mu0: f64, starts: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    js(ops::flows(sigma2, h, k, mu0, starts, seed))
}
