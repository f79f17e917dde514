use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nlllab::artifact::{fmt17, sha256_hex, Artifact, ArtifactKind};
use nlllab::continuous::{compare_discrete_to_cts, solve_cts_nll, CtsOptions};
use nlllab::finite::{solve_nll, verify_equilibrium, FixedPointReport};
use nlllab::lattice::SimplexLattice;
use nlllab::mean_field::{mfg_flow, solve_mf_nll, solve_mfg_system, PicardOptions};
use nlllab::onestep::{critical_steps, scan_equilibria_onestep, DEFAULT_MESH};
use nlllab::{Error, Result};

mod config;
mod table;

use config::RunConfig;
use table::Table;

#[derive(Parser)]
#[command(name = "nlllab", version, about = "Equilibria of finite-state games with many players")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the worker pool; defaults to the number of logical cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the finite-player equation.
    SolveN(Common),
    /// Solve the master equation on a simplex grid.
    SolveMf(Common),
    /// Count equilibria of the two-state one-period example over a range of steps.
    ScanOnestep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        h_min: Option<f64>,
        #[arg(long)]
        h_max: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Distance between N-player and mean-field solutions for a list of N.
    ConvergeN(Common),
    /// Distance between discrete and continuous-time solutions for a list of K.
    ConvergeH(Common),
    /// Best-response gap of a stored finite-player solution.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        artifact: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonConvergence { report, .. } = &e {
                eprintln!(
                    "  contractive={} damped={} l_phi={} contraction_estimate={}",
                    report.contractive,
                    report.damped,
                    fmt17(report.l_phi),
                    fmt17(report.contraction_estimate)
                );
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Integrity(_) | Error::Domain(_) | Error::Infeasible { .. } => 2,
        Error::NonConvergence { .. } | Error::InnerNonConvergence { .. } | Error::Accuracy { .. } => 3,
        Error::SizeCap { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::SolveN(c) | Command::SolveMf(c) | Command::ConvergeN(c) | Command::ConvergeH(c) => c,
        Command::ScanOnestep { common, .. } | Command::Verify { common, .. } => common,
    };
    if let Some(w) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    match &cli.command {
        Command::SolveN(c) => solve_n(c),
        Command::SolveMf(c) => solve_mf(c),
        Command::ScanOnestep {
            common,
            sigma2,
            h_min,
            h_max,
            steps,
        } => scan(common, *sigma2, *h_min, *h_max, *steps),
        Command::ConvergeN(c) => converge_n(c),
        Command::ConvergeH(c) => converge_h(c),
        Command::Verify { common, artifact } => verify(common, artifact),
    }
}

fn load(c: &Common, kind: &str) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => return Err(Error::Config("--config is required".into())),
    };
    cfg.check_kind(kind)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
    format: Format,
    artifacts: Vec<(String, String)>,
}

impl Output {
    fn new(c: &Common) -> Result<Self> {
        std::fs::create_dir_all(&c.out)?;
        Ok(Self {
            dir: c.out.clone(),
            format: c.format,
            artifacts: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.artifacts.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        match self.format {
            Format::Csv => self.bytes(&format!("{stem}.csv"), table.to_csv().as_bytes()),
            Format::Json => self.bytes(&format!("{stem}.json"), table.to_json().as_bytes()),
        }
    }

    fn manifest(&self, command: &str, cfg: Option<&RunConfig>, reports: &[FixedPointReport], start: Instant) -> Result<()> {
        let reports: Vec<_> = reports
            .iter()
            .enumerate()
            .map(|(k, r)| {
                json!({
                    "step": k,
                    "iterations": r.iterations,
                    "residual": r.residual,
                    "contraction_estimate": r.contraction_estimate,
                    "contractive": r.contractive,
                    "l_phi": r.l_phi,
                    "damped": r.damped,
                })
            })
            .collect();
        let manifest = json!({
            "command": command,
            "library_version": env!("CARGO_PKG_VERSION"),
            "config_fingerprint": cfg.map(|c| sha256_hex(c.canonical().as_bytes())),
            "artifacts": self.artifacts.iter().map(|(p, h)| json!({"path": p, "sha256": h})).collect::<Vec<_>>(),
            "reports": reports,
            "wall_clock_seconds": start.elapsed().as_secs_f64(),
        });
        std::fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(())
    }
}

fn artifact_table(a: &Artifact) -> Result<Table> {
    let mut buf = Vec::new();
    a.write_csv(&mut buf)?;
    Ok(Table::from_csv(&String::from_utf8(buf).expect("csv is UTF-8")))
}

/// Solved artifacts keyed by config and command, reused across runs when
/// `NLLLAB_CACHE_DIR` is set.
fn cached<F>(command: &str, cfg: &RunConfig, solve: F) -> Result<Artifact>
where
    F: FnOnce() -> Result<Artifact>,
{
    let Some(dir) = std::env::var_os("NLLLAB_CACHE_DIR").map(PathBuf::from) else {
        return solve();
    };
    let key = sha256_hex(format!("{command}\n{}", cfg.canonical()).as_bytes());
    let path = dir.join(format!("{key}.nlla"));
    if let Ok(a) = Artifact::read(&path) {
        return Ok(a);
    }
    let a = solve()?;
    std::fs::create_dir_all(&dir)?;
    a.write(&path)?;
    Ok(a)
}

fn summarize(reports: &[FixedPointReport]) {
    let iters = reports.iter().map(|r| r.iterations).max().unwrap_or(0);
    let residual = reports.iter().map(|r| r.residual).fold(0.0, f64::max);
    let contractive = reports.iter().all(|r| r.contractive);
    println!(
        "steps={} max_iterations={iters} max_residual={} all_contractive={contractive}",
        reports.len(),
        fmt17(residual)
    );
}

fn solve_n(c: &Common) -> Result<()> {
    let start = Instant::now();
    let cfg = load(c, "solve-n")?;
    let spec = cfg.spec()?;
    let grid = cfg.time_grid()?;
    let n = cfg.n()?;
    let opts = cfg.solver()?;
    let init = cfg.init()?;
    let artifact = cached("solve-n", &cfg, || {
        let sol = solve_nll(&spec, grid, n, &opts, init)?;
        Ok(Artifact::from_nll(&spec, &sol, &opts))
    })?;
    let mut out = Output::new(c)?;
    out.bytes("solution.nlla", &artifact.to_bytes())?;
    out.table("values", &artifact_table(&artifact)?)?;
    summarize(&artifact.reports);
    out.manifest("solve-n", Some(&cfg), &artifact.reports, start)
}

fn solve_mf(c: &Common) -> Result<()> {
    let start = Instant::now();
    let cfg = load(c, "solve-mf")?;
    let spec = cfg.spec()?;
    let grid = cfg.time_grid()?;
    let opts = cfg.solver()?;
    let lattice = SimplexLattice::new(cfg.resolution(spec.d), spec.d)?;
    println!("nodes={}", lattice.len());
    let sol = solve_mf_nll(&spec, grid, lattice, &opts, cfg.init()?)?;
    let artifact = Artifact::from_mf(&spec, &sol, &opts);
    let mut out = Output::new(c)?;
    out.bytes("solution.nlla", &artifact.to_bytes())?;
    out.table("values", &artifact_table(&artifact)?)?;
    if let Some(mu0) = &cfg.population.mu0 {
        let flow = mfg_flow(&sol, 0, mu0)?;
        let mut buf = Vec::new();
        flow.write_csv(&mut buf, grid.h)?;
        out.table("flow", &Table::from_csv(&String::from_utf8(buf).unwrap()))?;
        if let Some(starts) = cfg.population.starts {
            let res = solve_mfg_system(&spec, grid, 0, mu0, starts, cfg.seed, &PicardOptions::default())?;
            let d = spec.d;
            let mut header = vec!["equilibrium".to_string(), "s".to_string()];
            header.extend((0..d).map(|i| format!("mu_{i}")));
            header.extend((0..d).map(|i| format!("v_{i}")));
            let mut t = Table::new(header);
            for (e, flow) in res.equilibria.iter().enumerate() {
                for (i, (mu, v)) in flow.mus.iter().zip(&flow.values).enumerate() {
                    let mut row = vec![e.to_string(), fmt17(i as f64 * grid.h)];
                    row.extend(mu.iter().map(|&x| fmt17(x)));
                    row.extend(v.iter().map(|&x| fmt17(x)));
                    t.push(row);
                }
            }
            println!("equilibria={} dropped_starts={}", res.equilibria.len(), res.dropped);
            out.table("equilibria", &t)?;
        }
    }
    summarize(&sol.reports);
    out.manifest("solve-mf", Some(&cfg), &sol.reports, start)
}

fn scan(c: &Common, sigma2: Option<f64>, h_min: Option<f64>, h_max: Option<f64>, steps: Option<usize>) -> Result<()> {
    let start = Instant::now();
    let cfg = match &c.config {
        Some(_) => Some(load(c, "scan-onestep")?),
        None => None,
    };
    let sc = cfg.as_ref().map(|c| c.scan.clone()).unwrap_or_default();
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("missing {name}")));
    let sigma2 = need(sigma2.or(sc.sigma2), "sigma2")?;
    let h_min = need(h_min.or(sc.h_min), "h_min")?;
    let h_max = need(h_max.or(sc.h_max), "h_max")?;
    let steps = steps.or(sc.steps).unwrap_or(100);
    let mesh = sc.mesh.unwrap_or(DEFAULT_MESH);
    if let Ok((lo, hi)) = critical_steps(sigma2) {
        println!("h_low={} h_high={}", fmt17(lo), fmt17(hi));
    }
    let hs: Vec<f64> = match steps {
        0 => Vec::new(),
        1 => vec![h_min],
        s => (0..s).map(|i| h_min + (h_max - h_min) * i as f64 / (s - 1) as f64).collect(),
    };
    let mut t = Table::new(vec!["h".into(), "count".into(), "roots".into(), "max_residual".into()]);
    for h in hs {
        let roots = scan_equilibria_onestep(sigma2, h, mesh)?;
        let list: Vec<String> = roots.iter().map(|r| fmt17(r.mu)).collect();
        let res = roots.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
        t.push(vec![fmt17(h), roots.len().to_string(), list.join(";"), fmt17(res)]);
    }
    let mut out = Output::new(c)?;
    out.table("scan", &t)?;
    out.manifest("scan-onestep", cfg.as_ref(), &[], start)
}

fn converge_n(c: &Common) -> Result<()> {
    let start = Instant::now();
    let cfg = load(c, "converge-n")?;
    let spec = cfg.spec()?;
    let grid = cfg.time_grid()?;
    let opts = cfg.solver()?;
    let n_list = cfg
        .population
        .n_list
        .clone()
        .ok_or_else(|| Error::Config("missing population.n_list".into()))?;
    let lattice = SimplexLattice::new(cfg.resolution(spec.d), spec.d)?;
    let mf = solve_mf_nll(&spec, grid, lattice, &opts, cfg.init()?)?;
    let mut t = Table::new(vec!["N".into(), "err_value".into(), "err_policy".into()]);
    for n in n_list {
        let sol = solve_nll(&spec, grid, n, &opts, cfg.init()?)?;
        let (ev, ea) = nlllab::mean_field::distance_to_master(&sol, &mf)?;
        println!("N={n} err_value={} err_policy={}", fmt17(ev), fmt17(ea));
        t.push(vec![n.to_string(), fmt17(ev), fmt17(ea)]);
    }
    let mut out = Output::new(c)?;
    out.table("converge_n", &t)?;
    out.manifest("converge-n", Some(&cfg), &mf.reports, start)
}

fn converge_h(c: &Common) -> Result<()> {
    let start = Instant::now();
    let cfg = load(c, "converge-h")?;
    let spec = cfg.spec()?;
    let n = cfg.population.n.unwrap_or(1);
    let horizon = cfg.horizon()?;
    let k_list = cfg
        .cts
        .k_list
        .clone()
        .ok_or_else(|| Error::Config("missing cts.k_list".into()))?;
    let cts_opts = CtsOptions {
        steps: cfg.cts.steps.unwrap_or(4000),
        halving_tol: Some(cfg.cts.halving_tol.unwrap_or(1e-6)),
    };
    let reference = solve_cts_nll(&spec, n, horizon, &cts_opts)?;
    let rows = compare_discrete_to_cts(&spec, n, &reference, &k_list, &cfg.solver()?)?;
    let mut t = Table::new(vec!["K".into(), "h".into(), "err_value".into(), "err_rate".into()]);
    for r in rows {
        println!("K={} err_value={} err_rate={}", r.k, fmt17(r.err_value), fmt17(r.err_rate));
        t.push(vec![r.k.to_string(), fmt17(r.h), fmt17(r.err_value), fmt17(r.err_rate)]);
    }
    let mut out = Output::new(c)?;
    out.table("converge_h", &t)?;
    out.manifest("converge-h", Some(&cfg), &[], start)
}

fn verify(c: &Common, path: &Path) -> Result<()> {
    let start = Instant::now();
    let a = Artifact::read(path)?;
    if a.kind != ArtifactKind::Finite {
        return Err(Error::Config("verify needs a finite-player artifact".into()));
    }
    let gap = verify_equilibrium(&a.spec()?, a.grid()?, &a.lattice()?, &a.policy)?;
    println!("gap={}", fmt17(gap));
    let mut out = Output::new(c)?;
    let mut t = Table::new(vec!["artifact".into(), "gap".into()]);
    t.push(vec![path.display().to_string(), fmt17(gap)]);
    out.table("verify", &t)?;
    out.manifest("verify", None, &a.reports, start)
}
