use std::path::{Path, PathBuf};
use std::time::Instant;

use logsparse::conditions::{self, RIP_MAX_N, RIP_MAX_SUPPORTS};
use logsparse::locator::{self, LocatorConfig};
use logsparse::montecarlo::{self, SweepSpec};
use logsparse::solver::{self, SolverConfig};
use logsparse::surrogate::SurrogateParams;
use logsparse::tdoa::{self, DelayTable, Grid, SignalConfig, TdoaScene};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use crate::io::{self, fmt_num, OutDir};
use crate::{Cli, CliError, Command, Mode};

const DEFAULT_P: f64 = 0.01;
const DEFAULT_Q: f64 = 1.0;

/// Scene file: the fields of a [`TdoaScene`] (lengths in meters) plus
/// `noise_sigma_ns`, the grid resolution and optional signal settings. Read twice (not
/// flattened) so errors keep their positions.
#[derive(Debug, Clone, Deserialize)]
struct SceneExtras {
    /// Delay jitter in nanoseconds; takes precedence over `noise_sigma` (seconds).
    noise_sigma_ns: Option<f64>,
    #[serde(default)]
    grid: GridSize,
    signal: Option<SignalConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct GridSize {
    nx: usize,
    ny: usize,
}

impl Default for GridSize {
    fn default() -> Self {
        Self { nx: 21, ny: 21 }
    }
}

const NS: f64 = 1e-9;

fn read_scene(path: &Path) -> Result<(TdoaScene, SceneExtras), CliError> {
    let (mut scene, _) = parse_toml::<TdoaScene>(path)?;
    let (extras, _) = parse_toml::<SceneExtras>(path)?;
    if let Some(ns) = extras.noise_sigma_ns {
        scene.noise_sigma = ns * NS;
    }
    Ok((scene, extras))
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'a str,
    inputs_digest: String,
    seed: u64,
    outputs: Vec<String>,
    wall_time: f64,
}

/// What a command leaves behind for the run report.
struct Outcome {
    command: &'static str,
    inputs: Vec<PathBuf>,
    seed: u64,
    out: OutDir,
    /// Reported after the outputs are on disk.
    deferred: Option<CliError>,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Solve {
            matrix,
            rhs,
            mode,
            epsilon,
            eta,
            va_low,
            va_high,
        } => {
            let mut cfg = match mode {
                Mode::Equality => SolverConfig::default(),
                Mode::Constrained => SolverConfig::constrained(),
            };
            cfg.epsilon = epsilon.unwrap_or(cfg.epsilon);
            cfg.eta = eta.unwrap_or(cfg.eta);
            cfg.va_low = va_low.unwrap_or(cfg.va_low);
            cfg.va_high = va_high.unwrap_or(cfg.va_high);
            solve(cli, matrix, rhs, *mode, cfg)?
        }
        Command::Analyze {
            matrix,
            k,
            rip,
            samples,
        } => analyze(cli, matrix, *k, *rip, *samples)?,
        Command::Simulate { scene, signal } => simulate(cli, scene, *signal)?,
        Command::Locate {
            scene,
            delays,
            config,
            k,
        } => locate(cli, scene, delays, config.as_deref(), *k)?,
        Command::Sweep { spec } => sweep(cli, spec)?,
    };
    let inputs: Vec<&Path> = outcome.inputs.iter().map(PathBuf::as_path).collect();
    let mut out = outcome.out;
    let report = RunReport {
        command: outcome.command,
        inputs_digest: io::digest(&inputs)?,
        seed: outcome.seed,
        outputs: out
            .written
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    out.write("run_report.json", &io::to_json(&report)?)?;
    match outcome.deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn params(cli: &Cli, base: Option<SurrogateParams>) -> Result<SurrogateParams, CliError> {
    let (p0, q0) = base.map_or((DEFAULT_P, DEFAULT_Q), |b| (b.p(), b.q()));
    Ok(SurrogateParams::new(
        cli.global.p.unwrap_or(p0),
        cli.global.q.unwrap_or(q0),
    )?)
}

fn parse_toml<T: DeserializeOwned>(path: &Path) -> Result<(T, toml::Table), CliError> {
    let text = io::read_text(path)?;
    let err = |e: toml::de::Error| CliError::Parse {
        file: path.display().to_string(),
        line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
        msg: e.message().to_string(),
    };
    let table: toml::Table = toml::from_str(&text).map_err(err)?;
    let value: T = toml::from_str(&text).map_err(err)?;
    Ok((value, table))
}

fn solve(
    cli: &Cli,
    matrix: &Path,
    rhs: &Path,
    mode: Mode,
    mut cfg: SolverConfig,
) -> Result<Outcome, CliError> {
    let a = io::read_matrix(matrix)?;
    let b = io::read_vector(rhs)?;
    let params = params(cli, None)?;
    if let Some(it) = cli.global.max_iters {
        cfg.max_iters = it;
    }
    let result = match mode {
        Mode::Equality => solver::solve_equality(&a, &b, &params, &cfg)?,
        Mode::Constrained => solver::solve_constrained(&a, &b, &params, &cfg)?,
    };
    let mut out = OutDir::create(&cli.global.out_dir)?;
    out.write("solution.csv", &io::format_vector(&result.x))?;
    let report = json!({
        "mode": match mode { Mode::Equality => "equality", Mode::Constrained => "constrained" },
        "p": params.p(),
        "q": params.q(),
        "config": cfg,
        "result": result,
    });
    out.write("solve_report.json", &io::to_json(&report)?)?;
    let deferred = result.feasibility.filter(|f| !f.within_epsilon).map(|f| {
        CliError::Infeasible(format!(
            "residual {} exceeds epsilon {}",
            fmt_num(f.residual_inf),
            fmt_num(cfg.epsilon)
        ))
    });
    Ok(Outcome {
        command: "solve",
        inputs: vec![matrix.into(), rhs.into()],
        seed: cli.global.seed.unwrap_or(0),
        out,
        deferred,
    })
}

fn analyze(
    cli: &Cli,
    matrix: &Path,
    k: usize,
    rip: bool,
    samples: usize,
) -> Result<Outcome, CliError> {
    let a = io::read_matrix(matrix)?;
    if k == 0 {
        return Err(logsparse::Error::InvalidParams("k must be positive".into()).into());
    }
    let seed = cli.global.seed.unwrap_or(0);
    let params = params(cli, None)?;
    let coherence = match conditions::coherence(&a) {
        Ok(kappa) => json!({
            "value": kappa,
            "omp_guarantee_k": conditions::omp_guarantee_from_coherence(kappa, a.ncols()),
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let rip_section = if !rip {
        json!({ "status": "not_requested" })
    } else {
        match conditions::rip_constant(&a, k) {
            Ok(delta) => json!({ "status": "computed", "k": k, "value": delta }),
            Err(logsparse::Error::TooLarge(msg)) => json!({
                "status": "guard_exceeded",
                "k": k,
                "message": msg,
                "max_columns": RIP_MAX_N,
                "max_supports": RIP_MAX_SUPPORTS,
            }),
            Err(e) => json!({ "status": "error", "k": k, "message": e.to_string() }),
        }
    };
    let nsc = match conditions::nsc_compare(&a, k, &params, samples, seed) {
        Ok((h, l1)) => json!({ "surrogate": h, "l1": l1 }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let report = json!({
        "rows": a.nrows(),
        "cols": a.ncols(),
        "k": k,
        "p": params.p(),
        "q": params.q(),
        "coherence": coherence,
        "rip": rip_section,
        "nsc": nsc,
    });
    let mut out = OutDir::create(&cli.global.out_dir)?;
    out.write("analysis.json", &io::to_json(&report)?)?;
    Ok(Outcome {
        command: "analyze",
        inputs: vec![matrix.into()],
        seed,
        out,
        deferred: None,
    })
}

fn simulate(cli: &Cli, scene_path: &Path, signal: bool) -> Result<Outcome, CliError> {
    let (scene, extras) = read_scene(scene_path)?;
    let seed = cli.global.seed.unwrap_or(0);
    let table = if signal {
        tdoa::simulate_signal_measurements(&scene, &extras.signal.unwrap_or_default(), seed)?
    } else {
        tdoa::simulate_measurements(&scene, seed)?
    };
    let mut out = OutDir::create(&cli.global.out_dir)?;
    out.write("delays.csv", &io::format_matrix(&(table.delays / NS)))?;
    Ok(Outcome {
        command: "simulate",
        inputs: vec![scene_path.into()],
        seed,
        out,
        deferred: None,
    })
}

fn locate(
    cli: &Cli,
    scene_path: &Path,
    delays: &Path,
    config: Option<&Path>,
    k: Option<usize>,
) -> Result<Outcome, CliError> {
    let (scene, extras) = read_scene(scene_path)?;
    let table = DelayTable {
        delays: io::read_matrix(delays)? * NS,
    };
    let (mut cfg, keys) = match config {
        Some(path) => parse_toml::<LocatorConfig>(path)?,
        None => (LocatorConfig::default(), toml::Table::new()),
    };
    cfg.k = match k {
        Some(k) => k,
        None if keys.contains_key("k") => cfg.k,
        None if !scene.targets.is_empty() => scene.targets.len(),
        None => cfg.k,
    };
    if !keys.contains_key("c") {
        cfg.c = scene.c;
    }
    if !keys.contains_key("noise_sigma") {
        cfg.noise_sigma = scene.noise_sigma;
    }
    cfg.surrogate = params(cli, Some(cfg.surrogate))?;
    if let Some(it) = cli.global.max_iters {
        cfg.solver.max_iters = it;
    }
    if scene.receivers.len() < 2 {
        return Err(
            logsparse::Error::InvalidParams("at least two receivers are required".into()).into(),
        );
    }
    if table.receivers() != scene.receivers.len() - 1 {
        return Err(logsparse::Error::DimensionMismatch {
            what: "delay table rows",
            expected: scene.receivers.len() - 1,
            found: table.receivers(),
        }
        .into());
    }
    scene.zone.validate()?;
    let grid = Grid::regular(&scene.zone, extras.grid.nx, extras.grid.ny)?;
    let truths = (scene.targets.len() == cfg.k).then_some(scene.targets.as_slice());
    let result = locator::locate(&grid, &scene.receivers, &table, &cfg, truths)?;
    let report = json!({
        "k": cfg.k,
        "positions": result.positions,
        "indices": result.indices,
        "matched_errors": result.matched_errors,
        "rmse_m": result.rmse(),
        "success": result.success(grid.spacing / 2.0),
        "fa_score": result.fa_score,
        "delta": cfg.delta(),
        "status": result.status,
        "refinement_log": result.refinement_log,
        "iterations": result.solver_trace.iterations,
        "converged": result.solver_trace.converged,
        "support": result.solver_trace.support,
        "feasibility": result.solver_trace.feasibility,
        "grid_spacing": grid.spacing,
        "config": cfg,
    });
    let mut out = OutDir::create(&cli.global.out_dir)?;
    out.write("locate_report.json", &io::to_json(&report)?)?;
    let mut inputs = vec![scene_path.to_path_buf(), delays.to_path_buf()];
    inputs.extend(config.map(Path::to_path_buf));
    Ok(Outcome {
        command: "locate",
        inputs,
        seed: cli.global.seed.unwrap_or(0),
        out,
        deferred: None,
    })
}

fn sweep(cli: &Cli, spec_path: &Path) -> Result<Outcome, CliError> {
    let (mut spec, _) = parse_toml::<SweepSpec>(spec_path)?;
    if let Some(seed) = cli.global.seed {
        spec.seed = seed;
    }
    spec.locator.surrogate = params(cli, Some(spec.locator.surrogate))?;
    if let Some(it) = cli.global.max_iters {
        spec.locator.solver.max_iters = it;
    }
    let report = montecarlo::sweep(&spec)?;
    let mut trials = String::from("seed,K,m,noise_ns,success,rmse_m,iterations\n");
    for r in &report.rows {
        trials.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed,
            r.k,
            r.m,
            fmt_num(r.noise_ns),
            u8::from(r.success),
            fmt_num(r.rmse_m),
            r.iterations
        ));
    }
    let mut cells =
        String::from("K,m,noise_ns,trials,successes,success_ratio,mean_rmse_m,errors\n");
    for c in &report.cells {
        cells.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.k,
            c.m,
            fmt_num(c.noise_ns),
            c.trials,
            c.successes,
            fmt_num(c.success_ratio),
            fmt_num(c.mean_rmse_m),
            c.errors
        ));
    }
    let mut out = OutDir::create(&cli.global.out_dir)?;
    out.write("trials.csv", &trials)?;
    out.write("cells.csv", &cells)?;
    Ok(Outcome {
        command: "sweep",
        inputs: vec![spec_path.into()],
        seed: spec.seed,
        out,
        deferred: None,
    })
}
