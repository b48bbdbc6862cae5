//! Seeded Monte Carlo sweeps of the locator over target count, receiver count and delay
//! noise.
//!
//! Trial `t` of every cell uses seed `seed + t`. Receivers and targets come from separate
//! ChaCha streams of that seed, so cells that differ only in `K` (or only in the receiver
//! count) see nested target (receiver) sets; the measurement noise uses a mixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::locator::{self, locate, top_k_indices, LocatorConfig};
use crate::solver::initial_point;
use crate::tdoa::{self, Grid, TdoaScene, Zone};
use crate::{par, Point, Result};

const RECEIVER_STREAM: u64 = 0;
const TARGET_STREAM: u64 = 1;

/// What produces the position estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The full pipeline: constrained solve, scoring and refinement.
    #[default]
    Locator,
    /// The solver's initial point alone, ranked by magnitude; no refinement.
    InitializerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub ks: Vec<usize>,
    /// Receiver counts.
    pub receivers: Vec<usize>,
    pub noise_ns: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Grid points per axis.
    pub grid_points: usize,
    pub zone_side: f64,
    pub method: Method,
    /// Base configuration; `k` and `noise_sigma` are set per cell.
    pub locator: LocatorConfig,
    pub parallel: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            ks: (1..=8).collect(),
            receivers: vec![6],
            noise_ns: vec![0.0],
            trials: 10,
            seed: 0,
            grid_points: 21,
            zone_side: 10_000.0,
            method: Method::Locator,
            locator: LocatorConfig::default(),
            parallel: true,
        }
    }
}

impl SweepSpec {
    pub fn zone(&self) -> Zone {
        Zone::square(self.zone_side)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::regular(&self.zone(), self.grid_points, self.grid_points)
    }

    pub fn validate(&self) -> Result<()> {
        use crate::Error::InvalidParams;
        if self.ks.contains(&0) {
            return Err(InvalidParams("target counts must be positive".into()));
        }
        if self.receivers.iter().any(|&m| m < 2) {
            return Err(InvalidParams("at least two receivers are required".into()));
        }
        if self.noise_ns.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(InvalidParams(
                "noise levels must be finite and nonnegative".into(),
            ));
        }
        let n = self.grid_points * self.grid_points;
        if let Some(&k) = self.ks.iter().find(|&&k| k > n) {
            return Err(InvalidParams(format!(
                "{k} targets exceed the {n} grid points"
            )));
        }
        self.zone().validate()?;
        self.grid()?;
        self.locator.validate()
    }
}

/// One trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub seed: u64,
    pub k: usize,
    /// Receiver count.
    pub m: usize,
    pub noise_ns: f64,
    /// Every target matched within half a grid spacing.
    pub success: bool,
    /// NaN when the trial failed with an error.
    pub rmse_m: f64,
    pub iterations: usize,
}

/// Aggregate over the trials of one `(K, m, noise)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub k: usize,
    pub m: usize,
    pub noise_ns: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_ratio: f64,
    /// Mean over trials that produced estimates.
    pub mean_rmse_m: f64,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<TrialRow>,
    pub cells: Vec<CellSummary>,
}

impl SweepReport {
    pub fn cell(&self, k: usize, m: usize, noise_ns: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.m == m && c.noise_ns == noise_ns)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the measurement noise of trial seed `seed`.
pub fn noise_seed(seed: u64) -> u64 {
    splitmix64(seed)
}

/// `count` receivers uniform in the zone; nested in `count` for a fixed seed.
pub fn random_receivers(zone: &Zone, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RECEIVER_STREAM);
    (0..count)
        .map(|_| {
            [
                rng.random_range(zone.min[0]..=zone.max[0]),
                rng.random_range(zone.min[1]..=zone.max[1]),
            ]
        })
        .collect()
}

/// `k` distinct grid indices (the first `k` of a seeded shuffle, so nested in `k`).
pub fn random_grid_indices(grid_len: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TARGET_STREAM);
    let mut idx: Vec<usize> = (0..grid_len).collect();
    for i in 0..k.min(grid_len) {
        let j = rng.random_range(i..grid_len);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// The on-grid scene of trial seed `seed`.
pub fn random_scene(
    zone: &Zone,
    grid: &Grid,
    receivers: usize,
    k: usize,
    noise_ns: f64,
    seed: u64,
) -> TdoaScene {
    let targets = random_grid_indices(grid.len(), k, seed)
        .into_iter()
        .map(|j| grid.points[j])
        .collect();
    TdoaScene {
        receivers: random_receivers(zone, receivers, seed),
        targets,
        c: tdoa::SPEED_OF_LIGHT,
        noise_sigma: noise_ns * 1e-9,
        zone: *zone,
    }
}

/// Positions from the initial point alone.
fn initializer_estimate(
    grid: &Grid,
    scene: &TdoaScene,
    table: &tdoa::DelayTable,
    cfg: &LocatorConfig,
) -> Result<Vec<Point>> {
    let system = tdoa::build_system(grid, &scene.receivers, table, cfg.moments(), cfg.c)?;
    let x0 = initial_point(&system.a, &system.b, cfg.solver.init)?;
    let x: Vec<f64> = x0.iter().copied().collect();
    Ok(top_k_indices(&x, cfg.k)
        .into_iter()
        .map(|j| grid.points[j])
        .collect())
}

/// Runs one trial; solver errors count as failures.
pub fn run_trial(
    spec: &SweepSpec,
    grid: &Grid,
    k: usize,
    receivers: usize,
    noise_ns: f64,
    seed: u64,
) -> Result<TrialRow> {
    let scene = random_scene(&spec.zone(), grid, receivers, k, noise_ns, seed);
    let table = tdoa::simulate_measurements(&scene, noise_seed(seed))?;
    let mut cfg = spec.locator.clone();
    cfg.k = k;
    cfg.noise_sigma = noise_ns * 1e-9;
    let estimate = match spec.method {
        Method::Locator => locate(grid, &scene.receivers, &table, &cfg, None)
            .map(|r| (r.positions, r.solver_trace.iterations)),
        Method::InitializerOnly => initializer_estimate(grid, &scene, &table, &cfg).map(|p| (p, 0)),
    };
    let (success, rmse_m, iterations) = match estimate {
        Ok((positions, iterations)) => {
            let errors = locator::matched_errors(&positions, &scene.targets)?;
            let ok = errors.iter().all(|&e| e <= grid.spacing / 2.0);
            let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
            (ok, rmse, iterations)
        }
        Err(_) => (false, f64::NAN, 0),
    };
    Ok(TrialRow {
        seed,
        k,
        m: receivers,
        noise_ns,
        success,
        rmse_m,
        iterations,
    })
}

/// Aggregates rows by cell, in order of first appearance.
pub fn summarize(rows: &[TrialRow]) -> Vec<CellSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    let mut rmse_counts: Vec<usize> = Vec::new();
    for r in rows {
        let pos = cells
            .iter()
            .position(|c| c.k == r.k && c.m == r.m && c.noise_ns == r.noise_ns);
        let i = pos.unwrap_or_else(|| {
            cells.push(CellSummary {
                k: r.k,
                m: r.m,
                noise_ns: r.noise_ns,
                trials: 0,
                successes: 0,
                success_ratio: 0.0,
                mean_rmse_m: 0.0,
                errors: 0,
            });
            rmse_counts.push(0);
            cells.len() - 1
        });
        let c = &mut cells[i];
        c.trials += 1;
        c.successes += usize::from(r.success);
        if r.rmse_m.is_finite() {
            c.mean_rmse_m += r.rmse_m;
            rmse_counts[i] += 1;
        } else {
            c.errors += 1;
        }
    }
    for (c, &n) in cells.iter_mut().zip(&rmse_counts) {
        c.success_ratio = c.successes as f64 / c.trials as f64;
        c.mean_rmse_m = if n > 0 {
            c.mean_rmse_m / n as f64
        } else {
            f64::NAN
        };
    }
    cells
}

/// Runs every `(noise, m, K, trial)` combination; rows come back in that nesting order
/// regardless of threading.
pub fn sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let grid = spec.grid()?;
    let mut jobs = Vec::new();
    for &noise in &spec.noise_ns {
        for &m in &spec.receivers {
            for &k in &spec.ks {
                for t in 0..spec.trials {
                    jobs.push((noise, m, k, spec.seed.wrapping_add(t as u64)));
                }
            }
        }
    }
    let rows = par::map_with(spec.parallel, &jobs, |&(noise, m, k, seed)| {
        run_trial(spec, &grid, k, m, noise, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let cells = summarize(&rows);
    Ok(SweepReport { rows, cells })
}

/// Adjacent-pair departures from a monotone trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeCheck {
    pub inversions: usize,
    pub largest: f64,
}

impl ShapeCheck {
    /// At most `allowed` inversions, none larger than `slack`.
    pub fn within(&self, allowed: usize, slack: f64) -> bool {
        self.inversions <= allowed && self.largest <= slack + 1e-12
    }
}

/// Counts adjacent pairs moving against the expected direction.
pub fn shape_check(series: &[f64], nonincreasing: bool) -> ShapeCheck {
    let mut check = ShapeCheck {
        inversions: 0,
        largest: 0.0,
    };
    for w in series.windows(2) {
        let rise = if nonincreasing {
            w[1] - w[0]
        } else {
            w[0] - w[1]
        };
        if rise > 0.0 {
            check.inversions += 1;
            check.largest = check.largest.max(rise);
        }
    }
    check
}
