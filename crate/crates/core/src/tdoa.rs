//! TDOA forward model, measurement simulation and the moment-based sparse system.
//!
//! Receiver 0 is the reference. For a point `w` and non-reference receiver `i`, the model
//! delay is the range difference `(|w - r_{i+1}| - |w - r_0|) / c`. The delays seen at a
//! receiver pair are unlabeled, so the system is built from their power sums: block `u`
//! of `b` holds `sum_k tau_ik^u`, and column `j` of block `u` of `A` holds
//! `tau_i(w_j)^u`. A 0/1 indicator of the grid points occupied by targets then solves
//! `Ax = b` exactly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

/// Default propagation speed (m/s).
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// Delays are expressed in microseconds before taking powers.
const DELAY_UNIT: f64 = 1e6;

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub min: Point,
    pub max: Point,
}

impl Zone {
    pub fn square(side: f64) -> Self {
        Self {
            min: [0.0, 0.0],
            max: [side, side],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }

    pub fn validate(&self) -> Result<()> {
        if (0..2).all(|d| self.min[d] < self.max[d]) {
            Ok(())
        } else {
            Err(Error::InvalidParams(
                "zone must have min < max on both axes".into(),
            ))
        }
    }
}

impl Default for Zone {
    fn default() -> Self {
        Self::square(10_000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaScene {
    /// Receiver positions (m); the first one is the reference.
    pub receivers: Vec<Point>,
    #[serde(default)]
    pub targets: Vec<Point>,
    /// Propagation speed (m/s).
    #[serde(default = "default_speed")]
    pub c: f64,
    /// Standard deviation of the delay jitter (s).
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub zone: Zone,
}

fn default_speed() -> f64 {
    SPEED_OF_LIGHT
}

impl TdoaScene {
    pub fn validate(&self) -> Result<()> {
        if self.receivers.len() < 2 {
            return Err(Error::InvalidParams(
                "at least two receivers are required".into(),
            ));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidParams(
                "at least one target is required".into(),
            ));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "c must be positive, got {}",
                self.c
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParams(
                "noise_sigma must be nonnegative".into(),
            ));
        }
        self.zone.validate()?;
        if let Some(p) = self
            .receivers
            .iter()
            .chain(&self.targets)
            .find(|p| !self.zone.contains(**p))
        {
            return Err(Error::InvalidParams(format!(
                "position {p:?} lies outside the zone"
            )));
        }
        Ok(())
    }
}

/// Delays in seconds: one row per non-reference receiver, one column per target.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    pub delays: DMatrix<f64>,
}

impl DelayTable {
    pub fn receivers(&self) -> usize {
        self.delays.nrows()
    }

    pub fn targets(&self) -> usize {
        self.delays.ncols()
    }
}

/// Model delay of `point` at receiver pair `(pair + 1, 0)`.
pub fn model_delay(point: Point, receivers: &[Point], pair: usize, c: f64) -> f64 {
    (distance(point, receivers[pair + 1]) - distance(point, receivers[0])) / c
}

pub fn true_delays(scene: &TdoaScene) -> Result<DelayTable> {
    scene.validate()?;
    let m = scene.receivers.len() - 1;
    let delays = DMatrix::from_fn(m, scene.targets.len(), |i, k| {
        model_delay(scene.targets[k], &scene.receivers, i, scene.c)
    });
    Ok(DelayTable { delays })
}

/// True delays plus independent Gaussian jitter, deterministic per seed.
pub fn simulate_measurements(scene: &TdoaScene, seed: u64) -> Result<DelayTable> {
    let mut table = true_delays(scene)?;
    if scene.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal =
            Normal::new(0.0, scene.noise_sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;
        for v in table.delays.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(table)
}

/// Circular cross-correlation `r[lag] = sum_t a[t] b[(t + lag) mod N]`.
///
/// Returned in ascending signed lag, from `-(N - 1) / 2` to `N / 2`. A copy of `a`
/// delayed by `d` samples in `b` peaks at lag `d`.
pub fn cross_correlate(sig_a: &[f64], sig_b: &[f64]) -> Result<Vec<(i64, f64)>> {
    if sig_a.len() != sig_b.len() {
        return Err(Error::LengthMismatch(sig_a.len(), sig_b.len()));
    }
    let n = sig_a.len();
    if n < 2 {
        return Err(Error::InvalidParams(
            "signals need at least two samples".into(),
        ));
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = sig_a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = sig_b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward.process(&mut fa);
    forward.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inverse.process(&mut prod);
    let scale = 1.0 / n as f64;
    let mut out: Vec<(i64, f64)> = prod
        .iter()
        .enumerate()
        .map(|(l, v)| {
            let lag = if l <= n / 2 {
                l as i64
            } else {
                l as i64 - n as i64
            };
            (lag, v.re * scale)
        })
        .collect();
    out.sort_by_key(|&(lag, _)| lag);
    Ok(out)
}

/// Lags of the `count` largest correlation values, suppressing each peak's
/// immediate neighbours.
pub fn peak_lags(correlation: &[(i64, f64)], count: usize) -> Vec<i64> {
    let mut order: Vec<usize> = (0..correlation.len()).collect();
    order.sort_by(|&i, &j| {
        correlation[j]
            .1
            .total_cmp(&correlation[i].1)
            .then(i.cmp(&j))
    });
    let mut picked: Vec<i64> = Vec::with_capacity(count);
    for idx in order {
        if picked.len() == count {
            break;
        }
        let lag = correlation[idx].0;
        if picked.iter().all(|&p| (p - lag).abs() > 1) {
            picked.push(lag);
        }
    }
    picked
}

/// Settings for the signal-level measurement path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Samples per second.
    pub sample_rate: f64,
    /// Sequence length (samples).
    pub length: usize,
    /// Standard deviation of additive receiver noise (source sequences have unit variance).
    pub noise_std: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate: 1e8,
            length: 1 << 14,
            noise_std: 0.1,
        }
    }
}

/// Delay table from simulated white-sequence signals: every target emits an independent
/// white sequence, receivers see the sum of circularly delayed copies plus noise, and
/// each row holds the `K` strongest peaks of the correlation with the reference
/// receiver. Rows are unlabeled (ordered by peak height), delays quantized to samples.
pub fn simulate_signal_measurements(
    scene: &TdoaScene,
    signal: &SignalConfig,
    seed: u64,
) -> Result<DelayTable> {
    scene.validate()?;
    if !(signal.sample_rate > 0.0) || signal.length < 2 {
        return Err(Error::InvalidParams("invalid signal configuration".into()));
    }
    let n = signal.length;
    let k = scene.targets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let received: Vec<Vec<f64>> = scene
        .receivers
        .iter()
        .map(|&r| {
            let mut h: Vec<f64> = (0..n)
                .map(|_| signal.noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            for (src, &t) in sources.iter().zip(&scene.targets) {
                let shift = (distance(t, r) / scene.c * signal.sample_rate).round() as usize % n;
                for (idx, v) in src.iter().enumerate() {
                    h[(idx + shift) % n] += v;
                }
            }
            h
        })
        .collect();
    let m = scene.receivers.len() - 1;
    let mut delays = DMatrix::zeros(m, k);
    for i in 0..m {
        let corr = cross_correlate(&received[0], &received[i + 1])?;
        let lags = peak_lags(&corr, k);
        for (col, lag) in lags.iter().enumerate() {
            delays[(i, col)] = *lag as f64 / signal.sample_rate;
        }
    }
    Ok(DelayTable { delays })
}

/// Candidate target positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub points: Vec<Point>,
    pub spacing: f64,
}

impl Grid {
    /// `nx x ny` lattice covering the zone, index `iy * nx + ix`.
    pub fn regular(zone: &Zone, nx: usize, ny: usize) -> Result<Self> {
        zone.validate()?;
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParams(
                "grid needs at least 2 points per axis".into(),
            ));
        }
        let dx = (zone.max[0] - zone.min[0]) / (nx - 1) as f64;
        let dy = (zone.max[1] - zone.min[1]) / (ny - 1) as f64;
        let points = (0..ny)
            .flat_map(|iy| {
                (0..nx).map(move |ix| [zone.min[0] + ix as f64 * dx, zone.min[1] + iy as f64 * dy])
            })
            .collect();
        Ok(Self {
            points,
            spacing: dx.min(dy),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the grid point nearest to `p` (lowest index on ties).
    pub fn nearest(&self, p: Point) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &w) in self.points.iter().enumerate() {
            let d = distance(w, p);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        best
    }
}

/// The moment system `(A, b)` with `U * m` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub moments: usize,
    pub grid: Grid,
    /// Norm each raw row was divided by.
    pub row_scale: Vec<f64>,
}

/// Builds the moment system: rows `(u - 1) * m + i` for moment `u = 1..=U` and
/// receiver pair `i`, delays taken in microseconds, each row (with its `b` entry)
/// scaled to unit norm.
pub fn build_system(
    grid: &Grid,
    receivers: &[Point],
    table: &DelayTable,
    moments: usize,
    c: f64,
) -> Result<SparseSystem> {
    if receivers.len() < 2 {
        return Err(Error::InvalidParams(
            "at least two receivers are required".into(),
        ));
    }
    let m = receivers.len() - 1;
    if table.receivers() != m {
        return Err(Error::DimensionMismatch {
            what: "delay table rows",
            expected: m,
            found: table.receivers(),
        });
    }
    if moments == 0 {
        return Err(Error::InvalidParams(
            "at least one moment is required".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParams("grid is empty".into()));
    }
    let n = grid.len();
    let tau: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            grid.points
                .iter()
                .map(|&w| model_delay(w, receivers, i, c) * DELAY_UNIT)
                .collect()
        })
        .collect();
    let mut a = DMatrix::zeros(moments * m, n);
    let mut b = DVector::zeros(moments * m);
    let mut row_scale = vec![1.0; moments * m];
    for u in 1..=moments {
        for (i, tau_i) in tau.iter().enumerate() {
            let row = (u - 1) * m + i;
            for (j, t) in tau_i.iter().enumerate() {
                a[(row, j)] = t.powi(u as i32);
            }
            b[row] = (0..table.targets())
                .map(|k| (table.delays[(i, k)] * DELAY_UNIT).powi(u as i32))
                .sum();
            let norm = a.row(row).norm();
            if norm > 0.0 {
                row_scale[row] = norm;
                a.row_mut(row).scale_mut(1.0 / norm);
                b[row] /= norm;
            }
        }
    }
    Ok(SparseSystem {
        a,
        b,
        moments,
        grid: grid.clone(),
        row_scale,
    })
}

/// Residual bound for the constrained model: three standard deviations of the
/// noise-induced perturbation of each (scaled) row of `b`, maximized over rows.
///
/// With `quantization`, adds the worst-case change of each row for targets up to half a
/// grid spacing from the nearest grid point. On practical grids that term is of the
/// order of `b` itself (the zero vector becomes feasible), so it is opt-in.
pub fn default_epsilon(
    system: &SparseSystem,
    receivers: &[Point],
    targets: usize,
    noise_sigma: f64,
    c: f64,
    quantization: bool,
) -> f64 {
    let m = receivers.len() - 1;
    let sigma_us = noise_sigma * DELAY_UNIT;
    // a half-spacing move changes a range difference by at most one spacing
    let dtau_us = if quantization {
        system.grid.spacing / c * DELAY_UNIT
    } else {
        0.0
    };
    let mut eps: f64 = 0.0;
    for i in 0..m {
        let tau_max = system
            .grid
            .points
            .iter()
            .map(|&w| (model_delay(w, receivers, i, c) * DELAY_UNIT).abs())
            .fold(0.0, f64::max);
        for u in 1..=system.moments {
            let row = (u - 1) * m + i;
            let slope = u as f64 * tau_max.powi(u as i32 - 1);
            let noise = 3.0 * (targets as f64).sqrt() * slope * sigma_us;
            let quant = targets as f64 * slope * dtau_us;
            eps = eps.max((noise + quant) / system.row_scale[row]);
        }
    }
    eps
}
