//! Multi-target localization on a grid: solve the thresholded model, score the
//! solution with `f_a`, move suspect grid points off-grid, and read off the positions.
//!
//! `f_a` is read as `|x| / a` on `[0, a]` and `|1 - |x|| / (1 - a)` beyond, so that it
//! vanishes at 0 and 1 and peaks at `a` with value 1.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::solver::{self, Initializer, SolveResult, SolverConfig};
use crate::surrogate::SurrogateParams;
use crate::tdoa::{self, DelayTable, Grid, SPEED_OF_LIGHT};
use crate::{par, Error, Point, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorConfig {
    /// Breakpoint of `f_a`.
    pub a: f64,
    /// Refinement depth.
    pub g: usize,
    /// Stop score; `0.3 * k` when unset.
    pub delta: Option<f64>,
    /// Per-entry suspect threshold.
    pub epsilon_score: f64,
    pub solver: SolverConfig,
    pub surrogate: SurrogateParams,
    /// Target-count estimate.
    pub k: usize,
    /// Number of moments; `k` when unset.
    pub moments: Option<usize>,
    pub c: f64,
    /// Delay jitter assumed when deriving the residual bound (s).
    pub noise_sigma: f64,
    /// Residual bound; derived from the system when unset.
    pub epsilon: Option<f64>,
    /// Include the grid-quantization term in the derived residual bound.
    pub quantization: bool,
    /// Evaluate refinement candidates on the thread pool.
    pub parallel: bool,
}

impl Default for LocatorConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            g: 2,
            delta: None,
            epsilon_score: 0.3,
            solver: SolverConfig {
                init: Initializer::L1ColumnWeighted,
                ..SolverConfig::constrained()
            },
            surrogate: SurrogateParams::new(0.1, 1.0).expect("valid constants"),
            k: 1,
            moments: None,
            c: SPEED_OF_LIGHT,
            noise_sigma: 0.0,
            epsilon: None,
            quantization: false,
            parallel: true,
        }
    }
}

impl LocatorConfig {
    pub fn with_targets(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(0.3 * self.k as f64)
    }

    pub fn moments(&self) -> usize {
        self.moments.unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::InvalidParams(format!(
                "a must lie in (0, 1), got {}",
                self.a
            )));
        }
        if self.k == 0 || self.g == 0 || self.moments() == 0 {
            return Err(Error::InvalidParams(
                "k, g and moments must be positive".into(),
            ));
        }
        if !(self.delta() > 0.0) {
            return Err(Error::InvalidParams("delta must be positive".into()));
        }
        if !(self.epsilon_score >= 0.0) {
            return Err(Error::InvalidParams(
                "epsilon_score must be nonnegative".into(),
            ));
        }
        if !(self.c > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParams(
                "c must be positive, noise_sigma nonnegative".into(),
            ));
        }
        self.solver.validate()
    }
}

pub fn fa_value(x: f64, a: f64) -> f64 {
    let ax = x.abs();
    if ax <= a {
        ax / a
    } else {
        (1.0 - ax).abs() / (1.0 - a)
    }
}

pub fn fa_score(v: &[f64], a: f64) -> f64 {
    v.iter().map(|&x| fa_value(x, a)).sum()
}

pub fn suspect_indices(v: &[f64], a: f64, epsilon_score: f64) -> Vec<usize> {
    (0..v.len())
        .filter(|&i| fa_value(v[i], a) >= epsilon_score)
        .collect()
}

/// The measured scene the pipeline works on.
#[derive(Debug, Clone, Copy)]
pub struct LocatorContext<'a> {
    pub receivers: &'a [Point],
    pub table: &'a DelayTable,
    pub cfg: &'a LocatorConfig,
}

/// Result of one build-solve-score pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub solve: SolveResult,
    pub score: f64,
}

/// Builds the system on `grid`, runs the thresholded solver and scores the result.
pub fn evaluate_grid(grid: &Grid, ctx: &LocatorContext) -> Result<Evaluation> {
    let cfg = ctx.cfg;
    let system = tdoa::build_system(grid, ctx.receivers, ctx.table, cfg.moments(), cfg.c)?;
    let mut solver_cfg = cfg.solver;
    solver_cfg.epsilon = cfg.epsilon.unwrap_or_else(|| {
        tdoa::default_epsilon(
            &system,
            ctx.receivers,
            cfg.k,
            cfg.noise_sigma,
            cfg.c,
            cfg.quantization,
        )
    });
    let solve = solver::solve_constrained(&system.a, &system.b, &cfg.surrogate, &solver_cfg)?;
    let score = fa_score(&solve.x, cfg.a);
    Ok(Evaluation { solve, score })
}

/// `w` followed by the eight points at radius `spacing / 2^q`, angles `0, 45, ..., 315` degrees.
pub fn candidates(w: Point, spacing: f64, q: u32) -> [Point; 9] {
    let r = spacing / 2f64.powi(q as i32);
    let mut out = [w; 9];
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        let angle = std::f64::consts::FRAC_PI_4 * (j - 1) as f64;
        *slot = [w[0] + r * angle.cos(), w[1] + r * angle.sin()];
    }
    out
}

/// Outcome of refining one grid point.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub point: Point,
    pub score: f64,
    /// Evaluation at the chosen point; `None` only when every candidate failed.
    pub evaluation: Option<Evaluation>,
}

/// Tries grid point `index` at each candidate of radius `spacing / 2^q` and keeps the
/// lowest score (lowest candidate index on ties). Failed solves score `+inf`.
pub fn refine_point(grid: &Grid, index: usize, q: u32, ctx: &LocatorContext) -> Result<Refinement> {
    if index >= grid.len() {
        return Err(Error::InvalidParams(format!(
            "grid index {index} out of range"
        )));
    }
    let cands = candidates(grid.points[index], grid.spacing, q);
    let eval = |z: &Point| {
        let mut moved = grid.clone();
        moved.points[index] = *z;
        evaluate_grid(&moved, ctx).ok()
    };
    let evals: Vec<Option<Evaluation>> = par::map_with(ctx.cfg.parallel, &cands, eval);
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (j, e) in evals.iter().enumerate() {
        let s = e.as_ref().map_or(f64::INFINITY, |e| e.score);
        if s < best_score {
            best = j;
            best_score = s;
        }
    }
    Ok(Refinement {
        point: cands[best],
        score: best_score,
        evaluation: evals.into_iter().nth(best).flatten(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub index: usize,
    pub q: u32,
    pub old_point: Point,
    pub new_point: Point,
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocateStatus {
    /// Initial score already below `delta`.
    Accepted,
    /// Refinement brought the score to `delta` or below.
    Refined,
    /// Refinement ran through every suspect without reaching `delta`.
    Exhausted,
    /// Score at or above `delta` but no entry qualified as a suspect.
    NoSuspects,
}

#[derive(Debug, Clone)]
pub struct LocalizationResult {
    pub positions: Vec<Point>,
    /// Grid indices the positions were read from.
    pub indices: Vec<usize>,
    /// Errors against ground truth under the optimal assignment, when truth is supplied.
    pub matched_errors: Option<Vec<f64>>,
    pub fa_score: f64,
    pub refinement_log: Vec<RefinementStep>,
    pub solver_trace: SolveResult,
    pub status: LocateStatus,
    /// Grid after refinement.
    pub grid: Grid,
}

impl LocalizationResult {
    pub fn rmse(&self) -> Option<f64> {
        self.matched_errors
            .as_ref()
            .map(|e| (e.iter().map(|d| d * d).sum::<f64>() / e.len() as f64).sqrt())
    }

    /// Every matched error within `tolerance`.
    pub fn success(&self, tolerance: f64) -> Option<bool> {
        self.matched_errors
            .as_ref()
            .map(|e| e.iter().all(|&d| d <= tolerance))
    }
}

/// Indices of the `k` largest magnitudes, lower index first on ties.
pub fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()).then(i.cmp(&j)));
    order.truncate(k);
    order
}

/// Runs the full pipeline. `truths`, when given, only feeds `matched_errors`.
pub fn locate(
    grid: &Grid,
    receivers: &[Point],
    table: &DelayTable,
    cfg: &LocatorConfig,
    truths: Option<&[Point]>,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    let ctx = LocatorContext {
        receivers,
        table,
        cfg,
    };
    let mut grid = grid.clone();
    let mut current = evaluate_grid(&grid, &ctx)?;
    let delta = cfg.delta();
    let mut log = Vec::new();
    let status = if current.score < delta {
        LocateStatus::Accepted
    } else {
        let suspects = suspect_indices(&current.solve.x, cfg.a, cfg.epsilon_score);
        if suspects.is_empty() {
            LocateStatus::NoSuspects
        } else {
            let mut status = LocateStatus::Exhausted;
            'outer: for &i in &suspects {
                for q in 1..=cfg.g as u32 {
                    let refined = refine_point(&grid, i, q, &ctx)?;
                    let Some(eval) = refined.evaluation else {
                        continue;
                    };
                    log.push(RefinementStep {
                        index: i,
                        q,
                        old_point: grid.points[i],
                        new_point: refined.point,
                        score_before: current.score,
                        score_after: refined.score,
                    });
                    grid.points[i] = refined.point;
                    current = eval;
                    if current.score <= delta {
                        status = LocateStatus::Refined;
                        break 'outer;
                    }
                }
            }
            status
        }
    };
    let indices = top_k_indices(&current.solve.x, cfg.k);
    let positions: Vec<Point> = indices.iter().map(|&j| grid.points[j]).collect();
    let matched_errors = match truths {
        Some(t) => Some(matched_errors(&positions, t)?),
        None => None,
    };
    Ok(LocalizationResult {
        positions,
        indices,
        matched_errors,
        fa_score: current.score,
        refinement_log: log,
        solver_trace: current.solve,
        status,
        grid,
    })
}

/// Minimum-cost assignment (Hungarian method) for a square cost matrix; returns the
/// column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // potentials and matching are 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if matched[j] > 0 {
            out[matched[j] - 1] = j - 1;
        }
    }
    out
}

/// Distance from each estimate to its truth under the assignment minimizing the sum of
/// squared distances.
pub fn matched_errors(estimates: &[Point], truths: &[Point]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() {
        return Err(Error::CountMismatch(estimates.len(), truths.len()));
    }
    let cost: Vec<Vec<f64>> = estimates
        .iter()
        .map(|&e| {
            truths
                .iter()
                .map(|&t| tdoa::distance(e, t).powi(2))
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    Ok(estimates
        .iter()
        .zip(&assign)
        .map(|(&e, &j)| tdoa::distance(e, truths[j]))
        .collect())
}

pub fn rmse(estimates: &[Point], truths: &[Point]) -> Result<f64> {
    let errs = matched_errors(estimates, truths)?;
    if errs.is_empty() {
        return Ok(0.0);
    }
    Ok((errs.iter().map(|d| d * d).sum::<f64>() / errs.len() as f64).sqrt())
}

/// Solution as a vector, for callers working in nalgebra.
pub fn solution_vector(result: &LocalizationResult) -> DVector<f64> {
    result.solver_trace.x_vector()
}
