//! Fixed-point IRLS for `min ||x||_h s.t. Ax = b`, and its thresholded variant for
//! `min ||x||_h s.t. ||Ax - b||_inf <= eps, ||x||_inf <= eta`.
//!
//! One IRLS step maps `x` to `F(x) A^T (A F(x) A^T)^+ b`. Each step minimizes the
//! quadratic majorizer `x^T H(x^k) x` over the affine constraint, so the surrogate norm
//! never increases along the iteration, and entries that reach zero stay zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numerics::{self, l1_min_equality, least_squares_on_support, weighted_minnorm_solve};
use crate::surrogate::{
    self, h_norm, SurrogateParams, WeightDiagonal, WeightKind, DEFAULT_ZERO_TOL,
};
use crate::{Error, Result};

/// Relative residual accepted from the l1 initializer.
const INIT_TOL: f64 = 1e-8;

/// Starting point of both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    /// Exact l1 minimizer (a vertex of the feasible polytope).
    L1Exact,
    /// l1 minimizer with each entry weighted by the norm of its column, i.e. the l1
    /// minimizer for the column-normalized matrix mapped back to the original scale.
    L1ColumnWeighted,
    /// Smoothed l1 minimizer; keeps every entry nonzero.
    L1Smoothed,
    /// Minimum 2-norm solution.
    MinNorm,
}

/// Relative magnitude below which a converged entry is treated as vanishing.
const PRUNE_REL: f64 = 1e-6;

/// Final smoothing level of [`Initializer::L1Smoothed`].
pub const SMOOTHED_EPS_END: f64 = 1e-3;

fn column_weights(a: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter()
        .map(|c| {
            let norm = c.norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect()
}

pub fn initial_point(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    init: Initializer,
) -> Result<DVector<f64>> {
    match init {
        Initializer::L1Exact => l1_min_equality(a, b, INIT_TOL),
        Initializer::L1ColumnWeighted => {
            numerics::l1_min_weighted(a, b, &column_weights(a), INIT_TOL)
        }
        Initializer::L1Smoothed => numerics::l1_smoothed(a, b, INIT_TOL, SMOOTHED_EPS_END),
        Initializer::MinNorm => {
            let n = a.ncols();
            let x = weighted_minnorm_solve(a, &WeightDiagonal::uniform(n, WeightKind::F), b, 0.0)?;
            let residual = numerics::relative_residual(a, &x, b);
            if residual > INIT_TOL {
                return Err(Error::Infeasible { residual });
            }
            Ok(x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `||x^{k+1} - x^k|| <= step_tol * ||x^k||`.
    pub step_tol: f64,
    pub zero_tol: f64,
    pub ridge: f64,
    /// Magnitude window kept by the thresholded solver.
    pub va_low: f64,
    pub va_high: f64,
    /// Residual bound `||Ax - b||_inf <= epsilon`.
    pub epsilon: f64,
    /// Box bound `||x||_inf <= eta`.
    pub eta: f64,
    pub init: Initializer,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step_tol: 1e-8,
            zero_tol: DEFAULT_ZERO_TOL,
            ridge: 0.0,
            va_low: 0.2,
            va_high: 1.2,
            epsilon: 1e-8,
            eta: 1.5,
            init: Initializer::L1Exact,
        }
    }
}

impl SolverConfig {
    /// Defaults for the thresholded solver (30 iterations).
    pub fn constrained() -> Self {
        Self {
            max_iters: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.step_tol > 0.0) {
            return bad(format!("step_tol must be positive, got {}", self.step_tol));
        }
        if !(self.zero_tol >= 0.0) || !(self.ridge >= 0.0) {
            return bad("zero_tol and ridge must be nonnegative".into());
        }
        if !(self.va_low < self.va_high) {
            return bad(format!("empty window [{}, {}]", self.va_low, self.va_high));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.eta > 1.0) {
            return bad(format!("eta must exceed 1, got {}", self.eta));
        }
        Ok(())
    }
}

/// Feasibility of a thresholded solve with respect to the two constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub residual_inf: f64,
    pub max_abs: f64,
    pub within_epsilon: bool,
    pub within_eta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub x: Vec<f64>,
    /// Surrogate norm of the initializer followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub support: Vec<usize>,
    /// `||x - F(x) A^T (A F(x) A^T)^+ b||` at the returned point.
    pub fixed_point_residual: f64,
    /// Present for thresholded solves.
    pub feasibility: Option<Feasibility>,
}

impl SolveResult {
    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

fn support_of(x: &DVector<f64>, zero_tol: f64) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i].abs() > zero_tol).collect()
}

fn check_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<()> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: a.nrows(),
            found: b.len(),
        });
    }
    numerics::check_finite_matrix(a)?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(
            "right-hand side contains non-finite entries".into(),
        ));
    }
    Ok(())
}

/// One fixed-point step `F(x) A^T (A F(x) A^T + ridge I)^+ b`.
pub fn irls_step(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    params: &SurrogateParams,
    zero_tol: f64,
    ridge: f64,
) -> Result<DVector<f64>> {
    let (_, f) = surrogate::weight_diagonals(x.as_slice(), params, zero_tol);
    weighted_minnorm_solve(a, &f, b, ridge)
}

fn fixed_point_residual(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    params: &SurrogateParams,
    cfg: &SolverConfig,
) -> f64 {
    match irls_step(a, b, x, params, cfg.zero_tol, cfg.ridge) {
        Ok(next) => (next - x).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Entries the iteration drives to zero do so geometrically and can still be far above
/// `zero_tol` when the step test passes. Tries dropping the entries below each gap in
/// the magnitudes under `PRUNE_REL * ||x||_inf`, largest cut first, refitting on the
/// rest; keeps the first refit that stays feasible and does not raise the objective.
fn prune_vanishing(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    params: &SurrogateParams,
) -> Option<DVector<f64>> {
    let cut = PRUNE_REL * x.amax();
    let mut small: Vec<f64> = x
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > 0.0 && v <= cut)
        .collect();
    small.sort_by(|p, q| q.total_cmp(p));
    small.dedup();
    let objective = h_norm(x.as_slice(), params);
    small.into_iter().find_map(|level| {
        let keep: Vec<usize> = (0..x.len()).filter(|&i| x[i].abs() > level).collect();
        let y = least_squares_on_support(a, &keep, b).ok()?;
        let feasible = numerics::relative_residual(a, &y, b) <= INIT_TOL;
        (feasible && h_norm(y.as_slice(), params) <= objective).then_some(y)
    })
}

/// IRLS for the equality-constrained problem, started from the l1 minimizer.
///
/// Hitting `max_iters` is reported through `converged = false`, not as an error.
pub fn solve_equality(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    params: &SurrogateParams,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_system(a, b)?;
    let x0 = initial_point(a, b, cfg.init)?;
    solve_equality_from(a, b, x0, params, cfg)
}

/// IRLS for the equality-constrained problem from a caller-supplied feasible start.
pub fn solve_equality_from(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    start: DVector<f64>,
    params: &SurrogateParams,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_system(a, b)?;
    if start.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "initial point",
            expected: a.ncols(),
            found: start.len(),
        });
    }
    let mut x = start;
    let mut trace = vec![h_norm(x.as_slice(), params)];
    let mut converged = false;
    let mut iterations = 0;
    if b.iter().all(|&v| v == 0.0) {
        x.fill(0.0);
        trace[0] = 0.0;
        converged = true;
    }
    while !converged && iterations < cfg.max_iters {
        let next = irls_step(a, b, &x, params, cfg.zero_tol, cfg.ridge)?;
        let change = (&next - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
        x = next;
        iterations += 1;
        trace.push(h_norm(x.as_slice(), params));
        converged = change <= cfg.step_tol;
    }
    if converged {
        if let Some(pruned) = prune_vanishing(a, b, &x, params) {
            trace.push(h_norm(pruned.as_slice(), params));
            x = pruned;
        }
    }
    let fixed_point_residual = fixed_point_residual(a, b, &x, params, cfg);
    Ok(SolveResult {
        support: support_of(&x, cfg.zero_tol),
        x: x.as_slice().to_vec(),
        objective_trace: trace,
        iterations,
        converged,
        fixed_point_residual,
        feasibility: None,
    })
}

fn feasibility(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    cfg: &SolverConfig,
) -> Feasibility {
    let residual_inf = (a * x - b).amax();
    let max_abs = x.amax();
    Feasibility {
        residual_inf,
        max_abs,
        within_epsilon: residual_inf <= cfg.epsilon,
        within_eta: max_abs <= cfg.eta,
    }
}

/// Thresholded IRLS for the box / infinity-norm constrained model.
///
/// Each iteration takes one IRLS step, keeps the indices whose magnitude falls in
/// `[va_low, va_high]`, and refits by least squares on that set. Iteration stops when
/// the kept set repeats or after `max_iters`. A result that misses `epsilon` or `eta`
/// is still returned, with the misses recorded in `feasibility`.
pub fn solve_constrained(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    params: &SurrogateParams,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_system(a, b)?;
    let n = a.ncols();
    if b.amax() <= cfg.epsilon {
        let x = DVector::zeros(n);
        return Ok(SolveResult {
            feasibility: Some(feasibility(a, b, &x, cfg)),
            x: x.as_slice().to_vec(),
            objective_trace: vec![0.0],
            iterations: 0,
            converged: true,
            support: Vec::new(),
            fixed_point_residual: 0.0,
        });
    }
    let mut x = match initial_point(a, b, cfg.init) {
        Ok(x) => x,
        // inconsistent system: start from the least-squares fit instead
        Err(Error::Infeasible { .. }) => {
            least_squares_on_support(a, &(0..n).collect::<Vec<_>>(), b)?
        }
        Err(e) => return Err(e),
    };
    let mut trace = vec![h_norm(x.as_slice(), params)];
    let mut previous: Option<Vec<usize>> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let half = irls_step(a, b, &x, params, cfg.zero_tol, cfg.ridge)?;
        let kept: Vec<usize> = (0..n)
            .filter(|&i| {
                let v = half[i].abs();
                v >= cfg.va_low && v <= cfg.va_high
            })
            .collect();
        iterations += 1;
        if kept.is_empty() {
            let residual = b.amax();
            if residual > cfg.epsilon {
                return Err(Error::EmptySupport { residual });
            }
            x.fill(0.0);
            trace.push(0.0);
            converged = true;
            break;
        }
        x = least_squares_on_support(a, &kept, b)?;
        trace.push(h_norm(x.as_slice(), params));
        if previous.as_ref() == Some(&kept) {
            converged = true;
            break;
        }
        previous = Some(kept);
    }
    Ok(SolveResult {
        support: support_of(&x, cfg.zero_tol),
        fixed_point_residual: fixed_point_residual(a, b, &x, params, cfg),
        feasibility: Some(feasibility(a, b, &x, cfg)),
        x: x.as_slice().to_vec(),
        objective_trace: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::numerical_rank;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn two_by_three() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
    }

    fn gaussian(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
    }

    fn planted(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DVector<f64> {
        let mut x = DVector::zeros(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
            x[idx[i]] = rng.sample(StandardNormal);
        }
        x
    }

    fn params(p: f64) -> SurrogateParams {
        SurrogateParams::new(p, 1.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig {
                max_iters: 0,
                ..Default::default()
            },
            SolverConfig {
                va_low: 1.0,
                va_high: 0.5,
                ..Default::default()
            },
            SolverConfig {
                eta: 1.0,
                ..Default::default()
            },
            SolverConfig {
                epsilon: -1.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert_eq!(SolverConfig::constrained().max_iters, 30);
    }

    #[test]
    fn two_by_three_recovers_sparse_solution() {
        let (a, b) = two_by_three();
        let r = solve_equality(&a, &b, &params(0.01), &SolverConfig::default()).unwrap();
        let expected = [1.0, 0.0, 0.0];
        for (x, e) in r.x.iter().zip(expected) {
            assert!((x - e).abs() <= 1e-6);
        }
        assert_eq!(r.support, vec![0]);
        assert!(r.converged);
    }

    #[test]
    fn identity_is_solved_in_one_step() {
        let a = DMatrix::identity(4, 4);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.0, 0.5]);
        for init in [Initializer::L1Exact, Initializer::MinNorm] {
            let cfg = SolverConfig {
                init,
                ..Default::default()
            };
            let r = solve_equality(&a, &b, &params(0.1), &cfg).unwrap();
            assert_eq!(r.iterations, 1);
            assert!((r.x_vector() - &b).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (a, _) = two_by_three();
        let r = solve_equality(
            &a,
            &DVector::zeros(2),
            &params(0.1),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(r.x.iter().all(|&v| v == 0.0));
        assert_eq!(r.objective_trace, vec![0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let (a, _) = two_by_three();
        let cfg = SolverConfig::default();
        assert!(matches!(
            solve_equality(&a, &DVector::zeros(3), &params(0.1), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_equality(
                &rank1,
                &DVector::from_vec(vec![1.0, 0.0]),
                &params(0.1),
                &cfg
            ),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn planted_recovery_20_by_40() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut ok = 0;
        for _ in 0..100 {
            let a = gaussian(&mut rng, 20, 40);
            let x0 = planted(&mut rng, 40, 3);
            let b = &a * &x0;
            let r = solve_equality(&a, &b, &params(0.01), &SolverConfig::default()).unwrap();
            if (r.x_vector() - &x0).amax() <= 1e-4 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}/100");
    }

    #[test]
    fn constrained_zero_rhs() {
        let (a, _) = two_by_three();
        let cfg = SolverConfig {
            epsilon: 1e-6,
            ..SolverConfig::constrained()
        };
        let r = solve_constrained(&a, &DVector::zeros(2), &params(0.1), &cfg).unwrap();
        assert!(r.x.iter().all(|&v| v == 0.0));
        assert_eq!(r.iterations, 0);
        assert!(r.feasibility.unwrap().within_epsilon);
    }

    #[test]
    fn constrained_planted_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ok = 0;
        for _ in 0..20 {
            let a = gaussian(&mut rng, 16, 32);
            let mut x0 = DVector::zeros(32);
            let i = rng.random_range(0..16);
            x0[i] = 1.0;
            x0[i + 16] = 1.0;
            let b = &a * &x0;
            let r = solve_constrained(&a, &b, &params(0.1), &SolverConfig::constrained()).unwrap();
            let f = r.feasibility.unwrap();
            if r.support == vec![i, i + 16] {
                assert!(f.within_epsilon && f.within_eta);
                ok += 1;
            }
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn constrained_reports_infeasible_result() {
        // the only solution has an entry above eta
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.9]);
        let b = DVector::from_vec(vec![1.15]);
        let cfg = SolverConfig {
            eta: 1.1,
            ..SolverConfig::constrained()
        };
        let r = solve_constrained(&a, &b, &params(0.1), &cfg).unwrap();
        let f = r.feasibility.unwrap();
        assert!(f.within_epsilon);
        assert!(!f.within_eta);
    }

    #[test]
    fn constrained_empty_window_is_an_error() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![5.0, 0.0]);
        let r = solve_constrained(&a, &b, &params(0.1), &SolverConfig::constrained());
        assert!(matches!(r, Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn inconsistent_system_starts_from_least_squares() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 1.1]);
        let r = solve_constrained(&a, &b, &params(0.1), &SolverConfig::constrained()).unwrap();
        assert!(!r.feasibility.unwrap().within_epsilon);
        assert!(r.x[0] > 0.9);
    }

    fn system(seed: u64, m: usize, n: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, m, n);
        let x0 = planted(&mut rng, n, k)
            + DVector::from_fn(n, |_, _| 1e-2 * rng.sample::<f64, _>(StandardNormal));
        let b = &a * x0;
        (a, b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn iteration_invariants(seed in 0u64..10_000, m in 3usize..8, extra in 1usize..6, p in 1e-3f64..1.0, min_norm in any::<bool>()) {
            let n = m + extra;
            let (a, b) = system(seed, m, n, 2);
            let pr = params(p);
            let cfg = SolverConfig {
                init: if min_norm { Initializer::MinNorm } else { Initializer::L1Exact },
                ..Default::default()
            };
            let r = solve_equality(&a, &b, &pr, &cfg).unwrap();
            // descent
            for w in r.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-10, "{:?}", r.objective_trace);
            }
            // feasibility
            prop_assert!((&a * r.x_vector() - &b).norm() <= 1e-8 * b.norm().max(1.0));
            if r.converged {
                prop_assert!(r.fixed_point_residual <= 1e-6 * r.x_vector().norm().max(1.0));
                // full-rank support; entries still decaying toward zero are not counted
                let scale = r.x_vector().amax();
                let support: Vec<usize> = (0..n).filter(|&i| r.x[i].abs() > 1e-6 * scale).collect();
                prop_assert!(support.len() <= m, "{:?} after {}", r.x, r.iterations);
                let sub = numerics::select_columns(&a, &support);
                prop_assert_eq!(numerical_rank(&sub), support.len());
            }
        }

        #[test]
        fn step_invariants(seed in 0u64..10_000, m in 3usize..8, extra in 1usize..6, p in 1e-3f64..1.0) {
            let n = m + extra;
            let (a, b) = system(seed, m, n, 2);
            let pr = params(p);
            let mut x = initial_point(&a, &b, Initializer::MinNorm).unwrap();
            for _ in 0..15 {
                let next = irls_step(&a, &b, &x, &pr, DEFAULT_ZERO_TOL, 0.0).unwrap();
                let (h, _) = surrogate::weight_diagonals(x.as_slice(), &pr, DEFAULT_ZERO_TOL);
                let quad = |v: &DVector<f64>| v.iter().zip(&h.entries).map(|(vi, hi)| hi * vi * vi).sum::<f64>();
                // the step minimizes the quadratic model over the feasible set
                // slack covers entries just below zero_tol that x still carries
                prop_assert!(quad(&next) <= quad(&x) * (1.0 + 1e-7) + 1e-12);
                // zero entries stay zero
                for i in 0..n {
                    if x[i].abs() <= DEFAULT_ZERO_TOL {
                        prop_assert_eq!(next[i], 0.0);
                    }
                }
                x = next;
            }
        }
    }
}
