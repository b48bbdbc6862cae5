//! Dense kernels shared by the solvers.
//!
//! Singular value decompositions are computed with `faer`; nalgebra's SVD returns
//! inaccurate factors on some small, well-conditioned inputs (see the regression test).
//! Every pseudo-inverse is taken through an SVD of the column-scaled support matrix
//! `C = A_S diag(sqrt(f_S))`, so `F A^T (A F A^T)^+ b` is evaluated without ever forming
//! the (squared-conditioning) Gram matrix. This also handles supports smaller than the
//! number of rows, where `A F A^T` is singular.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::surrogate::{WeightDiagonal, WeightKind};
use crate::{Error, Result};

/// Smoothed-l1 IRLS schedule: `eps` starts at 1e-1 (relative to the iterate scale).
const L1_EPS_START: f64 = 1e-1;
const L1_INNER_ITERS: usize = 100;

pub fn check_finite_matrix(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParams(
            "matrix contains non-finite entries".into(),
        ))
    }
}

fn check_rhs(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<()> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: a.nrows(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `A = U diag(singular_values) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD, or full (square `U` and `V`) when `full` is set.
pub fn svd(a: &DMatrix<f64>, full: bool) -> Result<Svd> {
    let (m, n) = a.shape();
    let mat = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let dec = if full { mat.svd() } else { mat.thin_svd() }.map_err(|_| Error::SingularSystem)?;
    let (u, s, v) = (dec.U(), dec.S().column_vector(), dec.V());
    Ok(Svd {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(s.nrows(), |i, _| s[i]),
        v: DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    })
}

/// Minimum-norm (or Tikhonov when `ridge > 0`) solution of `C y = b` from the SVD of `C`.
fn pinv_solve(c: DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let (m, s) = c.shape();
    let Svd {
        u,
        singular_values: sigma,
        v,
    } = svd(&c, false)?;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    if !smax.is_finite() {
        return Err(Error::SingularSystem);
    }
    if smax == 0.0 {
        return if b.iter().all(|&v| v == 0.0) {
            Ok(DVector::zeros(s))
        } else {
            Err(Error::SingularSystem)
        };
    }
    let cutoff = (m.max(s) as f64) * f64::EPSILON * smax;
    let mut coeff = u.tr_mul(b);
    for (c, &sv) in coeff.iter_mut().zip(sigma.iter()) {
        *c *= if ridge > 0.0 {
            sv / (sv * sv + ridge)
        } else if sv > cutoff {
            1.0 / sv
        } else {
            0.0
        };
    }
    Ok(v * coeff)
}

/// `x = F A^T (A F A^T + ridge I)^+ b`.
///
/// Entries where `f` is zero stay exactly zero in the output. With `ridge = 0` and a
/// consistent system the result minimizes `x^T F^{-1} x` over solutions supported on
/// `{i : f_i > 0}`.
pub fn weighted_minnorm_solve(
    a: &DMatrix<f64>,
    f: &WeightDiagonal,
    b: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    check_rhs(a, b)?;
    if f.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "weight diagonal",
            expected: a.ncols(),
            found: f.len(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    let support = f.support();
    let mut x = DVector::zeros(a.ncols());
    if support.is_empty() {
        return if b.iter().all(|&v| v == 0.0) {
            Ok(x)
        } else {
            Err(Error::SingularSystem)
        };
    }
    let scale: Vec<f64> = support.iter().map(|&j| f.entries[j].sqrt()).collect();
    let c = DMatrix::from_fn(a.nrows(), support.len(), |i, k| {
        a[(i, support[k])] * scale[k]
    });
    let y = pinv_solve(c, b, ridge)?;
    for (k, &j) in support.iter().enumerate() {
        x[j] = scale[k] * y[k];
    }
    Ok(x)
}

/// Submatrix made of the listed columns.
pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, k| a[(i, cols[k])])
}

/// `argmin_{supp(x) ⊆ S} ||Ax - b||_2`, taking the minimum-norm minimizer when `A_S` is
/// rank deficient. An empty support yields the zero vector.
pub fn least_squares_on_support(
    a: &DMatrix<f64>,
    support: &[usize],
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_rhs(a, b)?;
    let mut x = DVector::zeros(a.ncols());
    if support.is_empty() {
        return Ok(x);
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= a.ncols()) {
        return Err(Error::DimensionMismatch {
            what: "support index",
            expected: a.ncols(),
            found: bad,
        });
    }
    let sub = select_columns(a, support);
    let y = match pinv_solve(sub, b, 0.0) {
        Ok(y) => y,
        // all selected columns are zero: the best fit on them is zero
        Err(Error::SingularSystem) => return Ok(x),
        Err(e) => return Err(e),
    };
    for (k, &j) in support.iter().enumerate() {
        x[j] = y[k];
    }
    Ok(x)
}

/// Numerical rank from singular values, with the usual `max(m, n) * eps * sigma_max` cutoff.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let Ok(Svd {
        singular_values: sv,
        ..
    }) = svd(a, false)
    else {
        return 0;
    };
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > cutoff && s > 0.0).count()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Relative residual `||Ax - b|| / max(1, ||b||)`.
pub fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a * x - b).norm() / b.norm().max(1.0)
}

/// `argmin ||x||_1 s.t. Ax = b`, solved exactly as a linear program.
///
/// The LP splits `x = u - v` with `u, v >= 0` and runs on a row-normalized copy of the
/// system; the returned vertex is re-solved on its support so the equality holds to
/// working precision. Fails with [`Error::Infeasible`] when `b` is not in the range of
/// `A` (relative residual above `tol`).
pub fn l1_min_equality(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    l1_min_weighted(a, b, &vec![1.0; a.ncols()], tol)
}

/// Weighted variant `argmin sum_j w_j |x_j| s.t. Ax = b` of [`l1_min_equality`];
/// weights must be positive.
pub fn l1_min_weighted(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    weights: &[f64],
    tol: f64,
) -> Result<DVector<f64>> {
    check_rhs(a, b)?;
    if weights.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "weights",
            expected: a.ncols(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParams("l1 weights must be positive".into()));
    }
    let wnorm = |x: &DVector<f64>| x.iter().zip(weights).map(|(v, w)| v.abs() * w).sum::<f64>();
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let (m, n) = a.shape();
    if b.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(n));
    }
    let minnorm = weighted_minnorm_solve(a, &WeightDiagonal::uniform(n, WeightKind::F), b, 0.0)?;
    let residual = relative_residual(a, &minnorm, b);
    if residual > tol {
        return Err(Error::Infeasible { residual });
    }

    let bscale = b.norm();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let pos: Vec<_> = (0..n)
        .map(|j| problem.add_var(weights[j], (0.0, f64::INFINITY)))
        .collect();
    let neg: Vec<_> = (0..n)
        .map(|j| problem.add_var(weights[j], (0.0, f64::INFINITY)))
        .collect();
    for i in 0..m {
        let rnorm = a.row(i).norm();
        if rnorm == 0.0 {
            continue;
        }
        let mut expr = LinearExpr::empty();
        for j in 0..n {
            let v = a[(i, j)] / rnorm;
            if v != 0.0 {
                expr.add(pos[j], v);
                expr.add(neg[j], -v);
            }
        }
        problem.add_constraint(expr, ComparisonOp::Eq, b[i] / (rnorm * bscale));
    }
    let lp = problem
        .solve()
        .ok()
        .and_then(|outcome| outcome.into_solution().ok())
        .map(|sol| {
            DVector::from_fn(n, |j, _| {
                (sol.var_value(pos[j]) - sol.var_value(neg[j])) * bscale
            })
        });

    let mut best = minnorm;
    if let Some(x) = lp {
        let scale = x.amax();
        let support: Vec<usize> = (0..n).filter(|&j| x[j].abs() > 1e-9 * scale).collect();
        let polished = least_squares_on_support(a, &support, b)?;
        for candidate in [polished, x] {
            if relative_residual(a, &candidate, b) <= tol && wnorm(&candidate) < wnorm(&best) {
                best = candidate;
            }
        }
    }
    Ok(best)
}

/// Minimizer of the smoothed l1 norm `sum_i sqrt(x_i^2 + eps^2)` over `Ax = b`, by
/// majorization (inverse weights `sqrt(x_i^2 + eps^2)`), with `eps` decreasing
/// geometrically from 1e-1 to `eps_end` relative to the scale of the minimum-norm
/// solution. The result is dense: entries off the l1 support are small, not zero.
pub fn l1_smoothed(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    eps_end: f64,
) -> Result<DVector<f64>> {
    check_rhs(a, b)?;
    let n = a.ncols();
    if b.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(n));
    }
    let mut x = weighted_minnorm_solve(a, &WeightDiagonal::uniform(n, WeightKind::F), b, 0.0)?;
    let residual = relative_residual(a, &x, b);
    if residual > tol {
        return Err(Error::Infeasible { residual });
    }
    let scale = x.amax();
    let mut eps = L1_EPS_START;
    while eps >= eps_end * 0.5 {
        let abs_eps = eps * scale;
        for _ in 0..L1_INNER_ITERS {
            let f =
                WeightDiagonal::new(x.iter().map(|v| v.hypot(abs_eps)).collect(), WeightKind::F);
            let next = weighted_minnorm_solve(a, &f, b, 0.0)?;
            let change = (&next - &x).amax();
            x = next;
            if change <= 1e-3 * abs_eps {
                break;
            }
        }
        eps *= 0.1;
    }
    Ok(x)
}

/// Approximate `argmin ||x||_1 s.t. Ax = b`: [`l1_smoothed`] followed by exact solves on
/// the dominant supports of its output.
///
/// Independent of the LP route in [`l1_min_equality`]; used to cross-check it.
pub fn l1_min_irls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    eps_end: f64,
) -> Result<DVector<f64>> {
    let mut x = l1_smoothed(a, b, tol, eps_end)?;
    if let Some(polished) = polish_vertex(a, b, &x, tol) {
        if l1_norm(polished.as_slice()) <= l1_norm(x.as_slice()) * (1.0 + 1e-12) {
            x = polished;
        }
    }
    Ok(x)
}

/// Exact solves on the `r` dominant entries of `x` for every `r` up to the row count;
/// returns the feasible candidate with the smallest l1 norm.
fn polish_vertex(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    tol: f64,
) -> Option<DVector<f64>> {
    let scale = x.amax();
    if scale == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..x.len())
        .filter(|&i| x[i].abs() > 1e-6 * scale)
        .collect();
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()).then(i.cmp(&j)));
    order.truncate(a.nrows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for r in 1..=order.len() {
        let Ok(candidate) = least_squares_on_support(a, &order[..r], b) else {
            continue;
        };
        if relative_residual(a, &candidate, b) > tol {
            continue;
        }
        let value = l1_norm(candidate.as_slice());
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, candidate));
        }
    }
    best.map(|(_, v)| v)
}
