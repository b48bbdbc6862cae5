//! Reference answers: exhaustive l0 minimization and recovery of a multiset from its
//! power sums.

use nalgebra::{DMatrix, DVector};

use crate::numerics::least_squares_on_support;
use crate::{par, Error, Result};

/// Largest column count [`brute_force_l0`] accepts by default.
pub const DEFAULT_MAX_N: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct L0Certificate {
    /// Every minimizer at the minimal support size, in lexicographic support order.
    pub solutions: Vec<DVector<f64>>,
    pub supports: Vec<Vec<usize>>,
    pub sparsity: usize,
    pub supports_tested: usize,
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // advance the rightmost index that still has room
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Exhaustive `min ||x||_0 s.t. Ax = b`: supports are tried by increasing size, each with
/// a least-squares fit accepted when `||Ax - b|| <= tol * max(1, ||b||)`. Returns every
/// minimizer of the first feasible size. Fails with `TooLarge` beyond `max_n` columns
/// and with `Infeasible` when no support fits `b`.
pub fn brute_force_l0(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_n: usize,
) -> Result<L0Certificate> {
    let (m, n) = a.shape();
    if n > max_n {
        return Err(Error::TooLarge(format!(
            "{n} columns exceed the limit of {max_n}"
        )));
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: m,
            found: b.len(),
        });
    }
    let bound = tol * b.norm().max(1.0);
    let mut tested = 0;
    for k in 0..=n {
        let candidates = subsets(n, k);
        tested += candidates.len();
        let fits: Vec<Option<DVector<f64>>> = par::map(&candidates, |s| {
            let x = least_squares_on_support(a, s, b).ok()?;
            // a fit that zeroes one of its columns belongs to a smaller support
            let full = s.iter().all(|&j| x[j] != 0.0);
            (full && (a * &x - b).norm() <= bound).then_some(x)
        });
        let (supports, solutions): (Vec<_>, Vec<_>) = candidates
            .into_iter()
            .zip(fits)
            .filter_map(|(s, x)| x.map(|x| (s, x)))
            .unzip();
        if !solutions.is_empty() {
            return Ok(L0Certificate {
                solutions,
                supports,
                sparsity: k,
                supports_tested: tested,
            });
        }
    }
    let x = least_squares_on_support(a, &(0..n).collect::<Vec<_>>(), b)?;
    Err(Error::Infeasible {
        residual: (a * &x - b).norm() / b.norm().max(1.0),
    })
}

/// `(sum v_i, sum v_i^2, ..., sum v_i^count)`.
pub fn power_sums(v: &[f64], count: usize) -> Vec<f64> {
    (1..=count as i32)
        .map(|k| v.iter().map(|x| x.powi(k)).sum())
        .collect()
}

/// Elementary symmetric polynomials `e_0 = 1, e_1, ..., e_n` from power sums
/// `p_1..p_n` by Newton's identities `k e_k = sum_{i=1}^k (-1)^{i-1} e_{k-i} p_i`.
pub fn elementary_from_power_sums(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for k in 1..=n {
        let mut acc = 0.0;
        for i in 1..=k {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e[k - i] * w[i - 1];
        }
        e[k] = acc / k as f64;
    }
    e
}

/// Monic polynomial `prod (z - v_i)` as coefficients `c_0..c_n` of `z^0..z^n`.
fn monic_from_elementary(e: &[f64]) -> Vec<f64> {
    let n = e.len() - 1;
    // z^n - e_1 z^{n-1} + e_2 z^{n-2} - ...
    (0..=n)
        .map(|power| {
            let k = n - power;
            if k.is_multiple_of(2) {
                e[k]
            } else {
                -e[k]
            }
        })
        .collect()
}

fn horner(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * z + ci)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, &ci)| i as f64 * ci)
        .collect()
}

/// Rounding-error scale of `P(z)`.
fn eval_noise(c: &[f64], z: f64) -> f64 {
    let az = z.abs();
    c.iter().rev().fold(0.0, |acc, &ci| acc * az + ci.abs()) * 4.0 * c.len() as f64 * f64::EPSILON
}

/// Root of `c` in `[lo, hi]` where `c(lo)` and `c(hi)` have opposite signs (or one is 0).
fn bisect(c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = horner(c, lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = horner(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Real roots with multiplicity, ascending, for a polynomial of degree `n >= 1`.
///
/// Works from the highest derivative down: the sorted real roots of `P'` split the line
/// into intervals on which `P` is monotone, so each holds at most one simple root
/// (found by bisection). A critical point where `P` vanishes to rounding accuracy is a
/// multiple root whose multiplicity is one more than its multiplicity in `P'`.
fn real_roots(c: &[f64]) -> Vec<f64> {
    let n = c.len() - 1;
    if n == 1 {
        return vec![-c[0] / c[1]];
    }
    let crit = real_roots(&derivative(c));
    // Cauchy bound on root magnitudes
    let lead = c[n];
    let bound = 1.0
        + c[..n]
            .iter()
            .map(|ci| (ci / lead).abs())
            .fold(0.0, f64::max);
    let bound = crit.iter().fold(bound, |acc, x| acc.max(x.abs() + 1.0));

    // critical points grouped by value: (point, multiplicity in P')
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for &x in &crit {
        match groups.last_mut() {
            Some((g, count)) if (x - *g).abs() <= 1e-9 * (1.0 + g.abs()) => *count += 1,
            _ => groups.push((x, 1)),
        }
    }
    // critical points carry their own error, so allow the Taylor change over a small step
    let is_root = |x: f64| {
        let step = 1e-10 * (1.0 + x.abs());
        let mut d = derivative(c);
        let mut slack = eval_noise(c, x);
        let mut term = 1.0;
        for j in 1..=n {
            term *= step / j as f64;
            slack += horner(&d, x).abs() * term;
            d = derivative(&d);
        }
        horner(c, x).abs() <= slack
    };

    let mut roots = Vec::new();
    let mut edges = vec![-bound];
    edges.extend(groups.iter().map(|g| g.0));
    edges.push(bound);
    for w in 0..edges.len() - 1 {
        let (lo, hi) = (edges[w], edges[w + 1]);
        if w > 0 {
            let (g, count) = groups[w - 1];
            if is_root(g) {
                roots.extend(std::iter::repeat_n(g, count + 1));
            }
        }
        let (flo, fhi) = (horner(c, lo), horner(c, hi));
        let lo_root = w > 0 && is_root(lo);
        let hi_root = w + 1 < edges.len() - 1 && is_root(hi);
        if !lo_root && !hi_root && flo != 0.0 && fhi != 0.0 && (flo < 0.0) != (fhi < 0.0) {
            roots.push(bisect(c, lo, hi));
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Largest imaginary part among the companion-matrix eigenvalues; diagnostic for inputs
/// that are not power sums of a real multiset.
fn max_imaginary_part(c: &[f64]) -> f64 {
    let n = c.len() - 1;
    let lead = c[n];
    let companion = DMatrix::from_fn(n, n, |i, j| {
        if j == n - 1 {
            -c[i] / lead
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.im.abs())
        .fold(0.0, f64::max)
}

/// The multiset whose first `n = w.len()` power sums are `w`, sorted nonincreasing.
///
/// The power sums fix the elementary symmetric polynomials through Newton's identities,
/// hence the polynomial with the multiset as roots. Fails with `NonRealRoots` when that
/// polynomial does not have `n` real roots.
pub fn multiset_from_power_sums(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Ok(Vec::new());
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("power sums must be finite".into()));
    }
    let e = elementary_from_power_sums(w);
    let c = monic_from_elementary(&e);
    let mut roots = real_roots(&c);
    if roots.len() != w.len() {
        return Err(Error::NonRealRoots {
            max_imag: max_imaginary_part(&c),
        });
    }
    roots.reverse();
    Ok(roots)
}
