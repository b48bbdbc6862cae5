//! Recovery-condition analyzers: mutual coherence, the OMP sparsity guarantee, brute-force
//! restricted isometry constants, sampled null space constants and the stability factor.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{select_columns, svd};
use crate::oracles::subsets;
use crate::surrogate::SurrogateParams;
use crate::{par, Error, Result};

/// Largest column count accepted by [`rip_constant`].
pub const RIP_MAX_N: usize = 20;
/// Largest number of supports [`rip_constant`] enumerates.
pub const RIP_MAX_SUPPORTS: u64 = 200_000;
/// Coordinate refinement rounds applied to the best samples.
pub const REFINE_ROUNDS: usize = 50;
const REFINE_DECAY: f64 = 0.5;
const REFINE_STARTS: usize = 3;
/// Sampled scales are `10^u` with `u` uniform on this range (the surrogate is not
/// scale-invariant).
const LOG_SCALE_RANGE: (f64, f64) = (-3.0, 3.0);

fn column_norms(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    match norms.iter().position(|&v| v == 0.0) {
        Some(j) => Err(Error::ZeroColumn(j)),
        None => Ok(norms),
    }
}

/// Largest `|<a_i, a_j>| / (|a_i| |a_j|)` over distinct columns; 0 for a single column.
pub fn coherence(a: &DMatrix<f64>) -> Result<f64> {
    let norms = column_norms(a)?;
    let n = a.ncols();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let c = a.column(i).dot(&a.column(j)).abs() / (norms[i] * norms[j]);
            best = best.max(c);
        }
    }
    Ok(best.min(1.0))
}

/// `floor((1 + 1/kappa) / 2)`; reported as `n` when the columns are orthogonal.
pub fn omp_guarantee_k(a: &DMatrix<f64>) -> Result<usize> {
    let kappa = coherence(a)?;
    Ok(omp_guarantee_from_coherence(kappa, a.ncols()))
}

pub fn omp_guarantee_from_coherence(kappa: f64, n: usize) -> usize {
    if kappa <= 0.0 {
        return n;
    }
    let k = (0.5 * (1.0 + 1.0 / kappa) + 1e-9).floor();
    (k as usize).min(n)
}

/// `C(n, k)`, saturating.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| {
        acc.saturating_mul((n - i) as u64) / (i as u64 + 1)
    })
}

/// `delta_k`: the largest deviation of an eigenvalue of `A_S^T A_S` from 1 over all
/// supports of size `k`. Exhaustive, so guarded by [`RIP_MAX_N`] and [`RIP_MAX_SUPPORTS`].
pub fn rip_constant(a: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = a.ncols();
    if k == 0 || k > n {
        return Err(Error::InvalidParams(format!(
            "k must lie in 1..={n}, got {k}"
        )));
    }
    if n > RIP_MAX_N {
        return Err(Error::TooLarge(format!(
            "{n} columns exceed the RIP limit of {RIP_MAX_N}"
        )));
    }
    let count = binomial(n, k);
    if count > RIP_MAX_SUPPORTS {
        return Err(Error::TooLarge(format!(
            "C({n}, {k}) = {count} supports exceed the limit of {RIP_MAX_SUPPORTS}"
        )));
    }
    let deviations = par::map(&subsets(n, k), |s| {
        let sub = select_columns(a, s);
        let eig = (sub.transpose() * &sub).symmetric_eigenvalues();
        let hi = eig.max();
        let lo = eig.min();
        (hi - 1.0).max(1.0 - lo)
    });
    Ok(deviations.into_iter().fold(0.0, f64::max))
}

/// Which norm the null space constant is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NscKind {
    #[serde(rename = "h_pq")]
    Surrogate {
        p: f64,
        q: f64,
    },
    L1,
}

impl NscKind {
    pub fn surrogate(params: &SurrogateParams) -> Self {
        NscKind::Surrogate {
            p: params.p(),
            q: params.q(),
        }
    }

    fn value(&self, x: f64) -> f64 {
        match *self {
            NscKind::Surrogate { p, q } => (x.abs().powf(q) / p).ln_1p(),
            NscKind::L1 => x.abs(),
        }
    }
}

/// A sampled lower bound on the null space constant together with the null-space vector
/// that attains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NscEstimate {
    pub value: f64,
    pub witness: Vec<f64>,
    pub k: usize,
    pub kind: NscKind,
    /// Set when the estimate is provably the constant itself.
    pub exact: bool,
    pub seed: u64,
    pub samples: usize,
}

/// `max_{|S| <= k} ||x_S|| / ||x_{S^c}||` in the chosen norm, attained by the `k` largest
/// entries. Infinite when the witness has at most `k` nonzeros.
pub fn nsc_ratio(x: &[f64], k: usize, kind: NscKind) -> f64 {
    let mut vals: Vec<f64> = x.iter().map(|&v| kind.value(v)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(vals.len());
    let head: f64 = vals[..k].iter().sum();
    let tail: f64 = vals[k..].iter().sum();
    if tail > 0.0 {
        head / tail
    } else if head > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Orthonormal basis of the null space of `A` as columns, from a full SVD.
pub fn null_space_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::numerics::check_finite_matrix(a)?;
    let n = a.ncols();
    let dec = svd(a, true)?;
    let smax = dec.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let tol = n.max(a.nrows()) as f64 * f64::EPSILON * smax;
    let rank = dec.singular_values.iter().filter(|&&s| s > tol).count();
    if rank == n {
        return Err(Error::TrivialNullSpace);
    }
    Ok(dec.v.columns(rank, n - rank).into_owned())
}

/// Search coordinates: null-space coefficients plus a log10 scale.
#[derive(Clone)]
struct Probe {
    coeffs: DVector<f64>,
    log_scale: f64,
}

impl Probe {
    fn point(&self, basis: &DMatrix<f64>) -> Vec<f64> {
        let s = 10f64.powf(self.log_scale);
        (basis * &self.coeffs * s).iter().copied().collect()
    }
}

fn random_probes(dim: usize, count: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut c = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = c.norm();
            if norm > 0.0 {
                c /= norm;
            }
            Probe {
                coeffs: c,
                log_scale: rng.random_range(LOG_SCALE_RANGE.0..LOG_SCALE_RANGE.1),
            }
        })
        .collect()
}

/// Coordinate search that keeps any `+-step` move which raises the ratio, halving the
/// step after every round.
fn refine(probe: &Probe, basis: &DMatrix<f64>, k: usize, kind: NscKind) -> Probe {
    let dim = probe.coeffs.len();
    let mut best = probe.clone();
    let mut best_val = nsc_ratio(&best.point(basis), k, kind);
    let mut step = 0.5;
    for _ in 0..REFINE_ROUNDS {
        for coord in 0..=dim {
            for sign in [1.0, -1.0] {
                let mut trial = best.clone();
                if coord < dim {
                    trial.coeffs[coord] += sign * step;
                } else {
                    // scale moves span the sampled range
                    trial.log_scale += sign * step * (LOG_SCALE_RANGE.1 - LOG_SCALE_RANGE.0);
                }
                let val = nsc_ratio(&trial.point(basis), k, kind);
                if val > best_val {
                    best = trial;
                    best_val = val;
                }
            }
        }
        step *= REFINE_DECAY;
    }
    best
}

/// The largest ratio over `witnesses` (first index on ties).
pub fn nsc_on_witnesses(witnesses: &[Vec<f64>], k: usize, kind: NscKind) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, w) in witnesses.iter().enumerate() {
        let r = nsc_ratio(w, k, kind);
        if r > best.0 {
            best = (r, i);
        }
    }
    best
}

fn check_k(a: &DMatrix<f64>, k: usize) -> Result<()> {
    if k == 0 || k >= a.ncols() {
        return Err(Error::InvalidParams(format!(
            "k must lie in 1..{}, got {k}",
            a.ncols()
        )));
    }
    Ok(())
}

fn probe_pool(
    basis: &DMatrix<f64>,
    k: usize,
    kinds: &[NscKind],
    n_samples: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let probes = random_probes(basis.ncols(), n_samples.max(1), seed);
    let mut pool: Vec<Vec<f64>> = probes.iter().map(|p| p.point(basis)).collect();
    for &kind in kinds {
        let mut ranked: Vec<(f64, usize)> = pool[..probes.len()]
            .iter()
            .enumerate()
            .map(|(i, w)| (nsc_ratio(w, k, kind), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let starts: Vec<&Probe> = ranked
            .iter()
            .take(REFINE_STARTS)
            .map(|&(_, i)| &probes[i])
            .collect();
        let refined = par::map(&starts, |p| refine(p, basis, k, kind).point(basis));
        pool.extend(refined);
    }
    pool
}

fn exact_flag(basis: &DMatrix<f64>, kind: NscKind) -> bool {
    if basis.ncols() != 1 {
        return false;
    }
    match kind {
        // the l1 ratio is scale-invariant along a single direction
        NscKind::L1 => true,
        // the surrogate ratio is scale-invariant only when all magnitudes agree
        NscKind::Surrogate { .. } => {
            let col = basis.column(0);
            let hi = col.amax();
            let lo = col.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            hi - lo <= 1e-12 * hi
        }
    }
}

fn estimate_from_pool(
    pool: &[Vec<f64>],
    basis: &DMatrix<f64>,
    k: usize,
    kind: NscKind,
    n_samples: usize,
    seed: u64,
) -> NscEstimate {
    let (value, idx) = nsc_on_witnesses(pool, k, kind);
    NscEstimate {
        value,
        witness: pool[idx].clone(),
        k,
        kind,
        exact: exact_flag(basis, kind),
        seed,
        samples: n_samples,
    }
}

/// Sampled lower bound on the null space constant of order `k`: `n_samples` random
/// null-space vectors (with random scale), the best few refined by coordinate search.
pub fn nsc_estimate(
    a: &DMatrix<f64>,
    k: usize,
    kind: NscKind,
    n_samples: usize,
    seed: u64,
) -> Result<NscEstimate> {
    check_k(a, k)?;
    let basis = null_space_basis(a)?;
    let pool = probe_pool(&basis, k, &[kind], n_samples, seed);
    Ok(estimate_from_pool(&pool, &basis, k, kind, n_samples, seed))
}

/// The random null-space samples plus the refined witnesses for both kinds.
pub fn shared_witness_pool(
    a: &DMatrix<f64>,
    k: usize,
    params: &SurrogateParams,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_k(a, k)?;
    let basis = null_space_basis(a)?;
    let kinds = [NscKind::surrogate(params), NscKind::L1];
    Ok(probe_pool(&basis, k, &kinds, n_samples, seed))
}

/// Surrogate and l1 estimates evaluated on one [`shared_witness_pool`], so the two
/// values are directly comparable.
pub fn nsc_compare(
    a: &DMatrix<f64>,
    k: usize,
    params: &SurrogateParams,
    n_samples: usize,
    seed: u64,
) -> Result<(NscEstimate, NscEstimate)> {
    let pool = shared_witness_pool(a, k, params, n_samples, seed)?;
    let basis = null_space_basis(a)?;
    let kinds = [NscKind::surrogate(params), NscKind::L1];
    Ok((
        estimate_from_pool(&pool, &basis, k, kinds[0], n_samples, seed),
        estimate_from_pool(&pool, &basis, k, kinds[1], n_samples, seed),
    ))
}

/// `2 (1 + rho) / (1 - rho)` for `0 <= rho < 1`.
pub fn stability_bound(rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::OutOfRange(rho));
    }
    Ok(2.0 * (1.0 + rho) / (1.0 - rho))
}

/// The entries of `x` outside its `k` largest magnitudes (best `k`-term remainder).
pub fn best_k_tail(x: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()).then(i.cmp(&j)));
    let mut tail = x.to_vec();
    for &i in order.iter().take(k) {
        tail[i] = 0.0;
    }
    tail
}
