//! The logarithmic surrogate `h(x) = log(1 + |x|^q / p)` and the IRLS weights built from it.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default magnitude below which an entry is treated as an exact zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// The pair `(p, q)` with `p > 0` and `0 < q <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct SurrogateParams {
    p: f64,
    q: f64,
}

#[derive(Deserialize)]
struct RawParams {
    p: f64,
    q: f64,
}

impl TryFrom<RawParams> for SurrogateParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        SurrogateParams::new(raw.p, raw.q)
    }
}

impl SurrogateParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::InvalidParams(format!("p must be positive, got {p}")));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "q must lie in (0, 1], got {q}"
            )));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `log(1 + |x|^q / p)`, evaluated with `ln_1p` to keep precision for small `|x|^q / p`.
    pub fn value(&self, x: f64) -> f64 {
        (x.abs().powf(self.q) / self.p).ln_1p()
    }

    /// Derivative on `x > 0`: `q x^(q-1) / (p + x^q)`.
    pub fn derivative(&self, x: f64) -> f64 {
        let xq = x.powf(self.q);
        self.q * xq / (x * (self.p + xq))
    }

    /// Diagonal entry of `H(x)`; zero for `|x| <= zero_tol`.
    pub fn h_weight(&self, x: f64, zero_tol: f64) -> f64 {
        let ax = x.abs();
        if ax <= zero_tol {
            0.0
        } else {
            self.q / (ax.powf(2.0 - self.q) * (self.p + ax.powf(self.q)))
        }
    }

    /// Diagonal entry of `F(x)`, the reciprocal of [`Self::h_weight`] on the support.
    pub fn f_weight(&self, x: f64, zero_tol: f64) -> f64 {
        let ax = x.abs();
        if ax <= zero_tol {
            0.0
        } else {
            ax.powf(2.0 - self.q) * (self.p + ax.powf(self.q)) / self.q
        }
    }
}

pub fn h_value(x: f64, params: &SurrogateParams) -> f64 {
    params.value(x)
}

/// `sum_i h(v_i)`.
pub fn h_norm(v: &[f64], params: &SurrogateParams) -> f64 {
    v.iter().map(|&x| params.value(x)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    H,
    F,
}

/// Diagonal of `H(x)` or `F(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagonal {
    pub entries: Vec<f64>,
    pub kind: WeightKind,
}

impl WeightDiagonal {
    pub fn new(entries: Vec<f64>, kind: WeightKind) -> Self {
        Self { entries, kind }
    }

    /// All-ones diagonal (plain minimum 2-norm weighting).
    pub fn uniform(n: usize, kind: WeightKind) -> Self {
        Self::new(vec![1.0; n], kind)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices with a strictly positive entry.
    pub fn support(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Builds `(H(v), F(v))`. Entries with `|v_i| <= zero_tol` are zero in both.
pub fn weight_diagonals(
    v: &[f64],
    params: &SurrogateParams,
    zero_tol: f64,
) -> (WeightDiagonal, WeightDiagonal) {
    let h = v.iter().map(|&x| params.h_weight(x, zero_tol)).collect();
    let f = v.iter().map(|&x| params.f_weight(x, zero_tol)).collect();
    (
        WeightDiagonal::new(h, WeightKind::H),
        WeightDiagonal::new(f, WeightKind::F),
    )
}

/// Nonincreasing rearrangement: magnitudes sorted in descending order.
pub fn rearrangement(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}
