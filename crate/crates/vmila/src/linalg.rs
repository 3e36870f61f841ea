//! Dense vector helpers, diagonal metrics and the linear-operator
//! abstraction shared by the solver and the imaging front end.
//!
//! Metrics are restricted to diagonal matrices: inversion is then exact and
//! O(n). Supporting a full symmetric positive definite metric would require a
//! linear solve per application and is out of scope here.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

/// Seed for the power-method starting vector, fixed so that norm estimates
/// (and therefore inner stepsizes) are reproducible run to run.
const POWER_METHOD_SEED: u64 = 0x9e3779b97f4a7c15;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    norm_sq(x).sqrt()
}

/// `a - b` componentwise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub: dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `x + lambda * d` componentwise.
pub fn add_scaled(x: &[f64], lambda: f64, d: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), d.len(), "add_scaled: dimension mismatch");
    x.iter().zip(d).map(|(a, b)| a + lambda * b).collect()
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric diagonal must be non-empty")]
    Empty,
    #[error("metric bound must be finite and >= 1, got {0}")]
    BadBound(f64),
    #[error("diagonal entry {index} = {value} lies outside [{lo}, {hi}]")]
    EntryOutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Diagonal symmetric positive definite metric with a certified spectral
/// bound: every entry lies in `[1/mu_bound, mu_bound]`.
#[derive(Debug, Clone)]
pub struct DiagonalMetric {
    diag: Vec<f64>,
    mu_bound: f64,
}

impl DiagonalMetric {
    pub fn identity(n: usize) -> Self {
        DiagonalMetric {
            diag: vec![1.0; n],
            mu_bound: 1.0,
        }
    }

    /// Builds a metric and certifies `mu_bound`; entries outside
    /// `[1/mu_bound, mu_bound]` are rejected.
    pub fn new(diag: Vec<f64>, mu_bound: f64) -> Result<Self, MetricError> {
        if diag.is_empty() {
            return Err(MetricError::Empty);
        }
        if !(mu_bound.is_finite() && mu_bound >= 1.0) {
            return Err(MetricError::BadBound(mu_bound));
        }
        let lo = 1.0 / mu_bound;
        for (index, &value) in diag.iter().enumerate() {
            if !(value.is_finite() && value >= lo && value <= mu_bound) {
                return Err(MetricError::EntryOutOfRange {
                    index,
                    value,
                    lo,
                    hi: mu_bound,
                });
            }
        }
        Ok(DiagonalMetric { diag, mu_bound })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mu_bound(&self) -> f64 {
        self.mu_bound
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `x^T D x`; zero exactly when `x = 0`.
    pub fn norm_sq(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "metric norm: dimension mismatch");
        self.diag.iter().zip(x).map(|(d, v)| d * v * v).sum()
    }

    /// `x^T D^{-1} x`.
    pub fn inverse_norm_sq(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "metric norm: dimension mismatch");
        self.diag.iter().zip(x).map(|(d, v)| v * v / d).sum()
    }

    /// `a^T D b`.
    pub fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "weighted dot: dimension mismatch");
        assert_eq!(b.len(), self.dim(), "weighted dot: dimension mismatch");
        self.diag
            .iter()
            .zip(a.iter().zip(b))
            .map(|(d, (x, y))| d * x * y)
            .sum()
    }

    /// `a^T D^{-1} b`.
    pub fn inverse_weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "weighted dot: dimension mismatch");
        assert_eq!(b.len(), self.dim(), "weighted dot: dimension mismatch");
        self.diag
            .iter()
            .zip(a.iter().zip(b))
            .map(|(d, (x, y))| x * y / d)
            .sum()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "metric apply: dimension mismatch");
        self.diag.iter().zip(x).map(|(d, v)| d * v).collect()
    }

    /// Componentwise `g_i / D_ii`; `D * result = g` up to roundoff.
    pub fn inverse_apply(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.dim(), "metric apply: dimension mismatch");
        self.diag.iter().zip(g).map(|(d, v)| v / d).collect()
    }

    /// Largest entry of `D^{-1}`, used to bound dual curvature.
    pub fn max_inverse_entry(&self) -> f64 {
        self.diag.iter().fold(0.0, |acc, &d| acc.max(1.0 / d))
    }
}

/// Abstract linear map `R^n -> R^m` with its adjoint.
///
/// Implementations must satisfy `<A x, v> = <x, A^T v>` for all `x`, `v`.
pub trait LinearOperator: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, v: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct IdentityOperator {
    n: usize,
}

impl IdentityOperator {
    pub fn new(n: usize) -> Self {
        IdentityOperator { n }
    }
}

impl LinearOperator for IdentityOperator {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        x.to_vec()
    }
    fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        v.to_vec()
    }
}

/// Dense row-major matrix, mainly for tests and small problems.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    rows: Vec<Vec<f64>>,
    n: usize,
}

impl DenseOperator {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n), "ragged matrix");
        DenseOperator { rows, n }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut rows = vec![vec![0.0; n]; n];
        for (i, &d) in diag.iter().enumerate() {
            rows[i][i] = d;
        }
        DenseOperator { rows, n }
    }
}

impl LinearOperator for DenseOperator {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.rows.len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, x)).collect()
    }
    fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows.len());
        let mut out = vec![0.0; self.n];
        for (r, &vi) in self.rows.iter().zip(v) {
            for (o, &rj) in out.iter_mut().zip(r) {
                *o += rj * vi;
            }
        }
        out
    }
}

/// Forward difference `(x_1 - x_0, ..., x_{n-1} - x_{n-2})`, an (n-1) x n map.
#[derive(Debug, Clone)]
pub struct FirstDifferenceOperator {
    n: usize,
}

impl FirstDifferenceOperator {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "difference operator needs n >= 2");
        FirstDifferenceOperator { n }
    }
}

impl LinearOperator for FirstDifferenceOperator {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.n - 1
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        x.windows(2).map(|w| w[1] - w[0]).collect()
    }
    fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n - 1);
        let mut out = vec![0.0; self.n];
        for (i, &vi) in v.iter().enumerate() {
            out[i] -= vi;
            out[i + 1] += vi;
        }
        out
    }
}

/// Power-method estimate of the spectral norm of `A`.
///
/// The estimate is nondecreasing in the iteration count and never exceeds the
/// true norm beyond roundoff, so callers that need an upper bound must apply
/// their own safety factor. A zero operator yields 0.
pub fn operator_norm_estimate(op: &dyn LinearOperator, iterations: usize) -> f64 {
    assert!(iterations >= 1, "need at least one power iteration");
    let n = op.domain_dim();
    if n == 0 {
        return 0.0;
    }
    let mut rng = StdRng::seed_from_u64(POWER_METHOD_SEED);
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nu = norm(&u);
    if nu == 0.0 {
        u[0] = 1.0;
    } else {
        u.iter_mut().for_each(|v| *v /= nu);
    }
    let mut estimate_sq = 0.0;
    for _ in 0..iterations {
        let w = op.adjoint(&op.apply(&u));
        let wn = norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        if (wn - estimate_sq).abs() <= 1e-15 * wn {
            estimate_sq = wn;
            break;
        }
        estimate_sq = wn;
        u = w.iter().map(|v| v / wn).collect();
    }
    estimate_sq.sqrt()
}
