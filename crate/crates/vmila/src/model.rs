//! Composite problem definition `f = f0 + g(A.)` and the surrogate
//! functions that drive both the inner dual solver and the line search.
//!
//! Infeasibility of the convex part is represented by a `+inf` function value
//! rather than an error, so the backtracking loop can reject infeasible trial
//! points by plain comparison.

use std::sync::OnceLock;

use thiserror::Error;

use crate::linalg::{self, DiagonalMetric, IdentityOperator, LinearOperator};

/// Power iterations used for the cached operator-norm estimate.
const OPERATOR_NORM_ITERATIONS: usize = 300;

/// Smooth part of the objective: value, gradient, and a predicate for the
/// open set on which it is differentiable.
pub trait SmoothTerm: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// True when the term is differentiable at `x`. The solver only ever
    /// evaluates inside the feasible set, which must be contained here.
    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }

    /// Positive per-coordinate weights for split-gradient metric scaling,
    /// when the term has a natural splitting. `None` selects the identity
    /// metric strategy.
    fn split_gradient_weights(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Convex part in composite form `f1(x) = g(A x)`, described through the
/// pieces the dual solver needs: the operator, `g`, its conjugate, the
/// resolvent of the conjugate, and the Euclidean projection onto
/// `dom f1`.
pub trait NonsmoothTerm: Send + Sync {
    fn operator(&self) -> &dyn LinearOperator;

    /// `g(u)`, possibly `+inf`.
    fn g_value(&self, u: &[f64]) -> f64;

    /// `g*(v)`, possibly `+inf`.
    fn g_conjugate_value(&self, v: &[f64]) -> f64;

    /// Resolvent (proximal operator) of `scale * g*` at `u`. The output must
    /// lie in `dom g*`.
    fn conjugate_resolvent(&self, u: &[f64], scale: f64) -> Vec<f64>;

    /// Euclidean projection onto `dom f1`; the identity when the domain is
    /// the whole space.
    fn feasible_project(&self, x: &[f64]) -> Vec<f64>;

    /// A constant below `f1` everywhere.
    fn lower_bound(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("surrogate steplength must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("surrogate damping must lie in [0, 1], got {0}")]
    BadGamma(f64),
    #[error("operator maps dimension {operator_n}, metric has dimension {metric_n}")]
    DimensionMismatch { operator_n: usize, metric_n: usize },
}

/// `min f0(x) + g(A x)` over `R^n`.
pub struct CompositeProblem {
    smooth: Box<dyn SmoothTerm>,
    nonsmooth: Box<dyn NonsmoothTerm>,
    n: usize,
    operator_norm: OnceLock<f64>,
}

impl CompositeProblem {
    pub fn new(smooth: Box<dyn SmoothTerm>, nonsmooth: Box<dyn NonsmoothTerm>) -> Self {
        let n = nonsmooth.operator().domain_dim();
        CompositeProblem {
            smooth,
            nonsmooth,
            n,
            operator_norm: OnceLock::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn smooth(&self) -> &dyn SmoothTerm {
        self.smooth.as_ref()
    }

    pub fn nonsmooth(&self) -> &dyn NonsmoothTerm {
        self.nonsmooth.as_ref()
    }

    /// `f(x) = f0(x) + g(A x)`; `+inf` exactly when `x` is infeasible.
    ///
    /// Panics if `f1(x)` is finite but the smooth term is undefined at `x`;
    /// that violates the standing requirement that the smooth domain contains
    /// the feasible set.
    pub fn eval_f(&self, x: &[f64]) -> f64 {
        let f1 = self.eval_f1(x);
        if f1 == f64::INFINITY {
            return f64::INFINITY;
        }
        assert!(
            self.smooth.in_domain(x),
            "smooth term undefined at a feasible point; the smooth domain must contain dom f1"
        );
        self.smooth.value(x) + f1
    }

    /// `f1(x) = g(A x)`.
    pub fn eval_f1(&self, x: &[f64]) -> f64 {
        let ax = self.nonsmooth.operator().apply(x);
        self.nonsmooth.g_value(&ax)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.eval_f1(x) < f64::INFINITY
    }

    pub fn value_f0(&self, x: &[f64]) -> f64 {
        self.smooth.value(x)
    }

    pub fn gradient_f0(&self, x: &[f64]) -> Vec<f64> {
        self.smooth.gradient(x)
    }

    pub fn feasible_project(&self, x: &[f64]) -> Vec<f64> {
        self.nonsmooth.feasible_project(x)
    }

    /// Cached power-method estimate of `||A||`, shared by all inner solves
    /// on this problem.
    pub fn operator_norm(&self) -> f64 {
        *self.operator_norm.get_or_init(|| {
            linalg::operator_norm_estimate(self.nonsmooth.operator(), OPERATOR_NORM_ITERATIONS)
        })
    }
}

/// Parameters of the scaled Euclidean distance `(1/2a) ||z - x||_D^2`
/// together with the damping factor used by the line-search decrease
/// measure.
#[derive(Debug, Clone)]
pub struct SurrogateParams {
    alpha: f64,
    metric: DiagonalMetric,
    gamma: f64,
}

impl SurrogateParams {
    pub fn new(alpha: f64, metric: DiagonalMetric, gamma: f64) -> Result<Self, ModelError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ModelError::BadAlpha(alpha));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(ModelError::BadGamma(gamma));
        }
        Ok(SurrogateParams {
            alpha,
            metric,
            gamma,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn metric(&self) -> &DiagonalMetric {
        &self.metric
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Conservative strong-convexity modulus of the distance term over the
    /// certified metric class: `1 / (alpha * mu_bound)`.
    pub fn convexity_modulus(&self) -> f64 {
        1.0 / (self.alpha * self.metric.mu_bound())
    }
}

/// `(1/2a) ||z - x||_D^2`; zero exactly when `z = x`.
pub fn scaled_distance(params: &SurrogateParams, z: &[f64], x: &[f64]) -> f64 {
    let diff = linalg::sub(z, x);
    params.metric().norm_sq(&diff) / (2.0 * params.alpha())
}

/// Forward point `z = x - alpha D^{-1} grad f0(x)`.
pub fn forward_point(problem: &CompositeProblem, params: &SurrogateParams, x: &[f64]) -> Vec<f64> {
    let grad = problem.gradient_f0(x);
    forward_point_from_gradient(params, x, &grad)
}

pub(crate) fn forward_point_from_gradient(
    params: &SurrogateParams,
    x: &[f64],
    grad: &[f64],
) -> Vec<f64> {
    let scaled = params.metric().inverse_apply(grad);
    linalg::add_scaled(x, -params.alpha(), &scaled)
}

/// Surrogate value
/// `grad f0(x)^T (z - x) + (1/2a)||z - x||_D^2 + f1(z) - f1(x)`.
///
/// `+inf` exactly when `z` is infeasible. Panics when `x` itself is
/// infeasible, since the surrogate is undefined there.
pub fn surrogate_value(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    z: &[f64],
    x: &[f64],
) -> f64 {
    surrogate_value_damped(problem, params, 1.0, z, x)
}

/// Surrogate with the distance term damped by `params.gamma()`; bounds the
/// plain surrogate from below and coincides with it at `gamma = 1`. Its value
/// at an inner-solver candidate is the line-search decrease measure.
pub fn damped_surrogate_value(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    z: &[f64],
    x: &[f64],
) -> f64 {
    surrogate_value_damped(problem, params, params.gamma(), z, x)
}

fn surrogate_value_damped(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    gamma: f64,
    z: &[f64],
    x: &[f64],
) -> f64 {
    let f1_x = problem.eval_f1(x);
    assert!(
        f1_x < f64::INFINITY,
        "surrogate undefined: base point is infeasible"
    );
    let f1_z = problem.eval_f1(z);
    if f1_z == f64::INFINITY {
        return f64::INFINITY;
    }
    let grad = problem.gradient_f0(x);
    let diff = linalg::sub(z, x);
    linalg::dot(&grad, &diff) + gamma * scaled_distance(params, z, x) + f1_z - f1_x
}

pub(crate) struct SurrogatePieces {
    pub grad: Vec<f64>,
    pub f1_x: f64,
}

impl SurrogatePieces {
    pub fn new(problem: &CompositeProblem, x: &[f64]) -> Self {
        let f1_x = problem.eval_f1(x);
        assert!(
            f1_x < f64::INFINITY,
            "surrogate undefined: base point is infeasible"
        );
        SurrogatePieces {
            grad: problem.gradient_f0(x),
            f1_x,
        }
    }

    /// Surrogate value at `z` given `f1(z)`, with the distance damped by
    /// `gamma`. Shared by the full and damped public entry points via the
    /// inner solver.
    pub fn value(
        &self,
        params: &SurrogateParams,
        gamma: f64,
        z: &[f64],
        x: &[f64],
        f1_z: f64,
    ) -> f64 {
        if f1_z == f64::INFINITY {
            return f64::INFINITY;
        }
        let diff = linalg::sub(z, x);
        linalg::dot(&self.grad, &diff) + gamma * scaled_distance(params, z, x) + f1_z - self.f1_x
    }
}

// ---------------------------------------------------------------------------
// Ready-made terms
// ---------------------------------------------------------------------------

/// `f0(x) = (1/2) sum_i w_i (x_i - c_i)^2`.
#[derive(Debug, Clone)]
pub struct DiagonalQuadratic {
    weights: Vec<f64>,
    center: Vec<f64>,
}

impl DiagonalQuadratic {
    pub fn new(weights: Vec<f64>, center: Vec<f64>) -> Self {
        assert_eq!(weights.len(), center.len());
        assert!(weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        DiagonalQuadratic { weights, center }
    }

    pub fn isotropic(weight: f64, center: Vec<f64>) -> Self {
        let weights = vec![weight; center.len()];
        Self::new(weights, center)
    }
}

impl SmoothTerm for DiagonalQuadratic {
    fn value(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.weights.len());
        0.5 * self
            .weights
            .iter()
            .zip(x.iter().zip(&self.center))
            .map(|(w, (xi, ci))| w * (xi - ci) * (xi - ci))
            .sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.weights.len());
        self.weights
            .iter()
            .zip(x.iter().zip(&self.center))
            .map(|(w, (xi, ci))| w * (xi - ci))
            .collect()
    }
}

/// `f0 = 0`.
#[derive(Debug, Clone)]
pub struct ZeroSmooth {
    n: usize,
}

impl ZeroSmooth {
    pub fn new(n: usize) -> Self {
        ZeroSmooth { n }
    }
}

impl SmoothTerm for ZeroSmooth {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        vec![0.0; self.n]
    }
}

/// `f1(x) = weight * ||x||_1`; `g = weight * ||.||_1` with `A = I`, so `g*`
/// is the indicator of the box `[-weight, weight]^n`.
#[derive(Debug)]
pub struct L1Term {
    op: IdentityOperator,
    weight: f64,
}

impl L1Term {
    pub fn new(n: usize, weight: f64) -> Self {
        assert!(weight > 0.0);
        L1Term {
            op: IdentityOperator::new(n),
            weight,
        }
    }
}

impl NonsmoothTerm for L1Term {
    fn operator(&self) -> &dyn LinearOperator {
        &self.op
    }
    fn g_value(&self, u: &[f64]) -> f64 {
        self.weight * u.iter().map(|v| v.abs()).sum::<f64>()
    }
    fn g_conjugate_value(&self, v: &[f64]) -> f64 {
        let slack = self.weight * (1.0 + 1e-12);
        if v.iter().all(|vi| vi.abs() <= slack) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn conjugate_resolvent(&self, u: &[f64], _scale: f64) -> Vec<f64> {
        u.iter()
            .map(|v| v.clamp(-self.weight, self.weight))
            .collect()
    }
    fn feasible_project(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `f1 = indicator of the nonnegative orthant`; `g* = indicator of v <= 0`.
#[derive(Debug)]
pub struct NonnegativityTerm {
    op: IdentityOperator,
}

impl NonnegativityTerm {
    pub fn new(n: usize) -> Self {
        NonnegativityTerm {
            op: IdentityOperator::new(n),
        }
    }
}

impl NonsmoothTerm for NonnegativityTerm {
    fn operator(&self) -> &dyn LinearOperator {
        &self.op
    }
    fn g_value(&self, u: &[f64]) -> f64 {
        if u.iter().all(|v| *v >= 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn g_conjugate_value(&self, v: &[f64]) -> f64 {
        if v.iter().all(|vi| *vi <= 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn conjugate_resolvent(&self, u: &[f64], _scale: f64) -> Vec<f64> {
        u.iter().map(|v| v.min(0.0)).collect()
    }
    fn feasible_project(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.max(0.0)).collect()
    }
}

/// `f1(x) = weight * ||x_{i+1} - x_i||_1`, a one-dimensional total-variation
/// penalty over the first-difference operator.
#[derive(Debug)]
pub struct DifferenceL1Term {
    op: crate::linalg::FirstDifferenceOperator,
    weight: f64,
}

impl DifferenceL1Term {
    pub fn new(n: usize, weight: f64) -> Self {
        assert!(weight > 0.0);
        DifferenceL1Term {
            op: crate::linalg::FirstDifferenceOperator::new(n),
            weight,
        }
    }
}

impl NonsmoothTerm for DifferenceL1Term {
    fn operator(&self) -> &dyn LinearOperator {
        &self.op
    }
    fn g_value(&self, u: &[f64]) -> f64 {
        self.weight * u.iter().map(|v| v.abs()).sum::<f64>()
    }
    fn g_conjugate_value(&self, v: &[f64]) -> f64 {
        let slack = self.weight * (1.0 + 1e-12);
        if v.iter().all(|vi| vi.abs() <= slack) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn conjugate_resolvent(&self, u: &[f64], _scale: f64) -> Vec<f64> {
        u.iter()
            .map(|v| v.clamp(-self.weight, self.weight))
            .collect()
    }
    fn feasible_project(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `f1 = 0`, realized as `g = 0` with `A = I`, so `dom g* = {0}` and the
/// dual subproblem is solved exactly after a single resolvent application.
#[derive(Debug)]
pub struct ZeroNonsmooth {
    op: IdentityOperator,
}

impl ZeroNonsmooth {
    pub fn new(n: usize) -> Self {
        ZeroNonsmooth {
            op: IdentityOperator::new(n),
        }
    }
}

impl NonsmoothTerm for ZeroNonsmooth {
    fn operator(&self) -> &dyn LinearOperator {
        &self.op
    }
    fn g_value(&self, _u: &[f64]) -> f64 {
        0.0
    }
    fn g_conjugate_value(&self, v: &[f64]) -> f64 {
        if v.iter().all(|vi| *vi == 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn conjugate_resolvent(&self, u: &[f64], _scale: f64) -> Vec<f64> {
        vec![0.0; u.len()]
    }
    fn feasible_project(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}
