//! The modified Armijo line search and the variable-metric inexact
//! line-search outer loop (VMILA), with steplength and metric selection
//! strategies and the inexactness schedules.

use std::collections::VecDeque;
use std::time::Instant;

use thiserror::Error;

use crate::inner::{solve_inner, InnerStatus, StoppingRule};
use crate::linalg::{self, DiagonalMetric};
use crate::model::{CompositeProblem, SurrogateParams};

/// Ratio `bb2/bb1` below which the alternation rule switches to the memory
/// of small steplengths.
const BB_ALTERNATION_THRESHOLD: f64 = 0.15;
/// Number of recent second-rule steplengths kept by the alternation memory.
const BB_MEMORY: usize = 3;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("line search called with nonnegative decrease measure {delta}")]
    InvalidDescent { delta: f64 },
    #[error("line search exceeded {max_backtracks} backtracks (last lambda {lambda})")]
    LineSearchFailed { max_backtracks: usize, lambda: f64 },
    #[error(
        "inner solver exhausted its budget at outer iteration {iteration} without producing \
         a descent direction (decrease measure {h_tilde})"
    )]
    NoDescentDirection {
        iteration: usize,
        h_tilde: f64,
        /// Iterate and trace up to the failing iteration, for callers that
        /// want the best value reached before the breakdown.
        partial: Box<Outcome>,
    },
    #[error("non-finite {what} at outer iteration {iteration}")]
    NonFinite { what: String, iteration: usize },
    #[error("split-gradient weight {index} is not positive: {value}")]
    NonpositiveWeight { index: usize, value: f64 },
}

/// Backtracking parameters of the modified Armijo rule.
#[derive(Debug, Clone)]
pub struct LineSearchParams {
    /// Step reduction factor in (0, 1).
    pub delta: f64,
    /// Sufficient-decrease fraction in (0, 1).
    pub beta: f64,
    /// Damping of the distance term inside the decrease measure, in [0, 1].
    pub gamma: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        // delta = 0.5, beta = 1e-4, gamma = 1: standard working values.
        LineSearchParams {
            delta: 0.5,
            beta: 1e-4,
            gamma: 1.0,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricStrategy {
    /// Always the identity metric.
    Identity,
    /// Diagonal split-gradient scaling derived from the current iterate,
    /// clipped to `[1/mu_k, mu_k]`; falls back to the identity when the
    /// smooth term exposes no weights.
    SplitGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteplengthStrategy {
    Fixed(f64),
    /// Metric-scaled Barzilai-Borwein pair with adaptive alternation.
    AdaptiveBB,
}

/// Inner-rule schedule across outer iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerRule {
    /// Fixed eta for every outer iteration.
    Eta(f64),
    /// `eps_k = c / k^p` with `p > 1`, a summable tolerance sequence.
    EpsSummable { c: f64, p: f64 },
    /// Gap tolerance proportional to the decrease measure of the candidate.
    EpsAdaptive { tau: f64 },
}

impl InnerRule {
    /// Stopping rule for outer iteration `k >= 1`.
    pub fn stopping_rule_for(&self, k: usize) -> StoppingRule {
        assert!(k >= 1, "outer iterations are 1-based");
        match *self {
            InnerRule::Eta(eta) => StoppingRule::Eta(eta),
            InnerRule::EpsSummable { c, p } => StoppingRule::EpsFixed(c / (k as f64).powf(p)),
            InnerRule::EpsAdaptive { tau } => StoppingRule::EpsAdaptive(tau),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Steplength used at the first iteration, before any curvature pair
    /// exists.
    pub alpha0: f64,
    pub metric_strategy: MetricStrategy,
    pub steplength: SteplengthStrategy,
    pub inner_rule: InnerRule,
    /// Constant `c` in the metric bound schedule `mu_k = sqrt(1 + c/k^2)`;
    /// any positive value keeps `mu_k^2 - 1` summable.
    pub mu_schedule_c: f64,
    pub linesearch: LineSearchParams,
    pub max_outer: usize,
    pub inner_max: usize,
    /// Stop once `|decrease measure| <= target_tolerance * (1 + |f|)`;
    /// zero disables the check and the solver runs a fixed budget.
    pub target_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha_min: 1e-5,
            alpha_max: 1e2,
            alpha0: 1.0,
            metric_strategy: MetricStrategy::SplitGradient,
            steplength: SteplengthStrategy::AdaptiveBB,
            inner_rule: InnerRule::Eta(1e-6),
            mu_schedule_c: 1e10,
            linesearch: LineSearchParams::default(),
            max_outer: 500,
            inner_max: 1500,
            target_tolerance: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let fail = |field: &str, message: String| {
            Err(SolverError::InvalidConfig {
                field: field.to_string(),
                message,
            })
        };
        if !(self.alpha_min > 0.0 && self.alpha_min.is_finite()) {
            return fail(
                "alpha_min",
                format!("must be positive, got {}", self.alpha_min),
            );
        }
        if !(self.alpha_max >= self.alpha_min && self.alpha_max.is_finite()) {
            return fail(
                "alpha_max",
                format!("must be >= alpha_min, got {}", self.alpha_max),
            );
        }
        if !(self.alpha0 >= self.alpha_min && self.alpha0 <= self.alpha_max) {
            return fail(
                "alpha0",
                format!("must lie in [alpha_min, alpha_max], got {}", self.alpha0),
            );
        }
        if let SteplengthStrategy::Fixed(a) = self.steplength {
            if !(a >= self.alpha_min && a <= self.alpha_max) {
                return fail(
                    "steplength",
                    format!("fixed value must lie in [alpha_min, alpha_max], got {a}"),
                );
            }
        }
        match self.inner_rule {
            InnerRule::Eta(eta) => {
                if !(eta > 0.0 && eta <= 1.0) {
                    return fail("eta", format!("must lie in (0, 1], got {eta}"));
                }
            }
            InnerRule::EpsSummable { c, p } => {
                if !(c > 0.0 && c.is_finite()) {
                    return fail("eps_c", format!("must be positive, got {c}"));
                }
                if !(p > 1.0 && p.is_finite()) {
                    return fail("eps_p", format!("must exceed 1 for summability, got {p}"));
                }
            }
            InnerRule::EpsAdaptive { tau } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return fail("tau", format!("must be positive, got {tau}"));
                }
            }
        }
        if !(self.mu_schedule_c > 0.0 && self.mu_schedule_c.is_finite()) {
            return fail(
                "mu_schedule_c",
                format!("must be positive, got {}", self.mu_schedule_c),
            );
        }
        let ls = &self.linesearch;
        if !(ls.delta > 0.0 && ls.delta < 1.0) {
            return fail("delta", format!("must lie in (0, 1), got {}", ls.delta));
        }
        if !(ls.beta > 0.0 && ls.beta < 1.0) {
            return fail("beta", format!("must lie in (0, 1), got {}", ls.beta));
        }
        if !(0.0..=1.0).contains(&ls.gamma) {
            return fail("gamma", format!("must lie in [0, 1], got {}", ls.gamma));
        }
        if ls.max_backtracks == 0 {
            return fail("max_backtracks", "must be at least 1".to_string());
        }
        if self.max_outer == 0 {
            return fail("max_outer", "must be at least 1".to_string());
        }
        if self.inner_max == 0 {
            return fail("inner_max", "must be at least 1".to_string());
        }
        if !(self.target_tolerance >= 0.0 && self.target_tolerance.is_finite()) {
            return fail(
                "target_tolerance",
                format!("must be nonnegative, got {}", self.target_tolerance),
            );
        }
        Ok(())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    /// 1-based outer iteration index.
    pub k: usize,
    /// Objective value after the step.
    pub f_value: f64,
    /// Decrease measure of the accepted candidate (negative).
    pub delta: f64,
    /// Accepted Armijo steplength in (0, 1].
    pub lambda: f64,
    pub backtracks: usize,
    pub inner_iterations: usize,
    /// The eta or epsilon the inner solve was run with (for adaptive rules,
    /// the certified epsilon at acceptance).
    pub eps_or_eta: f64,
    /// Wall time of the outer iteration, excluding I/O.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxOuter,
    /// The inner solver certified stationarity of the current iterate.
    Stationary,
    /// `|decrease measure|` fell below the target tolerance.
    DeltaTolerance,
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub records: Vec<IterateRecord>,
    pub f_initial: f64,
    pub termination: Termination,
    /// Whether the start point had to be projected onto the feasible set.
    pub projected_start: bool,
    /// Outer iterations whose inner solve ran out of budget but still
    /// produced a usable descent direction.
    pub inner_exhausted: usize,
}

impl IterateTrace {
    pub fn final_f(&self) -> f64 {
        self.records.last().map_or(self.f_initial, |r| r.f_value)
    }

    pub fn mean_inner_iterations(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records
            .iter()
            .map(|r| r.inner_iterations as f64)
            .sum::<f64>()
            / self.records.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub trace: IterateTrace,
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub lambda: f64,
    pub f_new: f64,
    pub backtracks: usize,
}

/// Modified Armijo backtracking: returns the largest `lambda` in
/// `{1, delta, delta^2, ...}` with
/// `f(x + lambda d) <= f(x) + beta * lambda * delta_measure`,
/// where `d = y_tilde - x` and `delta_measure` is the (negative) damped
/// surrogate value at `y_tilde`.
///
/// An infeasible trial value (`f = +inf`) counts as a failed test and
/// triggers a reduction.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail the descent test
pub fn armijo_search(
    problem: &CompositeProblem,
    x: &[f64],
    f_x: f64,
    y_tilde: &[f64],
    delta_measure: f64,
    params: &LineSearchParams,
) -> Result<LineSearchOutcome, SolverError> {
    if !(delta_measure < 0.0) {
        return Err(SolverError::InvalidDescent {
            delta: delta_measure,
        });
    }
    let d = linalg::sub(y_tilde, x);
    let mut lambda = 1.0;
    for backtracks in 0..=params.max_backtracks {
        let trial = linalg::add_scaled(x, lambda, &d);
        let f_trial = problem.eval_f(&trial);
        if f_trial <= f_x + params.beta * lambda * delta_measure {
            return Ok(LineSearchOutcome {
                lambda,
                f_new: f_trial,
                backtracks,
            });
        }
        lambda *= params.delta;
    }
    Err(SolverError::LineSearchFailed {
        max_backtracks: params.max_backtracks,
        lambda,
    })
}

/// Metric bound schedule `mu_k = sqrt(1 + c / k^2)`, `k >= 1`; the excess
/// `mu_k^2 - 1 = c/k^2` is summable, so the scaled metrics converge to the
/// identity as required for convergence in the convex case.
pub fn mu_for_iteration(k: usize, c: f64) -> f64 {
    assert!(k >= 1, "metric schedule is 1-based");
    (1.0 + c / (k as f64 * k as f64)).sqrt()
}

/// Split-gradient diagonal metric: entries are the inverse of
/// `clip(x_i / w_i, 1/mu_k, mu_k)` where `w` are the positive weights
/// exposed by the smooth term.
pub fn split_gradient_metric(
    x: &[f64],
    weights: &[f64],
    mu_k: f64,
) -> Result<DiagonalMetric, SolverError> {
    assert_eq!(x.len(), weights.len(), "weights dimension mismatch");
    let mut diag = Vec::with_capacity(x.len());
    for (index, (&xi, &wi)) in x.iter().zip(weights).enumerate() {
        if !(wi > 0.0 && wi.is_finite()) {
            return Err(SolverError::NonpositiveWeight { index, value: wi });
        }
        let ratio = (xi / wi).clamp(1.0 / mu_k, mu_k);
        // The reciprocal of a clamped value can overshoot the bound by one
        // ulp; clamp again so the certificate holds exactly.
        diag.push((1.0 / ratio).clamp(1.0 / mu_k, mu_k));
    }
    Ok(DiagonalMetric::new(diag, mu_k).expect("clipped entries are certified by construction"))
}

/// Metric for outer iteration `k` under the configured strategy.
pub fn metric_for_iteration(
    strategy: MetricStrategy,
    problem: &CompositeProblem,
    x: &[f64],
    k: usize,
    mu_schedule_c: f64,
) -> Result<DiagonalMetric, SolverError> {
    match strategy {
        MetricStrategy::Identity => Ok(DiagonalMetric::identity(problem.dimension())),
        MetricStrategy::SplitGradient => match problem.smooth().split_gradient_weights() {
            Some(weights) => {
                let mu_k = mu_for_iteration(k, mu_schedule_c);
                split_gradient_metric(x, &weights, mu_k)
            }
            None => Ok(DiagonalMetric::identity(problem.dimension())),
        },
    }
}

/// Curvature-pair state for the metric-scaled Barzilai-Borwein rule.
#[derive(Debug, Default)]
pub struct SteplengthState {
    prev_x: Option<Vec<f64>>,
    prev_grad: Option<Vec<f64>>,
    recent_bb2: VecDeque<f64>,
}

impl SteplengthState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the pair base for the next iteration.
    pub fn push_pair_base(&mut self, x: &[f64], grad: &[f64]) {
        self.prev_x = Some(x.to_vec());
        self.prev_grad = Some(grad.to_vec());
    }

    /// Steplength for the current iteration given the fresh gradient.
    ///
    /// The two scaled Barzilai-Borwein values are
    /// `bb1 = s^T D D s / s^T D w` and `bb2 = s^T D^{-1} w / w^T D^{-2} w`
    /// with `s = x - x_prev`, `w = grad - grad_prev`. Nonpositive curvature
    /// falls back to `alpha_max`. When `bb2/bb1` drops below 0.15 the rule
    /// returns the smallest of the recent `bb2` values, otherwise `bb1`;
    /// the result is clipped to `[alpha_min, alpha_max]`.
    #[allow(clippy::too_many_arguments)]
    pub fn next_alpha(
        &mut self,
        strategy: SteplengthStrategy,
        x: &[f64],
        grad: &[f64],
        metric: &DiagonalMetric,
        alpha_min: f64,
        alpha_max: f64,
        alpha0: f64,
    ) -> f64 {
        match strategy {
            SteplengthStrategy::Fixed(a) => a,
            SteplengthStrategy::AdaptiveBB => {
                let (prev_x, prev_grad) = match (&self.prev_x, &self.prev_grad) {
                    (Some(px), Some(pg)) => (px, pg),
                    _ => return alpha0.clamp(alpha_min, alpha_max),
                };
                let s = linalg::sub(x, prev_x);
                let w = linalg::sub(grad, prev_grad);
                if linalg::norm_sq(&s) == 0.0 {
                    return alpha0.clamp(alpha_min, alpha_max);
                }
                let ds = metric.apply(&s);
                let bb1_num = linalg::norm_sq(&ds);
                let bb1_den = metric.weighted_dot(&s, &w);
                let bb2_num = metric.inverse_weighted_dot(&s, &w);
                let inv_w = metric.inverse_apply(&w);
                let bb2_den = linalg::norm_sq(&inv_w);

                if bb1_den <= 0.0 {
                    // Nonpositive curvature along the pair.
                    return alpha_max;
                }
                let bb1 = (bb1_num / bb1_den).clamp(alpha_min, alpha_max);
                if bb2_den <= 0.0 || bb2_num <= 0.0 {
                    return bb1;
                }
                let bb2 = (bb2_num / bb2_den).clamp(alpha_min, alpha_max);
                if self.recent_bb2.len() == BB_MEMORY {
                    self.recent_bb2.pop_front();
                }
                self.recent_bb2.push_back(bb2);
                if bb2 / bb1 < BB_ALTERNATION_THRESHOLD {
                    self.recent_bb2
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min)
                        .clamp(alpha_min, alpha_max)
                } else {
                    bb1
                }
            }
        }
    }
}

/// Runs the variable-metric inexact line-search loop from `x0`.
///
/// Per iteration: select `alpha_k` and `D_k`, approximately minimize the
/// surrogate through the dual solver (warm started from the previous dual
/// solution), backtrack along the resulting direction with the Armijo rule,
/// and step. Stops on certified stationarity, on the decrease-measure
/// tolerance, or at the iteration budget.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN decrease measures are hard errors
pub fn minimize(
    problem: &CompositeProblem,
    config: &SolverConfig,
    x0: &[f64],
) -> Result<Outcome, SolverError> {
    config.validate()?;
    assert_eq!(x0.len(), problem.dimension(), "start point dimension");

    let projected_start = !problem.is_feasible(x0);
    let mut x = if projected_start {
        problem.feasible_project(x0)
    } else {
        x0.to_vec()
    };

    let f_initial = problem.eval_f(&x);
    if !f_initial.is_finite() {
        return Err(SolverError::NonFinite {
            what: "objective at start point".to_string(),
            iteration: 0,
        });
    }

    let mut trace = IterateTrace {
        records: Vec::with_capacity(config.max_outer),
        f_initial,
        termination: Termination::MaxOuter,
        projected_start,
        inner_exhausted: 0,
    };

    let mut f_x = f_initial;
    let mut warm: Option<Vec<f64>> = None;
    let mut steplength = SteplengthState::new();

    for k in 1..=config.max_outer {
        let started = Instant::now();

        let grad = problem.gradient_f0(&x);
        if !linalg::all_finite(&grad) {
            return Err(SolverError::NonFinite {
                what: "gradient".to_string(),
                iteration: k,
            });
        }

        let metric =
            metric_for_iteration(config.metric_strategy, problem, &x, k, config.mu_schedule_c)?;
        let alpha = steplength.next_alpha(
            config.steplength,
            &x,
            &grad,
            &metric,
            config.alpha_min,
            config.alpha_max,
            config.alpha0,
        );
        steplength.push_pair_base(&x, &grad);

        let params = SurrogateParams::new(alpha, metric, config.linesearch.gamma)
            .expect("validated configuration yields valid surrogate parameters");
        let rule = config.inner_rule.stopping_rule_for(k);
        let result = solve_inner(
            problem,
            &params,
            &x,
            rule,
            config.inner_max,
            warm.as_deref(),
        );

        match result.status {
            InnerStatus::ExactStationary => {
                trace.termination = Termination::Stationary;
                return Ok(Outcome { x, trace });
            }
            InnerStatus::MaxIterations => {
                if !(result.h_tilde_value < 0.0) {
                    return Err(SolverError::NoDescentDirection {
                        iteration: k,
                        h_tilde: result.h_tilde_value,
                        partial: Box::new(Outcome { x, trace }),
                    });
                }
                trace.inner_exhausted += 1;
            }
            InnerStatus::Converged => {}
        }

        let delta_measure = result.h_tilde_value;
        if !(delta_measure < 0.0) {
            // A converged candidate with vanishing decrease measure is a
            // stationarity certificate up to the inner tolerances.
            trace.termination = Termination::Stationary;
            return Ok(Outcome { x, trace });
        }

        let search = armijo_search(
            problem,
            &x,
            f_x,
            &result.y_tilde,
            delta_measure,
            &config.linesearch,
        )?;

        let d = linalg::sub(&result.y_tilde, &x);
        x = linalg::add_scaled(&x, search.lambda, &d);
        f_x = search.f_new;
        if !f_x.is_finite() {
            return Err(SolverError::NonFinite {
                what: "objective".to_string(),
                iteration: k,
            });
        }
        let eps_or_eta = match rule {
            StoppingRule::Eta(eta) => eta,
            StoppingRule::EpsFixed(eps) => eps,
            StoppingRule::EpsAdaptive(tau) => -tau * delta_measure,
        };
        warm = Some(result.v);

        trace.records.push(IterateRecord {
            k,
            f_value: f_x,
            delta: delta_measure,
            lambda: search.lambda,
            backtracks: search.backtracks,
            inner_iterations: result.inner_iterations,
            eps_or_eta,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        if config.target_tolerance > 0.0
            && delta_measure.abs() <= config.target_tolerance * (1.0 + f_x.abs())
        {
            trace.termination = Termination::DeltaTolerance;
            return Ok(Outcome { x, trace });
        }
    }

    Ok(Outcome { x, trace })
}
