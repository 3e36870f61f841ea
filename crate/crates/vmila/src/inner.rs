//! Inexact evaluation of the scaled proximal operator through an accelerated
//! method on its dual, with implementable stopping rules.
//!
//! For `f1 = g(A.)` and the scaled Euclidean distance, minimizing the
//! surrogate `h(., x)` is equivalent to maximizing a concave dual in
//! `v in R^m`. Every dual iterate yields a primal candidate
//! `y(v) = z - alpha D^{-1} A^T v` and the pair `(h(y), Psi(v))` sandwiches
//! the optimal surrogate value, so the accuracy of a candidate can be
//! certified without knowing the exact proximal point:
//!
//! - eta rules accept once `h(y) <= eta * Psi(v)` (both sides negative);
//! - epsilon rules accept once the primal-dual gap `h(y) - Psi(v)` falls
//!   below a tolerance and the decrease measure is strictly negative.
//!
//! The dual is driven by FISTA with the slower-growing inertia sequence
//! `t_l = (l + a - 1)/2` (Chambolle-Dossal variant), which also makes the
//! dual iterates converge, so warm starts across outer iterations are sound.

use crate::linalg;
use crate::model::{CompositeProblem, SurrogateParams, SurrogatePieces};

/// Default inertia constant `a` in `t_l = (l + a - 1)/2`.
pub const DEFAULT_EXTRAPOLATION_A: f64 = 2.1;

/// Safety factor applied to the dual curvature bound; the power-method
/// estimate of `||A||` can only under-estimate, so the stepsize must not sit
/// exactly at `1/L`.
const DUAL_CURVATURE_SAFETY: f64 = 1.05;

/// Relative threshold under which a candidate is declared exactly
/// stationary (decrease measure and gap both numerically zero).
const STATIONARY_REL_TOL: f64 = 1e-14;

/// Acceptance test for the inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Accept when `h(y) <= eta * Psi(v)`, `eta in (0, 1]`. Values close to
    /// 1 demand near-exact proximal points; small values are loose.
    Eta(f64),
    /// Accept when the gap at the (feasible) dual-primal candidate is at
    /// most `tau * (-decrease measure)`, `tau > 0`.
    EpsAdaptive(f64),
    /// Accept when the gap at the (feasible) dual-primal candidate is at
    /// most a fixed `eps >= 0`.
    EpsFixed(f64),
}

impl StoppingRule {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            StoppingRule::Eta(eta) if !(eta > 0.0 && eta <= 1.0) => {
                Err(format!("eta must lie in (0, 1], got {eta}"))
            }
            StoppingRule::EpsAdaptive(tau) if !(tau > 0.0 && tau.is_finite()) => {
                Err(format!("tau must be positive, got {tau}"))
            }
            StoppingRule::EpsFixed(eps) if !(eps >= 0.0 && eps.is_finite()) => {
                Err(format!("eps must be nonnegative, got {eps}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    /// The stopping rule accepted a candidate.
    Converged,
    /// The iteration budget ran out; the caller decides whether the last
    /// candidate is still usable (its decrease measure must be negative).
    MaxIterations,
    /// The base point is stationary up to machine precision.
    ExactStationary,
}

/// Accepted inexact proximal point together with its dual certificate.
#[derive(Debug, Clone)]
pub struct InnerResult {
    /// Feasible primal candidate.
    pub y_tilde: Vec<f64>,
    /// Dual vector that certifies it; reused to warm start the next solve.
    pub v: Vec<f64>,
    /// Surrogate value `h(y_tilde, x)`.
    pub h_value: f64,
    /// Dual value `Psi(v, x)`.
    pub psi_value: f64,
    /// `h_value - psi_value`, nonnegative up to roundoff.
    pub gap: f64,
    /// Damped surrogate value at `y_tilde`; the line-search decrease measure.
    pub h_tilde_value: f64,
    pub inner_iterations: usize,
    pub status: InnerStatus,
}

/// State of the accelerated dual iteration.
#[derive(Debug, Clone)]
pub struct DualState {
    pub v: Vec<f64>,
    pub v_prev: Vec<f64>,
    /// 1-based iteration counter.
    pub l: usize,
    /// Inertia constant, must exceed 2.
    pub a_param: f64,
}

impl DualState {
    pub fn new(m: usize, a_param: f64, warm_start: Option<&[f64]>) -> Self {
        assert!(a_param > 2.0, "inertia constant must exceed 2");
        let v = match warm_start {
            Some(w) => {
                assert_eq!(w.len(), m, "warm start has wrong dual dimension");
                w.to_vec()
            }
            None => vec![0.0; m],
        };
        DualState {
            v_prev: v.clone(),
            v,
            l: 1,
            a_param,
        }
    }
}

/// `t_l = (l + a - 1) / 2`.
pub fn inertia_t(l: usize, a_param: f64) -> f64 {
    (l as f64 + a_param - 1.0) / 2.0
}

/// Precomputed pieces of one proximal subproblem: everything that stays
/// fixed while the dual iteration runs.
pub struct DualSubproblem<'a> {
    problem: &'a CompositeProblem,
    params: &'a SurrogateParams,
    x: &'a [f64],
    pieces: SurrogatePieces,
    z: Vec<f64>,
    /// `-f1(x) - (alpha/2) ||grad f0(x)||^2_{D^{-1}}`.
    fixed_term: f64,
    lipschitz: f64,
}

impl<'a> DualSubproblem<'a> {
    pub fn new(problem: &'a CompositeProblem, params: &'a SurrogateParams, x: &'a [f64]) -> Self {
        let pieces = SurrogatePieces::new(problem, x);
        let z = crate::model::forward_point_from_gradient(params, x, &pieces.grad);
        let alpha = params.alpha();
        let fixed_term = -pieces.f1_x - 0.5 * alpha * params.metric().inverse_norm_sq(&pieces.grad);
        let norm_a = problem.operator_norm();
        let lipschitz =
            (DUAL_CURVATURE_SAFETY * alpha * norm_a * norm_a * params.metric().max_inverse_entry())
                .max(1e-30);
        DualSubproblem {
            problem,
            params,
            x,
            pieces,
            z,
            fixed_term,
            lipschitz,
        }
    }

    pub fn forward_point(&self) -> &[f64] {
        &self.z
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `y(v) = z - alpha D^{-1} A^T v`.
    pub fn primal(&self, v: &[f64]) -> Vec<f64> {
        let atv = self.problem.nonsmooth().operator().adjoint(v);
        self.primal_from_adjoint(&atv)
    }

    pub fn primal_from_adjoint(&self, atv: &[f64]) -> Vec<f64> {
        let scaled = self.params.metric().inverse_apply(atv);
        linalg::add_scaled(&self.z, -self.params.alpha(), &scaled)
    }

    /// `Psi(v) = z^T A^T v - (alpha/2)||A^T v||^2_{D^{-1}} - g*(v) + fixed`.
    pub fn dual_value(&self, v: &[f64]) -> f64 {
        let atv = self.problem.nonsmooth().operator().adjoint(v);
        self.dual_value_from_adjoint(v, &atv)
    }

    pub fn dual_value_from_adjoint(&self, v: &[f64], atv: &[f64]) -> f64 {
        let g_star = self.problem.nonsmooth().g_conjugate_value(v);
        if g_star == f64::INFINITY {
            return f64::NEG_INFINITY;
        }
        let alpha = self.params.alpha();
        linalg::dot(&self.z, atv) - 0.5 * alpha * self.params.metric().inverse_norm_sq(atv) - g_star
            + self.fixed_term
    }

    /// Surrogate value at a candidate, with the distance damped by `gamma`.
    pub fn surrogate_at(&self, gamma: f64, candidate: &[f64]) -> f64 {
        let f1_cand = self.problem.eval_f1(candidate);
        self.pieces
            .value(self.params, gamma, candidate, self.x, f1_cand)
    }

    /// One accelerated step on the dual: extrapolate, take a gradient step
    /// on the smooth part with stepsize `1/L`, apply the conjugate
    /// resolvent, advance the counter.
    pub fn step(&self, state: &DualState) -> DualState {
        let t_l = inertia_t(state.l, state.a_param);
        let t_next = inertia_t(state.l + 1, state.a_param);
        let beta = (t_l - 1.0) / t_next;
        let w: Vec<f64> = state
            .v
            .iter()
            .zip(&state.v_prev)
            .map(|(v, vp)| v + beta * (v - vp))
            .collect();
        // grad of the smooth dual part at w is -A y(w)
        let y_w = self.primal(&w);
        let ay = self.problem.nonsmooth().operator().apply(&y_w);
        let step = 1.0 / self.lipschitz;
        let u = linalg::add_scaled(&w, step, &ay);
        let v_new = self.problem.nonsmooth().conjugate_resolvent(&u, step);
        DualState {
            v: v_new,
            v_prev: state.v.clone(),
            l: state.l + 1,
            a_param: state.a_param,
        }
    }
}

/// `y(v) = z - alpha D^{-1} A^T v` with `z` the forward point at `x`.
pub fn primal_from_dual(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    x: &[f64],
    v: &[f64],
) -> Vec<f64> {
    DualSubproblem::new(problem, params, x).primal(v)
}

/// Dual objective `Psi(v, x)`; `-inf` exactly when `v` lies outside
/// `dom g*`.
pub fn dual_value(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    x: &[f64],
    v: &[f64],
) -> f64 {
    DualSubproblem::new(problem, params, x).dual_value(v)
}

/// Primal-dual value
/// `F(y, v, x) = (1/2a)||y - z||_D^2 + y^T A^T v - g*(v) - f1(x)
///  - (a/2)||grad f0(x)||^2_{D^{-1}}`,
/// sandwiched between `h(y, x)` and `Psi(v, x)` for feasible arguments.
pub fn primal_dual_value(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    y: &[f64],
    v: &[f64],
    x: &[f64],
) -> f64 {
    let sub = DualSubproblem::new(problem, params, x);
    let g_star = problem.nonsmooth().g_conjugate_value(v);
    if g_star == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    let atv = problem.nonsmooth().operator().adjoint(v);
    let diff = linalg::sub(y, sub.forward_point());
    params.metric().norm_sq(&diff) / (2.0 * params.alpha()) + linalg::dot(y, &atv) - g_star
        + sub.fixed_term
}

/// Primal-dual gap `h(y, x) - Psi(v, x) >= 0` (up to roundoff) for `y` in
/// the feasible set and `v` in `dom g*`.
pub fn duality_gap(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    y: &[f64],
    v: &[f64],
    x: &[f64],
) -> f64 {
    let sub = DualSubproblem::new(problem, params, x);
    sub.surrogate_at(1.0, y) - sub.dual_value(v)
}

/// One accelerated dual step as a standalone operation. Rebuilds the
/// subproblem context (one gradient evaluation); loops should construct a
/// [`DualSubproblem`] once instead.
pub fn fista_dual_step(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    x: &[f64],
    state: &DualState,
) -> DualState {
    DualSubproblem::new(problem, params, x).step(state)
}

/// Runs the accelerated dual iteration until `rule` accepts a candidate,
/// the base point proves stationary, or the budget runs out.
///
/// Every candidate is the projection of the dual-primal point onto the
/// feasible set, so accepted points always have finite objective values.
/// Epsilon rules additionally require the unprojected point to be feasible
/// (projection and candidate coincide), which is what makes the gap bound a
/// valid approximation certificate at the stated constants.
pub fn solve_inner(
    problem: &CompositeProblem,
    params: &SurrogateParams,
    x: &[f64],
    rule: StoppingRule,
    max_iter: usize,
    warm_start: Option<&[f64]>,
) -> InnerResult {
    assert!(max_iter >= 1, "need at least one inner iteration");
    if let Err(msg) = rule.validate() {
        panic!("invalid stopping rule: {msg}");
    }
    let sub = DualSubproblem::new(problem, params, x);
    let m = problem.nonsmooth().operator().range_dim();
    let mut state = DualState::new(m, DEFAULT_EXTRAPOLATION_A, warm_start);

    let f_x = problem.value_f0(x) + sub.pieces.f1_x;
    let stationary_tol = STATIONARY_REL_TOL * (1.0 + f_x.abs());
    let gamma = params.gamma();

    let mut last: Option<InnerResult> = None;
    for iteration in 1..=max_iter {
        state = sub.step(&state);
        let atv = problem.nonsmooth().operator().adjoint(&state.v);
        let y_raw = sub.primal_from_adjoint(&atv);
        let y_bar = problem.feasible_project(&y_raw);
        let f1_bar = problem.eval_f1(&y_bar);
        let h_bar = sub.pieces.value(params, 1.0, &y_bar, x, f1_bar);
        let h_tilde_bar = sub.pieces.value(params, gamma, &y_bar, x, f1_bar);
        let psi = sub.dual_value_from_adjoint(&state.v, &atv);
        let gap = h_bar - psi;
        debug_assert!(
            gap >= -1e-10 * (1.0 + h_bar.abs() + psi.abs()),
            "duality sandwich violated: h = {h_bar}, psi = {psi}"
        );

        if h_tilde_bar.abs() <= stationary_tol && gap <= stationary_tol {
            return InnerResult {
                y_tilde: y_bar,
                v: state.v,
                h_value: h_bar,
                psi_value: psi,
                gap,
                h_tilde_value: h_tilde_bar,
                inner_iterations: iteration,
                status: InnerStatus::ExactStationary,
            };
        }

        let accepted = match rule {
            StoppingRule::Eta(eta) => h_bar <= eta * psi,
            StoppingRule::EpsFixed(eps) => y_raw == y_bar && gap <= eps && h_tilde_bar < 0.0,
            StoppingRule::EpsAdaptive(tau) => {
                y_raw == y_bar && gap <= -tau * h_tilde_bar && h_tilde_bar < 0.0
            }
        };

        let result = InnerResult {
            y_tilde: y_bar,
            v: state.v.clone(),
            h_value: h_bar,
            psi_value: psi,
            gap,
            h_tilde_value: h_tilde_bar,
            inner_iterations: iteration,
            status: InnerStatus::Converged,
        };
        if accepted {
            return result;
        }
        last = Some(result);
    }

    let mut result = last.expect("at least one inner iteration ran");
    result.status = InnerStatus::MaxIterations;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, sub as vsub, DiagonalMetric};
    use crate::model::{
        surrogate_value, CompositeProblem, DiagonalQuadratic, DifferenceL1Term, L1Term,
        NonnegativityTerm, ZeroNonsmooth,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn lasso(n: usize, center: Vec<f64>, weight: f64) -> CompositeProblem {
        CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(1.0, center)),
            Box::new(L1Term::new(n, weight)),
        )
    }

    fn unit_params(n: usize) -> SurrogateParams {
        SurrogateParams::new(1.0, DiagonalMetric::identity(n), 1.0).unwrap()
    }

    #[test]
    fn inertia_matches_hand_value() {
        assert!((inertia_t(1, 2.1) - 1.05).abs() < 1e-15);
        assert!((inertia_t(2, 2.1) - 1.55).abs() < 1e-15);
    }

    #[test]
    fn primal_from_zero_dual_is_forward_point() {
        let p = lasso(3, vec![1.0, -2.0, 0.5], 0.3);
        let params = unit_params(3);
        let x = [0.2, 0.4, -0.1];
        let y = primal_from_dual(&p, &params, &x, &[0.0, 0.0, 0.0]);
        let sub = DualSubproblem::new(&p, &params, &x);
        assert_eq!(y, sub.forward_point());
    }

    #[test]
    fn primal_hand_case_zero_gradient() {
        // A = I, D = I, alpha = 1, grad f0(x) = 0, v = x  =>  y = 0.
        let x = vec![0.7, -1.3];
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(1.0, x.clone())),
            Box::new(L1Term::new(2, 1.0)),
        );
        let params = unit_params(2);
        let y = primal_from_dual(&p, &params, &x, &x);
        assert!(norm(&y) < 1e-15);
    }

    #[test]
    fn primal_dual_rearrangement_identity() {
        // A^T v = D (z - y)/alpha after the call.
        let p = lasso(4, vec![0.5, 0.0, -1.0, 2.0], 0.4);
        let metric = DiagonalMetric::new(vec![0.5, 1.0, 2.0, 1.5], 2.0).unwrap();
        let params = SurrogateParams::new(1.7, metric, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let sub = DualSubproblem::new(&p, &params, &x);
        let y = sub.primal(&v);
        let lhs = p.nonsmooth().operator().adjoint(&v);
        let rhs: Vec<f64> = params
            .metric()
            .apply(&vsub(sub.forward_point(), &y))
            .iter()
            .map(|t| t / params.alpha())
            .collect();
        assert!(norm(&vsub(&lhs, &rhs)) < 1e-12);
    }

    #[test]
    fn weak_duality_on_samples() {
        let p = lasso(3, vec![1.0, 0.0, -1.0], 0.5);
        let params = unit_params(3);
        let mut rng = StdRng::seed_from_u64(2);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..100 {
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let h = surrogate_value(&p, &params, &y, &x);
            let psi = dual_value(&p, &params, &x, &v);
            assert!(psi <= h + 1e-10 * (1.0 + h.abs()));
        }
    }

    #[test]
    fn trivial_dual_attains_surrogate_minimum() {
        // f1 = 0: dom g* = {0} and Psi(0, x) = h(z, x).
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(2.0, vec![3.0])),
            Box::new(ZeroNonsmooth::new(1)),
        );
        let params = unit_params(1);
        let x = [1.0];
        let sub = DualSubproblem::new(&p, &params, &x);
        let z = sub.forward_point().to_vec();
        let psi = sub.dual_value(&[0.0]);
        let h = surrogate_value(&p, &params, &z, &x);
        assert!((psi - h).abs() < 1e-12 * (1.0 + h.abs()));
    }

    #[test]
    fn dual_outside_domain_is_minus_infinity() {
        let p = lasso(2, vec![0.0, 0.0], 0.5);
        let params = unit_params(2);
        let psi = dual_value(&p, &params, &[0.1, 0.2], &[0.9, 0.0]);
        assert_eq!(psi, f64::NEG_INFINITY);
    }

    #[test]
    fn primal_dual_sandwich() {
        let p = lasso(3, vec![0.3, -0.7, 1.1], 0.6);
        let params = unit_params(3);
        let mut rng = StdRng::seed_from_u64(4);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..100 {
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let h = surrogate_value(&p, &params, &y, &x);
            let f = primal_dual_value(&p, &params, &y, &v, &x);
            let psi = dual_value(&p, &params, &x, &v);
            let slack = 1e-10 * (1.0 + h.abs() + psi.abs());
            assert!(h >= f - slack);
            assert!(f >= psi - slack);
        }
    }

    #[test]
    fn primal_dual_grid_maximization_recovers_surrogate() {
        // Scalar |.|: F(y, ., x) is linear in v on [-w, w], so a grid that
        // contains the endpoints attains max_v F = h(y, x) exactly.
        let p = lasso(1, vec![2.0], 1.0);
        let params = unit_params(1);
        let x = [0.5];
        for y in [-1.5, -0.2, 0.0, 0.4, 2.0] {
            let h = surrogate_value(&p, &params, &[y], &x);
            let mut best = f64::NEG_INFINITY;
            for i in 0..=400 {
                let v = -1.0 + i as f64 * (2.0 / 400.0);
                best = best.max(primal_dual_value(&p, &params, &[y], &[v], &x));
            }
            assert!((best - h).abs() < 1e-12 * (1.0 + h.abs()));
        }
    }

    #[test]
    fn primal_dual_stationary_in_y_at_dual_primal_point() {
        // The minimizer of F(., v, x) is the dual-primal map; check the
        // finite-difference gradient in y vanishes there.
        let p = lasso(2, vec![1.0, -1.0], 0.5);
        let metric = DiagonalMetric::new(vec![1.5, 0.8], 2.0).unwrap();
        let params = SurrogateParams::new(0.9, metric, 1.0).unwrap();
        let x = [0.3, 0.6];
        let v = [0.25, -0.4];
        let y = primal_from_dual(&p, &params, &x, &v);
        let h = 1e-6;
        for i in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            let fd = (primal_dual_value(&p, &params, &yp, &v, &x)
                - primal_dual_value(&p, &params, &ym, &v, &x))
                / (2.0 * h);
            assert!(fd.abs() < 1e-6, "coordinate {i} derivative {fd}");
        }
    }

    #[test]
    fn gap_zero_at_trivial_saddle() {
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(2.0, vec![3.0])),
            Box::new(ZeroNonsmooth::new(1)),
        );
        let params = unit_params(1);
        let x = [1.0];
        let z = DualSubproblem::new(&p, &params, &x)
            .forward_point()
            .to_vec();
        let g = duality_gap(&p, &params, &z, &[0.0], &x);
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn gap_dominates_suboptimality() {
        // gap(y, v) >= h(y) - h(y*) >= 0, with y* from the closed-form
        // soft threshold.
        let p = lasso(1, vec![3.0], 1.0);
        let params = unit_params(1);
        let x = [1.0];
        // z = x - (x - 3) = 3, prox = soft(3, 1) = 2.
        let y_star = [2.0];
        let h_star = surrogate_value(&p, &params, &y_star, &x);
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..200 {
            let y = [rng.gen_range(-1.0..4.0)];
            let v = [rng.gen_range(-1.0..1.0)];
            let g = duality_gap(&p, &params, &y, &v, &x);
            let subopt = surrogate_value(&p, &params, &y, &x) - h_star;
            assert!(subopt >= -1e-12);
            assert!(g >= subopt - 1e-10 * (1.0 + subopt.abs()));
        }
    }

    #[test]
    fn gap_certifies_approximate_subgradient() {
        // If gap(y(v), v) <= eps then D(z - y)/alpha is an eps-subgradient
        // of f1 at y: f1(u) >= f1(y) + w^T (u - y) - eps for all u.
        let p = lasso(2, vec![0.8, -0.3], 0.7);
        let metric = DiagonalMetric::new(vec![1.2, 0.9], 1.5).unwrap();
        let params = SurrogateParams::new(1.3, metric, 1.0).unwrap();
        let x = [0.1, 0.4];
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.7..0.7)).collect();
            let sub = DualSubproblem::new(&p, &params, &x);
            let y = sub.primal(&v);
            let eps = sub.surrogate_at(1.0, &y) - sub.dual_value(&v);
            assert!(eps >= -1e-12);
            let w: Vec<f64> = params
                .metric()
                .apply(&vsub(sub.forward_point(), &y))
                .iter()
                .map(|t| t / params.alpha())
                .collect();
            let f1_y = p.eval_f1(&y);
            for _ in 0..50 {
                let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let lhs = p.eval_f1(&u);
                let rhs = f1_y + linalg::dot(&w, &vsub(&u, &y)) - eps;
                assert!(lhs >= rhs - 1e-10 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn first_extrapolation_keeps_equal_states() {
        let p = lasso(2, vec![1.0, 1.0], 0.5);
        let params = unit_params(2);
        let x = [0.2, -0.2];
        let sub = DualSubproblem::new(&p, &params, &x);
        let warm = vec![0.3, -0.1];
        let state = DualState::new(2, 2.1, Some(&warm));
        let zero_momentum = DualState {
            v: warm.clone(),
            v_prev: warm.clone(),
            l: 1,
            a_param: 2.1,
        };
        let s1 = sub.step(&state);
        let s2 = sub.step(&zero_momentum);
        assert_eq!(s1.v, s2.v);
    }

    #[test]
    fn dual_values_nondecreasing_within_tolerance() {
        // Accelerated steps are not strictly monotone; on this instance the
        // dual values must not drop by more than 1e-9 relative per step.
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(1.0, vec![2.0, -1.5, 0.7, 3.0])),
            Box::new(NonnegativityTerm::new(4)),
        );
        let params = unit_params(4);
        let x = [0.5, 0.5, 0.5, 0.5];
        let sub = DualSubproblem::new(&p, &params, &x);
        let mut state = DualState::new(4, 2.1, None);
        let mut prev = sub.dual_value(&state.v);
        for _ in 0..200 {
            state = sub.step(&state);
            let cur = sub.dual_value(&state.v);
            assert!(cur >= prev - 1e-9 * (1.0 + prev.abs()));
            prev = cur;
        }
    }

    #[test]
    fn eta_one_accepts_only_exact_prox() {
        // Trivial dual: exact after one step, so eta = 1 converges.
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(1.0, vec![4.0])),
            Box::new(ZeroNonsmooth::new(1)),
        );
        let params = unit_params(1);
        let res = solve_inner(&p, &params, &[1.0], StoppingRule::Eta(1.0), 50, None);
        assert_eq!(res.status, InnerStatus::Converged);
        assert!(res.gap.abs() < 1e-12);

        // Nontrivial dual (total-variation chain with interior dual
        // optimum): the gap stays positive, so eta = 1 exhausts the budget.
        let c = vec![0.10, 0.12, 0.08, 0.11, 0.09, 0.13, 0.07, 0.10];
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(1.0, c)),
            Box::new(DifferenceL1Term::new(8, 0.8)),
        );
        let params = unit_params(8);
        let res = solve_inner(&p, &params, &[0.0; 8], StoppingRule::Eta(1.0), 40, None);
        assert_eq!(res.status, InnerStatus::MaxIterations);
    }

    #[test]
    fn soft_threshold_recovered_to_tolerance() {
        let p = lasso(1, vec![3.0], 1.0);
        let params = unit_params(1);
        let res = solve_inner(&p, &params, &[1.0], StoppingRule::Eta(0.999), 5000, None);
        assert_eq!(res.status, InnerStatus::Converged);
        assert!((res.y_tilde[0] - 2.0).abs() < 1e-6, "{}", res.y_tilde[0]);
    }

    #[test]
    fn looser_eta_accepts_earlier() {
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(
                1.0,
                vec![1.0, -2.0, 0.5, 3.0, -1.0],
            )),
            Box::new(DifferenceL1Term::new(5, 0.8)),
        );
        let params = unit_params(5);
        let x = [0.0, 0.0, 0.0, 0.0, 0.0];
        let mut previous = 0usize;
        for eta in [1e-6, 1e-2, 5e-1] {
            let res = solve_inner(&p, &params, &x, StoppingRule::Eta(eta), 100_000, None);
            assert_eq!(res.status, InnerStatus::Converged, "eta = {eta}");
            assert!(
                res.inner_iterations >= previous,
                "eta = {eta}: {} < {previous}",
                res.inner_iterations
            );
            previous = res.inner_iterations;
        }
    }

    #[test]
    fn eps_acceptance_satisfies_distance_lemma() {
        // Accepted eps-candidates satisfy both
        //   h(y) - h(y*) <= eps   and   ||y - y*||^2 <= alpha mu eps,
        // plus (1/(2 alpha_max mu)) ||y - x||^2 <= -h_tilde + eps.
        let p = lasso(2, vec![2.0, -1.0], 0.6);
        let metric = DiagonalMetric::new(vec![1.1, 0.9], 1.3).unwrap();
        let params = SurrogateParams::new(0.8, metric, 1.0).unwrap();
        let x = [0.4, 0.2];
        let eps = 1e-5;
        let res = solve_inner(&p, &params, &x, StoppingRule::EpsFixed(eps), 100_000, None);
        assert_eq!(res.status, InnerStatus::Converged);
        assert!(res.gap <= eps);

        // Long-run reference for y*.
        let exact = solve_inner(
            &p,
            &params,
            &x,
            StoppingRule::EpsFixed(1e-13),
            500_000,
            None,
        );
        assert_eq!(exact.status, InnerStatus::Converged);
        let h_star = exact.h_value;
        let alpha_mu = params.alpha() * params.metric().mu_bound();
        assert!(res.h_value - h_star <= eps + 1e-12);
        let dist_sq = linalg::norm_sq(&vsub(&res.y_tilde, &exact.y_tilde));
        assert!(dist_sq <= alpha_mu * eps + 1e-10);

        let lhs = linalg::norm_sq(&vsub(&res.y_tilde, &x)) / (2.0 * alpha_mu);
        assert!(lhs <= -res.h_tilde_value + eps + 1e-10);
    }

    #[test]
    fn eta_acceptance_is_also_eps_approximation() {
        // tau = 1/eta - 1: accepted eta-points satisfy gap <= -tau h.
        let p = lasso(3, vec![1.5, -0.5, 0.7], 0.5);
        let params = unit_params(3);
        let x = [0.2, 0.0, -0.3];
        for eta in [0.3, 0.7, 0.95] {
            let res = solve_inner(&p, &params, &x, StoppingRule::Eta(eta), 100_000, None);
            assert_eq!(res.status, InnerStatus::Converged);
            let tau = 1.0 / eta - 1.0;
            let recomputed = duality_gap(&p, &params, &res.y_tilde, &res.v, &x);
            assert!(recomputed <= -tau * res.h_value + 1e-10);
        }
    }

    #[test]
    fn warm_start_produces_same_certificates() {
        let p = lasso(3, vec![1.0, 2.0, -1.0], 0.4);
        let params = unit_params(3);
        let x0 = [0.0, 0.0, 0.0];
        let cold = solve_inner(&p, &params, &x0, StoppingRule::Eta(0.5), 50_000, None);
        assert_eq!(cold.status, InnerStatus::Converged);
        let x1 = [0.1, 0.3, -0.2];
        let warm = solve_inner(
            &p,
            &params,
            &x1,
            StoppingRule::Eta(0.5),
            50_000,
            Some(&cold.v),
        );
        assert_eq!(warm.status, InnerStatus::Converged);
        assert!(warm.h_value <= 0.5 * warm.psi_value + 1e-12);
        assert!(warm.gap >= -1e-10);
    }

    #[test]
    fn stationary_point_detected() {
        // x already minimizes f = (1/2)(x - 1)^2 + indicator(x >= 0) at 1.
        let p = CompositeProblem::new(
            Box::new(DiagonalQuadratic::isotropic(1.0, vec![1.0])),
            Box::new(NonnegativityTerm::new(1)),
        );
        let params = unit_params(1);
        let res = solve_inner(&p, &params, &[1.0], StoppingRule::Eta(0.5), 100, None);
        assert_eq!(res.status, InnerStatus::ExactStationary);
        assert!(res.h_tilde_value.abs() < 1e-12);
    }
}
