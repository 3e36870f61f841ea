//! Variable-metric inexact line-search proximal-gradient solver (VMILA).
//!
//! Minimizes composite objectives `f(x) = f0(x) + g(A x)` where `f0` is
//! smooth (not necessarily convex) and `g` is convex with an easy resolvent
//! of its conjugate. Each outer iteration builds a strongly convex surrogate
//! of `f` around the current point from a steplength `alpha_k` and a diagonal
//! metric `D_k`, approximately minimizes it by running an accelerated
//! (FISTA-type) method on its dual, and then backtracks along the resulting
//! descent direction with a modified Armijo rule. Inexactness of the inner
//! solve is certified on the fly, either through the dual objective value
//! (eta-type rules) or through the primal-dual gap (epsilon-type rules), so
//! no unobtainable quantities are ever needed.
//!
//! The crate ships:
//!
//! - [`linalg`]: dense vectors, diagonal metrics, linear operators;
//! - [`model`]: composite problems, surrogate evaluation, stock terms;
//! - [`inner`]: the dual inner solver and its stopping rules;
//! - [`solver`]: Armijo search, metric/steplength selection, the outer loop;
//! - [`imaging`]: Kullback-Leibler data term under Gaussian blur, isotropic
//!   total variation with nonnegativity, Poisson noise simulation and test
//!   problems;
//! - [`oracle`]: brute-force references (certified proximal points, finite
//!   differences, long-run optimal values) used by the test suites.
//!
//! ```
//! use vmila::model::{CompositeProblem, DiagonalQuadratic, L1Term};
//! use vmila::solver::{minimize, InnerRule, SolverConfig};
//!
//! // min (x - 3)^2 / 2 + |x|  has its minimum at x = 2.
//! let problem = CompositeProblem::new(
//!     Box::new(DiagonalQuadratic::isotropic(1.0, vec![3.0])),
//!     Box::new(L1Term::new(1, 1.0)),
//! );
//! let config = SolverConfig {
//!     inner_rule: InnerRule::Eta(1e-2),
//!     max_outer: 100,
//!     ..SolverConfig::default()
//! };
//! let out = minimize(&problem, &config, &[0.0]).unwrap();
//! assert!((out.x[0] - 2.0).abs() < 1e-6);
//! ```

pub mod imaging;
pub mod inner;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod solver;

pub use model::{CompositeProblem, SurrogateParams};
pub use solver::{minimize, SolverConfig};
