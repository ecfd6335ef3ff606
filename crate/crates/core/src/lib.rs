//! Parametric convex linear-quadratic optimal control on the interval [0,1].
//!
//! The crate solves
//!
//! ```text
//!   minimize   g(x(1)) + ∫₀¹ L(t, x(t), u(t), θ(t)) dt
//!   subject to ẋ(t) = A(t)x(t) + B(t)u(t) + C(t)θ(t),   x(0) = α,   u ∈ 𝒰,
//! ```
//!
//! for a convex quadratic cost and a convex control set 𝒰 (L²-ball, box, or
//! unconstrained), and computes the subdifferential and the singular
//! subdifferential of the optimal value function V(α, θ) at a given parameter
//! by adjoint-based formulas, together with independent oracles (closed forms
//! for the double integrator, finite differences, operator identities) used
//! to verify every piece.
//!
//! Modules:
//! - [`grid`]: uniform grid, sampled functions, trapezoidal quadrature, norms.
//! - [`problem`]: problem data, cost evaluation and gradients, normal cones,
//!   the essential-injectivity check on C(t).
//! - [`linops`]: the integral-form operators of the constraint map and their
//!   adjoints, with identity-residual drivers.
//! - [`ode`]: trapezoidal integrators for the state, adjoint, and fundamental
//!   matrix; kernel extraction for the homogeneous sensitivity system.
//! - [`solver`]: projected gradient with Armijo backtracking, optimality
//!   certificates.
//! - [`subdiff`]: the sensitivity formulas assembling ∂V and ∂∞V.
//! - [`oracle`]: closed-form double-integrator solutions, the reachability
//!   ellipse, finite-difference value gradients.

pub mod error;
pub mod grid;
pub mod linops;
pub mod ode;
pub mod oracle;
pub mod problem;
pub mod solver;
pub mod subdiff;

pub use error::{Error, Result};
pub use grid::{GridFn, TimeGrid, Trajectory};
pub use problem::{ControlSet, OcProblem, Parameter, QuadraticCost, SystemMatrices};
pub use solver::{SolveOptions, SolveResult};
pub use subdiff::{SingularSubdiffResult, SubdiffResult};
