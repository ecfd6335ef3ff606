//! Independent ground truth for the double-integrator family: the closed-form
//! optimal solution, the reachability ellipse that classifies initial states,
//! and finite-difference value gradients computed through fresh solves.
//!
//! Everything here is deliberately separate from the solver and the
//! sensitivity formulas so the two sides can check each other.

use nalgebra::{dmatrix, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridFn, TimeGrid};
use crate::problem::{ControlSet, MatrixFn, OcProblem, Parameter, QuadraticCost, SystemMatrices};
use crate::solver::{self, SolveOptions};

/// Where an initial state sits relative to the set of states from which the
/// origin is reachable within the unit energy budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllipseClass {
    Interior,
    Boundary,
    Outside,
}

impl EllipseClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            EllipseClass::Interior => "Interior",
            EllipseClass::Boundary => "Boundary",
            EllipseClass::Outside => "Outside",
        }
    }
}

/// Classification plus the value of the defining quadratic.
#[derive(Debug, Clone, Copy)]
pub struct EllipseReport {
    pub class: EllipseClass,
    /// 12α₁² + 12α₁α₂ + 4α₂² − 1; negative inside, zero on the boundary.
    pub quadratic_value: f64,
}

const CLASS_TOL: f64 = 1e-12;

/// Classifies ᾱ ∈ R² by the sign of 12ᾱ₁² + 12ᾱ₁ᾱ₂ + 4ᾱ₂² − 1.
pub fn ellipse_membership(alpha: &DVector<f64>) -> EllipseReport {
    assert_eq!(alpha.len(), 2, "the ellipse classifier is two-dimensional");
    let (a1, a2) = (alpha[0], alpha[1]);
    let quadratic_value = 12.0 * a1 * a1 + 12.0 * a1 * a2 + 4.0 * a2 * a2 - 1.0;
    let class = if quadratic_value > CLASS_TOL {
        EllipseClass::Outside
    } else if quadratic_value < -CLASS_TOL {
        EllipseClass::Interior
    } else {
        EllipseClass::Boundary
    };
    EllipseReport {
        class,
        quadratic_value,
    }
}

/// Exact squared L² norm of the closed-form control, from the antiderivative
/// of the degree-2 integrand (no quadrature): with u(t) = pt − q this is
/// p²/3 − pq + q², which coincides with the ellipse quadratic.
pub fn control_norm_sq_exact(alpha: &DVector<f64>) -> f64 {
    let p = 12.0 * alpha[0] + 6.0 * alpha[1];
    let q = 6.0 * alpha[0] + 4.0 * alpha[1];
    p * p / 3.0 - p * q + q * q
}

/// The closed-form optimal pair sampled on a grid.
#[derive(Debug, Clone)]
pub struct AnalyticSolution {
    /// (x̄₁, x̄₂) samples.
    pub state: GridFn,
    /// ū samples (dim 1).
    pub control: GridFn,
}

/// Closed-form minimizer of the double-integrator problem for ᾱ in the
/// reachable region:
///
/// ```text
///   x̄₁(t) = (2ᾱ₁+ᾱ₂)t³ − (3ᾱ₁+2ᾱ₂)t² + ᾱ₂ t + ᾱ₁,
///   x̄₂ = ẋ̄₁,  ū = ẋ̄₂,
/// ```
///
/// which lands on x̄(1) = (0, 0) identically.
pub fn analytic_solution(grid: TimeGrid, alpha: &DVector<f64>) -> Result<AnalyticSolution> {
    let report = ellipse_membership(alpha);
    if report.class == EllipseClass::Outside {
        return Err(Error::OutsideRegion {
            quadratic_value: report.quadratic_value,
        });
    }
    let (a1, a2) = (alpha[0], alpha[1]);
    let c3 = 2.0 * a1 + a2;
    let c2 = -(3.0 * a1 + 2.0 * a2);
    let state = GridFn::sample(grid, 2, |t| {
        DVector::from_vec(vec![
            c3 * t * t * t + c2 * t * t + a2 * t + a1,
            3.0 * c3 * t * t + 2.0 * c2 * t + a2,
        ])
    })?;
    let control = GridFn::sample_scalar(grid, |t| 6.0 * c3 * t + 2.0 * c2)?;
    Ok(AnalyticSolution { state, control })
}

/// The §-defining data set behind the demo files: double-integrator dynamics,
/// identity disturbance channel, terminal cost ‖x(1)‖², unit energy ball.
pub fn double_integrator_problem(grid: TimeGrid) -> OcProblem {
    let a = MatrixFn::constant(grid, dmatrix![0.0, 1.0; 0.0, 0.0]).expect("finite");
    let b = MatrixFn::constant(grid, dmatrix![0.0; 1.0]).expect("finite");
    let c = MatrixFn::constant(grid, DMatrix::identity(2, 2)).expect("finite");
    OcProblem::new(
        SystemMatrices::new(a, b, c).expect("consistent dims"),
        QuadraticCost::terminal_norm_squared(2, 1, 2),
        ControlSet::L2Ball { radius: 1.0 },
    )
    .expect("valid data")
}

/// Frozen-dynamics family A = B = C = 0 with terminal cost ‖x(1)‖²; its value
/// function is V(α, θ) = ‖α‖² exactly, making gradients analytic.
pub fn frozen_dynamics_problem(grid: TimeGrid, n: usize) -> OcProblem {
    OcProblem::new(
        SystemMatrices::new(
            MatrixFn::constant(grid, DMatrix::zeros(n, n)).expect("finite"),
            MatrixFn::constant(grid, DMatrix::zeros(n, 1)).expect("finite"),
            MatrixFn::constant(grid, DMatrix::zeros(n, n)).expect("finite"),
        )
        .expect("consistent dims"),
        QuadraticCost::terminal_norm_squared(n, 1, n),
        ControlSet::L2Ball { radius: 1.0 },
    )
    .expect("valid data")
}

/// Central-difference gradient of the value function in the initial state,
/// one fresh solve per stencil point. Uses steps h and h/2; if they disagree
/// by more than the solver-noise budget, the Richardson extrapolation of the
/// two is returned.
pub fn fd_value_gradient(
    prob: &OcProblem,
    w: &Parameter,
    h: f64,
    opts: &SolveOptions,
) -> Result<DVector<f64>> {
    const NOISE_BUDGET: f64 = 1e-6;
    let n = prob.state_dim();
    let value = |alpha: DVector<f64>| -> Result<f64> {
        let wp = Parameter::new(alpha, w.theta.clone());
        Ok(solver::solve(prob, &wp, opts)?.value)
    };
    let central = |step: f64| -> Result<DVector<f64>> {
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let mut up = w.alpha.clone();
            up[i] += step;
            let mut dn = w.alpha.clone();
            dn[i] -= step;
            g[i] = (value(up)? - value(dn)?) / (2.0 * step);
        }
        Ok(g)
    };
    let coarse = central(h)?;
    let fine = central(0.5 * h)?;
    if (&coarse - &fine).amax() <= NOISE_BUDGET {
        Ok(fine)
    } else {
        Ok((fine * 4.0 - coarse) / 3.0)
    }
}
