//! Fixed-step implicit trapezoidal (Crank–Nicolson) integrators for the state
//! equation, the backward adjoint equation, and the fundamental matrix of the
//! homogeneous sensitivity system, plus the kernel extraction that decides
//! the singular subdifferential.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridFn, Trajectory};
use crate::problem::{MatrixFn, OcProblem, Parameter};

/// Relative singular-value threshold for rank decisions on I − K.
const KERNEL_SV_RTOL: f64 = 1e-8;

/// Costate path with its terminal value kept explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    /// y sampled on the grid (dim n).
    pub path: GridFn,
    /// y(1); identical to the last sample.
    pub terminal: DVector<f64>,
}

fn solve_step(m: &DMatrix<f64>, rhs: DVector<f64>, node: usize) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::StepSingular { node })
}

/// Integrates ẋ = A x + B u + C θ, x(0) = α, one implicit trapezoid step per
/// interval: (I − (h/2)A_{i+1}) x_{i+1} = x_i + (h/2)(ẋ_i + B u_{i+1} + C θ_{i+1}).
pub fn integrate_state(prob: &OcProblem, u: &GridFn, w: &Parameter) -> Result<Trajectory> {
    prob.check_parameter(w)?;
    if u.dim() != prob.control_dim() || u.grid() != prob.grid() {
        return Err(Error::DimensionMismatch {
            context: "integrate_state",
            expected: format!("control dim {} on the problem grid", prob.control_dim()),
            got: format!("dim {}", u.dim()),
        });
    }
    let g = prob.grid();
    let n = prob.state_dim();
    let c = 0.5 * g.h();
    let a = &prob.matrices.a;
    // forcing r = Bu + Cθ at the nodes
    let r = prob.matrices.b.apply(u)?.add(&prob.matrices.c.apply(&w.theta)?)?;

    // constant A: one factorization for every step
    let const_lu = if a.is_constant() {
        Some((DMatrix::identity(n, n) - a.at(0) * c).lu())
    } else {
        None
    };

    let mut state = Vec::with_capacity(g.n_nodes());
    let mut deriv = Vec::with_capacity(g.n_nodes());
    state.push(w.alpha.clone());
    deriv.push(a.at(0) * &w.alpha + r.node(0));
    for i in 0..g.n_steps() {
        let rhs = &state[i] + (&deriv[i] + r.node(i + 1)) * c;
        let next = match &const_lu {
            Some(lu) => lu.solve(&rhs).ok_or(Error::StepSingular { node: i + 1 })?,
            None => {
                let m = DMatrix::identity(n, n) - a.at(i + 1) * c;
                solve_step(&m, rhs, i + 1)?
            }
        };
        deriv.push(a.at(i + 1) * &next + r.node(i + 1));
        state.push(next);
    }
    Trajectory::new(
        GridFn::from_values(g, n, state)?,
        GridFn::from_values(g, n, deriv)?,
    )
}

/// Solves the costate system ẏ + Aᵀy = L_x backwards from y(1) = −g'(x̄(1))
/// with the same trapezoid rule:
/// (I − (h/2)A_iᵀ) y_i = (I + (h/2)A_{i+1}ᵀ) y_{i+1} − (h/2)(L_x,i + L_x,i+1).
pub fn solve_adjoint(
    prob: &OcProblem,
    x: &Trajectory,
    u: &GridFn,
    theta: &GridFn,
) -> Result<AdjointState> {
    let gradients = crate::problem::cost_gradients(prob, x, u, theta)?;
    solve_adjoint_from(prob, &gradients.g_prime_at_1, &gradients.lx_fn)
}

/// Backward sweep given g'(x̄(1)) and the L_x path directly.
pub fn solve_adjoint_from(
    prob: &OcProblem,
    g_prime_at_1: &DVector<f64>,
    lx_fn: &GridFn,
) -> Result<AdjointState> {
    let g = prob.grid();
    let n = prob.state_dim();
    let c = 0.5 * g.h();
    let a = &prob.matrices.a;

    let const_lu = if a.is_constant() {
        Some((DMatrix::identity(n, n) - a.at(0).transpose() * c).lu())
    } else {
        None
    };

    let mut rev = Vec::with_capacity(g.n_nodes());
    let terminal = -g_prime_at_1;
    rev.push(terminal.clone());
    for i in (0..g.n_steps()).rev() {
        let y_next = rev.last().expect("at least the terminal value");
        let rhs = y_next + a.at(i + 1).transpose() * y_next * c
            - (lx_fn.node(i) + lx_fn.node(i + 1)) * c;
        let y_i = match &const_lu {
            Some(lu) => lu.solve(&rhs).ok_or(Error::StepSingular { node: i })?,
            None => {
                let m = DMatrix::identity(n, n) - a.at(i).transpose() * c;
                solve_step(&m, rhs, i)?
            }
        };
        rev.push(y_i);
    }
    rev.reverse();
    Ok(AdjointState {
        path: GridFn::from_values(g, n, rev)?,
        terminal,
    })
}

/// Fundamental matrix of v̇ = −Aᵀv with Φ(0) = I, integrated column by column
/// with the same trapezoid rule.
pub fn transition_matrix(prob: &OcProblem) -> Result<MatrixFn> {
    let g = prob.grid();
    let n = prob.state_dim();
    let c = 0.5 * g.h();
    let a = &prob.matrices.a;

    let const_lu = if a.is_constant() {
        Some((DMatrix::identity(n, n) + a.at(0).transpose() * c).lu())
    } else {
        None
    };

    let mut phis = Vec::with_capacity(g.n_nodes());
    phis.push(DMatrix::identity(n, n));
    for i in 0..g.n_steps() {
        let prev: &DMatrix<f64> = &phis[i];
        let rhs = prev - a.at(i).transpose() * prev * c;
        let next = match &const_lu {
            Some(lu) => lu.solve(&rhs).ok_or(Error::StepSingular { node: i + 1 })?,
            None => {
                let m = DMatrix::identity(n, n) + a.at(i + 1).transpose() * c;
                m.lu().solve(&rhs).ok_or(Error::StepSingular { node: i + 1 })?
            }
        };
        phis.push(next);
    }
    MatrixFn::from_samples(g, phis)
}

/// Result of the homogeneous sensitivity system: admissible initial values of
/// v̇ = −Aᵀv under the fixed-point constraint v(0) = ∫₀¹ Aᵀv dt.
#[derive(Debug, Clone)]
pub struct SingularSystem {
    /// Orthonormal basis of ker(I − K); empty means v ≡ 0 is the only
    /// solution.
    pub kernel_basis: Vec<DVector<f64>>,
    /// σ_min(I − K): the margin of the rank decision.
    pub sigma_min: f64,
    /// σ_min(Φ(1)); invertibility of the fundamental matrix forces the
    /// kernel to be trivial on genuine dynamics.
    pub sigma_min_phi1: f64,
}

/// Reduces the fixed-point constraint through the fundamental matrix: any
/// solution is v(t) = Φ(t) v(0) and the constraint reads (I − K) v(0) = 0
/// with K = ∫₀¹ Aᵀ(t) Φ(t) dt.
pub fn solve_singular_system(prob: &OcProblem) -> Result<SingularSystem> {
    let g = prob.grid();
    let n = prob.state_dim();
    let phi = transition_matrix(prob)?;
    let a = &prob.matrices.a;

    // trapezoidal K with the same accumulation order as grid::integral
    let c = 0.5 * g.h();
    let mut k = DMatrix::<f64>::zeros(n, n);
    let integrand = |i: usize| a.at(i).transpose() * phi.at(i);
    let mut prev = integrand(0);
    for i in 0..g.n_steps() {
        let next = integrand(i + 1);
        k += (&prev + &next) * c;
        prev = next;
    }

    let m = DMatrix::identity(n, n) - k;
    let svd = m.svd(false, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let sigma_min = svd.singular_values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let v_t = svd.v_t.expect("requested V^T");
    let kernel_basis: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= KERNEL_SV_RTOL * sigma_max.max(1.0))
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();

    let phi1_svd = phi.at(g.n_steps()).clone().svd(false, false);
    let sigma_min_phi1 = phi1_svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));

    Ok(SingularSystem {
        kernel_basis,
        sigma_min,
        sigma_min_phi1,
    })
}
