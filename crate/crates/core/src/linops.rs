//! Discrete realizations of the integral-form constraint operators and their
//! adjoints, plus identity-residual drivers used by property tests and the
//! `check` command.
//!
//! The forward maps send (x, u) and (α, θ) into the trajectory space:
//!
//! ```text
//!   M(x, u) = x − ∫₀^(·) A x dτ − ∫₀^(·) B u dτ,
//!   T(α, θ) = α + ∫₀^(·) C θ dτ,
//! ```
//!
//! and a dual element of the trajectory space is a pair (a, v) acting as
//! ⟨(a, v), z⟩ = ⟨a, z(0)⟩ + ∫₀¹ ⟨ż(t), v(t)⟩ dt. The adjoints are
//!
//! ```text
//!   T*(a, v) = (a, Cᵀv),
//!   M*(a, v) = (A*(a, v), −Bᵀv),
//!   A*(a, v) = (a − ∫₀¹ Aᵀv dt,  v + ∫₀^(·) Aᵀv dτ − ∫₀¹ Aᵀv dt).
//! ```
//!
//! All integrals are trapezoidal. The duality pairing is discretized with the
//! cell-averaged rule [`grid::pairing_cells`], the summation-by-parts partner
//! of the trapezoidal cumulative integral: for constant coefficient matrices
//! the adjoint identities then hold to roundoff, not just to O(h²).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{self, GridFn, Trajectory};
use crate::problem::SystemMatrices;

/// A dual element (a, v) of the trajectory space: a pairs with x(0), the
/// density v pairs with ẋ.
#[derive(Debug, Clone, PartialEq)]
pub struct DualElement {
    pub a: DVector<f64>,
    pub v: GridFn,
}

impl DualElement {
    pub fn new(a: DVector<f64>, v: GridFn) -> Result<Self> {
        if a.len() != v.dim() {
            return Err(Error::DimensionMismatch {
                context: "DualElement::new",
                expected: format!("a of dim {}", v.dim()),
                got: format!("{}", a.len()),
            });
        }
        Ok(Self { a, v })
    }
}

/// ⟨(a, v), z⟩ = ⟨a, z(0)⟩ + ∫₀¹ ⟨ż, v⟩ dt with the cell-averaged quadrature.
pub fn dual_pairing(d: &DualElement, z: &Trajectory) -> Result<f64> {
    Ok(d.a.dot(z.initial()) + grid::pairing_cells(z.derivative(), &d.v)?)
}

/// M(x, u) = x − ∫₀^(·) A x dτ − ∫₀^(·) B u dτ, with derivative channel
/// ẋ − Ax − Bu; the output stays trapezoid compatible whenever x is.
pub fn apply_m(sys: &SystemMatrices, x: &Trajectory, u: &GridFn) -> Result<Trajectory> {
    let ax = sys.a.apply(x.state())?;
    let bu = sys.b.apply(u)?;
    let forcing = ax.add(&bu)?;
    let state = x.state().sub(&grid::cumulative_integral(&forcing))?;
    let derivative = x.derivative().sub(&forcing)?;
    Trajectory::new(state, derivative)
}

/// T(α, θ) = α + ∫₀^(·) C θ dτ, with derivative channel Cθ.
pub fn apply_t(sys: &SystemMatrices, alpha: &DVector<f64>, theta: &GridFn) -> Result<Trajectory> {
    if alpha.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "apply_t",
            expected: format!("alpha of dim {}", sys.state_dim()),
            got: format!("{}", alpha.len()),
        });
    }
    let ctheta = sys.c.apply(theta)?;
    Trajectory::from_derivative(alpha.clone(), ctheta)
}

/// Output of T*: a vector slot and a disturbance-space density Cᵀv.
#[derive(Debug, Clone)]
pub struct TStarOutput {
    pub a: DVector<f64>,
    pub theta_slot: GridFn,
}

/// T*(a, v) = (a, Cᵀv).
pub fn apply_t_star(sys: &SystemMatrices, d: &DualElement) -> Result<TStarOutput> {
    Ok(TStarOutput {
        a: d.a.clone(),
        theta_slot: sys.c.apply_transpose(&d.v)?,
    })
}

/// Output of M*: a dual element in the trajectory slot and a control-space
/// density in the control slot.
#[derive(Debug, Clone)]
pub struct MStarOutput {
    pub x_slot: DualElement,
    pub u_slot: GridFn,
}

/// M*(a, v) per the displayed adjoint formulas, trapezoid discretized.
pub fn apply_m_star(sys: &SystemMatrices, d: &DualElement) -> Result<MStarOutput> {
    let atv = sys.a.apply_transpose(&d.v)?;
    let total = grid::integral(&atv);
    let cumulative = grid::cumulative_integral(&atv);
    let a = &d.a - &total;
    let v = d.v.map(d.v.dim(), |i, vi| vi + cumulative.node(i) - &total);
    let u_slot = sys.b.apply_transpose(&d.v)?.scale(-1.0);
    Ok(MStarOutput {
        x_slot: DualElement::new(a, v)?,
        u_slot,
    })
}

/// |⟨M(x,u), d⟩ − ⟨(x,u), M*(d)⟩|: the defect of the discrete adjoint
/// identity. Zero up to roundoff for constant matrices, O(h²) otherwise.
pub fn adjoint_identity_residual(
    sys: &SystemMatrices,
    x: &Trajectory,
    u: &GridFn,
    d: &DualElement,
) -> Result<f64> {
    let lhs = dual_pairing(d, &apply_m(sys, x, u)?)?;
    let m_star = apply_m_star(sys, d)?;
    let rhs = dual_pairing(&m_star.x_slot, x)? + grid::pairing_cells(u, &m_star.u_slot)?;
    Ok((lhs - rhs).abs())
}

/// |⟨T(w), d⟩ − (⟨a, α⟩ + ∫ ⟨θ, Cᵀv⟩ dt)|: defect of the T* identity.
pub fn t_star_identity_residual(
    sys: &SystemMatrices,
    alpha: &DVector<f64>,
    theta: &GridFn,
    d: &DualElement,
) -> Result<f64> {
    let lhs = dual_pairing(d, &apply_t(sys, alpha, theta)?)?;
    let t_star = apply_t_star(sys, d)?;
    let rhs = t_star.a.dot(alpha) + grid::pairing_cells(theta, &t_star.theta_slot)?;
    Ok((lhs - rhs).abs())
}
