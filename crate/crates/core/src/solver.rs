//! Projected gradient solver for the discretized control problem, with
//! adjoint-based gradients, Armijo backtracking along the projection arc, and
//! the normal-cone optimality certificate.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{self, GridFn, Trajectory};
use crate::ode::{self, AdjointState};
use crate::problem::{
    self, ConeMembership, ControlSet, OcProblem, Parameter, BALL_BOUNDARY_RTOL,
};

/// Solver knobs. The seed is kept for interface stability; the convex solver
/// is deterministic and never restarts.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    /// L²-residual of the projected fixed-point map at which to stop.
    pub tol_opt: f64,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            step0: 1.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            tol_opt: 1e-8,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 4] = [
            ("step0", self.step0),
            ("armijo_c", self.armijo_c),
            ("tol_opt", self.tol_opt),
            ("max_iters", self.max_iters as f64),
        ];
        for (field, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidValue {
                    field: field.into(),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidValue {
                field: "backtrack".into(),
                message: format!("must lie in (0, 1), got {}", self.backtrack),
            });
        }
        Ok(())
    }
}

/// Which part of the control set the solution landed on (ball sets report
/// genuine boundary contact; box sets report any active bound).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryFlag {
    Interior,
    Boundary,
}

impl BoundaryFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryFlag::Interior => "Interior",
            BoundaryFlag::Boundary => "Boundary",
        }
    }
}

/// Solver output. `value` is recomputed from the returned pair so it is the
/// discrete cost of exactly what the caller receives.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Trajectory,
    pub u: GridFn,
    pub value: f64,
    pub iterations: usize,
    pub optimality_residual: f64,
    pub boundary_flag: BoundaryFlag,
    pub converged: bool,
    /// Accepted cost per iteration (monotone by construction).
    pub cost_history: Vec<f64>,
    /// Largest constraint violation seen over all accepted iterates.
    pub max_feasibility_violation: f64,
}

/// The reduced gradient ∇J(u)(t) = L_u(t) − Bᵀ(t) y(t) of the composed cost,
/// via one forward and one backward sweep.
pub fn reduced_gradient(prob: &OcProblem, u: &GridFn, w: &Parameter) -> Result<GridFn> {
    let x = ode::integrate_state(prob, u, w)?;
    reduced_gradient_at(prob, &x, u, w).map(|(g, _)| g)
}

/// Gradient plus the costate it was assembled from.
pub fn reduced_gradient_at(
    prob: &OcProblem,
    x: &Trajectory,
    u: &GridFn,
    w: &Parameter,
) -> Result<(GridFn, AdjointState)> {
    let gradients = problem::cost_gradients(prob, x, u, &w.theta)?;
    let adjoint = ode::solve_adjoint_from(prob, &gradients.g_prime_at_1, &gradients.lx_fn)?;
    let bty = prob.matrices.b.apply_transpose(&adjoint.path)?;
    Ok((gradients.ju.sub(&bty)?, adjoint))
}

/// Metric projection onto the control set: radial scaling for the ball,
/// nodewise clamp for the box, identity otherwise. Nonexpansive.
pub fn project(set: &ControlSet, u: &GridFn) -> GridFn {
    match set {
        ControlSet::Unconstrained => u.clone(),
        ControlSet::L2Ball { radius } => {
            let norm = grid::l2_norm(u);
            if norm <= *radius {
                u.clone()
            } else {
                u.scale(radius / norm)
            }
        }
        ControlSet::Box { lower, upper } => u.map(u.dim(), |i, v| {
            DVector::from_fn(v.len(), |j, _| {
                v[j].clamp(lower.node(i)[j], upper.node(i)[j])
            })
        }),
    }
}

/// Constraint violation of u (zero when feasible).
fn feasibility_violation(set: &ControlSet, u: &GridFn) -> f64 {
    match set {
        ControlSet::Unconstrained => 0.0,
        ControlSet::L2Ball { radius } => (grid::l2_norm(u) - radius).max(0.0),
        ControlSet::Box { lower, upper } => {
            let mut worst = 0.0f64;
            for i in 0..u.grid().n_nodes() {
                for j in 0..u.dim() {
                    let v = u.node(i)[j];
                    worst = worst
                        .max(lower.node(i)[j] - v)
                        .max(v - upper.node(i)[j]);
                }
            }
            worst.max(0.0)
        }
    }
}

fn boundary_flag(set: &ControlSet, u: &GridFn) -> BoundaryFlag {
    match set {
        ControlSet::Unconstrained => BoundaryFlag::Interior,
        ControlSet::L2Ball { radius } => {
            if grid::l2_norm(u) >= radius * (1.0 - BALL_BOUNDARY_RTOL) {
                BoundaryFlag::Boundary
            } else {
                BoundaryFlag::Interior
            }
        }
        ControlSet::Box { lower, upper } => {
            for i in 0..u.grid().n_nodes() {
                for j in 0..u.dim() {
                    let band = BALL_BOUNDARY_RTOL
                        * (1.0 + upper.node(i)[j] - lower.node(i)[j]);
                    let v = u.node(i)[j];
                    if (v - lower.node(i)[j]).abs() <= band
                        || (v - upper.node(i)[j]).abs() <= band
                    {
                        return BoundaryFlag::Boundary;
                    }
                }
            }
            BoundaryFlag::Interior
        }
    }
}

/// Minimizes the discrete cost over the control set by projected gradient
/// descent from u ≡ 0 with Armijo backtracking. Stops when the fixed-point
/// residual ‖u − P(u − ∇J(u))‖₂ drops below `tol_opt`; on hitting the
/// iteration cap the best iterate is returned with `converged = false`.
pub fn solve(prob: &OcProblem, w: &Parameter, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    prob.check_parameter(w)?;
    let set = &prob.control_set;
    let zero = GridFn::zeros(prob.grid(), prob.control_dim());
    let mut u = project(set, &zero);
    let mut x = ode::integrate_state(prob, &u, w)?;
    let mut cost = problem::eval_cost(prob, &x, &u, w)?;
    let mut cost_history = vec![cost];
    let mut max_violation = feasibility_violation(set, &u);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut step = opts.step0;

    for iter in 0..opts.max_iters {
        let (gradient, _) = reduced_gradient_at(prob, &x, &u, w)?;
        let fixed_point = project(set, &u.sub(&gradient)?);
        residual = grid::l2_norm(&u.sub(&fixed_point)?);
        if residual <= opts.tol_opt {
            converged = true;
            iterations = iter;
            break;
        }

        // Armijo along the projection arc; regrow the step after shrinks
        step = (step * 2.0).min(opts.step0);
        let mut accepted = false;
        for _ in 0..60 {
            let trial = project(set, &u.sub(&gradient.scale(step))?);
            let trial_x = ode::integrate_state(prob, &trial, w)?;
            let trial_cost = problem::eval_cost(prob, &trial_x, &trial, w)?;
            let decrease_ref = grid::pairing(&gradient, &u.sub(&trial)?)?;
            if trial_cost <= cost - opts.armijo_c * decrease_ref {
                u = trial;
                x = trial_x;
                cost = trial_cost;
                accepted = true;
                break;
            }
            step *= opts.backtrack;
        }
        iterations = iter + 1;
        if !accepted {
            // line search exhausted: no direction of decrease at fp scale
            break;
        }
        cost_history.push(cost);
        max_violation = max_violation.max(feasibility_violation(set, &u));
    }

    if !converged {
        // report the residual at the final iterate
        let (gradient, _) = reduced_gradient_at(prob, &x, &u, w)?;
        let fixed_point = project(set, &u.sub(&gradient)?);
        residual = grid::l2_norm(&u.sub(&fixed_point)?);
        converged = residual <= opts.tol_opt;
    }

    let value = problem::eval_cost(prob, &x, &u, w)?;
    let boundary_flag = boundary_flag(set, &u);
    Ok(SolveResult {
        x,
        u,
        value,
        iterations,
        optimality_residual: residual,
        boundary_flag,
        converged,
        cost_history,
        max_feasibility_violation: max_violation,
    })
}

/// Outcome of the optimality certificate at a candidate pair.
#[derive(Debug, Clone)]
pub struct OptimalityCheck {
    pub ok: bool,
    /// The cone candidate u*(t) = Bᵀ(t)y(t) − L_u(t).
    pub u_star: GridFn,
    /// L²-distance of u* to N(ū; 𝒰).
    pub residual: f64,
    pub membership: ConeMembership,
    pub adjoint: AdjointState,
}

/// Certifies optimality of (x̄, ū) through the condition
/// u* = Bᵀy − L_u ∈ N(ū; 𝒰), with y the costate of the pair.
pub fn verify_optimality(
    prob: &OcProblem,
    w: &Parameter,
    x: &Trajectory,
    u: &GridFn,
    tol: f64,
) -> Result<OptimalityCheck> {
    let gradients = problem::cost_gradients(prob, x, u, &w.theta)?;
    let adjoint = ode::solve_adjoint_from(prob, &gradients.g_prime_at_1, &gradients.lx_fn)?;
    let bty = prob.matrices.b.apply_transpose(&adjoint.path)?;
    let u_star = bty.sub(&gradients.ju)?;
    let membership = problem::normal_cone_membership(&prob.control_set, u, &u_star, tol)?;
    Ok(OptimalityCheck {
        ok: membership.member,
        residual: membership.residual,
        u_star,
        membership,
        adjoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, GridFn, TimeGrid};
    use crate::oracle;
    use crate::problem::ConeCertificate;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    fn analytic_control(g: TimeGrid, alpha: &DVector<f64>) -> GridFn {
        oracle::analytic_solution(g, alpha).unwrap().control
    }

    #[test]
    fn reduced_gradient_vanishes_on_zero_data() {
        let g = grid(30);
        let prob = oracle::frozen_dynamics_problem(g, 2);
        let w = Parameter::zero_disturbance(g, dvector![0.0, 0.0], 2);
        let grad = reduced_gradient(&prob, &GridFn::zeros(g, 1), &w).unwrap();
        assert_eq!(l2_norm(&grad), 0.0);
    }

    #[test]
    fn reduced_gradient_small_at_the_interior_optimum_and_shrinks_like_h2() {
        let grad_norm = |n: usize| {
            let g = grid(n);
            let prob = oracle::double_integrator_problem(g);
            let alpha = dvector![0.2, 0.0];
            let w = Parameter::zero_disturbance(g, alpha.clone(), 2);
            let u = analytic_control(g, &alpha);
            l2_norm(&reduced_gradient(&prob, &u, &w).unwrap())
        };
        let g200 = grad_norm(200);
        let g400 = grad_norm(400);
        assert!(g200 <= 5e-3, "‖∇J‖ at N=200: {g200:.3e}");
        let ratio = g200 / g400;
        assert!((2.5..=6.0).contains(&ratio), "O(h²) decay ratio {ratio}");
    }

    #[test]
    fn reduced_gradient_matches_finite_differences() {
        // quadratic composed cost: the central difference is exact, so the
        // comparison isolates the adjoint-consistency error, which shrinks
        // like h²; modest data at a fine grid keeps it below 1e-6
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = grid(2000);
        let prob = oracle::double_integrator_problem(g);
        let w = Parameter::zero_disturbance(g, dvector![0.1, -0.2], 2);
        for _ in 0..3 {
            let a: f64 = rng.random_range(-0.5..0.5);
            let b: f64 = rng.random_range(-0.5..0.5);
            let u = GridFn::sample_scalar(g, |t| a * t + b * (3.0 * t).cos()).unwrap();
            let c1: f64 = rng.random_range(-1.0..1.0);
            let c2: f64 = rng.random_range(-1.0..1.0);
            let d = GridFn::sample_scalar(g, |t| c1 * (2.0 * t).sin() + c2).unwrap();
            let grad = reduced_gradient(&prob, &u, &w).unwrap();
            let directional = grid::pairing(&grad, &d).unwrap();
            let eps = 1e-5;
            let cost_at = |s: f64| {
                let us = u.add(&d.scale(s)).unwrap();
                let xs = ode::integrate_state(&prob, &us, &w).unwrap();
                problem::eval_cost(&prob, &xs, &us, &w).unwrap()
            };
            let fd = (cost_at(eps) - cost_at(-eps)) / (2.0 * eps);
            assert_abs_diff_eq!(directional, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn projection_examples() {
        let g = grid(100);
        let ball = ControlSet::L2Ball { radius: 1.0 };

        let inside = GridFn::sample_scalar(g, |t| 0.3 * t).unwrap();
        assert_eq!(project(&ball, &inside), inside);

        let big = GridFn::sample_scalar(g, |_| 2.0).unwrap();
        let proj = project(&ball, &big);
        assert_abs_diff_eq!(l2_norm(&proj), 1.0, epsilon = 1e-12);
        for i in 0..=100 {
            assert_abs_diff_eq!(proj.node(i)[0], 1.0, epsilon = 1e-9);
        }

        let lower = GridFn::constant(g, dvector![-1.0]).unwrap();
        let upper = GridFn::constant(g, dvector![1.0]).unwrap();
        let boxy = ControlSet::Box { lower, upper };
        let ramp = GridFn::sample_scalar(g, |t| 3.0 * t - 2.0).unwrap();
        let clamped = project(&boxy, &ramp);
        assert_eq!(clamped.node(0)[0], -1.0);
        assert_eq!(clamped.node(100)[0], 1.0);
        assert_abs_diff_eq!(clamped.node(50)[0], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_is_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let g = grid(50);
        let sets = [
            ControlSet::L2Ball { radius: 0.8 },
            ControlSet::Box {
                lower: GridFn::constant(g, dvector![-0.5]).unwrap(),
                upper: GridFn::constant(g, dvector![0.9]).unwrap(),
            },
        ];
        for _ in 0..30 {
            let mut random_fn = || {
                GridFn::from_values(
                    g,
                    1,
                    (0..g.n_nodes())
                        .map(|_| dvector![rng.random_range(-2.0..2.0)])
                        .collect(),
                )
                .unwrap()
            };
            let u = random_fn();
            let v = random_fn();
            for set in &sets {
                let lhs = l2_norm(&project(set, &u).sub(&project(set, &v)).unwrap());
                let rhs = l2_norm(&u.sub(&v).unwrap());
                assert!(lhs <= rhs + 1e-10);
            }
        }
    }

    #[test]
    fn solve_interior_case_reaches_the_origin() {
        let g = grid(200);
        let prob = oracle::double_integrator_problem(g);
        let alpha = dvector![0.2, 0.0];
        let w = Parameter::zero_disturbance(g, alpha.clone(), 2);
        let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.value <= 1e-5, "value {:.3e}", res.value);
        assert_eq!(res.boundary_flag, BoundaryFlag::Interior);
        let diff = res.u.sub(&analytic_control(g, &alpha)).unwrap();
        assert!(l2_norm(&diff) <= 2e-3, "control gap {:.3e}", l2_norm(&diff));
    }

    #[test]
    fn solve_boundary_case_saturates_the_energy_budget() {
        let g = grid(200);
        let prob = oracle::double_integrator_problem(g);
        let alpha = dvector![0.0, 0.5];
        let w = Parameter::zero_disturbance(g, alpha.clone(), 2);
        let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
        assert!(res.value <= 1e-5, "value {:.3e}", res.value);
        assert_eq!(res.boundary_flag, BoundaryFlag::Boundary);
        assert_abs_diff_eq!(l2_norm(&res.u), 1.0, epsilon = 1e-3);
        let diff = res.u.sub(&analytic_control(g, &alpha)).unwrap();
        assert!(l2_norm(&diff) <= 2e-3, "control gap {:.3e}", l2_norm(&diff));
    }

    #[test]
    fn solve_outside_case_agrees_with_a_fine_grid_oracle() {
        let value_at = |n: usize| {
            let g = grid(n);
            let prob = oracle::double_integrator_problem(g);
            let w = Parameter::zero_disturbance(g, dvector![1.0, 0.0], 2);
            solve(&prob, &w, &SolveOptions::default()).unwrap().value
        };
        let coarse = value_at(200);
        let fine = value_at(2000);
        assert!(coarse > 0.0);
        assert!(
            (coarse - fine).abs() <= 1e-4 * fine.abs(),
            "V(200) = {coarse}, V(2000) = {fine}"
        );
    }

    #[test]
    fn descent_is_monotone_and_iterates_stay_feasible() {
        let g = grid(150);
        let prob = oracle::double_integrator_problem(g);
        let w = Parameter::zero_disturbance(g, dvector![0.4, 0.3], 2);
        let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
        for pair in res.cost_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        assert!(res.max_feasibility_violation <= 1e-10);
        assert!(feasibility_violation(&prob.control_set, &res.u) <= 1e-10);
    }

    #[test]
    fn value_vanishes_across_the_reachable_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = grid(120);
        let prob = oracle::double_integrator_problem(g);
        for _ in 0..20 {
            let alpha = loop {
                let a = dvector![rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)];
                if oracle::ellipse_membership(&a).class == oracle::EllipseClass::Interior {
                    break a;
                }
            };
            let w = Parameter::zero_disturbance(g, alpha, 2);
            let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
            assert!(res.value <= 1e-5, "value {:.3e}", res.value);
        }
    }

    #[test]
    fn certificate_accepts_the_interior_optimum() {
        let g = grid(200);
        let prob = oracle::double_integrator_problem(g);
        let alpha = dvector![0.2, 0.0];
        let w = Parameter::zero_disturbance(g, alpha, 2);
        let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
        let check = verify_optimality(&prob, &w, &res.x, &res.u, 1e-6).unwrap();
        assert!(check.ok);
        assert!(l2_norm(&check.u_star) <= 1e-6);
    }

    #[test]
    fn certificate_accepts_the_boundary_optimum_with_a_ray_multiplier() {
        let g = grid(200);
        let prob = oracle::double_integrator_problem(g);
        let alpha = dvector![0.0, 0.5];
        let w = Parameter::zero_disturbance(g, alpha, 2);
        let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
        let check = verify_optimality(&prob, &w, &res.x, &res.u, 1e-6).unwrap();
        assert!(check.ok, "residual {:.3e}", check.residual);
        match check.membership.certificate {
            ConeCertificate::BallRay { lambda } => assert!(lambda >= -1e-6),
            ref other => panic!("expected a ray certificate, got {other:?}"),
        }
    }

    #[test]
    fn certificate_rejects_a_perturbed_control() {
        let g = grid(200);
        let prob = oracle::double_integrator_problem(g);
        let alpha = dvector![0.2, 0.0];
        let w = Parameter::zero_disturbance(g, alpha.clone(), 2);
        let res = solve(&prob, &w, &SolveOptions::default()).unwrap();
        let shifted = res.u.map(1, |_, v| v.add_scalar(0.1));
        let x_shifted = ode::integrate_state(&prob, &shifted, &w).unwrap();
        let check = verify_optimality(&prob, &w, &x_shifted, &shifted, 1e-6).unwrap();
        assert!(!check.ok);
        assert!(check.residual > 1e-2);
        // and the perturbed pair really does cost more
        let perturbed_cost = problem::eval_cost(&prob, &x_shifted, &shifted, &w).unwrap();
        assert!(perturbed_cost > res.value);
    }
}
