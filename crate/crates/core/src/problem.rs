//! Problem data: system matrices, quadratic costs, control sets, parameters;
//! cost evaluation and gradients; normal-cone membership; and the sufficient
//! condition on C(t) under which the sensitivity formulas are known to apply.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{self, GridFn, TimeGrid, Trajectory};

/// Tolerance below which a symmetric matrix still counts as PSD (roundoff in
/// user data).
const PSD_EIG_FLOOR: f64 = -1e-12;

/// Relative width of the band around the ball radius treated as "on the
/// boundary"; discretized norms carry O(h²) error so exact comparison is
/// meaningless.
pub const BALL_BOUNDARY_RTOL: f64 = 1e-8;

/// Singular-value threshold for the essential-injectivity check on C(t).
pub const SV_TOL: f64 = 1e-10;

/// A sampled matrix-valued function on the grid, with a constant shorthand.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFn {
    grid: TimeGrid,
    rows: usize,
    cols: usize,
    values: MatrixValues,
}

#[derive(Debug, Clone, PartialEq)]
enum MatrixValues {
    Constant(DMatrix<f64>),
    Samples(Vec<DMatrix<f64>>),
}

impl MatrixFn {
    pub fn constant(grid: TimeGrid, m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self {
            grid,
            rows: m.nrows(),
            cols: m.ncols(),
            values: MatrixValues::Constant(m),
        })
    }

    pub fn from_samples(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                context: "MatrixFn::from_samples",
                expected: format!("{} samples", grid.n_nodes()),
                got: format!("{}", samples.len()),
            });
        }
        let (rows, cols) = (samples[0].nrows(), samples[0].ncols());
        for s in &samples {
            if s.nrows() != rows || s.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    context: "MatrixFn::from_samples",
                    expected: format!("{rows}x{cols}"),
                    got: format!("{}x{}", s.nrows(), s.ncols()),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("matrix entries"));
            }
        }
        Ok(Self {
            grid,
            rows,
            cols,
            values: MatrixValues::Samples(samples),
        })
    }

    pub fn sample<F>(grid: TimeGrid, rows: usize, cols: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DMatrix<f64>,
    {
        let _ = (rows, cols);
        Self::from_samples(grid, grid.nodes().map(f).collect())
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.values, MatrixValues::Constant(_))
    }

    pub fn at(&self, i: usize) -> &DMatrix<f64> {
        match &self.values {
            MatrixValues::Constant(m) => m,
            MatrixValues::Samples(v) => &v[i],
        }
    }

    /// Nodewise product t ↦ M(t) f(t).
    pub fn apply(&self, f: &GridFn) -> Result<GridFn> {
        if f.dim() != self.cols || f.grid() != self.grid {
            return Err(Error::DimensionMismatch {
                context: "MatrixFn::apply",
                expected: format!("GridFn dim {} on the same grid", self.cols),
                got: format!("dim {}", f.dim()),
            });
        }
        Ok(f.map(self.rows, |i, v| self.at(i) * v))
    }

    /// Nodewise product t ↦ M(t)ᵀ f(t).
    pub fn apply_transpose(&self, f: &GridFn) -> Result<GridFn> {
        if f.dim() != self.rows || f.grid() != self.grid {
            return Err(Error::DimensionMismatch {
                context: "MatrixFn::apply_transpose",
                expected: format!("GridFn dim {} on the same grid", self.rows),
                got: format!("dim {}", f.dim()),
            });
        }
        Ok(f.map(self.cols, |i, v| self.at(i).transpose() * v))
    }

    /// Largest absolute entry over all nodes (discrete stand-in for essential
    /// boundedness).
    pub fn max_abs(&self) -> f64 {
        match &self.values {
            MatrixValues::Constant(m) => m.amax(),
            MatrixValues::Samples(v) => v.iter().map(|m| m.amax()).fold(0.0, f64::max),
        }
    }
}

/// The three matrix coefficients of the state equation.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub a: MatrixFn,
    pub b: MatrixFn,
    pub c: MatrixFn,
}

impl SystemMatrices {
    pub fn new(a: MatrixFn, b: MatrixFn, c: MatrixFn) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::InvalidValue {
                field: "A".into(),
                message: format!("must be square, got {}x{}", a.rows(), a.cols()),
            });
        }
        if b.rows() != n || c.rows() != n {
            return Err(Error::DimensionMismatch {
                context: "SystemMatrices::new",
                expected: format!("B and C with {n} rows"),
                got: format!("B {}x{}, C {}x{}", b.rows(), b.cols(), c.rows(), c.cols()),
            });
        }
        if a.grid() != b.grid() || a.grid() != c.grid() {
            return Err(Error::DimensionMismatch {
                context: "SystemMatrices::new",
                expected: "one shared grid".into(),
                got: "mixed grids".into(),
            });
        }
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.c.cols()
    }

    pub fn grid(&self) -> TimeGrid {
        self.a.grid()
    }
}

/// Cost interface: terminal value/gradient and running value/partials.
///
/// The declarative layer below is quadratic, which covers the shipped file
/// format; callers with other convex C¹ integrands can implement this trait
/// and use the `*_with` evaluation entry points.
pub trait CostModel {
    fn terminal(&self, x1: &DVector<f64>) -> f64;
    fn terminal_grad(&self, x1: &DVector<f64>) -> DVector<f64>;
    fn running(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>, theta: &DVector<f64>) -> f64;
    fn running_grad_x(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64>;
    fn running_grad_u(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64>;
    fn running_grad_theta(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64>;
}

/// Time-invariant convex quadratic cost:
/// g(x) = xᵀQx + qᵀx + c0 and
/// L(x,u,θ) = xᵀRx x + uᵀRu u + θᵀRθ θ + rxᵀx + ruᵀu + rθᵀθ + r0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q_mat: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub c0: f64,
    pub rx_mat: DMatrix<f64>,
    pub ru_mat: DMatrix<f64>,
    pub rtheta_mat: DMatrix<f64>,
    pub rx_lin: DVector<f64>,
    pub ru_lin: DVector<f64>,
    pub rtheta_lin: DVector<f64>,
    pub r0: f64,
}

fn check_psd(m: &DMatrix<f64>, field: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidValue {
            field: field.into(),
            message: format!("must be square, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue {
            field: field.into(),
            message: "non-finite entry".into(),
        });
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * (1.0 + m.amax()) {
        return Err(Error::InvalidValue {
            field: field.into(),
            message: format!("not symmetric (max asymmetry {asym:.3e})"),
        });
    }
    if m.nrows() > 0 {
        let min_eig = m
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < PSD_EIG_FLOOR {
            return Err(Error::InvalidValue {
                field: field.into(),
                message: format!("not positive semidefinite (min eigenvalue {min_eig:.3e})"),
            });
        }
    }
    Ok(())
}

impl QuadraticCost {
    /// All-zero cost for the given dimensions.
    pub fn zero(n: usize, m: usize, k: usize) -> Self {
        Self {
            q_mat: DMatrix::zeros(n, n),
            q_lin: DVector::zeros(n),
            c0: 0.0,
            rx_mat: DMatrix::zeros(n, n),
            ru_mat: DMatrix::zeros(m, m),
            rtheta_mat: DMatrix::zeros(k, k),
            rx_lin: DVector::zeros(n),
            ru_lin: DVector::zeros(m),
            rtheta_lin: DVector::zeros(k),
            r0: 0.0,
        }
    }

    /// Pure terminal cost g(x) = ‖x‖².
    pub fn terminal_norm_squared(n: usize, m: usize, k: usize) -> Self {
        let mut cost = Self::zero(n, m, k);
        cost.q_mat = DMatrix::identity(n, n);
        cost
    }

    pub fn validate(&self, n: usize, m: usize, k: usize) -> Result<()> {
        check_psd(&self.q_mat, "cost.Q")?;
        check_psd(&self.rx_mat, "cost.Rx")?;
        check_psd(&self.ru_mat, "cost.Ru")?;
        check_psd(&self.rtheta_mat, "cost.Rtheta")?;
        let dims: [(&str, usize, usize); 7] = [
            ("cost.Q", self.q_mat.nrows(), n),
            ("cost.Rx", self.rx_mat.nrows(), n),
            ("cost.Ru", self.ru_mat.nrows(), m),
            ("cost.Rtheta", self.rtheta_mat.nrows(), k),
            ("cost.q", self.q_lin.len(), n),
            ("cost.rx", self.rx_lin.len(), n),
            ("cost.ru", self.ru_lin.len(), m),
        ];
        for (field, got, want) in dims {
            if got != want {
                return Err(Error::InvalidValue {
                    field: field.into(),
                    message: format!("dimension {got}, problem needs {want}"),
                });
            }
        }
        if self.rtheta_lin.len() != k {
            return Err(Error::InvalidValue {
                field: "cost.rtheta".into(),
                message: format!("dimension {}, problem needs {k}", self.rtheta_lin.len()),
            });
        }
        if !(self.c0.is_finite() && self.r0.is_finite()) {
            return Err(Error::InvalidValue {
                field: "cost".into(),
                message: "non-finite constant term".into(),
            });
        }
        Ok(())
    }
}

impl CostModel for QuadraticCost {
    fn terminal(&self, x1: &DVector<f64>) -> f64 {
        (x1.transpose() * &self.q_mat * x1)[(0, 0)] + self.q_lin.dot(x1) + self.c0
    }

    fn terminal_grad(&self, x1: &DVector<f64>) -> DVector<f64> {
        &self.q_mat * x1 * 2.0 + &self.q_lin
    }

    fn running(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        (x.transpose() * &self.rx_mat * x)[(0, 0)]
            + (u.transpose() * &self.ru_mat * u)[(0, 0)]
            + (theta.transpose() * &self.rtheta_mat * theta)[(0, 0)]
            + self.rx_lin.dot(x)
            + self.ru_lin.dot(u)
            + self.rtheta_lin.dot(theta)
            + self.r0
    }

    fn running_grad_x(
        &self,
        _t: f64,
        x: &DVector<f64>,
        _u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        &self.rx_mat * x * 2.0 + &self.rx_lin
    }

    fn running_grad_u(
        &self,
        _t: f64,
        _x: &DVector<f64>,
        u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        &self.ru_mat * u * 2.0 + &self.ru_lin
    }

    fn running_grad_theta(
        &self,
        _t: f64,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64> {
        &self.rtheta_mat * theta * 2.0 + &self.rtheta_lin
    }
}

/// The admissible control set 𝒰 ⊂ L².
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Unconstrained,
    /// Energy ball { u : ‖u‖₂ ≤ radius }.
    L2Ball { radius: f64 },
    /// Nodewise box; lower < upper at every node so the interior is nonempty.
    Box { lower: GridFn, upper: GridFn },
}

impl ControlSet {
    pub fn validate(&self, m: usize, grid: TimeGrid) -> Result<()> {
        match self {
            ControlSet::Unconstrained => Ok(()),
            ControlSet::L2Ball { radius } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidValue {
                        field: "control_set.radius".into(),
                        message: format!("must be a positive finite number, got {radius}"),
                    });
                }
                Ok(())
            }
            ControlSet::Box { lower, upper } => {
                if lower.dim() != m || upper.dim() != m {
                    return Err(Error::InvalidValue {
                        field: "control_set".into(),
                        message: format!(
                            "bounds must have dim {m}, got {} and {}",
                            lower.dim(),
                            upper.dim()
                        ),
                    });
                }
                if lower.grid() != grid || upper.grid() != grid {
                    return Err(Error::InvalidValue {
                        field: "control_set".into(),
                        message: "bounds must live on the problem grid".into(),
                    });
                }
                for i in 0..grid.n_nodes() {
                    for j in 0..m {
                        if !(lower.node(i)[j] < upper.node(i)[j]) {
                            return Err(Error::InvalidValue {
                                field: "control_set".into(),
                                message: format!(
                                    "lower < upper required at every node; violated at node {i}, \
                                     component {j}"
                                ),
                            });
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// The perturbation pair w = (α, θ).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub alpha: DVector<f64>,
    pub theta: GridFn,
}

impl Parameter {
    pub fn new(alpha: DVector<f64>, theta: GridFn) -> Self {
        Self { alpha, theta }
    }

    /// θ ≡ 0 on the given grid.
    pub fn zero_disturbance(grid: TimeGrid, alpha: DVector<f64>, k: usize) -> Self {
        Self {
            alpha,
            theta: GridFn::zeros(grid, k),
        }
    }
}

/// Full problem description at a fixed grid.
#[derive(Debug, Clone)]
pub struct OcProblem {
    pub matrices: SystemMatrices,
    pub cost: QuadraticCost,
    pub control_set: ControlSet,
}

impl OcProblem {
    pub fn new(
        matrices: SystemMatrices,
        cost: QuadraticCost,
        control_set: ControlSet,
    ) -> Result<Self> {
        let (n, m, k) = (
            matrices.state_dim(),
            matrices.control_dim(),
            matrices.disturbance_dim(),
        );
        cost.validate(n, m, k)?;
        control_set.validate(m, matrices.grid())?;
        Ok(Self {
            matrices,
            cost,
            control_set,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.matrices.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.matrices.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.matrices.control_dim()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.matrices.disturbance_dim()
    }

    pub fn check_parameter(&self, w: &Parameter) -> Result<()> {
        if w.alpha.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "parameter.alpha",
                expected: format!("{}", self.state_dim()),
                got: format!("{}", w.alpha.len()),
            });
        }
        if w.theta.dim() != self.disturbance_dim() || w.theta.grid() != self.grid() {
            return Err(Error::DimensionMismatch {
                context: "parameter.theta",
                expected: format!("dim {} on the problem grid", self.disturbance_dim()),
                got: format!("dim {}", w.theta.dim()),
            });
        }
        if w.alpha.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter.alpha"));
        }
        Ok(())
    }
}

fn check_pair_dims(prob: &OcProblem, x: &Trajectory, u: &GridFn) -> Result<()> {
    if x.dim() != prob.state_dim() || x.grid() != prob.grid() {
        return Err(Error::DimensionMismatch {
            context: "trajectory",
            expected: format!("dim {} on the problem grid", prob.state_dim()),
            got: format!("dim {}", x.dim()),
        });
    }
    if u.dim() != prob.control_dim() || u.grid() != prob.grid() {
        return Err(Error::DimensionMismatch {
            context: "control",
            expected: format!("dim {} on the problem grid", prob.control_dim()),
            got: format!("dim {}", u.dim()),
        });
    }
    Ok(())
}

/// Cost J(x, u, w) = g(x(1)) + ∫₀¹ L(t, x, u, θ) dt by trapezoidal quadrature.
pub fn eval_cost(prob: &OcProblem, x: &Trajectory, u: &GridFn, w: &Parameter) -> Result<f64> {
    eval_cost_with(&prob.cost, prob, x, u, w)
}

/// Same as [`eval_cost`] with a caller-supplied cost model.
pub fn eval_cost_with(
    cost: &dyn CostModel,
    prob: &OcProblem,
    x: &Trajectory,
    u: &GridFn,
    w: &Parameter,
) -> Result<f64> {
    check_pair_dims(prob, x, u)?;
    prob.check_parameter(w)?;
    let g = prob.grid();
    let running = GridFn::from_values(
        g,
        1,
        (0..g.n_nodes())
            .map(|i| {
                DVector::from_element(
                    1,
                    cost.running(g.node(i), x.state().node(i), u.node(i), w.theta.node(i)),
                )
            })
            .collect(),
    )?;
    Ok(cost.terminal(x.terminal()) + grid::integral(&running)[0])
}

/// The pieces of the cost derivative used by the sensitivity formulas.
#[derive(Debug, Clone)]
pub struct CostGradients {
    /// g'(x̄(1)).
    pub g_prime_at_1: DVector<f64>,
    /// g'(x̄(1)) + ∫₀¹ L_x dt — the R^n slot of the derivative in x.
    pub jx_vec: DVector<f64>,
    /// t ↦ g'(x̄(1)) + ∫_t¹ L_x dτ — the density slot of the derivative in x.
    pub jx_fn: GridFn,
    /// t ↦ L_u along the path.
    pub ju: GridFn,
    /// t ↦ L_θ along the path.
    pub jtheta: GridFn,
    /// t ↦ L_x along the path (handy for the adjoint right-hand side).
    pub lx_fn: GridFn,
}

/// Derivative data of J at (x̄, ū, θ̄).
pub fn cost_gradients(
    prob: &OcProblem,
    x: &Trajectory,
    u: &GridFn,
    theta: &GridFn,
) -> Result<CostGradients> {
    cost_gradients_with(&prob.cost, prob, x, u, theta)
}

/// Same as [`cost_gradients`] with a caller-supplied cost model.
pub fn cost_gradients_with(
    cost: &dyn CostModel,
    prob: &OcProblem,
    x: &Trajectory,
    u: &GridFn,
    theta: &GridFn,
) -> Result<CostGradients> {
    check_pair_dims(prob, x, u)?;
    if theta.dim() != prob.disturbance_dim() || theta.grid() != prob.grid() {
        return Err(Error::DimensionMismatch {
            context: "theta",
            expected: format!("dim {} on the problem grid", prob.disturbance_dim()),
            got: format!("dim {}", theta.dim()),
        });
    }
    let g = prob.grid();
    let at = |i: usize| (g.node(i), x.state().node(i), u.node(i), theta.node(i));

    let lx_fn = GridFn::from_values(
        g,
        prob.state_dim(),
        (0..g.n_nodes())
            .map(|i| {
                let (t, x, u, th) = at(i);
                cost.running_grad_x(t, x, u, th)
            })
            .collect(),
    )?;
    let ju = GridFn::from_values(
        g,
        prob.control_dim(),
        (0..g.n_nodes())
            .map(|i| {
                let (t, x, u, th) = at(i);
                cost.running_grad_u(t, x, u, th)
            })
            .collect(),
    )?;
    let jtheta = GridFn::from_values(
        g,
        prob.disturbance_dim(),
        (0..g.n_nodes())
            .map(|i| {
                let (t, x, u, th) = at(i);
                cost.running_grad_theta(t, x, u, th)
            })
            .collect(),
    )?;

    let g_prime_at_1 = cost.terminal_grad(x.terminal());
    let lx_total = grid::integral(&lx_fn);
    let jx_vec = &g_prime_at_1 + &lx_total;
    // ∫_t¹ L_x dτ = ∫₀¹ L_x dτ − ∫₀ᵗ L_x dτ
    let lx_cumulative = grid::cumulative_integral(&lx_fn);
    let jx_fn = lx_cumulative.map(prob.state_dim(), |_, p| &g_prime_at_1 + &lx_total - p);

    Ok(CostGradients {
        g_prime_at_1,
        jx_vec,
        jx_fn,
        ju,
        jtheta,
        lx_fn,
    })
}

/// How the membership decision was certified.
#[derive(Debug, Clone, PartialEq)]
pub enum ConeCertificate {
    /// The candidate is (numerically) the zero element.
    Zero,
    /// Ball boundary: candidate ≈ lambda · ū with lambda ≥ 0.
    BallRay { lambda: f64 },
    /// Box: counts of nodes·components pinned at each bound.
    BoxActive {
        at_lower: usize,
        at_upper: usize,
        interior: usize,
    },
}

/// Outcome of the normal-cone test u* ∈ N(ū; 𝒰).
#[derive(Debug, Clone)]
pub struct ConeMembership {
    pub member: bool,
    /// L²-distance of the candidate to the cone.
    pub residual: f64,
    pub certificate: ConeCertificate,
    /// Whether ū sat on the ball boundary (always false for other sets).
    pub on_ball_boundary: bool,
}

/// Tests u* ∈ N(ū; 𝒰) at tolerance `tol`.
///
/// ū must be feasible within max(tol, boundary band); otherwise the test is
/// meaningless and an error is returned.
pub fn normal_cone_membership(
    set: &ControlSet,
    u_bar: &GridFn,
    u_star: &GridFn,
    tol: f64,
) -> Result<ConeMembership> {
    if u_bar.dim() != u_star.dim() || u_bar.grid() != u_star.grid() {
        return Err(Error::DimensionMismatch {
            context: "normal_cone_membership",
            expected: format!("dim {} on one grid", u_bar.dim()),
            got: format!("dim {}", u_star.dim()),
        });
    }
    match set {
        ControlSet::Unconstrained => {
            // N(ū; L²) = {0}
            let residual = grid::l2_norm(u_star);
            Ok(ConeMembership {
                member: residual <= tol,
                residual,
                certificate: ConeCertificate::Zero,
                on_ball_boundary: false,
            })
        }
        ControlSet::L2Ball { radius } => {
            let norm = grid::l2_norm(u_bar);
            let band = BALL_BOUNDARY_RTOL * radius;
            if norm > radius + f64::max(tol, band) {
                return Err(Error::Infeasible {
                    detail: format!("‖ū‖₂ = {norm:.12} exceeds the ball radius {radius}"),
                });
            }
            if norm < radius - band {
                // interior point: the cone is {0}
                let residual = grid::l2_norm(u_star);
                return Ok(ConeMembership {
                    member: residual <= tol,
                    residual,
                    certificate: ConeCertificate::BallRay { lambda: 0.0 },
                    on_ball_boundary: false,
                });
            }
            // boundary point: the cone is the ray {λū : λ ≥ 0}
            let lambda = grid::pairing(u_star, u_bar)? / (norm * norm);
            let projected = u_bar.scale(lambda.max(0.0));
            let residual = grid::l2_norm(&u_star.sub(&projected)?);
            let ray_defect = grid::l2_norm(&u_star.sub(&u_bar.scale(lambda))?);
            Ok(ConeMembership {
                member: lambda >= -tol && ray_defect <= tol,
                residual,
                certificate: ConeCertificate::BallRay { lambda },
                on_ball_boundary: true,
            })
        }
        ControlSet::Box { lower, upper } => {
            let g = u_bar.grid();
            let m = u_bar.dim();
            let mut at_lower = 0usize;
            let mut at_upper = 0usize;
            let mut interior = 0usize;
            let mut violation_sq = 0.0;
            let mut member = true;
            for i in 0..g.n_nodes() {
                for j in 0..m {
                    let (lo, hi) = (lower.node(i)[j], upper.node(i)[j]);
                    let v = u_bar.node(i)[j];
                    let active_band = BALL_BOUNDARY_RTOL * (1.0 + hi - lo);
                    let feas_band = f64::max(tol, active_band);
                    if v < lo - feas_band || v > hi + feas_band {
                        return Err(Error::Infeasible {
                            detail: format!(
                                "ū outside the box at node {i}, component {j}: \
                                 {v} not in [{lo}, {hi}]"
                            ),
                        });
                    }
                    let s = u_star.node(i)[j];
                    // distance of s to the admissible interval of the cone
                    let defect = if (v - hi).abs() <= active_band {
                        at_upper += 1;
                        (-s).max(0.0) // need s ≥ 0
                    } else if (v - lo).abs() <= active_band {
                        at_lower += 1;
                        s.max(0.0) // need s ≤ 0
                    } else {
                        interior += 1;
                        s.abs() // need s = 0
                    };
                    if defect > tol {
                        member = false;
                    }
                    violation_sq += g.weight(i) * defect * defect;
                }
            }
            Ok(ConeMembership {
                member,
                residual: violation_sq.sqrt(),
                certificate: ConeCertificate::BoxActive {
                    at_lower,
                    at_upper,
                    interior,
                },
                on_ball_boundary: false,
            })
        }
    }
}

/// Result of the essential-injectivity check ‖Cᵀ(t)v‖ ≥ c₃‖v‖.
#[derive(Debug, Clone, Copy)]
pub struct InjectivityReport {
    pub holds: bool,
    /// min over nodes of σ_min(C(t_i)ᵀ) as a map R^n → R^k.
    pub c3: f64,
}

/// Checks the uniform lower bound on Cᵀ(t): when it holds, the hypotheses of
/// the sensitivity formulas are satisfied and results are reported as
/// verified.
pub fn check_a5(c: &MatrixFn) -> InjectivityReport {
    let (n, k) = (c.rows(), c.cols());
    if k < n {
        // Cᵀ maps R^n into a smaller space: a kernel is unavoidable.
        return InjectivityReport {
            holds: false,
            c3: 0.0,
        };
    }
    let nodes = if c.is_constant() {
        0..1
    } else {
        0..c.grid().n_nodes()
    };
    let mut c3 = f64::INFINITY;
    for i in nodes {
        let sv = c.at(i).transpose().svd(false, false).singular_values;
        let smin = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        c3 = c3.min(smin);
    }
    InjectivityReport {
        holds: c3 > SV_TOL,
        c3,
    }
}
