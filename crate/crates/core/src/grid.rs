//! Uniform time grid on [0,1], sampled vector-valued functions, trapezoidal
//! quadrature, and the norms and pairings used throughout the crate.
//!
//! Functions are represented by their nodal samples. All quadrature is the
//! composite trapezoidal rule, which is second-order accurate and composes
//! exactly with the trapezoidal ODE stepping used elsewhere: cumulative
//! integrals, full integrals, and the cell-averaged pairing satisfy discrete
//! summation by parts to machine precision.

use nalgebra::DVector;
use std::io::Write;

use crate::error::{Error, Result};

/// Uniform grid t_i = i/N on [0,1], N ≥ 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::InvalidValue {
                field: "grid_steps".into(),
                message: format!("need at least 2 steps, got {n_steps}"),
            });
        }
        Ok(Self { n_steps })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, N + 1.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Step size h = 1/N.
    pub fn h(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Node t_i = i/N. Computed as a ratio so t_N is exactly 1.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        i as f64 / self.n_steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |i| self.node(i))
    }

    /// Trapezoidal weight of node i (h/2 at the ends, h inside).
    pub fn weight(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        if i == 0 || i == self.n_steps {
            0.5 * self.h()
        } else {
            self.h()
        }
    }
}

/// A sampled function [0,1] → R^d: one vector of length `dim` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: TimeGrid,
    dim: usize,
    values: Vec<DVector<f64>>,
}

impl GridFn {
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                context: "GridFn::from_values",
                expected: format!("{} samples", grid.n_nodes()),
                got: format!("{}", values.len()),
            });
        }
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "GridFn::from_values",
                    expected: format!("sample dim {dim}"),
                    got: format!("{}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("GridFn sample"));
            }
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![DVector::zeros(dim); grid.n_nodes()],
        }
    }

    pub fn constant(grid: TimeGrid, value: DVector<f64>) -> Result<Self> {
        let dim = value.len();
        Self::from_values(grid, dim, vec![value; grid.n_nodes()])
    }

    /// Sample a vector-valued function at the nodes.
    pub fn sample<F>(grid: TimeGrid, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let values: Vec<_> = grid.nodes().map(f).collect();
        Self::from_values(grid, dim, values)
    }

    /// Sample a scalar function (dim 1).
    pub fn sample_scalar<F>(grid: TimeGrid, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        Self::sample(grid, 1, |t| DVector::from_element(1, f(t)))
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        &self.values[self.values.len() - 1]
    }

    /// Nodewise map; the closure must preserve finiteness.
    pub fn map<F>(&self, dim: usize, f: F) -> Self
    where
        F: Fn(usize, &DVector<f64>) -> DVector<f64>,
    {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let out = f(i, v);
                debug_assert_eq!(out.len(), dim);
                out
            })
            .collect();
        Self {
            grid: self.grid,
            dim,
            values,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(self.dim, |_, v| v * s)
    }

    fn assert_compatible(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: format!("grid N={}, dim {}", self.grid.n_steps(), self.dim),
                got: format!("grid N={}, dim {}", other.grid.n_steps(), other.dim),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.assert_compatible(other, "GridFn::add")?;
        Ok(self.map(self.dim, |i, v| v + &other.values[i]))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.assert_compatible(other, "GridFn::sub")?;
        Ok(self.map(self.dim, |i, v| v - &other.values[i]))
    }

    /// Largest Euclidean node norm.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Writes the CSV form: header `t,v1,...,vd`, one row per node, every
    /// number in full double precision (printf `%.17g`).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "t")?;
        for j in 1..=self.dim {
            write!(out, ",v{j}")?;
        }
        writeln!(out)?;
        for (i, v) in self.values.iter().enumerate() {
            write!(out, "{}", fmt_g17(self.grid.node(i)))?;
            for x in v.iter() {
                write!(out, ",{}", fmt_g17(*x))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// A trajectory: state samples plus a derivative channel, kept trapezoid
/// compatible so that discrete integration by parts is exact.
///
/// Invariant: state(t_{i+1}) − state(t_i) = (h/2)(deriv(t_i) + deriv(t_{i+1}))
/// at every interval, up to 1e-12 relative to the local magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    state: GridFn,
    derivative: GridFn,
}

impl Trajectory {
    pub fn new(state: GridFn, derivative: GridFn) -> Result<Self> {
        state.assert_compatible(&derivative, "Trajectory::new")?;
        let grid = state.grid();
        let c = 0.5 * grid.h();
        for i in 0..grid.n_steps() {
            let step = state.node(i + 1) - state.node(i);
            let avg = (derivative.node(i) + derivative.node(i + 1)) * c;
            let scale = 1.0 + state.node(i).norm() + state.node(i + 1).norm();
            let defect = (step - avg).norm();
            if defect > 1e-12 * scale {
                return Err(Error::InvalidValue {
                    field: "trajectory".into(),
                    message: format!(
                        "state and derivative are not trapezoid compatible at interval {i} \
                         (defect {defect:.3e})"
                    ),
                });
            }
        }
        Ok(Self { state, derivative })
    }

    /// Builds the state from an initial value by cumulative trapezoid of the
    /// derivative; compatibility holds by construction.
    pub fn from_derivative(initial: DVector<f64>, derivative: GridFn) -> Result<Self> {
        if initial.len() != derivative.dim() {
            return Err(Error::DimensionMismatch {
                context: "Trajectory::from_derivative",
                expected: format!("initial dim {}", derivative.dim()),
                got: format!("{}", initial.len()),
            });
        }
        let cumulative = cumulative_integral(&derivative);
        let state = cumulative.map(cumulative.dim(), |_, v| v + &initial);
        Ok(Self { state, derivative })
    }

    /// Constant-in-time trajectory (zero derivative).
    pub fn constant(grid: TimeGrid, value: DVector<f64>) -> Result<Self> {
        let dim = value.len();
        Trajectory::from_derivative(value, GridFn::zeros(grid, dim))
    }

    pub fn state(&self) -> &GridFn {
        &self.state
    }

    pub fn derivative(&self) -> &GridFn {
        &self.derivative
    }

    pub fn grid(&self) -> TimeGrid {
        self.state.grid()
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    /// x(0).
    pub fn initial(&self) -> &DVector<f64> {
        self.state.first()
    }

    /// x(1).
    pub fn terminal(&self) -> &DVector<f64> {
        self.state.last()
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(state: GridFn, derivative: GridFn) -> Self {
        debug_assert_eq!(state.grid(), derivative.grid());
        debug_assert_eq!(state.dim(), derivative.dim());
        Self { state, derivative }
    }
}

/// Cumulative trapezoidal integral: F(t_0) = 0 and
/// F(t_{i+1}) = F(t_i) + (h/2)(f(t_i) + f(t_{i+1})).
pub fn cumulative_integral(f: &GridFn) -> GridFn {
    let grid = f.grid();
    let c = 0.5 * grid.h();
    let mut values = Vec::with_capacity(grid.n_nodes());
    let mut acc = DVector::zeros(f.dim());
    values.push(acc.clone());
    for i in 0..grid.n_steps() {
        acc += (f.node(i) + f.node(i + 1)) * c;
        values.push(acc.clone());
    }
    GridFn {
        grid,
        dim: f.dim(),
        values,
    }
}

/// Full-interval trapezoidal integral; identical accumulation order to
/// `cumulative_integral`, so both agree bit for bit at t_N.
pub fn integral(f: &GridFn) -> DVector<f64> {
    let grid = f.grid();
    let c = 0.5 * grid.h();
    let mut acc = DVector::zeros(f.dim());
    for i in 0..grid.n_steps() {
        acc += (f.node(i) + f.node(i + 1)) * c;
    }
    acc
}

/// L^p norm (∫‖f‖^p dt)^{1/p} by trapezoidal quadrature. Rejects p < 1.
pub fn lp_norm(f: &GridFn, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidValue {
            field: "p".into(),
            message: format!("L^p norm needs p >= 1, got {p}"),
        });
    }
    let grid = f.grid();
    let mut acc = 0.0;
    for (i, v) in f.values().iter().enumerate() {
        acc += grid.weight(i) * v.norm().powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// L² norm; the default exponent used by the solver and the cone tests.
pub fn l2_norm(f: &GridFn) -> f64 {
    lp_norm(f, 2.0).expect("p = 2 is always valid")
}

/// Trapezoidal approximation of ∫₀¹ ⟨f(t), g(t)⟩ dt.
pub fn pairing(f: &GridFn, g: &GridFn) -> Result<f64> {
    f.assert_compatible(g, "pairing")?;
    let grid = f.grid();
    let mut acc = 0.0;
    for i in 0..grid.n_nodes() {
        acc += grid.weight(i) * f.node(i).dot(g.node(i));
    }
    Ok(acc)
}

/// Cell-averaged quadrature of ∫₀¹ ⟨f, g⟩ dt: per interval, the product of
/// the endpoint averages. Second-order accurate like `pairing`, and the exact
/// summation-by-parts partner of `cumulative_integral`: for trapezoid
/// compatible (x, ẋ) and (P, q) with P = cumulative_integral(q),
/// pairing_cells(ẋ, P) + pairing_cells(x, q) = ⟨x(1), P(1)⟩ holds to roundoff.
pub fn pairing_cells(f: &GridFn, g: &GridFn) -> Result<f64> {
    f.assert_compatible(g, "pairing_cells")?;
    let grid = f.grid();
    let c = 0.25 * grid.h();
    let mut acc = 0.0;
    for i in 0..grid.n_steps() {
        acc += c * (f.node(i) + f.node(i + 1)).dot(&(g.node(i) + g.node(i + 1)));
    }
    Ok(acc)
}

/// Sobolev norm ‖x(0)‖ + ‖ẋ‖_p.
pub fn sobolev_norm(x: &Trajectory, p: f64) -> Result<f64> {
    Ok(x.initial().norm() + lp_norm(x.derivative(), p)?)
}

/// Formats like printf `%.17g`: shortest of fixed/scientific at 17
/// significant digits, trailing zeros stripped. Round-trips every f64.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("{:e} always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-4..17).contains(&exp) {
        trim_trailing_zeros(format!("{x:.*}", (16 - exp) as usize))
    } else {
        format!(
            "{}e{}{:02}",
            trim_trailing_zeros(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_trailing_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    #[test]
    fn grid_nodes_are_uniform_and_hit_the_ends() {
        let g = grid(10);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(10), 1.0);
        assert_abs_diff_eq!(g.node(3), 0.3, epsilon = 1e-15);
        assert!(TimeGrid::new(1).is_err());
    }

    #[test]
    fn cumulative_integral_of_zero_is_zero() {
        let f = GridFn::zeros(grid(10), 1);
        let cf = cumulative_integral(&f);
        assert!(cf.values().iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn cumulative_integral_of_one_is_t() {
        let f = GridFn::sample_scalar(grid(7), |_| 1.0).unwrap();
        let cf = cumulative_integral(&f);
        for i in 0..=7 {
            assert_abs_diff_eq!(cf.node(i)[0], grid(7).node(i), epsilon = 1e-15);
        }
    }

    #[test]
    fn cumulative_integral_of_2t_reaches_one() {
        let f = GridFn::sample_scalar(grid(4), |t| 2.0 * t).unwrap();
        let cf = cumulative_integral(&f);
        // hand cumulative sum: h/2*(f_i+f_{i+1}) with h=1/4 gives t^2 at nodes
        assert_abs_diff_eq!(cf.node(4)[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cf.node(2)[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn integral_of_constant() {
        let f = GridFn::constant(grid(9), DVector::from_vec(vec![3.0, -1.5])).unwrap();
        let i = integral(&f);
        assert_abs_diff_eq!(i[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(i[1], -1.5, epsilon = 1e-14);
    }

    #[test]
    fn integral_of_boundary_control_squared_is_one() {
        // ∫₀¹ (3t−2)² dt = 1
        let f = GridFn::sample_scalar(grid(1000), |t| (3.0 * t - 2.0).powi(2)).unwrap();
        assert_abs_diff_eq!(integral(&f)[0], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn integral_of_interior_control_squared_is_048() {
        // ∫₀¹ (2.4t−1.2)² dt = 12/25
        let f = GridFn::sample_scalar(grid(1000), |t| (2.4 * t - 1.2).powi(2)).unwrap();
        assert_abs_diff_eq!(integral(&f)[0], 0.48, epsilon = 1e-5);
    }

    #[test]
    fn lp_norm_basics() {
        let z = GridFn::zeros(grid(6), 2);
        assert_eq!(lp_norm(&z, 2.0).unwrap(), 0.0);
        let e = GridFn::constant(grid(6), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(lp_norm(&e, 2.0).unwrap(), 1.0, epsilon = 1e-14);
        let f = GridFn::sample_scalar(grid(1000), |t| 3.0 * t - 2.0).unwrap();
        assert_abs_diff_eq!(lp_norm(&f, 2.0).unwrap(), 1.0, epsilon = 1e-5);
        assert!(lp_norm(&f, 0.5).is_err());
    }

    #[test]
    fn pairing_basics() {
        let g10 = grid(100);
        let f = GridFn::sample_scalar(g10, |t| t).unwrap();
        let zero = GridFn::zeros(g10, 1);
        assert_eq!(pairing(&f, &zero).unwrap(), 0.0);
        let sq = pairing(&f, &f).unwrap();
        let nrm = lp_norm(&f, 2.0).unwrap();
        assert_abs_diff_eq!(sq, nrm * nrm, epsilon = 1e-12);
        let one = GridFn::sample_scalar(g10, |_| 1.0).unwrap();
        assert_abs_diff_eq!(pairing(&f, &one).unwrap(), 0.5, epsilon = 1e-15);
        let wrong = GridFn::zeros(g10, 2);
        assert!(pairing(&f, &wrong).is_err());
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = grid(50);
        let zero = Trajectory::constant(g, DVector::zeros(2)).unwrap();
        assert_eq!(sobolev_norm(&zero, 2.0).unwrap(), 0.0);

        // x(t) = (t, 0): x(0) = 0, ẋ = (1, 0)
        let d = GridFn::constant(g, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let x = Trajectory::from_derivative(DVector::zeros(2), d.clone()).unwrap();
        assert_abs_diff_eq!(sobolev_norm(&x, 2.0).unwrap(), 1.0, epsilon = 1e-14);

        // x(t) = (1+t, 0)
        let x = Trajectory::from_derivative(DVector::from_vec(vec![1.0, 0.0]), d).unwrap();
        assert_abs_diff_eq!(sobolev_norm(&x, 2.0).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn trajectory_constructor_rejects_incompatible_channels() {
        let g = grid(10);
        let state = GridFn::sample_scalar(g, |t| t * t * t).unwrap();
        let wrong = GridFn::zeros(g, 1);
        assert!(Trajectory::new(state, wrong).is_err());
    }

    #[test]
    fn trajectory_from_derivative_is_always_compatible() {
        let g = grid(33);
        let d = GridFn::sample_scalar(g, |t| (7.0 * t).sin()).unwrap();
        let x = Trajectory::from_derivative(DVector::from_element(1, 0.3), d.clone()).unwrap();
        // re-validate through the checking constructor
        assert!(Trajectory::new(x.state().clone(), d).is_ok());
    }

    #[test]
    fn refinement_halves_integral_error_at_second_order() {
        let f_n = |n: usize| GridFn::sample_scalar(grid(n), |t| t.exp()).unwrap();
        let i64 = integral(&f_n(64))[0];
        let i128 = integral(&f_n(128))[0];
        let i256 = integral(&f_n(256))[0];
        let ratio = (i64 - i128).abs() / (i128 - i256).abs();
        assert!((ratio - 4.0).abs() < 0.6, "ratio = {ratio}");
    }

    #[test]
    fn fmt_g17_matches_printf() {
        let cases = [
            (0.0, "0"),
            (-0.0, "-0"),
            (0.5, "0.5"),
            (1.0 / 3.0, "0.33333333333333331"),
            (1e-5, "1.0000000000000001e-05"),
            (12.0 / 25.0, "0.47999999999999998"),
            (1.0, "1"),
            (2.0 / 3.0, "0.66666666666666663"),
            (123456.75, "123456.75"),
            (1e17, "1e+17"),
            (9.9e16, "99000000000000000"),
            (1e-4, "0.0001"),
            (9.5e-5, "9.5000000000000005e-05"),
            (-3.25e-20, "-3.2500000000000002e-20"),
            (f64::MAX, "1.7976931348623157e+308"),
            (5e-324, "4.9406564584124654e-324"),
            (0.1 + 0.2, "0.30000000000000004"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g17(x), want, "formatting {x:?}");
        }
    }

    #[test]
    fn fmt_g17_round_trips() {
        let mut x = 0.123456789f64;
        for _ in 0..200 {
            x = (x * 1.37).sin() * 1e3 + x;
            let s = fmt_g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "round trip of {x:?} via {s}");
        }
    }

    #[test]
    fn csv_layout() {
        let g = grid(2);
        let f = GridFn::sample(g, 2, |t| DVector::from_vec(vec![t, 2.0 * t])).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,v1,v2\n0,0,0\n0.5,0.5,1\n1,1,2\n");
    }

    proptest! {
        #[test]
        fn cumulative_integral_exact_on_affine(
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            n in 2usize..200,
        ) {
            let g = grid(n);
            let f = GridFn::sample_scalar(g, |t| a * t + b).unwrap();
            let cf = cumulative_integral(&f);
            for i in 0..=n {
                let t = g.node(i);
                let exact = 0.5 * a * t * t + b * t;
                prop_assert!((cf.node(i)[0] - exact).abs() <= 1e-12);
            }
        }

        #[test]
        fn pairing_is_bilinear(
            seed in proptest::collection::vec(-1.0f64..1.0, 3 * 17),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let g = grid(16);
            let take = |k: usize| {
                GridFn::from_values(
                    g, 1,
                    (0..17).map(|i| DVector::from_element(1, seed[k * 17 + i])).collect(),
                ).unwrap()
            };
            let (f, gg, h) = (take(0), take(1), take(2));
            let combo = f.scale(a).add(&gg.scale(b)).unwrap();
            let lhs = pairing(&combo, &h).unwrap();
            let rhs = a * pairing(&f, &h).unwrap() + b * pairing(&gg, &h).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn lp_norm_triangle_inequality(
            seed in proptest::collection::vec(-1.0f64..1.0, 2 * 13),
            p in 1.0f64..4.0,
        ) {
            let g = grid(12);
            let take = |k: usize| {
                GridFn::from_values(
                    g, 1,
                    (0..13).map(|i| DVector::from_element(1, seed[k * 13 + i])).collect(),
                ).unwrap()
            };
            let (f, h) = (take(0), take(1));
            let sum = f.add(&h).unwrap();
            prop_assert!(
                lp_norm(&sum, p).unwrap()
                    <= lp_norm(&f, p).unwrap() + lp_norm(&h, p).unwrap() + 1e-10
            );
        }
    }
}
