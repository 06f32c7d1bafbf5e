//! Built-in benchmark problems and their analytic reference solutions.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::Result;
use crate::fem::TrajectorySpace;
use crate::ocp::{Bound, Dims, ExplicitDynamics, OcpProblem, ScalarEval, Trajectory, VectorEval};

type TimeFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Closed-form optimal trajectory of a benchmark problem.
#[derive(Clone)]
pub struct AnalyticReference {
    pub state: TimeFn,
    pub control: TimeFn,
    /// Optimal objective value, when known.
    pub j_star: Option<f64>,
}

impl std::fmt::Debug for AnalyticReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticReference").field("j_star", &self.j_star).finish_non_exhaustive()
    }
}

impl AnalyticReference {
    /// Nodal interpolant of the reference in `space`, which must hold the
    /// states first and the controls after.
    pub fn interpolate(&self, space: &TrajectorySpace, n_y: usize) -> Result<Trajectory> {
        let mut x = vec![0.0; space.dof_count()];
        for c in 0..space.num_components() {
            if c < n_y {
                space.interpolate_into(&mut x, c, |t| (self.state)(t)[c])?;
            } else {
                space.interpolate_into(&mut x, c, |t| (self.control)(t)[c - n_y])?;
            }
        }
        Trajectory::new(space.clone(), x)
    }
}

/// Singular-arc example on `[0, π/2]`:
/// `min ∫ y² + cos(t) u dt`, `ẏ = y²/2 + u`, `y(0) = 0`, `-1.5 <= u <= 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingularArc;

impl SingularArc {
    pub fn optimal_control(t: f64) -> f64 {
        0.5 - 1.5 / (t.cos() - 2.0).powi(2)
    }

    /// Follows from `u* = ẏ* - y*²/2`.
    pub fn optimal_state(t: f64) -> f64 {
        -t.sin() / (2.0 - t.cos())
    }

    /// `J*`, from high-precision quadrature of the closed-form solution.
    pub const J_STAR: f64 = -0.256_996_962_560_678_8;
}

impl OcpProblem for SingularArc {
    fn name(&self) -> &str {
        "x1"
    }
    fn dims(&self) -> Dims {
        Dims { n_y: 1, n_u: 1, n_c: 1, n_g: 1 }
    }
    fn horizon(&self) -> (f64, f64) {
        (0.0, FRAC_PI_2)
    }
    fn mayer(&self, _y0: &[f64], _yf: &[f64]) -> ScalarEval {
        ScalarEval::zero(2)
    }
    fn running(&self, t: f64, y: &[f64], u: &[f64]) -> ScalarEval {
        let mut e = ScalarEval::zero(2);
        e.value = y[0] * y[0] + t.cos() * u[0];
        e.grad[0] = 2.0 * y[0];
        e.grad[1] = t.cos();
        e.hess[(0, 0)] = 2.0;
        e
    }
    fn path(&self, _t: f64, ydot: &[f64], y: &[f64], u: &[f64], w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 3);
        e.value[0] = ydot[0] - 0.5 * y[0] * y[0] - u[0];
        e.jac[(0, 0)] = 1.0;
        e.jac[(0, 1)] = -y[0];
        e.jac[(0, 2)] = -1.0;
        e.hess[(1, 1)] = -w[0];
        e
    }
    fn boundary(&self, y0: &[f64], _yf: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 2);
        e.value[0] = y0[0];
        e.jac[(0, 0)] = 1.0;
        e
    }
    fn bounds(&self) -> Vec<Bound> {
        vec![Bound::range(1, -1.5, 1.0)]
    }
    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        Some(self)
    }
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![0.0], vec![0.0]))
    }
}

impl ExplicitDynamics for SingularArc {
    fn n_alg(&self) -> usize {
        0
    }
    fn rhs(&self, _t: f64, y: &[f64], u: &[f64], w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 2);
        e.value[0] = 0.5 * y[0] * y[0] + u[0];
        e.jac[(0, 0)] = y[0];
        e.jac[(0, 1)] = 1.0;
        e.hess[(0, 0)] = w[0];
        e
    }
    fn algebraic(&self, _t: f64, _y: &[f64], _u: &[f64], _w: &[f64]) -> VectorEval {
        VectorEval::zeros(0, 2)
    }
}

/// State-constrained example on `[0, 1]`:
/// `min y2(1)`, `ẏ1 = u / (2 y1)`, `ẏ2 = 4 y1⁴ + u²`, `y(0) = (1, 0)`,
/// `y1 >= √0.4`, `u >= -1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StateConstrained;

impl StateConstrained {
    pub const J_STAR: f64 = 2.057866062168;

    /// Switching times `(t0, t1)` around the `sinh` arc of the optimal control.
    pub fn switching_times() -> (f64, f64) {
        let s41 = 41f64.sqrt();
        let t0 = 1.0 - s41 / 10.0;
        (t0, t0 + std::f64::consts::LN_2 - (s41 - 5.0).ln() / 2.0)
    }

    /// `u*`: on the bound `-1` before `t0`, `0.8 sinh(2(t - t1))` on the
    /// arc, and `0` once `y1` rides its lower bound after `t1`.
    pub fn optimal_control(t: f64) -> f64 {
        let (t0, t1) = Self::switching_times();
        if t < t0 {
            -1.0
        } else if t < t1 {
            0.8 * (2.0 * (t - t1)).sinh()
        } else {
            0.0
        }
    }

    /// `y*` from integrating the dynamics under `u*` in closed form: with
    /// `v = y1²` we have `v̇ = u`, which gives `v = 1 - t`, then
    /// `v = 0.4 cosh(2(t - t1))`, then `v = 0.4`.
    pub fn optimal_state(t: f64) -> [f64; 2] {
        let (t0, t1) = Self::switching_times();
        let y2_at_t0 = t0 + 4.0 / 3.0 * (1.0 - (1.0 - t0).powi(3));
        let y2_at_t1 = y2_at_t0 - 0.16 * (4.0 * (t0 - t1)).sinh();
        if t < t0 {
            [(1.0 - t).sqrt(), t + 4.0 / 3.0 * (1.0 - (1.0 - t).powi(3))]
        } else if t < t1 {
            let v = 0.4 * (2.0 * (t - t1)).cosh();
            [v.sqrt(), y2_at_t0 + 0.16 * ((4.0 * (t - t1)).sinh() - (4.0 * (t0 - t1)).sinh())]
        } else {
            [0.4f64.sqrt(), y2_at_t1 + 0.64 * (t - t1)]
        }
    }
}

impl OcpProblem for StateConstrained {
    fn name(&self) -> &str {
        "x2"
    }
    fn dims(&self) -> Dims {
        Dims { n_y: 2, n_u: 1, n_c: 2, n_g: 2 }
    }
    fn horizon(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn mayer(&self, _y0: &[f64], yf: &[f64]) -> ScalarEval {
        let mut e = ScalarEval::zero(4);
        e.value = yf[1];
        e.grad[3] = 1.0;
        e
    }
    fn running(&self, _t: f64, _y: &[f64], _u: &[f64]) -> ScalarEval {
        ScalarEval::zero(3)
    }
    fn path(&self, _t: f64, ydot: &[f64], y: &[f64], u: &[f64], w: &[f64]) -> VectorEval {
        // arguments: (ẏ1, ẏ2, y1, y2, u)
        let (y1, u) = (y[0], u[0]);
        let mut e = VectorEval::zeros(2, 5);
        e.value[0] = ydot[0] - u / (2.0 * y1);
        e.value[1] = ydot[1] - 4.0 * y1.powi(4) - u * u;
        e.jac[(0, 0)] = 1.0;
        e.jac[(0, 2)] = u / (2.0 * y1 * y1);
        e.jac[(0, 4)] = -1.0 / (2.0 * y1);
        e.jac[(1, 1)] = 1.0;
        e.jac[(1, 2)] = -16.0 * y1.powi(3);
        e.jac[(1, 4)] = -2.0 * u;
        e.hess[(2, 2)] = -w[0] * u / y1.powi(3) - w[1] * 48.0 * y1 * y1;
        e.hess[(2, 4)] = w[0] / (2.0 * y1 * y1);
        e.hess[(4, 2)] = e.hess[(2, 4)];
        e.hess[(4, 4)] = -2.0 * w[1];
        e
    }
    fn boundary(&self, y0: &[f64], _yf: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(2, 4);
        e.value[0] = y0[0] - 1.0;
        e.value[1] = y0[1];
        e.jac[(0, 0)] = 1.0;
        e.jac[(1, 1)] = 1.0;
        e
    }
    fn bounds(&self) -> Vec<Bound> {
        vec![Bound::lower(0, 0.4f64.sqrt()), Bound::lower(2, -1.0)]
    }
    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        Some(self)
    }
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![1.0, 0.0], vec![0.8, 2.0]))
    }
}

impl ExplicitDynamics for StateConstrained {
    fn n_alg(&self) -> usize {
        0
    }
    fn rhs(&self, _t: f64, y: &[f64], u: &[f64], w: &[f64]) -> VectorEval {
        // arguments: (y1, y2, u)
        let (y1, u) = (y[0], u[0]);
        let mut e = VectorEval::zeros(2, 3);
        e.value[0] = u / (2.0 * y1);
        e.value[1] = 4.0 * y1.powi(4) + u * u;
        e.jac[(0, 0)] = -u / (2.0 * y1 * y1);
        e.jac[(0, 2)] = 1.0 / (2.0 * y1);
        e.jac[(1, 0)] = 16.0 * y1.powi(3);
        e.jac[(1, 2)] = 2.0 * u;
        e.hess[(0, 0)] = w[0] * u / y1.powi(3) + w[1] * 48.0 * y1 * y1;
        e.hess[(0, 2)] = -w[0] / (2.0 * y1 * y1);
        e.hess[(2, 0)] = e.hess[(0, 2)];
        e.hess[(2, 2)] = 2.0 * w[1];
        e
    }
    fn algebraic(&self, _t: f64, _y: &[f64], _u: &[f64], _w: &[f64]) -> VectorEval {
        VectorEval::zeros(0, 3)
    }
}

/// Consistently overdetermined DAE on `[0, 1]`:
/// `y(0) = 1`, `ẏ = u`, `0 = exp(t) - u`, `0 = y - u`. Pure feasibility
/// problem with solution `y = u = exp(t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overdetermined;

impl OcpProblem for Overdetermined {
    fn name(&self) -> &str {
        "overdetermined"
    }
    fn dims(&self) -> Dims {
        Dims { n_y: 1, n_u: 1, n_c: 3, n_g: 1 }
    }
    fn horizon(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn mayer(&self, _y0: &[f64], _yf: &[f64]) -> ScalarEval {
        ScalarEval::zero(2)
    }
    fn running(&self, _t: f64, _y: &[f64], _u: &[f64]) -> ScalarEval {
        ScalarEval::zero(2)
    }
    fn path(&self, t: f64, ydot: &[f64], y: &[f64], u: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(3, 3);
        e.value[0] = ydot[0] - u[0];
        e.value[1] = t.exp() - u[0];
        e.value[2] = y[0] - u[0];
        e.jac[(0, 0)] = 1.0;
        e.jac[(0, 2)] = -1.0;
        e.jac[(1, 2)] = -1.0;
        e.jac[(2, 1)] = 1.0;
        e.jac[(2, 2)] = -1.0;
        e
    }
    fn boundary(&self, y0: &[f64], _yf: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 2);
        e.value[0] = y0[0] - 1.0;
        e.jac[(0, 0)] = 1.0;
        e
    }
    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        Some(self)
    }
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![1.0], vec![1f64.exp()]))
    }
}

impl ExplicitDynamics for Overdetermined {
    fn n_alg(&self) -> usize {
        2
    }
    fn rhs(&self, _t: f64, _y: &[f64], u: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 2);
        e.value[0] = u[0];
        e.jac[(0, 1)] = 1.0;
        e
    }
    fn algebraic(&self, t: f64, y: &[f64], u: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(2, 2);
        e.value[0] = t.exp() - u[0];
        e.value[1] = y[0] - u[0];
        e.jac[(0, 1)] = -1.0;
        e.jac[(1, 0)] = 1.0;
        e.jac[(1, 1)] = -1.0;
        e
    }
}

/// Scalar linear test problem
/// `ẏ = a y + b u + c t + d`, `y(t0) = y0`,
/// `min m y(tF) + ∫ (q y² + r u²) / 2 dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearScalar {
    pub horizon: (f64, f64),
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub y0: f64,
    pub m: f64,
    pub q: f64,
    pub r: f64,
    pub control_bounds: Option<(f64, f64)>,
}

impl LinearScalar {
    /// `ẏ = u` on `[0, 1]` with `y(0) = y0` and no cost.
    pub fn integrator(y0: f64) -> Self {
        Self { horizon: (0.0, 1.0), a: 0.0, b: 1.0, c: 0.0, d: 0.0, y0, m: 0.0, q: 0.0, r: 0.0, control_bounds: None }
    }
}

impl OcpProblem for LinearScalar {
    fn name(&self) -> &str {
        "linear"
    }
    fn dims(&self) -> Dims {
        Dims { n_y: 1, n_u: 1, n_c: 1, n_g: 1 }
    }
    fn horizon(&self) -> (f64, f64) {
        self.horizon
    }
    fn mayer(&self, _y0: &[f64], yf: &[f64]) -> ScalarEval {
        let mut e = ScalarEval::zero(2);
        e.value = self.m * yf[0];
        e.grad[1] = self.m;
        e
    }
    fn running(&self, _t: f64, y: &[f64], u: &[f64]) -> ScalarEval {
        let mut e = ScalarEval::zero(2);
        e.value = 0.5 * (self.q * y[0] * y[0] + self.r * u[0] * u[0]);
        e.grad[0] = self.q * y[0];
        e.grad[1] = self.r * u[0];
        e.hess[(0, 0)] = self.q;
        e.hess[(1, 1)] = self.r;
        e
    }
    fn path(&self, t: f64, ydot: &[f64], y: &[f64], u: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 3);
        e.value[0] = ydot[0] - (self.a * y[0] + self.b * u[0] + self.c * t + self.d);
        e.jac[(0, 0)] = 1.0;
        e.jac[(0, 1)] = -self.a;
        e.jac[(0, 2)] = -self.b;
        e
    }
    fn boundary(&self, y0: &[f64], _yf: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 2);
        e.value[0] = y0[0] - self.y0;
        e.jac[(0, 0)] = 1.0;
        e
    }
    fn bounds(&self) -> Vec<Bound> {
        self.control_bounds.map(|(lo, hi)| vec![Bound::range(1, lo, hi)]).unwrap_or_default()
    }
    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        Some(self)
    }
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![self.y0], vec![self.y0]))
    }
}

impl ExplicitDynamics for LinearScalar {
    fn n_alg(&self) -> usize {
        0
    }
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], _w: &[f64]) -> VectorEval {
        let mut e = VectorEval::zeros(1, 2);
        e.value[0] = self.a * y[0] + self.b * u[0] + self.c * t + self.d;
        e.jac[(0, 0)] = self.a;
        e.jac[(0, 1)] = self.b;
        e
    }
    fn algebraic(&self, _t: f64, _y: &[f64], _u: &[f64], _w: &[f64]) -> VectorEval {
        VectorEval::zeros(0, 2)
    }
}

/// Singular-arc example with its reference.
pub fn problem_x1() -> (SingularArc, AnalyticReference) {
    let reference = AnalyticReference {
        state: Arc::new(|t| vec![SingularArc::optimal_state(t)]),
        control: Arc::new(|t| vec![SingularArc::optimal_control(t)]),
        j_star: Some(SingularArc::J_STAR),
    };
    (SingularArc, reference)
}

/// State-constrained example with its reference.
pub fn problem_x2() -> (StateConstrained, AnalyticReference) {
    let reference = AnalyticReference {
        state: Arc::new(|t| StateConstrained::optimal_state(t).to_vec()),
        control: Arc::new(|t| vec![StateConstrained::optimal_control(t)]),
        j_star: Some(StateConstrained::J_STAR),
    };
    (StateConstrained, reference)
}

/// Overdetermined DAE with its consistent solution `y = u = exp(t)`.
pub fn problem_overdetermined() -> (Overdetermined, AnalyticReference) {
    let reference = AnalyticReference {
        state: Arc::new(|t| vec![t.exp()]),
        control: Arc::new(|t| vec![t.exp()]),
        j_star: Some(0.0),
    };
    (Overdetermined, reference)
}

/// Looks a built-in problem up by its CLI name.
pub fn by_name(name: &str) -> Option<(Box<dyn OcpProblem>, AnalyticReference)> {
    match name {
        "x1" => {
            let (p, r) = problem_x1();
            Some((Box::new(p), r))
        }
        "x2" => {
            let (p, r) = problem_x2();
            Some((Box::new(p), r))
        }
        "overdetermined" => {
            let (p, r) = problem_overdetermined();
            Some((Box::new(p), r))
        }
        _ => None,
    }
}

pub const NAMES: [&str; 3] = ["x1", "x2", "overdetermined"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Mesh;
    use crate::ocp::{derivative_check, objective, residual};
    use approx::assert_abs_diff_eq;

    fn fine(problem: &dyn OcpProblem, reference: &AnalyticReference) -> Trajectory {
        let (t0, tf) = problem.horizon();
        let d = problem.dims();
        let space = TrajectorySpace::standard(Mesh::uniform(t0, tf, 64).unwrap(), d.n_y, d.n_u, 8, 8).unwrap();
        reference.interpolate(&space, d.n_y).unwrap()
    }

    #[test]
    fn x1_control_values() {
        assert_abs_diff_eq!(SingularArc::optimal_control(0.0), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(SingularArc::optimal_control(FRAC_PI_2), 0.125, epsilon = 1e-15);
        for i in 0..=1000 {
            let u = SingularArc::optimal_control(FRAC_PI_2 * i as f64 / 1000.0);
            assert!((-1.0 - 1e-15..=1.0).contains(&u));
            if i > 0 {
                assert!(u > -1.0);
            }
        }
    }

    /// Classical RK4 on `ẏ = y²/2 + u*(t)` as an independent check of the
    /// closed-form state.
    #[test]
    fn x1_state_matches_integration() {
        let f = |t: f64, y: f64| 0.5 * y * y + SingularArc::optimal_control(t);
        let n = 20_000;
        let h = FRAC_PI_2 / n as f64;
        let mut y = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let t = i as f64 * h;
            let k1 = f(t, y);
            let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
            let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
            let k4 = f(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            worst = worst.max((y - SingularArc::optimal_state(t + h)).abs());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn x1_reference_metrics() {
        let (p, r) = problem_x1();
        let tr = fine(&p, &r);
        assert!(residual(&p, &tr).unwrap() <= 1e-8);
        assert_abs_diff_eq!(objective(&p, &tr).unwrap(), SingularArc::J_STAR, epsilon = 1e-9);
    }

    #[test]
    fn x2_reference() {
        let (t0, t1) = StateConstrained::switching_times();
        assert!((t0 - 0.35).abs() < 0.01 && (t1 - 0.88).abs() < 0.01);
        assert_eq!(StateConstrained::optimal_control(t1), 0.0);
        // the arc starts on the control bound
        assert_abs_diff_eq!(0.8 * (2.0 * (t0 - t1)).sinh(), -1.0, epsilon = 1e-14);
        // y1 reaches its bound exactly at t1, y2 is continuous at the switches
        assert_abs_diff_eq!(StateConstrained::optimal_state(t1)[0], 0.4f64.sqrt(), epsilon = 1e-12);
        for t in [t0, t1] {
            let (a, b) = (StateConstrained::optimal_state(t - 1e-12), StateConstrained::optimal_state(t + 1e-12));
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        assert_abs_diff_eq!(StateConstrained::optimal_state(1.0)[1], StateConstrained::J_STAR, epsilon = 1e-12);

        let (p, r) = problem_x2();
        for i in 0..=1000 {
            let y1 = (r.state)(i as f64 / 1000.0)[0];
            assert!(y1 >= 0.4f64.sqrt() - 1e-9);
        }
        // interpolation cannot resolve the kinks of u* inside elements, so the
        // reference is checked on a mesh aligned with the switching times
        let mesh = Mesh::from_breakpoints(vec![0.0, t0, t1, 1.0]).unwrap().refine(16);
        let space = TrajectorySpace::standard(mesh, 2, 1, 8, 8).unwrap();
        let tr = r.interpolate(&space, 2).unwrap();
        assert!(residual(&p, &tr).unwrap() <= 1e-8);
        assert_abs_diff_eq!(objective(&p, &tr).unwrap(), StateConstrained::J_STAR, epsilon = 1e-9);
    }

    #[test]
    fn overdetermined_reference() {
        let (p, r) = problem_overdetermined();
        assert!(residual(&p, &fine(&p, &r)).unwrap() <= 1e-8);
        let space = TrajectorySpace::standard(Mesh::uniform(0.0, 1.0, 8).unwrap(), 1, 1, 2, 2).unwrap();
        let ones = Trajectory::new(space.clone(), vec![1.0; space.dof_count()]).unwrap();
        // c = (-1, e^t - 1, 0)
        let expect = 1.0 + (1f64.exp().powi(2) - 1.0) / 2.0 - 2.0 * (1f64.exp() - 1.0) + 1.0;
        assert_abs_diff_eq!(residual(&p, &ones).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn x1_zero_trajectory_is_feasible() {
        let p = SingularArc;
        let space = TrajectorySpace::standard(Mesh::uniform(0.0, FRAC_PI_2, 5).unwrap(), 1, 1, 2, 2).unwrap();
        let zero = Trajectory::new(space.clone(), vec![0.0; space.dof_count()]).unwrap();
        assert_eq!(residual(&p, &zero).unwrap(), 0.0);
    }

    #[test]
    fn builtin_derivatives() {
        for name in NAMES {
            let (p, _) = by_name(name).unwrap();
            let rep = derivative_check(p.as_ref(), 25, 11);
            assert!(rep.passed(), "{name}: {rep:?}");
        }
        let lin = LinearScalar { a: 0.7, q: 2.0, r: 0.5, m: -1.0, ..LinearScalar::integrator(1.0) };
        assert!(derivative_check(&lin, 10, 1).passed());
    }

    struct Perturbed;
    impl OcpProblem for Perturbed {
        fn name(&self) -> &str {
            "perturbed"
        }
        fn dims(&self) -> Dims {
            StateConstrained.dims()
        }
        fn horizon(&self) -> (f64, f64) {
            StateConstrained.horizon()
        }
        fn mayer(&self, y0: &[f64], yf: &[f64]) -> ScalarEval {
            StateConstrained.mayer(y0, yf)
        }
        fn running(&self, t: f64, y: &[f64], u: &[f64]) -> ScalarEval {
            StateConstrained.running(t, y, u)
        }
        fn path(&self, t: f64, ydot: &[f64], y: &[f64], u: &[f64], w: &[f64]) -> VectorEval {
            let mut e = StateConstrained.path(t, ydot, y, u, w);
            e.jac[(1, 2)] += 0.1;
            e
        }
        fn boundary(&self, y0: &[f64], yf: &[f64], w: &[f64]) -> VectorEval {
            StateConstrained.boundary(y0, yf, w)
        }
        fn bounds(&self) -> Vec<Bound> {
            StateConstrained.bounds()
        }
    }

    #[test]
    fn perturbed_jacobian_is_located() {
        let rep = derivative_check(&Perturbed, 20, 5);
        assert!(!rep.passed());
        let w = rep.worst.unwrap();
        assert_eq!((w.callback, w.row, w.col), ("path jacobian", 1, 2));
    }
}
