//! Continuous-time optimal control problems in Bolza form and the oracle
//! metrics used to judge numerical solutions.
//!
//! A problem is
//!
//! ```text
//!   min  W(y(t0), y(tF)) + ∫ w(y, u, t) dt
//!   s.t. 0 = c(ẏ, y, u, t)          for almost every t
//!        0 = g(y(t0), y(tF))
//!        x_L <= (y, u) <= x_U
//! ```
//!
//! Callbacks return values together with first derivatives and a weighted
//! second-derivative contraction, so transcriptions can assemble exact
//! Jacobians and Lagrangian Hessians.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{ComponentKind, TrajectorySpace};
use crate::quadrature::oracle_points;

/// Default clamp used by [`clip_wrap`].
pub const DEFAULT_CLIP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_y: usize,
    pub n_u: usize,
    pub n_c: usize,
    pub n_g: usize,
}

/// Scalar callback output: value, gradient and Hessian in the callback's
/// argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl ScalarEval {
    pub fn zero(nargs: usize) -> Self {
        Self { value: 0.0, grad: DVector::zeros(nargs), hess: DMatrix::zeros(nargs, nargs) }
    }
}

/// Vector callback output: values, Jacobian, and `Σ_i λ_i ∇² f_i` for the
/// weights passed by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEval {
    pub value: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub hess: DMatrix<f64>,
}

impl VectorEval {
    pub fn zeros(m: usize, nargs: usize) -> Self {
        Self { value: DVector::zeros(m), jac: DMatrix::zeros(m, nargs), hess: DMatrix::zeros(nargs, nargs) }
    }
}

/// Box bound on one trajectory component.
///
/// `component` indexes `x = (y, u)`: states first, then controls. Bounds can
/// be one-sided (infinite on the other side) and restricted to a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub component: usize,
    pub lower: f64,
    pub upper: f64,
    pub window: Option<(f64, f64)>,
}

impl Bound {
    pub fn lower(component: usize, lower: f64) -> Self {
        Self { component, lower, upper: f64::INFINITY, window: None }
    }

    pub fn upper(component: usize, upper: f64) -> Self {
        Self { component, lower: f64::NEG_INFINITY, upper, window: None }
    }

    pub fn range(component: usize, lower: f64, upper: f64) -> Self {
        Self { component, lower, upper, window: None }
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.window.is_none_or(|(a, b)| t >= a && t <= b)
    }
}

/// Semi-explicit split `ẏ = f1(y, u, t)`, `0 = f2(y, u, t)` required by the
/// classical collocation schemes.
pub trait ExplicitDynamics: Send + Sync {
    /// Number of algebraic rows in `f2`.
    fn n_alg(&self) -> usize;
    /// `f1` with arguments `(y, u)`.
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], weights: &[f64]) -> VectorEval;
    /// `f2` with arguments `(y, u)`.
    fn algebraic(&self, t: f64, y: &[f64], u: &[f64], weights: &[f64]) -> VectorEval;
}

/// An optimal control problem with hand-coded derivatives.
pub trait OcpProblem: Send + Sync {
    fn name(&self) -> &str;
    fn dims(&self) -> Dims;
    fn horizon(&self) -> (f64, f64);
    /// `W` with arguments `(y(t0), y(tF))`.
    fn mayer(&self, y0: &[f64], yf: &[f64]) -> ScalarEval;
    /// `w` with arguments `(y, u)`.
    fn running(&self, t: f64, y: &[f64], u: &[f64]) -> ScalarEval;
    /// `c` with arguments `(ẏ, y, u)`.
    fn path(&self, t: f64, ydot: &[f64], y: &[f64], u: &[f64], weights: &[f64]) -> VectorEval;
    /// `g` with arguments `(y(t0), y(tF))`.
    fn boundary(&self, y0: &[f64], yf: &[f64], weights: &[f64]) -> VectorEval;

    fn bounds(&self) -> Vec<Bound> {
        Vec::new()
    }

    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        None
    }

    /// Known or guessed state values at `(t0, tF)` for the straight-line
    /// initial guess.
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

impl<P: OcpProblem + ?Sized> OcpProblem for &P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn horizon(&self) -> (f64, f64) {
        (**self).horizon()
    }
    fn mayer(&self, y0: &[f64], yf: &[f64]) -> ScalarEval {
        (**self).mayer(y0, yf)
    }
    fn running(&self, t: f64, y: &[f64], u: &[f64]) -> ScalarEval {
        (**self).running(t, y, u)
    }
    fn path(&self, t: f64, ydot: &[f64], y: &[f64], u: &[f64], weights: &[f64]) -> VectorEval {
        (**self).path(t, ydot, y, u, weights)
    }
    fn boundary(&self, y0: &[f64], yf: &[f64], weights: &[f64]) -> VectorEval {
        (**self).boundary(y0, yf, weights)
    }
    fn bounds(&self) -> Vec<Bound> {
        (**self).bounds()
    }
    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        (**self).explicit_form()
    }
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        (**self).boundary_guess()
    }
}

/// Finite element trajectory `x_h = (y_h, u_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub space: TrajectorySpace,
    pub coeffs: Vec<f64>,
}

impl Trajectory {
    pub fn new(space: TrajectorySpace, coeffs: Vec<f64>) -> Result<Self> {
        space.check_len(&coeffs)?;
        Ok(Self { space, coeffs })
    }

    /// Checks that the first `n_y` components are states and the next `n_u`
    /// controls.
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        let comps = self.space.components();
        let ok = comps.len() == dims.n_y + dims.n_u
            && comps[..dims.n_y].iter().all(|c| c.kind == ComponentKind::State)
            && comps[dims.n_y..].iter().all(|c| c.kind != ComponentKind::State);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "trajectory components do not match n_y = {}, n_u = {}",
                dims.n_y, dims.n_u
            )))
        }
    }

    /// `(ẏ, y, u)` of element `k` at reference coordinate `s`.
    pub fn sample_local(&self, n_y: usize, k: usize, s: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut ydot = Vec::with_capacity(n_y);
        let mut y = Vec::with_capacity(n_y);
        let mut u = Vec::new();
        for c in 0..self.space.num_components() {
            let (v, d) = self.space.eval_local(&self.coeffs, c, k, s);
            if c < n_y {
                y.push(v);
                ydot.push(d);
            } else {
                u.push(v);
            }
        }
        (ydot, y, u)
    }

    /// `(ẏ, y, u)` at time `t` (right-limit convention at breakpoints).
    pub fn sample(&self, n_y: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (k, s) = self.space.mesh().locate(t)?;
        Ok(self.sample_local(n_y, k, s))
    }

    /// State values at both ends of the horizon.
    pub fn endpoints(&self, n_y: usize) -> (Vec<f64>, Vec<f64>) {
        let last = self.space.mesh().num_elements() - 1;
        (self.sample_local(n_y, 0, 0.0).1, self.sample_local(n_y, last, 1.0).1)
    }
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `J(x) = W(y(t0), y(tF)) + ∫ w dt`, integrated with the oracle rule.
pub fn objective<P: OcpProblem + ?Sized>(problem: &P, traj: &Trajectory) -> Result<f64> {
    let dims = problem.dims();
    traj.check_dims(dims)?;
    let (y0, yf) = traj.endpoints(dims.n_y);
    let mut j = check_finite(problem.mayer(&y0, &yf).value, "Mayer term")?;
    let mesh = traj.space.mesh();
    for (k, s, w) in oracle_points(mesh) {
        let (_, y, u) = traj.sample_local(dims.n_y, k, s);
        j += w * check_finite(problem.running(mesh.map(k, s), &y, &u).value, "running cost")?;
    }
    Ok(j)
}

/// `r(x) = ∫ ‖c‖² dt + ‖g‖²`, integrated with the oracle rule.
pub fn residual<P: OcpProblem + ?Sized>(problem: &P, traj: &Trajectory) -> Result<f64> {
    let dims = problem.dims();
    traj.check_dims(dims)?;
    let (y0, yf) = traj.endpoints(dims.n_y);
    let g = problem.boundary(&y0, &yf, &vec![0.0; dims.n_g]).value;
    let mut r = check_finite(g.norm_squared(), "boundary residual")?;
    let mesh = traj.space.mesh();
    let zero = vec![0.0; dims.n_c];
    for (k, s, w) in oracle_points(mesh) {
        let (ydot, y, u) = traj.sample_local(dims.n_y, k, s);
        let c = problem.path(mesh.map(k, s), &ydot, &y, &u, &zero).value;
        r += w * check_finite(c.norm_squared(), "path residual")?;
    }
    Ok(r)
}

/// `max{0, J(x_h) - J*}`.
pub fn optimality_gap<P: OcpProblem + ?Sized>(problem: &P, traj: &Trajectory, j_star: f64) -> Result<f64> {
    Ok(gap(objective(problem, traj)?, j_star))
}

/// `max{0, j - j_star}`.
pub fn gap(j: f64, j_star: f64) -> f64 {
    (j - j_star).max(0.0)
}

/// Problem whose `W`, `w`, `c` and `g` outputs are clamped to
/// `[-bound, bound]`. Derivatives of clamped outputs are zero.
#[derive(Debug, Clone)]
pub struct Clipped<P> {
    inner: P,
    bound: f64,
}

/// Wraps `problem` so all its outputs are bounded by `bound` (default
/// [`DEFAULT_CLIP`]).
pub fn clip_wrap<P: OcpProblem>(problem: P, bound: f64) -> Result<Clipped<P>> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!("clip bound {bound} must be positive")));
    }
    Ok(Clipped { inner: problem, bound })
}

impl<P> Clipped<P> {
    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn clip_scalar(&self, mut e: ScalarEval) -> ScalarEval {
        if e.value.abs() > self.bound {
            e.value = e.value.clamp(-self.bound, self.bound);
            e.grad.fill(0.0);
            e.hess.fill(0.0);
        }
        e
    }

    fn clip_vector<F: Fn(&[f64]) -> VectorEval>(&self, weights: &[f64], eval: F) -> VectorEval {
        let probe = eval(weights);
        let clamped: Vec<bool> = probe.value.iter().map(|v| v.abs() > self.bound).collect();
        if !clamped.iter().any(|&c| c) {
            return probe;
        }
        let masked: Vec<f64> = weights.iter().zip(&clamped).map(|(&w, &c)| if c { 0.0 } else { w }).collect();
        let mut e = eval(&masked);
        for (i, &c) in clamped.iter().enumerate() {
            if c {
                e.value[i] = e.value[i].clamp(-self.bound, self.bound);
                e.jac.row_mut(i).fill(0.0);
            }
        }
        e
    }
}

impl<P: OcpProblem> OcpProblem for Clipped<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn horizon(&self) -> (f64, f64) {
        self.inner.horizon()
    }
    fn mayer(&self, y0: &[f64], yf: &[f64]) -> ScalarEval {
        self.clip_scalar(self.inner.mayer(y0, yf))
    }
    fn running(&self, t: f64, y: &[f64], u: &[f64]) -> ScalarEval {
        self.clip_scalar(self.inner.running(t, y, u))
    }
    fn path(&self, t: f64, ydot: &[f64], y: &[f64], u: &[f64], weights: &[f64]) -> VectorEval {
        self.clip_vector(weights, |w| self.inner.path(t, ydot, y, u, w))
    }
    fn boundary(&self, y0: &[f64], yf: &[f64], weights: &[f64]) -> VectorEval {
        self.clip_vector(weights, |w| self.inner.boundary(y0, yf, w))
    }
    fn bounds(&self) -> Vec<Bound> {
        self.inner.bounds()
    }
    fn explicit_form(&self) -> Option<&dyn ExplicitDynamics> {
        self.inner.explicit_form()
    }
    fn boundary_guess(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.inner.boundary_guess()
    }
}

/// Worst mismatch found by [`derivative_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeIssue {
    pub callback: &'static str,
    pub row: usize,
    pub col: usize,
    pub supplied: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    /// Largest `|supplied - fd| / max(1, |fd|)` over all entries and samples.
    pub max_rel_error: f64,
    pub worst: Option<DerivativeIssue>,
    /// Samples at which some callback returned non-finite output.
    pub skipped: usize,
    pub samples: usize,
}

impl DerivativeReport {
    pub const TOLERANCE: f64 = 1e-4;

    pub fn passed(&self) -> bool {
        self.max_rel_error <= Self::TOLERANCE
    }
}

const FD_STEP: f64 = 1e-6;

struct Tracker {
    max: f64,
    worst: Option<DerivativeIssue>,
}

impl Tracker {
    fn record(&mut self, callback: &'static str, row: usize, col: usize, supplied: f64, estimate: f64) {
        let err = (supplied - estimate).abs() / estimate.abs().max(1.0);
        if err > self.max || (err.is_nan() && self.worst.is_none()) {
            self.max = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = Some(DerivativeIssue { callback, row, col, supplied, estimate });
        }
    }
}

fn fd_step(x: f64) -> f64 {
    FD_STEP * x.abs().max(1.0)
}

/// Central-difference check of a vector callback `f(args, weights)`: the
/// Jacobian against differences of the values and the weighted Hessian
/// against differences of `λᵀ J`.
fn check_vector<F: Fn(&[f64], &[f64]) -> VectorEval>(
    tr: &mut Tracker,
    name_jac: &'static str,
    name_hess: &'static str,
    args: &[f64],
    weights: &[f64],
    f: F,
) -> bool {
    let base = f(args, weights);
    if base.value.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut x = args.to_vec();
    for col in 0..args.len() {
        let h = fd_step(args[col]);
        x[col] = args[col] + h;
        let plus = f(&x, weights);
        x[col] = args[col] - h;
        let minus = f(&x, weights);
        x[col] = args[col];
        if plus.value.iter().chain(minus.value.iter()).any(|v| !v.is_finite()) {
            return false;
        }
        for row in 0..base.value.len() {
            let fd = (plus.value[row] - minus.value[row]) / (2.0 * h);
            tr.record(name_jac, row, col, base.jac[(row, col)], fd);
        }
        let lp = plus.jac.tr_mul(&DVector::from_column_slice(weights));
        let lm = minus.jac.tr_mul(&DVector::from_column_slice(weights));
        for row in 0..args.len() {
            let fd = (lp[row] - lm[row]) / (2.0 * h);
            tr.record(name_hess, row, col, base.hess[(row, col)], fd);
        }
    }
    true
}

fn check_scalar<F: Fn(&[f64]) -> ScalarEval>(
    tr: &mut Tracker,
    name_grad: &'static str,
    name_hess: &'static str,
    args: &[f64],
    f: F,
) -> bool {
    let base = f(args);
    if !base.value.is_finite() {
        return false;
    }
    let mut x = args.to_vec();
    for col in 0..args.len() {
        let h = fd_step(args[col]);
        x[col] = args[col] + h;
        let plus = f(&x);
        x[col] = args[col] - h;
        let minus = f(&x);
        x[col] = args[col];
        if !plus.value.is_finite() || !minus.value.is_finite() {
            return false;
        }
        tr.record(name_grad, 0, col, base.grad[col], (plus.value - minus.value) / (2.0 * h));
        for row in 0..args.len() {
            let fd = (plus.grad[row] - minus.grad[row]) / (2.0 * h);
            tr.record(name_hess, row, col, base.hess[(row, col)], fd);
        }
    }
    true
}

/// Samples argument ranges from the problem's bounds, clipped to `[-2, 2]`
/// where a side is free.
fn sample_range(bound: Option<&Bound>) -> (f64, f64) {
    match bound {
        None => (-1.0, 1.0),
        Some(b) => {
            let lo = if b.lower.is_finite() { b.lower } else { (b.upper - 2.0).min(-1.0) };
            let hi = if b.upper.is_finite() { b.upper } else { (lo + 2.0).max(2.0) };
            (lo, hi)
        }
    }
}

/// Compares every supplied first and second derivative with central finite
/// differences at `probe_points` random arguments.
pub fn derivative_check<P: OcpProblem + ?Sized>(problem: &P, probe_points: usize, seed: u64) -> DerivativeReport {
    let dims = problem.dims();
    let (t0, tf) = problem.horizon();
    let bounds = problem.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges: Vec<(f64, f64)> = (0..dims.n_y + dims.n_u)
        .map(|c| sample_range(bounds.iter().find(|b| b.component == c && b.window.is_none())))
        .collect();
    let mut tr = Tracker { max: 0.0, worst: None };
    let mut skipped = 0;
    for _ in 0..probe_points {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
        let t = draw((t0, tf));
        let y: Vec<f64> = ranges[..dims.n_y].iter().map(|&r| draw(r)).collect();
        let y2: Vec<f64> = ranges[..dims.n_y].iter().map(|&r| draw(r)).collect();
        let u: Vec<f64> = ranges[dims.n_y..].iter().map(|&r| draw(r)).collect();
        let ydot: Vec<f64> = (0..dims.n_y).map(|_| draw((-2.0, 2.0))).collect();
        let wc: Vec<f64> = (0..dims.n_c).map(|_| draw((-1.0, 1.0))).collect();
        let wg: Vec<f64> = (0..dims.n_g).map(|_| draw((-1.0, 1.0))).collect();
        let (ny, nu) = (dims.n_y, dims.n_u);

        let mut ok = true;
        let yu: Vec<f64> = y.iter().chain(&u).copied().collect();
        ok &= check_scalar(&mut tr, "running gradient", "running hessian", &yu, |a| {
            problem.running(t, &a[..ny], &a[ny..])
        });
        let ends: Vec<f64> = y.iter().chain(&y2).copied().collect();
        ok &= check_scalar(&mut tr, "mayer gradient", "mayer hessian", &ends, |a| {
            problem.mayer(&a[..ny], &a[ny..])
        });
        let full: Vec<f64> = ydot.iter().chain(&y).chain(&u).copied().collect();
        ok &= check_vector(&mut tr, "path jacobian", "path hessian", &full, &wc, |a, w| {
            problem.path(t, &a[..ny], &a[ny..2 * ny], &a[2 * ny..2 * ny + nu], w)
        });
        ok &= check_vector(&mut tr, "boundary jacobian", "boundary hessian", &ends, &wg, |a, w| {
            problem.boundary(&a[..ny], &a[ny..], w)
        });
        if let Some(ex) = problem.explicit_form() {
            let wr: Vec<f64> = (0..ny).map(|_| draw((-1.0, 1.0))).collect();
            let wa: Vec<f64> = (0..ex.n_alg()).map(|_| draw((-1.0, 1.0))).collect();
            ok &= check_vector(&mut tr, "dynamics jacobian", "dynamics hessian", &yu, &wr, |a, w| {
                ex.rhs(t, &a[..ny], &a[ny..], w)
            });
            ok &= check_vector(&mut tr, "algebraic jacobian", "algebraic hessian", &yu, &wa, |a, w| {
                ex.algebraic(t, &a[..ny], &a[ny..], w)
            });
        }
        if !ok {
            skipped += 1;
        }
    }
    DerivativeReport { max_rel_error: tr.max, worst: tr.worst, skipped, samples: probe_points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{Mesh, TrajectorySpace};
    use approx::assert_abs_diff_eq;

    /// ẏ = u, W = y(tF), w = cos(t)·u, g = y(t0); optional big running cost.
    struct Toy {
        horizon: (f64, f64),
        scale: f64,
    }

    impl OcpProblem for Toy {
        fn name(&self) -> &str {
            "toy"
        }
        fn dims(&self) -> Dims {
            Dims { n_y: 1, n_u: 1, n_c: 1, n_g: 1 }
        }
        fn horizon(&self) -> (f64, f64) {
            self.horizon
        }
        fn mayer(&self, _y0: &[f64], yf: &[f64]) -> ScalarEval {
            let mut e = ScalarEval::zero(2);
            e.value = yf[0];
            e.grad[1] = 1.0;
            e
        }
        fn running(&self, t: f64, _y: &[f64], u: &[f64]) -> ScalarEval {
            let mut e = ScalarEval::zero(2);
            e.value = self.scale * t.cos() * u[0];
            e.grad[1] = self.scale * t.cos();
            e
        }
        fn path(&self, _t: f64, ydot: &[f64], _y: &[f64], u: &[f64], _w: &[f64]) -> VectorEval {
            let mut e = VectorEval::zeros(1, 3);
            e.value[0] = ydot[0] - u[0];
            e.jac[(0, 0)] = 1.0;
            e.jac[(0, 2)] = -1.0;
            e
        }
        fn boundary(&self, y0: &[f64], _yf: &[f64], _w: &[f64]) -> VectorEval {
            let mut e = VectorEval::zeros(1, 2);
            e.value[0] = y0[0];
            e.jac[(0, 0)] = 1.0;
            e
        }
    }

    fn traj(problem: &Toy, k: usize, y: impl Fn(f64) -> f64, u: impl Fn(f64) -> f64) -> Trajectory {
        let (t0, tf) = problem.horizon;
        let space = TrajectorySpace::standard(Mesh::uniform(t0, tf, k).unwrap(), 1, 1, 3, 3).unwrap();
        let mut x = vec![0.0; space.dof_count()];
        space.interpolate_into(&mut x, 0, y).unwrap();
        space.interpolate_into(&mut x, 1, u).unwrap();
        Trajectory::new(space, x).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = Toy { horizon: (0.0, 1.0), scale: 0.0 };
        let tr = traj(&p, 3, |_| 3.0, |_| 0.0);
        assert_abs_diff_eq!(objective(&p, &tr).unwrap(), 3.0, epsilon = 1e-14);

        let p = Toy { horizon: (0.0, std::f64::consts::FRAC_PI_2), scale: 1.0 };
        let tr = traj(&p, 4, |_| 0.0, |_| 1.0);
        assert_abs_diff_eq!(objective(&p, &tr).unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn residual_vanishes_on_feasible_and_is_positive_otherwise() {
        let p = Toy { horizon: (0.0, 1.0), scale: 1.0 };
        let ok = traj(&p, 4, |t| t * t, |t| 2.0 * t);
        assert!(residual(&p, &ok).unwrap() < 1e-24);
        let bad = traj(&p, 4, |t| t, |_| 0.0);
        // ∫ 1 dt on [0, 1] from ẏ - u = 1
        assert_abs_diff_eq!(residual(&p, &bad).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_are_stable_under_evaluation_refinement() {
        let p = Toy { horizon: (0.0, 1.0), scale: 1.0 };
        let coarse = traj(&p, 4, |t| (3.0 * t).sin(), |t| t.exp());
        // same piecewise cubic re-expressed on a twice finer mesh
        let fine_space = TrajectorySpace::standard(coarse.space.mesh().refine(2), 1, 1, 3, 3).unwrap();
        let mut x = vec![0.0; fine_space.dof_count()];
        for c in 0..2 {
            fine_space.interpolate_into(&mut x, c, |t| coarse.space.eval(&coarse.coeffs, c, t).unwrap().0).unwrap();
        }
        // breakpoints of the coarse mesh are shared, so right-limit sampling of
        // discontinuous controls is exact in the interior of fine elements
        let fine = Trajectory::new(fine_space, x).unwrap();
        let (j0, j1) = (objective(&p, &coarse).unwrap(), objective(&p, &fine).unwrap());
        assert!((j0 - j1).abs() <= 1e-9 * j0.abs());
        let (r0, r1) = (residual(&p, &coarse).unwrap(), residual(&p, &fine).unwrap());
        assert!((r0 - r1).abs() <= 1e-9 * r0.abs());
    }

    #[test]
    fn gap_is_clamped() {
        assert_eq!(gap(1.0, 1.0), 0.0);
        assert_eq!(gap(0.7, 1.0), 0.0);
        assert_abs_diff_eq!(gap(1.25, 1.0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn clipping() {
        let p = clip_wrap(Toy { horizon: (0.0, 1.0), scale: 1.0 }, DEFAULT_CLIP).unwrap();
        let e = p.running(0.0, &[0.0], &[3.7]);
        assert_eq!(e.value, 3.7);
        let big = clip_wrap(Toy { horizon: (0.0, 1.0), scale: 1e12 }, DEFAULT_CLIP).unwrap();
        let e = big.running(0.0, &[0.0], &[1.0]);
        assert_eq!(e.value, 1e8);
        assert_eq!(e.grad.amax(), 0.0);
        let c = big.path(0.0, &[2e9], &[0.0], &[0.0], &[1.0]);
        assert_eq!(c.value[0], 1e8);
        assert_eq!(c.jac.amax(), 0.0);
        let again = clip_wrap(&big, DEFAULT_CLIP).unwrap();
        assert_eq!(again.running(0.3, &[0.1], &[2.0]), big.running(0.3, &[0.1], &[2.0]));
        assert!(clip_wrap(Toy { horizon: (0.0, 1.0), scale: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn linear_problem_passes_derivative_check() {
        let rep = derivative_check(&Toy { horizon: (0.0, 1.0), scale: 2.0 }, 10, 3);
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.skipped, 0);
    }
}
