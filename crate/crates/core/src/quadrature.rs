//! Quadrature rules on the reference element `[0, 1]` and their composite
//! versions over a mesh.

use crate::error::{Error, Result};
use crate::fem::{LagrangeBasis, Mesh, TrajectorySpace};

/// Points per element of the oracle rule used for metrics and probes.
pub const ORACLE_POINTS: usize = 32;
/// Each element is split this many times before the oracle rule is applied.
pub const ORACLE_REFINEMENT: usize = 8;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Abscissae and weights on `[0, 1]`. Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    abscissae: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(abscissae: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if abscissae.is_empty() || abscissae.len() != weights.len() {
            return Err(Error::InvalidArgument("rule needs matching, non-empty abscissae and weights".into()));
        }
        if abscissae.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument("abscissae must lie in [0, 1]".into()));
        }
        Ok(Self { abscissae, weights })
    }

    /// Interpolatory rule on the given nodes: each weight is the integral of
    /// the matching Lagrange cardinal function.
    pub fn interpolatory(nodes: Vec<f64>) -> Result<Self> {
        let basis = LagrangeBasis::new(nodes.clone())?;
        let exact = gauss_legendre(nodes.len().max(1))?;
        let weights = (0..nodes.len())
            .map(|j| exact.points().map(|(s, w)| w * basis.value(j, s)).sum())
            .collect();
        Self::new(nodes, weights)
    }

    /// One point at the element centre.
    pub fn midpoint() -> Self {
        Self { abscissae: vec![0.5], weights: vec![1.0] }
    }

    /// Both element end points with weight 1/2.
    pub fn trapezoid() -> Self {
        Self { abscissae: vec![0.0, 1.0], weights: vec![0.5, 0.5] }
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.abscissae.iter().copied().zip(self.weights.iter().copied())
    }

    /// Integral of `f` over `[0, 1]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.points().map(|(s, w)| w * f(s)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // P_n'(±1) = (±1)^{n+1} n (n+1) / 2
        let sign = if x > 0.0 || (n as i64 + 1) % 2 == 0 { 1.0 } else { -1.0 };
        sign * n * (n + 1.0) / 2.0
    } else {
        n * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// `q`-point Gauss-Legendre rule mapped to `[0, 1]`, `1 <= q <= 64`.
///
/// Roots come from Newton iteration on `P_q` started at Chebyshev-type
/// guesses; the upper half is mirrored so the rule is exactly symmetric.
pub fn gauss_legendre(q: usize) -> Result<QuadratureRule> {
    if !(1..=64).contains(&q) {
        return Err(Error::InvalidArgument(format!("Gauss-Legendre point count {q} not in 1..=64")));
    }
    let mut abscissae = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let half = q.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre(q, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                break;
            }
        }
        let dp = legendre(q, x).1;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x > 0 runs from the right end inwards
        abscissae[q - 1 - i] = 0.5 * (1.0 + x);
        weights[q - 1 - i] = 0.5 * w;
        abscissae[i] = 0.5 * (1.0 - x);
        weights[i] = 0.5 * w;
    }
    if q % 2 == 1 {
        abscissae[q / 2] = 0.5;
    }
    Ok(QuadratureRule { abscissae, weights })
}

/// `p` Radau points on `[0, 1]` including the right end point, with their
/// interpolatory weights (exact up to degree `2p - 2`).
pub fn radau_right(p: usize) -> Result<QuadratureRule> {
    if !(1..=40).contains(&p) {
        return Err(Error::InvalidArgument(format!("Radau point count {p} not in 1..=40")));
    }
    // Roots of P_{p-1}(x) - P_p(x) on [-1, 1]; x = 1 is always one of them.
    let f = |x: f64| {
        let (a, da) = legendre(p - 1, x);
        let (b, db) = legendre(p, x);
        (a - b, da - db)
    };
    let mut roots = Vec::with_capacity(p);
    let samples = 400 * p;
    let grid = |i: usize| -(std::f64::consts::PI * i as f64 / samples as f64).cos();
    let mut prev = (grid(0), f(grid(0)).0);
    for i in 1..samples {
        let x = grid(i);
        let v = f(x).0;
        if v == 0.0 {
            roots.push(x);
        } else if prev.1 != 0.0 && v.signum() != prev.1.signum() {
            let (mut lo, mut hi) = (prev.0, x);
            let mut r = 0.5 * (lo + hi);
            for _ in 0..NEWTON_MAX_ITER {
                let (val, der) = f(r);
                let newton = r - val / der;
                if val.signum() == f(lo).0.signum() {
                    lo = r;
                } else {
                    hi = r;
                }
                let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                if (next - r).abs() <= NEWTON_TOL {
                    r = next;
                    break;
                }
                r = next;
            }
            roots.push(r);
        }
        prev = (x, v);
    }
    roots.push(1.0);
    if roots.len() != p {
        return Err(Error::InvalidArgument(format!("found {} of {p} Radau points", roots.len())));
    }
    let nodes: Vec<f64> = roots.iter().map(|x| 0.5 * (1.0 + x)).collect();
    QuadratureRule::interpolatory(nodes)
}

/// Physical quadrature points `(element, reference coordinate, weight)` of a
/// rule applied on every element of `mesh`. Weights are `h_k * w_i`.
pub fn composite_points(mesh: &Mesh, rule: &QuadratureRule) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::with_capacity(mesh.num_elements() * rule.len());
    for k in 0..mesh.num_elements() {
        let h = mesh.width(k);
        out.extend(rule.points().map(|(s, w)| (k, s, h * w)));
    }
    out
}

/// Points of the oracle rule, expressed in the elements of `mesh`:
/// every element is split [`ORACLE_REFINEMENT`] times and each piece gets
/// [`ORACLE_POINTS`] Gauss-Legendre points.
pub fn oracle_points(mesh: &Mesh) -> Vec<(usize, f64, f64)> {
    let rule = gauss_legendre(ORACLE_POINTS).expect("valid oracle rule");
    let r = ORACLE_REFINEMENT as f64;
    let mut out = Vec::with_capacity(mesh.num_elements() * ORACLE_REFINEMENT * ORACLE_POINTS);
    for k in 0..mesh.num_elements() {
        let h = mesh.width(k);
        for piece in 0..ORACLE_REFINEMENT {
            for (s, w) in rule.points() {
                out.push((k, (piece as f64 + s) / r, h * w / r));
            }
        }
    }
    out
}

/// `sum_k sum_i h_k w_i f(t_{k,i})`.
pub fn composite_integral<F: Fn(f64) -> f64>(mesh: &Mesh, rule: &QuadratureRule, f: F) -> Result<f64> {
    let mut total = 0.0;
    for (k, s, w) in composite_points(mesh, rule) {
        let t = mesh.map(k, s);
        let v = f(t);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("integrand at t = {t}")));
        }
        total += w * v;
    }
    Ok(total)
}

/// Outcome of [`stability_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    /// `∫ c(u_h)^2` with the candidate rule.
    pub r_h: f64,
    /// The same integral with the oracle rule.
    pub r_oracle: f64,
}

/// Compares the candidate rule against the oracle on `∫ c(u_h(t))^2 dt` for
/// one component of a trajectory.
///
/// Each element's polynomial is evaluated on its own closed element, so rules
/// with end-point abscissae see one-sided values of discontinuous components.
pub fn stability_probe<C: Fn(f64) -> f64>(
    space: &TrajectorySpace,
    component: usize,
    residual: C,
    candidate: &QuadratureRule,
    coeffs: &[f64],
) -> Result<ProbeResult> {
    space.check_len(coeffs)?;
    let mesh = space.mesh();
    let integrate = |points: Vec<(usize, f64, f64)>| -> Result<f64> {
        let mut acc = 0.0;
        for (k, s, w) in points {
            let c = residual(space.eval_local(coeffs, component, k, s).0);
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("probe residual in element {k}")));
            }
            acc += w * c * c;
        }
        Ok(acc)
    };
    Ok(ProbeResult {
        r_h: integrate(composite_points(mesh, candidate))?,
        r_oracle: integrate(oracle_points(mesh))?,
    })
}

/// Discontinuous piecewise-affine function running from -1 to +1 on every
/// element: the classic counter-example for the midpoint rule.
pub fn zigzag(mesh: &Mesh) -> Result<(TrajectorySpace, Vec<f64>)> {
    let space = TrajectorySpace::new(mesh.clone(), vec![crate::fem::ComponentSpec::control(1)])?;
    let mut x = vec![0.0; space.dof_count()];
    for k in 0..mesh.num_elements() {
        x[space.dof(0, k, 0)] = -1.0;
        x[space.dof(0, k, 1)] = 1.0;
    }
    Ok((space, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_closed_forms() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.abscissae(), &[0.5]);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-15);

        let r = gauss_legendre(2).unwrap();
        let d = 0.5 / 3f64.sqrt();
        assert_abs_diff_eq!(r.abscissae()[0], 0.5 - d, epsilon = 1e-15);
        assert_abs_diff_eq!(r.abscissae()[1], 0.5 + d, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 0.5, epsilon = 1e-15);

        let r = gauss_legendre(3).unwrap();
        let d = 0.5 * 0.6f64.sqrt();
        assert_abs_diff_eq!(r.abscissae()[0], 0.5 - d, epsilon = 1e-15);
        assert_abs_diff_eq!(r.abscissae()[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 5.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[1], 8.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.integrate(|t| t.powi(5)), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn range_checked() {
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(65).is_err());
        assert!(gauss_legendre(64).is_ok());
    }

    #[test]
    fn exactness_positivity_symmetry() {
        for q in 1..=10 {
            let r = gauss_legendre(q).unwrap();
            assert!(r.weights().iter().all(|&w| w > 0.0));
            assert_abs_diff_eq!(r.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for i in 0..q {
                assert_abs_diff_eq!(r.abscissae()[i] + r.abscissae()[q - 1 - i], 1.0, epsilon = 1e-15);
                assert_eq!(r.weights()[i], r.weights()[q - 1 - i]);
            }
            for m in 0..2 * q {
                let approx = r.integrate(|t| t.powi(m as i32));
                assert_abs_diff_eq!(approx, 1.0 / (m as f64 + 1.0), epsilon = 1e-12);
            }
            let m = 2 * q as i32;
            assert!((r.integrate(|t| t.powi(m)) - 1.0 / (m as f64 + 1.0)).abs() > 0.0);
        }
    }

    #[test]
    fn large_rules_stay_accurate() {
        for q in [20, 32, 64] {
            let r = gauss_legendre(q).unwrap();
            assert_abs_diff_eq!(r.integrate(f64::exp), 1f64.exp() - 1.0, epsilon = 1e-14);
            assert!(r.abscissae().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn radau_points() {
        let r = radau_right(1).unwrap();
        assert_eq!(r.abscissae(), &[1.0]);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-15);
        // two-point right Radau: nodes 1/3, 1 with weights 3/4, 1/4
        let r = radau_right(2).unwrap();
        assert_abs_diff_eq!(r.abscissae()[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[0], 0.75, epsilon = 1e-14);
        for p in 1..=12 {
            let r = radau_right(p).unwrap();
            assert_eq!(r.len(), p);
            assert_eq!(*r.abscissae().last().unwrap(), 1.0);
            for m in 0..=(2 * p - 2) {
                let approx = r.integrate(|t| t.powi(m as i32));
                assert_abs_diff_eq!(approx, 1.0 / (m as f64 + 1.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn composite_integrals() {
        let mesh = Mesh::uniform(0.0, 1.0, 7).unwrap();
        for q in 1..4 {
            let r = gauss_legendre(q).unwrap();
            assert_abs_diff_eq!(composite_integral(&mesh, &r, |_| 1.0).unwrap(), 1.0, epsilon = 1e-14);
        }
        let one = Mesh::uniform(0.0, 1.0, 1).unwrap();
        let r2 = gauss_legendre(2).unwrap();
        assert_abs_diff_eq!(composite_integral(&one, &r2, |t| t * t).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        let four = Mesh::uniform(0.0, 1.0, 4).unwrap();
        let v = composite_integral(&four, &r2, f64::exp).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() <= 1e-5);
        assert!(composite_integral(&four, &r2, |_| f64::NAN).is_err());
    }

    #[test]
    fn composite_is_linear_and_refinement_additive() {
        let mesh = Mesh::uniform(0.0, 2.0, 3).unwrap();
        let r = gauss_legendre(4).unwrap();
        let f = |t: f64| t.sin();
        let g = |t: f64| t * t * t;
        let lhs = composite_integral(&mesh, &r, |t| 2.0 * f(t) - 3.0 * g(t)).unwrap();
        let rhs = 2.0 * composite_integral(&mesh, &r, f).unwrap() - 3.0 * composite_integral(&mesh, &r, g).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
        // polynomials within the exactness degree are unchanged by refinement
        let p = |t: f64| 1.0 + t - 4.0 * t.powi(5);
        let coarse = composite_integral(&mesh, &r, p).unwrap();
        let fine = composite_integral(&mesh.refine(2), &r, p).unwrap();
        assert_abs_diff_eq!(coarse, fine, epsilon = 1e-12);
    }

    #[test]
    fn oracle_weights_cover_the_mesh() {
        let mesh = Mesh::uniform(0.0, 3.0, 5).unwrap();
        let total: f64 = oracle_points(&mesh).iter().map(|p| p.2).sum();
        assert_abs_diff_eq!(total, 3.0, epsilon = 1e-13);
    }

    fn sin_pi(u: f64) -> f64 {
        (std::f64::consts::PI * u).sin()
    }

    #[test]
    fn midpoint_is_fooled_by_the_zigzag() {
        for k in [4, 8, 16, 32] {
            let (space, x) = zigzag(&Mesh::uniform(0.0, 1.0, k).unwrap()).unwrap();
            let res = stability_probe(&space, 0, sin_pi, &QuadratureRule::midpoint(), &x).unwrap();
            assert_eq!(res.r_h, 0.0);
            assert!((res.r_oracle - 0.5).abs() <= 1e-6);
            // the end-point rule only sees sin(±π) as well
            let tz = stability_probe(&space, 0, sin_pi, &QuadratureRule::trapezoid(), &x).unwrap();
            assert!(tz.r_h < 1e-30);
        }
    }

    #[test]
    fn two_point_gauss_is_not_fooled() {
        let (space, x) = zigzag(&Mesh::uniform(0.0, 1.0, 8).unwrap()).unwrap();
        let res = stability_probe(&space, 0, sin_pi, &gauss_legendre(2).unwrap(), &x).unwrap();
        // u_h = ±1/sqrt(3) at both Gauss points
        let expect = (std::f64::consts::PI / 3f64.sqrt()).sin().powi(2);
        assert_abs_diff_eq!(res.r_h, expect, epsilon = 1e-13);
        assert_abs_diff_eq!(res.r_h, 0.942102730470473, epsilon = 1e-12);
    }

    #[test]
    fn zero_control_has_zero_residual() {
        let mesh = Mesh::uniform(0.0, 1.0, 4).unwrap();
        let (space, _) = zigzag(&mesh).unwrap();
        let x = vec![0.0; space.dof_count()];
        for rule in [QuadratureRule::midpoint(), QuadratureRule::trapezoid(), gauss_legendre(3).unwrap()] {
            let res = stability_probe(&space, 0, sin_pi, &rule, &x).unwrap();
            assert_eq!(res.r_h, 0.0);
            assert_eq!(res.r_oracle, 0.0);
        }
    }
}
