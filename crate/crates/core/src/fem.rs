//! Meshes and piecewise-polynomial trajectory spaces.
//!
//! Every component of a trajectory lives on the same [`Mesh`] and is
//! represented element by element in a nodal Lagrange basis on the reference
//! element `[0, 1]`. Continuous components share the coefficient at element
//! interfaces, discontinuous ones duplicate it.

use crate::error::{Error, Result};

/// Partition `t0 = b_0 < b_1 < ... < b_K = tF` of the time horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    breakpoints: Vec<f64>,
}

impl Mesh {
    /// `k` intervals of equal length on `[t0, tf]`.
    pub fn uniform(t0: f64, tf: f64, k: usize) -> Result<Self> {
        if !t0.is_finite() || !tf.is_finite() {
            return Err(Error::NonFinite(format!("mesh end points ({t0}, {tf})")));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one interval".into()));
        }
        if tf <= t0 {
            return Err(Error::InvalidArgument(format!("empty horizon [{t0}, {tf}]")));
        }
        let h = (tf - t0) / k as f64;
        let mut breakpoints: Vec<f64> = (0..=k).map(|i| t0 + i as f64 * h).collect();
        breakpoints[k] = tf;
        Ok(Self { breakpoints })
    }

    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidArgument("mesh needs at least one interval".into()));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("mesh breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { breakpoints })
    }

    pub fn t0(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn tf(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    pub fn num_elements(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// End points of element `k`.
    pub fn element(&self, k: usize) -> (f64, f64) {
        (self.breakpoints[k], self.breakpoints[k + 1])
    }

    pub fn width(&self, k: usize) -> f64 {
        self.breakpoints[k + 1] - self.breakpoints[k]
    }

    pub fn max_width(&self) -> f64 {
        (0..self.num_elements()).map(|k| self.width(k)).fold(0.0, f64::max)
    }

    /// `max_k h_k / min_k h_k`; 1 for uniform meshes.
    pub fn quasi_uniformity(&self) -> f64 {
        let widths = (0..self.num_elements()).map(|k| self.width(k));
        let (lo, hi) = widths.fold((f64::INFINITY, 0.0_f64), |(lo, hi), h| (lo.min(h), hi.max(h)));
        hi / lo
    }

    /// Splits every element into `factor` equal pieces.
    pub fn refine(&self, factor: usize) -> Mesh {
        let factor = factor.max(1);
        let mut breakpoints = Vec::with_capacity(self.num_elements() * factor + 1);
        for k in 0..self.num_elements() {
            let (a, b) = self.element(k);
            for i in 0..factor {
                breakpoints.push(a + (b - a) * i as f64 / factor as f64);
            }
        }
        breakpoints.push(self.tf());
        Mesh { breakpoints }
    }

    /// Maps a physical time to `(element, reference coordinate)`.
    ///
    /// Interior breakpoints belong to the element on their right; `tF` belongs
    /// to the last element.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (t0, tf) = (self.t0(), self.tf());
        if !(t >= t0 && t <= tf) {
            return Err(Error::OutOfDomain { t, t0, tf });
        }
        let k = match self.breakpoints.binary_search_by(|b| b.total_cmp(&t)) {
            Ok(i) => i.min(self.num_elements() - 1),
            Err(i) => i - 1,
        };
        let (a, b) = self.element(k);
        Ok((k, ((t - a) / (b - a)).clamp(0.0, 1.0)))
    }

    /// Physical time of reference coordinate `s` in element `k`.
    pub fn map(&self, k: usize, s: f64) -> f64 {
        let (a, b) = self.element(k);
        a + s * (b - a)
    }
}

/// Nodal Lagrange basis on the reference element.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    denominators: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("basis needs at least one node".into()));
        }
        let mut denominators = Vec::with_capacity(nodes.len());
        for (j, &xj) in nodes.iter().enumerate() {
            let mut d = 1.0;
            for (m, &xm) in nodes.iter().enumerate() {
                if m != j {
                    if xj == xm {
                        return Err(Error::InvalidArgument(format!("coincident nodes at {xj}")));
                    }
                    d *= xj - xm;
                }
            }
            denominators.push(d);
        }
        Ok(Self { nodes, denominators })
    }

    pub fn equidistant(degree: usize) -> Self {
        Self::new(equidistant_nodes(degree)).expect("equidistant nodes are distinct")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Cardinal function `l_j(s)`.
    pub fn value(&self, j: usize, s: f64) -> f64 {
        let mut v = 1.0;
        for (m, &xm) in self.nodes.iter().enumerate() {
            if m != j {
                v *= s - xm;
            }
        }
        v / self.denominators[j]
    }

    /// `d l_j / ds`.
    pub fn derivative(&self, j: usize, s: f64) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.nodes.len() {
            if i == j {
                continue;
            }
            let mut prod = 1.0;
            for (m, &xm) in self.nodes.iter().enumerate() {
                if m != j && m != i {
                    prod *= s - xm;
                }
            }
            sum += prod;
        }
        sum / self.denominators[j]
    }

    /// All cardinal values and reference derivatives at `s`.
    pub fn eval_all(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes.len();
        let values = (0..n).map(|j| self.value(j, s)).collect();
        let derivs = (0..n).map(|j| self.derivative(j, s)).collect();
        (values, derivs)
    }
}

/// Equidistant abscissae on `[0, 1]`; the single node of degree 0 sits at 1/2.
pub fn equidistant_nodes(degree: usize) -> Vec<f64> {
    if degree == 0 {
        return vec![0.5];
    }
    (0..=degree).map(|j| j as f64 / degree as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    State,
    Control,
    Slack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Continuity {
    Continuous,
    Discontinuous,
}

/// One scalar component of a trajectory space.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub kind: ComponentKind,
    pub continuity: Continuity,
    pub basis: LagrangeBasis,
}

impl ComponentSpec {
    pub fn new(kind: ComponentKind, continuity: Continuity, basis: LagrangeBasis) -> Self {
        Self { kind, continuity, basis }
    }

    /// Continuous state of the given degree with equidistant nodes.
    pub fn state(degree: usize) -> Self {
        Self::new(ComponentKind::State, Continuity::Continuous, LagrangeBasis::equidistant(degree))
    }

    /// Discontinuous control of the given degree with equidistant nodes.
    pub fn control(degree: usize) -> Self {
        Self::new(
            ComponentKind::Control,
            Continuity::Discontinuous,
            LagrangeBasis::equidistant(degree),
        )
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.basis.nodes().len()
    }

    fn dof_count(&self, elements: usize) -> usize {
        match self.continuity {
            Continuity::Continuous => elements * self.degree() + 1,
            Continuity::Discontinuous => elements * (self.degree() + 1),
        }
    }
}

/// Product of per-component finite element spaces over one mesh.
///
/// Coefficients are laid out component by component; inside a component they
/// run element by element in local node order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpace {
    mesh: Mesh,
    components: Vec<ComponentSpec>,
    offsets: Vec<usize>,
    n: usize,
}

impl TrajectorySpace {
    pub fn new(mesh: Mesh, components: Vec<ComponentSpec>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(components.len() + 1);
        let mut n = 0;
        for (i, c) in components.iter().enumerate() {
            if c.kind == ComponentKind::State && c.degree() == 0 {
                return Err(Error::InvalidArgument(format!(
                    "state component {i} needs degree >= 1"
                )));
            }
            if c.continuity == Continuity::Continuous {
                let nodes = c.basis.nodes();
                if c.degree() == 0 || nodes[0] != 0.0 || nodes[nodes.len() - 1] != 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "continuous component {i} needs nodes starting at 0 and ending at 1"
                    )));
                }
            }
            if c.basis.nodes().iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::InvalidArgument(format!(
                    "component {i} has nodes outside [0, 1]"
                )));
            }
            offsets.push(n);
            n += c.dof_count(mesh.num_elements());
        }
        offsets.push(n);
        Ok(Self { mesh, components, offsets, n })
    }

    /// States continuous of degree `p`, controls discontinuous of degree
    /// `control_degree`, all with equidistant nodes.
    pub fn standard(mesh: Mesh, n_y: usize, n_u: usize, p: usize, control_degree: usize) -> Result<Self> {
        let mut components = vec![ComponentSpec::state(p); n_y];
        components.extend(std::iter::repeat_n(ComponentSpec::control(control_degree), n_u));
        Self::new(mesh, components)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &ComponentSpec {
        &self.components[c]
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Total number of coefficients.
    pub fn dof_count(&self) -> usize {
        self.n
    }

    /// Coefficient range of component `c`.
    pub fn component_range(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    /// Global index of local node `j` of component `c` in element `k`.
    pub fn dof(&self, c: usize, k: usize, j: usize) -> usize {
        let spec = &self.components[c];
        let stride = match spec.continuity {
            Continuity::Continuous => spec.degree(),
            Continuity::Discontinuous => spec.degree() + 1,
        };
        self.offsets[c] + k * stride + j
    }

    /// Global indices of all local nodes of component `c` in element `k`.
    pub fn element_dofs(&self, c: usize, k: usize) -> Vec<usize> {
        (0..self.components[c].nodes_per_element()).map(|j| self.dof(c, k, j)).collect()
    }

    /// Value and time derivative of component `c` on element `k` at reference
    /// coordinate `s`, using only that element's polynomial.
    pub fn eval_local(&self, coeffs: &[f64], c: usize, k: usize, s: f64) -> (f64, f64) {
        let basis = &self.components[c].basis;
        let h = self.mesh.width(k);
        let (mut v, mut d) = (0.0, 0.0);
        for j in 0..basis.nodes().len() {
            let x = coeffs[self.dof(c, k, j)];
            v += x * basis.value(j, s);
            d += x * basis.derivative(j, s);
        }
        (v, d / h)
    }

    /// Value and time derivative of component `c` at time `t`.
    ///
    /// At interior breakpoints the element on the right is used, at `tF` the
    /// last element.
    pub fn eval(&self, coeffs: &[f64], c: usize, t: f64) -> Result<(f64, f64)> {
        self.check_len(coeffs)?;
        let (k, s) = self.mesh.locate(t)?;
        Ok(self.eval_local(coeffs, c, k, s))
    }

    /// Nodal interpolation of `f` into the coefficients of component `c`.
    pub fn interpolate_into<F: Fn(f64) -> f64>(&self, coeffs: &mut [f64], c: usize, f: F) -> Result<()> {
        self.check_len(coeffs)?;
        let nodes = self.components[c].basis.nodes().to_vec();
        for k in 0..self.mesh.num_elements() {
            for (j, &s) in nodes.iter().enumerate() {
                let t = self.mesh.map(k, s);
                let v = f(t);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("interpolant value at t = {t}")));
                }
                coeffs[self.dof(c, k, j)] = v;
            }
        }
        Ok(())
    }

    /// Coefficient block of `f` for component `c`, in the component's layout.
    pub fn interpolate<F: Fn(f64) -> f64>(&self, c: usize, f: F) -> Result<Vec<f64>> {
        let mut full = vec![0.0; self.n];
        self.interpolate_into(&mut full, c, f)?;
        Ok(full[self.component_range(c)].to_vec())
    }

    pub(crate) fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.n {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                self.n,
                coeffs.len()
            )));
        }
        Ok(())
    }
}
