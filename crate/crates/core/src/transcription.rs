//! Finite-dimensional NLPs built from an [`OcpProblem`]: the penalty-barrier
//! finite element transcription and four collocation baselines.
//!
//! Every builder produces a [`TranscribedNlp`] with objective `F`, stacked
//! equality/residual rows `C` and affine bound slacks `s = P x - b` with
//! barrier weights. Row blocks are element-local, which gives the banded
//! sparsity the solver relies on.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{ComponentKind, ComponentSpec, Continuity, LagrangeBasis, Mesh, TrajectorySpace};
use crate::ocp::{OcpProblem, Trajectory, VectorEval};
use crate::quadrature::{gauss_legendre, radau_right, QuadratureRule};

/// Final barrier weight used by the collocation builders unless overridden.
pub const DEFAULT_TAU: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Pbf,
    Lgr,
    HermiteSimpson,
    Trapezoidal,
    ExplicitEuler,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Pbf, Method::Lgr, Method::HermiteSimpson, Method::Trapezoidal, Method::ExplicitEuler];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pbf => "pbf",
            Method::Lgr => "lgr",
            Method::HermiteSimpson => "hs",
            Method::Trapezoidal => "tz",
            Method::ExplicitEuler => "ee",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Penalty mode (`ω > 0`) or hard-equality mode (`ω = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Penalty,
    HardEquality,
}

/// Parameters of the penalty-barrier transcription.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbfConfig {
    pub p: usize,
    /// Gauss-Legendre points per element.
    pub q: usize,
    pub control_degree: usize,
    pub omega: f64,
    pub tau: f64,
}

impl PbfConfig {
    /// `q = 2p` and controls of degree `p - 1`.
    pub fn new(p: usize, omega: f64, tau: f64) -> Self {
        Self { p, q: 2 * p, control_degree: p.saturating_sub(1), omega, tau }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Path,
    Boundary,
    Rhs,
    Algebraic,
}

/// `coef * f(A x_loc)` added to rows `row..` of its block.
#[derive(Debug, Clone)]
struct Term {
    kind: Kind,
    t: f64,
    coef: f64,
    row: usize,
    a: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct Block {
    row0: usize,
    nrows: usize,
    dofs: Vec<usize>,
    /// `(row, local column, coefficient)` of the affine part.
    linear: Vec<(usize, usize, f64)>,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarKind {
    Running,
    Mayer,
}

#[derive(Debug, Clone)]
struct ObjTerm {
    kind: ScalarKind,
    t: f64,
    coef: f64,
    a: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct ObjBlock {
    dofs: Vec<usize>,
    terms: Vec<ObjTerm>,
}

/// One barrier row `s = Σ coefs[i] x[dofs[i]] - offset` with its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub dofs: Vec<usize>,
    pub coefs: Vec<f64>,
    pub offset: f64,
    pub weight: f64,
}

/// Dense block of a row-partitioned sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub row0: usize,
    pub dofs: Vec<usize>,
    pub values: DMatrix<f64>,
}

/// Sparse matrix whose rows are partitioned into dense blocks over a few
/// columns each.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRows {
    pub nrows: usize,
    pub ncols: usize,
    pub blocks: Vec<DenseBlock>,
}

impl BlockRows {
    pub fn mul(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        for b in &self.blocks {
            for r in 0..b.values.nrows() {
                out[b.row0 + r] += b.dofs.iter().enumerate().map(|(j, &d)| b.values[(r, j)] * x[d]).sum::<f64>();
            }
        }
        out
    }

    pub fn tr_mul(&self, y: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for b in &self.blocks {
            for r in 0..b.values.nrows() {
                let yr = y[b.row0 + r];
                for (j, &d) in b.dofs.iter().enumerate() {
                    out[d] += b.values[(r, j)] * yr;
                }
            }
        }
        out
    }

    /// `(row, col, value)` for every stored entry, including structural zeros.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.blocks.iter().flat_map(|b| {
            (0..b.values.nrows()).flat_map(move |r| b.dofs.iter().enumerate().map(move |(j, &d)| (b.row0 + r, d, b.values[(r, j)])))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Symmetric matrix stored as a sum of dense principal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBlocks {
    pub n: usize,
    pub blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
}

impl SymBlocks {
    /// Lower-triangle triplets; summing them reproduces the matrix.
    pub fn lower_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.blocks.iter().flat_map(|(dofs, m)| {
            (0..dofs.len()).flat_map(move |a| {
                (0..dofs.len()).filter(move |&b| dofs[a] >= dofs[b]).map(move |b| (dofs[a], dofs[b], m[(a, b)]))
            })
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (dofs, m) in &self.blocks {
            for (a, &i) in dofs.iter().enumerate() {
                for (b, &j) in dofs.iter().enumerate() {
                    out[(i, j)] += m[(a, b)];
                }
            }
        }
        out
    }
}

/// A transcribed optimal control problem.
#[derive(Clone)]
pub struct TranscribedNlp<'a> {
    problem: &'a dyn OcpProblem,
    method: Method,
    p: usize,
    q: usize,
    space: TrajectorySpace,
    omega: f64,
    tau: f64,
    m_e: usize,
    n_g: usize,
    blocks: Vec<Block>,
    objective: Vec<ObjBlock>,
    bounds: Vec<BoundRow>,
}

impl fmt::Debug for TranscribedNlp<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TranscribedNlp")
            .field("problem", &self.problem.name())
            .field("method", &self.method)
            .field("n", &self.n())
            .field("m_e", &self.m_e)
            .field("m_i", &self.bounds.len())
            .field("omega", &self.omega)
            .field("tau", &self.tau)
            .finish()
    }
}

/// Global dofs of all components on element `k` and where each component
/// starts in that list.
struct Layout {
    dofs: Vec<usize>,
    offsets: Vec<usize>,
}

fn layout(space: &TrajectorySpace, k: usize) -> Layout {
    let mut dofs = Vec::new();
    let mut offsets = Vec::new();
    for c in 0..space.num_components() {
        offsets.push(dofs.len());
        dofs.extend(space.element_dofs(c, k));
    }
    Layout { dofs, offsets }
}

/// Maps local coefficients to `(ẏ, y, u)` (or `(y, u)` without rates) at `s`.
fn arg_matrix(space: &TrajectorySpace, lay: &Layout, k: usize, s: f64, n_y: usize, rates: bool) -> DMatrix<f64> {
    let nc = space.num_components();
    let shift = if rates { n_y } else { 0 };
    let mut a = DMatrix::zeros(shift + nc, lay.dofs.len());
    let h = space.mesh().width(k);
    for c in 0..nc {
        let (v, d) = space.component(c).basis.eval_all(s);
        for j in 0..v.len() {
            a[(shift + c, lay.offsets[c] + j)] = v[j];
            if rates && c < n_y {
                a[(c, lay.offsets[c] + j)] = d[j] / h;
            }
        }
    }
    a
}

fn boundary_dofs(space: &TrajectorySpace, n_y: usize) -> Vec<usize> {
    let last = space.mesh().num_elements() - 1;
    let mut dofs: Vec<usize> = (0..n_y).map(|c| space.dof(c, 0, 0)).collect();
    dofs.extend((0..n_y).map(|c| space.dof(c, last, space.component(c).degree())));
    dofs
}

fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Incremental construction shared by all builders.
struct Builder<'a> {
    problem: &'a dyn OcpProblem,
    space: TrajectorySpace,
    blocks: Vec<Block>,
    objective: Vec<ObjBlock>,
    bounds: Vec<BoundRow>,
    rows: usize,
}

impl<'a> Builder<'a> {
    fn new(problem: &'a dyn OcpProblem, space: TrajectorySpace) -> Self {
        let n_y = problem.dims().n_y;
        let dofs = boundary_dofs(&space, n_y);
        let ident = DMatrix::identity(2 * n_y, 2 * n_y);
        let n_g = problem.dims().n_g;
        let mut b = Self { problem, space, blocks: Vec::new(), objective: Vec::new(), bounds: Vec::new(), rows: 0 };
        b.objective.push(ObjBlock {
            dofs: dofs.clone(),
            terms: vec![ObjTerm { kind: ScalarKind::Mayer, t: 0.0, coef: 1.0, a: ident.clone() }],
        });
        if n_g > 0 {
            b.push_block(Block {
                row0: 0,
                nrows: n_g,
                dofs,
                linear: Vec::new(),
                terms: vec![Term { kind: Kind::Boundary, t: 0.0, coef: 1.0, row: 0, a: ident }],
            });
        }
        b
    }

    fn n_y(&self) -> usize {
        self.problem.dims().n_y
    }

    fn push_block(&mut self, mut block: Block) {
        block.row0 = self.rows;
        self.rows += block.nrows;
        self.blocks.push(block);
    }

    /// Running cost `Σ w_i w(t_i)` over points `(s_i, w_i)` of element `k`.
    fn running(&mut self, k: usize, points: &[(f64, f64)]) {
        let lay = layout(&self.space, k);
        let n_y = self.n_y();
        let terms = points
            .iter()
            .map(|&(s, w)| ObjTerm {
                kind: ScalarKind::Running,
                t: self.space.mesh().map(k, s),
                coef: w,
                a: arg_matrix(&self.space, &lay, k, s, n_y, false),
            })
            .collect();
        self.objective.push(ObjBlock { dofs: lay.dofs, terms });
    }

    /// Barrier rows for every bounded component at the points `(k, s, w)`;
    /// `states_only` skips control bounds.
    fn bound_rows(&mut self, k: usize, s: f64, weight: f64, states_only: bool) {
        let n_y = self.n_y();
        let t = self.space.mesh().map(k, s);
        for b in self.problem.bounds() {
            if !b.active_at(t) || (states_only && b.component >= n_y) {
                continue;
            }
            let dofs = self.space.element_dofs(b.component, k);
            let phi = self.space.component(b.component).basis.eval_all(s).0;
            if b.lower.is_finite() {
                self.bounds.push(BoundRow { dofs: dofs.clone(), coefs: phi.clone(), offset: b.lower, weight });
            }
            if b.upper.is_finite() {
                let neg = phi.iter().map(|v| -v).collect();
                self.bounds.push(BoundRow { dofs, coefs: neg, offset: -b.upper, weight });
            }
        }
    }

    fn finish(self, method: Method, p: usize, q: usize, omega: f64, tau: f64) -> Result<TranscribedNlp<'a>> {
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::InvalidArgument(format!("omega = {omega} must be finite and >= 0")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau = {tau} must be finite and > 0")));
        }
        Ok(TranscribedNlp {
            problem: self.problem,
            method,
            p,
            q,
            m_e: self.rows,
            n_g: self.problem.dims().n_g,
            space: self.space,
            omega,
            tau,
            blocks: self.blocks,
            objective: self.objective,
            bounds: self.bounds,
        })
    }
}

fn check_degree(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidArgument("state degree must be >= 1".into()));
    }
    Ok(())
}

/// Implicit path rows at the points of `rule` on every element, scaled by
/// `sqrt(h w)` when `scaled`, plus running cost and bounds at the same points.
fn implicit_rows(b: &mut Builder<'_>, rule: &QuadratureRule, scaled: bool) {
    let dims = b.problem.dims();
    let mesh = b.space.mesh().clone();
    for k in 0..mesh.num_elements() {
        let h = mesh.width(k);
        let lay = layout(&b.space, k);
        let mut terms = Vec::with_capacity(rule.len());
        for (j, (s, w)) in rule.points().enumerate() {
            terms.push(Term {
                kind: Kind::Path,
                t: mesh.map(k, s),
                coef: if scaled { (h * w).sqrt() } else { 1.0 },
                row: j * dims.n_c,
                a: arg_matrix(&b.space, &lay, k, s, dims.n_y, true),
            });
        }
        b.push_block(Block { row0: 0, nrows: rule.len() * dims.n_c, dofs: lay.dofs, linear: Vec::new(), terms });
        let pts: Vec<(f64, f64)> = rule.points().map(|(s, w)| (s, h * w)).collect();
        b.running(k, &pts);
        for &(s, w) in &pts {
            b.bound_rows(k, s, w, false);
        }
    }
}

/// Penalty-barrier transcription with `q = 2p` and controls of degree `p - 1`.
pub fn transcribe_pbf<'a>(
    problem: &'a dyn OcpProblem,
    mesh: &Mesh,
    p: usize,
    q: usize,
    omega: f64,
    tau: f64,
) -> Result<TranscribedNlp<'a>> {
    transcribe_pbf_with(problem, mesh, PbfConfig { q, ..PbfConfig::new(p, omega, tau) })
}

pub fn transcribe_pbf_with<'a>(problem: &'a dyn OcpProblem, mesh: &Mesh, cfg: PbfConfig) -> Result<TranscribedNlp<'a>> {
    check_degree(cfg.p)?;
    if cfg.omega <= 0.0 {
        return Err(Error::InvalidArgument(format!("penalty weight omega = {} must be > 0", cfg.omega)));
    }
    let rule = gauss_legendre(cfg.q)?;
    let d = problem.dims();
    let space = TrajectorySpace::standard(mesh.clone(), d.n_y, d.n_u, cfg.p, cfg.control_degree)?;
    let mut b = Builder::new(problem, space);
    implicit_rows(&mut b, &rule, true);
    b.finish(Method::Pbf, cfg.p, cfg.q, cfg.omega, cfg.tau)
}

/// Legendre-Gauss-Radau collocation: states of degree `p` on `{0} ∪ Radau`,
/// controls of degree `p - 1` on the `p` Radau points.
pub fn transcribe_lgr<'a>(problem: &'a dyn OcpProblem, mesh: &Mesh, p: usize) -> Result<TranscribedNlp<'a>> {
    check_degree(p)?;
    let rule = radau_right(p)?;
    let d = problem.dims();
    let mut state_nodes = vec![0.0];
    state_nodes.extend_from_slice(rule.abscissae());
    let state = ComponentSpec::new(ComponentKind::State, Continuity::Continuous, LagrangeBasis::new(state_nodes)?);
    let control = ComponentSpec::new(
        ComponentKind::Control,
        Continuity::Discontinuous,
        LagrangeBasis::new(rule.abscissae().to_vec())?,
    );
    let mut comps = vec![state; d.n_y];
    comps.extend(std::iter::repeat_n(control, d.n_u));
    let space = TrajectorySpace::new(mesh.clone(), comps)?;
    let mut b = Builder::new(problem, space);
    implicit_rows(&mut b, &rule, false);
    b.finish(Method::Lgr, p, p, 0.0, DEFAULT_TAU)
}

/// Classical defect schemes on states given at `nodes` of each element.
///
/// `stages` lists `(s, weights)` where `weights[r]` multiplies `f1` at `s` in
/// defect row group `r`; `groups` gives the linear part of each row group as
/// `(node, coefficient)` pairs. `alg_nodes` lists the reference points of
/// each element where `f2` is enforced; `last_alg` adds `s = 1` on the last
/// element.
struct Scheme<'s> {
    method: Method,
    state_degree: usize,
    control: ComponentSpec,
    groups: &'s [&'s [(usize, f64)]],
    stages: &'s [(f64, &'s [f64])],
    quad: &'s [(f64, f64)],
    alg_nodes: &'s [f64],
    last_alg: bool,
}

fn transcribe_explicit<'a>(problem: &'a dyn OcpProblem, mesh: &Mesh, scheme: Scheme<'_>) -> Result<TranscribedNlp<'a>> {
    let f = problem.explicit_form().ok_or(Error::MissingExplicitDynamics)?;
    let d = problem.dims();
    let n_alg = f.n_alg();
    let mut comps = vec![ComponentSpec::state(scheme.state_degree); d.n_y];
    comps.extend(std::iter::repeat_n(scheme.control.clone(), d.n_u));
    let space = TrajectorySpace::new(mesh.clone(), comps)?;
    let mut b = Builder::new(problem, space);
    let kk = mesh.num_elements();
    for k in 0..kk {
        let h = mesh.width(k);
        let lay = layout(&b.space, k);
        let mut linear = Vec::new();
        for (g, group) in scheme.groups.iter().enumerate() {
            for c in 0..d.n_y {
                for &(node, coef) in group.iter() {
                    linear.push((g * d.n_y + c, lay.offsets[c] + node, coef));
                }
            }
        }
        let mut terms = Vec::new();
        for &(s, weights) in scheme.stages {
            let a = arg_matrix(&b.space, &lay, k, s, d.n_y, false);
            for (g, &w) in weights.iter().enumerate() {
                if w != 0.0 {
                    terms.push(Term { kind: Kind::Rhs, t: mesh.map(k, s), coef: -h * w, row: g * d.n_y, a: a.clone() });
                }
            }
        }
        let mut nrows = scheme.groups.len() * d.n_y;
        let mut alg: Vec<f64> = scheme.alg_nodes.to_vec();
        if scheme.last_alg && k + 1 == kk {
            alg.push(1.0);
        }
        if n_alg > 0 {
            for &s in &alg {
                let a = arg_matrix(&b.space, &lay, k, s, d.n_y, false);
                terms.push(Term { kind: Kind::Algebraic, t: mesh.map(k, s), coef: 1.0, row: nrows, a });
                nrows += n_alg;
            }
        }
        b.push_block(Block { row0: 0, nrows, dofs: lay.dofs, linear, terms });

        let pts: Vec<(f64, f64)> = scheme.quad.iter().map(|&(s, w)| (s, h * w)).collect();
        b.running(k, &pts);
        // grid points shared with the previous element collect its end weight
        let w_end = scheme.quad.iter().find(|q| q.0 == 1.0).map_or(0.0, |q| q.1);
        for &(s, w) in &pts {
            if s == 0.0 && k > 0 {
                b.bound_rows(k, s, w + mesh.width(k - 1) * w_end, false);
            } else if s < 1.0 {
                b.bound_rows(k, s, w, false);
            }
        }
        if k + 1 == kk {
            let w = if w_end > 0.0 { h * w_end } else { h };
            b.bound_rows(k, 1.0, w, !scheme.last_alg);
        }
    }
    b.finish(scheme.method, scheme.state_degree, 0, 0.0, DEFAULT_TAU)
}

/// Explicit Euler: `y_{k+1} = y_k + h f1(y_k, u_k, t_k)`, piecewise-constant
/// controls.
pub fn transcribe_explicit_euler<'a>(problem: &'a dyn OcpProblem, mesh: &Mesh) -> Result<TranscribedNlp<'a>> {
    transcribe_explicit(
        problem,
        mesh,
        Scheme {
            method: Method::ExplicitEuler,
            state_degree: 1,
            control: ComponentSpec::control(0),
            groups: &[&[(1, 1.0), (0, -1.0)]],
            stages: &[(0.0, &[1.0])],
            quad: &[(0.0, 1.0)],
            alg_nodes: &[0.0],
            last_alg: false,
        },
    )
}

fn continuous_control(degree: usize) -> ComponentSpec {
    ComponentSpec::new(ComponentKind::Control, Continuity::Continuous, LagrangeBasis::equidistant(degree))
}

/// Trapezoidal rule with continuous piecewise-affine controls.
pub fn transcribe_trapezoidal<'a>(problem: &'a dyn OcpProblem, mesh: &Mesh) -> Result<TranscribedNlp<'a>> {
    transcribe_explicit(
        problem,
        mesh,
        Scheme {
            method: Method::Trapezoidal,
            state_degree: 1,
            control: continuous_control(1),
            groups: &[&[(1, 1.0), (0, -1.0)]],
            stages: &[(0.0, &[0.5]), (1.0, &[0.5])],
            quad: &[(0.0, 0.5), (1.0, 0.5)],
            alg_nodes: &[0.0],
            last_alg: true,
        },
    )
}

/// Separated Hermite-Simpson: Simpson defect plus the Hermite midpoint
/// condition, with states and controls continuous piecewise quadratic.
pub fn transcribe_hermite_simpson<'a>(problem: &'a dyn OcpProblem, mesh: &Mesh) -> Result<TranscribedNlp<'a>> {
    transcribe_explicit(
        problem,
        mesh,
        Scheme {
            method: Method::HermiteSimpson,
            state_degree: 2,
            control: continuous_control(2),
            groups: &[&[(2, 1.0), (0, -1.0)], &[(1, 1.0), (0, -0.5), (2, -0.5)]],
            stages: &[(0.0, &[1.0 / 6.0, 1.0 / 8.0]), (0.5, &[4.0 / 6.0, 0.0]), (1.0, &[1.0 / 6.0, -1.0 / 8.0])],
            quad: &[(0.0, 1.0 / 6.0), (0.5, 4.0 / 6.0), (1.0, 1.0 / 6.0)],
            alg_nodes: &[0.0, 0.5],
            last_alg: true,
        },
    )
}

/// Builds any method; `q`, `omega` apply to PBF only and `tau` to all.
pub fn transcribe<'a>(
    problem: &'a dyn OcpProblem,
    mesh: &Mesh,
    method: Method,
    p: usize,
    q: usize,
    omega: f64,
    tau: f64,
) -> Result<TranscribedNlp<'a>> {
    let nlp = match method {
        Method::Pbf => return transcribe_pbf(problem, mesh, p, q, omega, tau),
        Method::Lgr => transcribe_lgr(problem, mesh, p)?,
        Method::HermiteSimpson => transcribe_hermite_simpson(problem, mesh)?,
        Method::Trapezoidal => transcribe_trapezoidal(problem, mesh)?,
        Method::ExplicitEuler => transcribe_explicit_euler(problem, mesh)?,
    };
    nlp.with_tau(tau)
}

impl<'a> TranscribedNlp<'a> {
    pub fn problem(&self) -> &'a dyn OcpProblem {
        self.problem
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// State degree of the transcription.
    pub fn degree(&self) -> usize {
        self.p
    }

    /// Quadrature points per element (PBF only, 0 otherwise).
    pub fn points_per_element(&self) -> usize {
        self.q
    }

    pub fn space(&self) -> &TrajectorySpace {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.space.dof_count()
    }

    pub fn m_e(&self) -> usize {
        self.m_e
    }

    pub fn m_i(&self) -> usize {
        self.bounds.len()
    }

    /// Rows of `C` that do not come from boundary conditions.
    pub fn path_rows(&self) -> usize {
        self.m_e - self.n_g
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mode(&self) -> Mode {
        if self.omega > 0.0 {
            Mode::Penalty
        } else {
            Mode::HardEquality
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau = {tau} must be finite and > 0")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn bound_rows(&self) -> &[BoundRow] {
        &self.bounds
    }

    pub fn barrier_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.bounds.len(), self.bounds.iter().map(|b| b.weight))
    }

    /// Scale applied to each row of `C` (`sqrt(h α)` for PBF path rows, 1
    /// elsewhere).
    pub fn row_scales(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.m_e];
        for b in &self.blocks {
            for t in &b.terms {
                let m = self.kind_rows(t.kind);
                for r in 0..m {
                    out[b.row0 + t.row + r] = t.coef.abs();
                }
            }
        }
        for b in &self.blocks {
            if b.linear.is_empty() {
                continue;
            }
            for r in 0..b.nrows {
                out[b.row0 + r] = 1.0;
            }
        }
        out
    }

    pub fn trajectory(&self, x: &[f64]) -> Result<Trajectory> {
        Trajectory::new(self.space.clone(), x.to_vec())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!("expected {} coefficients, got {}", self.n(), x.len())));
        }
        Ok(())
    }

    fn kind_rows(&self, kind: Kind) -> usize {
        let d = self.problem.dims();
        match kind {
            Kind::Path => d.n_c,
            Kind::Boundary => d.n_g,
            Kind::Rhs => d.n_y,
            Kind::Algebraic => self.problem.explicit_form().map_or(0, |f| f.n_alg()),
        }
    }

    fn call(&self, kind: Kind, t: f64, args: &DVector<f64>, weights: &[f64]) -> VectorEval {
        let d = self.problem.dims();
        let a = args.as_slice();
        match kind {
            Kind::Path => self.problem.path(t, &a[..d.n_y], &a[d.n_y..2 * d.n_y], &a[2 * d.n_y..], weights),
            Kind::Boundary => self.problem.boundary(&a[..d.n_y], &a[d.n_y..], weights),
            Kind::Rhs => self.problem.explicit_form().expect("explicit builder").rhs(t, &a[..d.n_y], &a[d.n_y..], weights),
            Kind::Algebraic => {
                self.problem.explicit_form().expect("explicit builder").algebraic(t, &a[..d.n_y], &a[d.n_y..], weights)
            }
        }
    }

    fn local(dofs: &[usize], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| x[d]))
    }

    /// `F(x)`, its gradient and, when `hess`, its Hessian blocks.
    fn eval_objective(&self, x: &[f64], grad: bool, hess: bool) -> Result<(f64, DVector<f64>, Vec<(Vec<usize>, DMatrix<f64>)>)> {
        self.check(x)?;
        let n_y = self.problem.dims().n_y;
        let mut f = 0.0;
        let mut g = DVector::zeros(if grad { self.n() } else { 0 });
        let mut blocks = Vec::new();
        for ob in &self.objective {
            let xl = Self::local(&ob.dofs, x);
            let mut gl = DVector::zeros(ob.dofs.len());
            let mut hl = DMatrix::zeros(if hess { ob.dofs.len() } else { 0 }, if hess { ob.dofs.len() } else { 0 });
            for term in &ob.terms {
                let a = &term.a * &xl;
                let s = a.as_slice();
                let e = match term.kind {
                    ScalarKind::Running => self.problem.running(term.t, &s[..n_y], &s[n_y..]),
                    ScalarKind::Mayer => self.problem.mayer(&s[..n_y], &s[n_y..]),
                };
                if !e.value.is_finite() {
                    return Err(Error::NonFinite(format!("objective at t = {}", term.t)));
                }
                f += term.coef * e.value;
                if grad {
                    gl += term.a.tr_mul(&e.grad) * term.coef;
                }
                if hess {
                    hl += term.a.tr_mul(&(&e.hess * &term.a)) * term.coef;
                }
            }
            if grad {
                for (j, &d) in ob.dofs.iter().enumerate() {
                    g[d] += gl[j];
                }
            }
            if hess {
                blocks.push((ob.dofs.clone(), hl));
            }
        }
        if grad {
            check_finite_vec(&g, "objective gradient")?;
        }
        Ok((f, g, blocks))
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_objective(x, false, false)?.0)
    }

    pub fn objective_grad(&self, x: &[f64]) -> Result<(f64, DVector<f64>)> {
        let (f, g, _) = self.eval_objective(x, true, false)?;
        Ok((f, g))
    }

    /// Values of one constraint block and, when `jac`, its local Jacobian.
    fn eval_block(&self, b: &Block, x: &[f64], jac: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let xl = Self::local(&b.dofs, x);
        let mut v = DVector::zeros(b.nrows);
        let mut jl = DMatrix::zeros(if jac { b.nrows } else { 0 }, b.dofs.len());
        for &(r, c, coef) in &b.linear {
            v[r] += coef * xl[c];
            if jac {
                jl[(r, c)] += coef;
            }
        }
        for term in &b.terms {
            let m = self.kind_rows(term.kind);
            let e = self.call(term.kind, term.t, &(&term.a * &xl), &vec![0.0; m]);
            check_finite_vec(&e.value, "constraint value")?;
            for r in 0..m {
                v[term.row + r] += term.coef * e.value[r];
            }
            if jac {
                let ja = &e.jac * &term.a * term.coef;
                let mut view = jl.rows_mut(term.row, m);
                view += &ja;
            }
        }
        Ok((v, jl))
    }

    pub fn constraints(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        let mut c = DVector::zeros(self.m_e);
        for b in &self.blocks {
            let (v, _) = self.eval_block(b, x, false)?;
            c.rows_mut(b.row0, b.nrows).copy_from(&v);
        }
        Ok(c)
    }

    /// `C(x)` and `∇C(x)`.
    pub fn constraints_jacobian(&self, x: &[f64]) -> Result<(DVector<f64>, BlockRows)> {
        self.check(x)?;
        let mut c = DVector::zeros(self.m_e);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (v, j) = self.eval_block(b, x, true)?;
            c.rows_mut(b.row0, b.nrows).copy_from(&v);
            check_finite_vec(&DVector::from_column_slice(j.as_slice()), "constraint Jacobian")?;
            blocks.push(DenseBlock { row0: b.row0, dofs: b.dofs.clone(), values: j });
        }
        Ok((c, BlockRows { nrows: self.m_e, ncols: self.n(), blocks }))
    }

    /// `∇²F(x) - Σ_i y_i ∇²C_i(x)`.
    pub fn lagrangian_hessian(&self, x: &[f64], y: &[f64]) -> Result<SymBlocks> {
        if y.len() != self.m_e {
            return Err(Error::Dimension(format!("expected {} multipliers, got {}", self.m_e, y.len())));
        }
        let (_, _, mut blocks) = self.eval_objective(x, false, true)?;
        for b in &self.blocks {
            let xl = Self::local(&b.dofs, x);
            let nl = b.dofs.len();
            let mut hl = DMatrix::zeros(nl, nl);
            for term in &b.terms {
                let m = self.kind_rows(term.kind);
                let w: Vec<f64> = (0..m).map(|r| -term.coef * y[b.row0 + term.row + r]).collect();
                if w.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let e = self.call(term.kind, term.t, &(&term.a * &xl), &w);
                hl += term.a.tr_mul(&(&e.hess * &term.a));
            }
            if hl.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("constraint Hessian".into()));
            }
            blocks.push((b.dofs.clone(), hl));
        }
        Ok(SymBlocks { n: self.n(), blocks })
    }

    /// Bound slacks `P x - b`.
    pub fn slacks(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.bounds.len(),
            self.bounds.iter().map(|r| r.dofs.iter().zip(&r.coefs).map(|(&d, c)| c * x[d]).sum::<f64>() - r.offset),
        )
    }

    /// The linear part `P` of the bound map.
    pub fn bound_map(&self) -> BlockRows {
        let blocks = self
            .bounds
            .iter()
            .enumerate()
            .map(|(i, r)| DenseBlock { row0: i, dofs: r.dofs.clone(), values: DMatrix::from_row_slice(1, r.coefs.len(), &r.coefs) })
            .collect();
        BlockRows { nrows: self.bounds.len(), ncols: self.n(), blocks }
    }

    fn barrier_slacks(&self, x: &[f64]) -> Result<DVector<f64>> {
        let s = self.slacks(x);
        if let Some((row, &value)) = s.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::BarrierDomain { row, value });
        }
        Ok(s)
    }

    /// `Φ(x) = F + ‖C‖² / (2ω) - τ ḡᵀ log(P x - b)`.
    pub fn eval_phi(&self, x: &[f64]) -> Result<f64> {
        if self.mode() == Mode::HardEquality {
            return Err(Error::HardEqualityMode);
        }
        let s = self.barrier_slacks(x)?;
        let f = self.objective(x)?;
        let c = self.constraints(x)?;
        let barrier: f64 = self.bounds.iter().zip(s.iter()).map(|(r, v)| r.weight * v.ln()).sum();
        Ok(f + c.norm_squared() / (2.0 * self.omega) - self.tau * barrier)
    }

    pub fn eval_grad_phi(&self, x: &[f64]) -> Result<DVector<f64>> {
        if self.mode() == Mode::HardEquality {
            return Err(Error::HardEqualityMode);
        }
        let s = self.barrier_slacks(x)?;
        let (_, g) = self.objective_grad(x)?;
        let (c, j) = self.constraints_jacobian(x)?;
        let ratio: Vec<f64> = self.bounds.iter().zip(s.iter()).map(|(r, v)| r.weight / v).collect();
        Ok(g + j.tr_mul(c.as_slice()) / self.omega - self.bound_map().tr_mul(&ratio) * self.tau)
    }

    /// Jacobian pattern as `(row, col)` pairs, row-major.
    pub fn jacobian_pattern(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let mut cols = b.dofs.clone();
            cols.sort_unstable();
            cols.dedup();
            for r in 0..b.nrows {
                out.extend(cols.iter().map(|&c| (b.row0 + r, c)));
            }
        }
        out
    }

    /// Lower triangle `(row >= col)` of the Lagrangian Hessian pattern,
    /// including barrier curvature, sorted row-major.
    pub fn hessian_pattern(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let stencils = self
            .objective
            .iter()
            .map(|o| &o.dofs)
            .chain(self.blocks.iter().map(|b| &b.dofs))
            .chain(self.bounds.iter().map(|r| &r.dofs));
        for dofs in stencils {
            for &i in dofs {
                out.extend(dofs.iter().filter(|&&j| j <= i).map(|&j| (i, j)));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Constraint rows grouped by the earliest element they belong to, used
    /// to interleave dofs and rows in the KKT ordering: returns, per row, the
    /// largest dof index it touches.
    pub fn row_last_dof(&self) -> Vec<usize> {
        let mut out = vec![0; self.m_e];
        for b in &self.blocks {
            let last = b.dofs.iter().copied().max().unwrap_or(0);
            for r in 0..b.nrows {
                out[b.row0 + r] = last;
            }
        }
        out
    }

    /// Boundary-condition rows come first in `C`.
    pub fn boundary_rows(&self) -> std::ops::Range<usize> {
        0..self.n_g
    }

    /// Straight-line states between the problem's boundary guess (or bound
    /// midpoints), zero controls, then pushed strictly inside the bounds.
    pub fn initial_guess(&self) -> Vec<f64> {
        let d = self.problem.dims();
        let (t0, tf) = self.problem.horizon();
        let bounds = self.problem.bounds();
        let guess = self.problem.boundary_guess();
        let mut x = vec![0.0; self.n()];
        for c in 0..self.space.num_components() {
            let (lo, hi) = bounds
                .iter()
                .filter(|b| b.component == c)
                .fold((f64::NEG_INFINITY, f64::INFINITY), |(l, h), b| (l.max(b.lower), h.min(b.upper)));
            let inside = |v: f64| -> f64 {
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) if v <= lo || v >= hi => 0.5 * (lo + hi),
                    (true, false) if v <= lo => lo + 1.0,
                    (false, true) if v >= hi => hi - 1.0,
                    _ => v,
                }
            };
            let line: Box<dyn Fn(f64) -> f64> = match (&guess, c < d.n_y) {
                (Some((a, b)), true) => {
                    let (a, b) = (a[c], b[c]);
                    Box::new(move |t| inside(a + (b - a) * (t - t0) / (tf - t0)))
                }
                _ => Box::new(move |_| inside(0.0)),
            };
            self.space.interpolate_into(&mut x, c, line).expect("finite initial guess");
        }
        self.make_interior(&mut x);
        x
    }

    /// Moves coefficients so that every slack is positive: nodal values are
    /// pushed at least 1e-2 of the bound gap inside, and element blocks whose
    /// polynomial still undershoots are flattened to that level.
    pub fn make_interior(&self, x: &mut [f64]) {
        let bounds = self.problem.bounds();
        let margin = |lo: f64, hi: f64| {
            if lo.is_finite() && hi.is_finite() {
                1e-2 * (hi - lo)
            } else {
                1e-2
            }
        };
        for b in &bounds {
            let c = b.component;
            let m = margin(b.lower, b.upper);
            for v in &mut x[self.space.component_range(c)] {
                if b.lower.is_finite() && *v < b.lower + m {
                    *v = b.lower + m;
                }
                if b.upper.is_finite() && *v > b.upper - m {
                    *v = b.upper - m;
                }
            }
        }
        let s = self.slacks(x);
        for (row, v) in self.bounds.iter().zip(s.iter()) {
            if *v > 0.0 {
                continue;
            }
            let lower = row.coefs.iter().sum::<f64>() > 0.0;
            let target = if lower { row.offset + 1e-2 } else { -row.offset - 1e-2 };
            for &d in &row.dofs {
                x[d] = target;
            }
        }
    }
}
