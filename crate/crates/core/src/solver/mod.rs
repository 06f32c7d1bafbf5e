//! Primal-dual interior-point Newton solver for [`TranscribedNlp`] in penalty
//! mode (`ω > 0`) and hard-equality mode (`ω = 0`).

pub mod ldlt;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::transcription::{BlockRows, Mode, SymBlocks, TranscribedNlp};
use ldlt::{Factor, Symbolic};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktForm {
    /// `[[H, Jᵀ], [J, -ωI]]`, valid for every `ω >= 0`.
    Augmented,
    /// `H + JᵀJ / ω`, penalty mode only.
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub tau_init: f64,
    pub tau_factor: f64,
    pub fraction_to_boundary: f64,
    pub delta0: f64,
    pub delta_growth: f64,
    pub delta_max: f64,
    pub stagnation_window: usize,
    pub stagnation_decrease: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Second-order corrections tried when the first trial point is rejected.
    pub max_soc: usize,
    pub armijo: f64,
    /// Relative size of merit changes treated as rounding noise.
    pub merit_noise: f64,
    /// Safeguard keeping `z s` within this factor of `τ ḡ`.
    pub kappa_z: f64,
    pub form: KktForm,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            tau_init: 1e-1,
            tau_factor: 0.1,
            fraction_to_boundary: 0.995,
            delta0: 1e-8,
            delta_growth: 10.0,
            delta_max: 1e8,
            stagnation_window: 5,
            stagnation_decrease: 1e-3,
            backtrack: 0.5,
            max_backtracks: 30,
            max_soc: 4,
            armijo: 1e-4,
            merit_noise: 1e-12,
            kappa_z: 1e10,
            form: KktForm::Augmented,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.tol,
            self.tau_init,
            self.tau_factor,
            self.fraction_to_boundary,
            self.delta0,
            self.delta_growth,
            self.delta_max,
            self.stagnation_decrease,
            self.backtrack,
            self.armijo,
            self.kappa_z,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.stagnation_window == 0 {
            return Err(Error::InvalidArgument("solver options must be positive".into()));
        }
        if self.tol >= 1.0 || self.tau_factor >= 1.0 || self.fraction_to_boundary >= 1.0 || self.backtrack >= 1.0 {
            return Err(Error::InvalidArgument("tolerance and reduction factors must be < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Tolerance,
    Stagnation,
    MaxIter,
    InfeasibleStall,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::Stagnation => "stagnation",
            Termination::MaxIter => "max-iter",
            Termination::InfeasibleStall => "infeasible-stall",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Termination {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Termination::Tolerance, Termination::Stagnation, Termination::MaxIter, Termination::InfeasibleStall]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown termination reason '{s}'")))
    }
}

/// Primal-dual iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct KktState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub omega: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// `Φ` in penalty mode, the exact-penalty merit otherwise.
    pub merit: f64,
    pub kkt: f64,
    pub stationarity: f64,
    pub penalty: f64,
    pub complementarity: f64,
    pub infeasibility: f64,
    pub tau: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub reason: Termination,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// `‖C(x)‖∞` at the returned point.
    pub infeasibility: f64,
    pub history: Vec<IterationRecord>,
    pub wall_time: Duration,
}

/// The three residual blocks of the perturbed KKT conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub stationarity: DVector<f64>,
    pub penalty: DVector<f64>,
    pub complementarity: DVector<f64>,
}

impl Residuals {
    pub fn norms(&self) -> (f64, f64, f64) {
        (amax(&self.stationarity), amax(&self.penalty), amax(&self.complementarity))
    }

    /// ∞-norm of the concatenation.
    pub fn norm(&self) -> f64 {
        let (a, b, c) = self.norms();
        a.max(b).max(c)
    }
}

fn amax(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Function values needed for one Newton step.
struct Eval {
    f: f64,
    grad: DVector<f64>,
    c: DVector<f64>,
    jac: BlockRows,
    s: DVector<f64>,
}

fn evaluate(nlp: &TranscribedNlp<'_>, x: &[f64]) -> Result<Eval> {
    let (f, grad) = nlp.objective_grad(x)?;
    let (c, jac) = nlp.constraints_jacobian(x)?;
    let s = nlp.slacks(x);
    if let Some((row, &value)) = s.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::BarrierDomain { row, value });
    }
    Ok(Eval { f, grad, c, jac, s })
}

#[allow(clippy::too_many_arguments)]
fn residuals_at(
    nlp: &TranscribedNlp<'_>,
    p: &BlockRows,
    e: &Eval,
    y: &DVector<f64>,
    z: &DVector<f64>,
    omega: f64,
    tau: f64,
) -> Residuals {
    let g = nlp.barrier_weights();
    Residuals {
        stationarity: &e.grad - e.jac.tr_mul(y.as_slice()) - p.tr_mul(z.as_slice()),
        penalty: &e.c + y * omega,
        complementarity: e.s.component_mul(z) - g * tau,
    }
}

fn check_state(nlp: &TranscribedNlp<'_>, state: &KktState) -> Result<()> {
    if state.x.len() != nlp.n() || state.y.len() != nlp.m_e() || state.z.len() != nlp.m_i() {
        return Err(Error::Dimension("state does not match the NLP".into()));
    }
    if let Some((row, &value)) = state.z.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::BarrierDomain { row, value });
    }
    Ok(())
}

/// `(∇F - ∇Cᵀy - Pᵀz, C + ωy, s∘z - τḡ)` at `state`, with the state's `ω`
/// and `τ`.
pub fn kkt_residual(nlp: &TranscribedNlp<'_>, state: &KktState) -> Result<Residuals> {
    check_state(nlp, state)?;
    let e = evaluate(nlp, state.x.as_slice())?;
    Ok(residuals_at(nlp, &nlp.bound_map(), &e, &state.y, &state.z, state.omega, state.tau))
}

/// Symmetric Newton system in triplet form (lower triangle) with diagonal
/// shifts kept apart so that regularization can change without reassembly.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem {
    pub form: KktForm,
    pub n: usize,
    pub m: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub shift: Vec<f64>,
    pub rhs: DVector<f64>,
}

impl KktSystem {
    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut k = DMatrix::zeros(d, d);
        for &(i, j, v) in &self.triplets {
            k[(i, j)] += v;
            if i != j {
                k[(j, i)] += v;
            }
        }
        for (i, s) in self.shift.iter().enumerate() {
            k[(i, i)] += s;
        }
        k
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.shift.iter().zip(v).map(|(s, x)| s * x).collect();
        for &(i, j, a) in &self.triplets {
            out[i] += a * v[j];
            if i != j {
                out[j] += a * v[i];
            }
        }
        out
    }

    /// Expected `(positive, negative)` pivot counts.
    pub fn expected_inertia(&self) -> (usize, usize) {
        (self.n, self.m)
    }
}

fn push_sym(out: &mut Vec<(usize, usize, f64)>, h: &SymBlocks) {
    out.extend(h.lower_triplets());
}

/// Barrier curvature `Pᵀ diag(z / s) P`.
fn push_barrier(out: &mut Vec<(usize, usize, f64)>, nlp: &TranscribedNlp<'_>, s: &DVector<f64>, z: &DVector<f64>) {
    for (i, row) in nlp.bound_rows().iter().enumerate() {
        let sigma = z[i] / s[i];
        for (a, &da) in row.dofs.iter().enumerate() {
            for (b, &db) in row.dofs.iter().enumerate() {
                if da >= db {
                    out.push((da, db, sigma * row.coefs[a] * row.coefs[b]));
                }
            }
        }
    }
}

fn build_system(
    nlp: &TranscribedNlp<'_>,
    p: &BlockRows,
    e: &Eval,
    h: &SymBlocks,
    r: &Residuals,
    z: &DVector<f64>,
    omega: f64,
    form: KktForm,
) -> Result<KktSystem> {
    let (n, m) = (nlp.n(), nlp.m_e());
    let mut triplets = Vec::new();
    push_sym(&mut triplets, h);
    push_barrier(&mut triplets, nlp, &e.s, z);
    let corr: Vec<f64> = r.complementarity.iter().zip(e.s.iter()).map(|(rc, s)| rc / s).collect();
    let mut top = -&r.stationarity - p.tr_mul(&corr);
    match form {
        KktForm::Augmented => {
            triplets.extend(e.jac.triplets().map(|(row, col, v)| (n + row, col, v)));
            let mut shift = vec![0.0; n + m];
            shift[n..].iter_mut().for_each(|s| *s = -omega);
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&top);
            rhs.rows_mut(n, m).copy_from(&(-&r.penalty));
            Ok(KktSystem { form, n, m, triplets, shift, rhs })
        }
        KktForm::Reduced => {
            if omega <= 0.0 {
                return Err(Error::HardEqualityMode);
            }
            for b in &e.jac.blocks {
                let jtj = b.values.tr_mul(&b.values) / omega;
                for (a, &da) in b.dofs.iter().enumerate() {
                    for (c, &dc) in b.dofs.iter().enumerate() {
                        if da >= dc {
                            triplets.push((da, dc, jtj[(a, c)]));
                        }
                    }
                }
            }
            top -= e.jac.tr_mul(r.penalty.as_slice()) / omega;
            Ok(KktSystem { form, n, m: 0, triplets, shift: vec![0.0; n], rhs: top })
        }
    }
}

/// Newton system at `state` in the requested form.
pub fn assemble_kkt(nlp: &TranscribedNlp<'_>, state: &KktState, form: KktForm) -> Result<KktSystem> {
    check_state(nlp, state)?;
    let x = state.x.as_slice();
    let e = evaluate(nlp, x)?;
    let p = nlp.bound_map();
    let r = residuals_at(nlp, &p, &e, &state.y, &state.z, state.omega, state.tau);
    let h = nlp.lagrangian_hessian(x, state.y.as_slice())?;
    build_system(nlp, &p, &e, &h, &r, &state.z, state.omega, form)
}

/// Elimination order that follows the time axis, element by element.
/// Penalty rows go ahead of their element's dofs and boundary rows first;
/// hard-equality rows follow the dofs and boundary rows go last.
fn time_order(nlp: &TranscribedNlp<'_>, form: KktForm) -> Vec<usize> {
    let space = nlp.space();
    let kk = space.mesh().num_elements();
    let n = nlp.n();
    let mut elem = vec![usize::MAX; n];
    for k in 0..kk {
        for c in 0..space.num_components() {
            for d in space.element_dofs(c, k) {
                if elem[d] == usize::MAX {
                    elem[d] = k;
                }
            }
        }
    }
    let mut keys: Vec<(usize, usize, usize)> = (0..n).map(|d| (elem[d], 1, d)).collect();
    if form == KktForm::Augmented {
        // penalty rows carry the pivot -ω and go ahead of their element's
        // dofs; hard-equality rows (zero pivot) follow them
        let row_slot = if nlp.omega() > 0.0 { 0 } else { 2 };
        let last = nlp.row_last_dof();
        let bnd = nlp.boundary_rows();
        for r in 0..nlp.m_e() {
            let key = match (bnd.contains(&r), row_slot) {
                (true, 0) => (0, 0, n + r),
                (true, _) => (kk, 1, n + r),
                (false, _) => (elem[last[r]], row_slot, n + r),
            };
            keys.push(key);
        }
    }
    keys.sort_unstable();
    keys.into_iter().map(|k| k.2).collect()
}

/// Factorization with inertia correction; reuses the symbolic analysis while
/// the triplet pattern is unchanged.
struct Linear {
    symbolic: Option<(Vec<(usize, usize)>, Symbolic)>,
    last_delta: f64,
    last: Option<(Factor, KktSystem)>,
}

impl Linear {
    fn new() -> Self {
        Self { symbolic: None, last_delta: 0.0, last: None }
    }

    fn symbolic(&mut self, sys: &KktSystem, order: &[usize]) -> Result<&Symbolic> {
        let pairs: Vec<(usize, usize)> = sys.triplets.iter().map(|t| (t.0, t.1)).collect();
        let fresh = match &self.symbolic {
            Some((p, _)) => *p != pairs,
            None => true,
        };
        if fresh {
            let sym = Symbolic::new(sys.dim(), &pairs, Some(order.to_vec()))?;
            self.symbolic = Some((pairs, sym));
        }
        Ok(&self.symbolic.as_ref().unwrap().1)
    }

    /// Solves `(K + diag(shift) + δ I_n - δ_c I_m) v = rhs`, raising `δ`
    /// until the inertia is `(n, m)`.
    fn solve(&mut self, sys: &KktSystem, order: &[usize], opts: &SolveOptions, hard: bool, tau: f64) -> Result<(Vec<f64>, f64)> {
        let values: Vec<f64> = sys.triplets.iter().map(|t| t.2).collect();
        let sym = self.symbolic(sys, order)?.clone();
        let mut delta = 0.0;
        let mut delta_c = 0.0;
        loop {
            let mut shift = sys.shift.clone();
            shift[..sys.n].iter_mut().for_each(|s| *s += delta);
            shift[sys.n..].iter_mut().for_each(|s| *s -= delta_c);
            let ok = match sym.factor(&values, Some(&shift)) {
                Ok(f) if f.inertia() == sys.expected_inertia() => Some(f),
                _ => None,
            };
            if let Some(f) = ok {
                self.last_delta = delta;
                let mut shifted = sys.clone();
                shifted.shift = shift;
                let sol = refine(&f, &shifted);
                self.last = Some((f, shifted));
                return Ok((sol, delta));
            }
            if hard && delta_c == 0.0 && sys.m > 0 {
                delta_c = 1e-8 * tau.powf(0.25);
                continue;
            }
            delta = if delta == 0.0 {
                if self.last_delta > 0.0 {
                    (self.last_delta / 3.0).max(opts.delta0)
                } else {
                    opts.delta0
                }
            } else {
                delta * opts.delta_growth
            };
            if delta > opts.delta_max {
                return Err(Error::Factorization("inertia correction exceeded its limit".into()));
            }
        }
    }
}

impl Linear {
    /// Solves with the last accepted factorization and a new right-hand side.
    fn resolve(&self, rhs: DVector<f64>) -> Vec<f64> {
        let (f, sys) = self.last.as_ref().expect("resolve before solve");
        let mut sys = sys.clone();
        sys.rhs = rhs;
        refine(f, &sys)
    }
}

/// Solve plus a few steps of iterative refinement against the factorized
/// matrix.
fn refine(f: &Factor, sys: &KktSystem) -> Vec<f64> {
    refine_from(f, sys, f.solve(sys.rhs.as_slice()), 3)
}

/// Iterative refinement of `x` towards the solution of `sys`, preconditioned
/// by `f`; stops as soon as the residual no longer shrinks.
fn refine_from(f: &Factor, sys: &KktSystem, mut x: Vec<f64>, steps: usize) -> Vec<f64> {
    let b = sys.rhs.as_slice();
    let resid = |x: &[f64]| -> Vec<f64> { sys.mul(x).iter().zip(b).map(|(kx, bi)| bi - kx).collect() };
    let mut r = resid(&x);
    let mut norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..steps {
        if norm == 0.0 {
            break;
        }
        let dx = f.solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let rt = resid(&trial);
        let nt = rt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if nt >= norm {
            break;
        }
        x = trial;
        r = rt;
        norm = nt;
    }
    x
}

/// Largest `α ∈ (0, 1]` keeping `v + α dv >= (1 - η) v`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>, eta: f64) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).map(|(v, d)| -eta * v / d).fold(1.0, f64::min)
}

/// Barrier-augmented merit: `Φ` in penalty mode, `F - τḡᵀlog s + ν‖C‖₂`
/// otherwise.
#[allow(clippy::too_many_arguments)]
fn merit(nlp: &TranscribedNlp<'_>, f: f64, c: &DVector<f64>, s: &DVector<f64>, omega: f64, tau: f64, nu: f64) -> f64 {
    let barrier: f64 = nlp.bound_rows().iter().zip(s.iter()).map(|(r, v)| r.weight * v.ln()).sum();
    let base = f - tau * barrier;
    match nlp.mode() {
        Mode::Penalty => base + c.norm_squared() / (2.0 * omega),
        Mode::HardEquality => base + nu * c.norm(),
    }
}

/// Rate at which the stage penalty follows the barrier parameter.
const OMEGA_EXPONENT: f64 = 1.25;

/// Penalty parameter of the barrier stage `τ`: `ω` shrinks like
/// `τ^OMEGA_EXPONENT` (scaled by the ratio of the final values when `ω < τ`)
/// down to the final `ω`.
fn stage_omega(nlp: &TranscribedNlp<'_>, tau: f64) -> f64 {
    let (omega, tau_final) = (nlp.omega(), nlp.tau());
    if omega == 0.0 {
        0.0
    } else {
        omega.max(0.1 * (tau / 0.1).powf(OMEGA_EXPONENT) * (omega / tau_final).min(1.0))
    }
}

fn initial_state(nlp: &TranscribedNlp<'_>, x0: &[f64], tau: f64) -> Result<KktState> {
    if x0.len() != nlp.n() {
        return Err(Error::Dimension(format!("expected {} coefficients, got {}", nlp.n(), x0.len())));
    }
    let mut x = x0.to_vec();
    if nlp.slacks(&x).iter().any(|&s| !(s > 0.0)) {
        nlp.make_interior(&mut x);
    }
    let s = nlp.slacks(&x);
    if let Some((row, &value)) = s.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::BarrierDomain { row, value });
    }
    let z = nlp.barrier_weights().component_div(&s) * tau;
    Ok(KktState { x: DVector::from_vec(x), y: DVector::zeros(nlp.m_e()), z, omega: stage_omega(nlp, tau), tau })
}

/// Solves `nlp` from `x0` (shifted inside the bounds if needed), continuing
/// `τ` from `opts.tau_init` down to `nlp.tau()`.
pub fn solve(nlp: &TranscribedNlp<'_>, x0: &[f64], opts: &SolveOptions) -> Result<(KktState, SolveReport)> {
    opts.validate()?;
    let tau0 = opts.tau_init.max(nlp.tau());
    let state = initial_state(nlp, x0, tau0)?;
    run(nlp, state, opts)
}

/// Continues from a previous state, keeping its `τ`.
pub fn solve_warm(nlp: &TranscribedNlp<'_>, state: KktState, opts: &SolveOptions) -> Result<(KktState, SolveReport)> {
    opts.validate()?;
    check_state(nlp, &state)?;
    run(nlp, state, opts)
}

fn run(nlp: &TranscribedNlp<'_>, mut st: KktState, opts: &SolveOptions) -> Result<(KktState, SolveReport)> {
    let start = Instant::now();
    let hard = nlp.mode() == Mode::HardEquality;
    let form = if hard { KktForm::Augmented } else { opts.form };
    let order = time_order(nlp, form);
    let p = nlp.bound_map();
    let gbar = nlp.barrier_weights();
    let tau_final = nlp.tau();
    st.tau = st.tau.max(tau_final);
    st.omega = stage_omega(nlp, st.tau);
    let mut linear = Linear::new();
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut final_stage: Vec<f64> = Vec::new();
    let mut infeas_hist: Vec<f64> = Vec::new();
    let mut nu = 0.0f64;
    let mut e = evaluate(nlp, st.x.as_slice())?;

    let finish = |st: KktState, reason: Termination, kkt: f64, e: &Eval, history: Vec<IterationRecord>| {
        let report = SolveReport {
            converged: reason == Termination::Tolerance,
            reason,
            iterations: history.len(),
            kkt_residual: kkt,
            infeasibility: amax(&e.c),
            history,
            wall_time: start.elapsed(),
        };
        Ok((st, report))
    };

    loop {
        let mut r = residuals_at(nlp, &p, &e, &st.y, &st.z, st.omega, st.tau);
        let mut kkt = r.norm();
        while st.tau > tau_final && kkt <= opts.tol.max(st.tau) {
            st.tau = (st.tau * opts.tau_factor).max(tau_final);
            st.omega = stage_omega(nlp, st.tau);
            r = residuals_at(nlp, &p, &e, &st.y, &st.z, st.omega, st.tau);
            kkt = r.norm();
        }
        let in_final = st.tau <= tau_final;
        if in_final {
            if kkt <= opts.tol {
                return finish(st, Termination::Tolerance, kkt, &e, history);
            }
            final_stage.push(kkt);
            let w = opts.stagnation_window;
            if final_stage.len() > w {
                let old = final_stage[final_stage.len() - 1 - w];
                if (old - kkt) / old < opts.stagnation_decrease {
                    return finish(st, Termination::Stagnation, kkt, &e, history);
                }
            }
        }
        if history.len() >= opts.max_iter {
            return finish(st, Termination::MaxIter, kkt, &e, history);
        }

        let h = nlp.lagrangian_hessian(st.x.as_slice(), st.y.as_slice())?;
        let sys = build_system(nlp, &p, &e, &h, &r, &st.z, st.omega, form)?;
        let (sol, delta) = linear.solve(&sys, &order, opts, hard, st.tau)?;
        let n = nlp.n();
        let dx = DVector::from_column_slice(&sol[..n]);
        let dy = match form {
            KktForm::Augmented => -DVector::from_column_slice(&sol[n..]),
            KktForm::Reduced => -(e.jac.mul(dx.as_slice()) + &r.penalty) / st.omega,
        };
        let pdx = p.mul(dx.as_slice());
        let dz = DVector::from_iterator(
            nlp.m_i(),
            (0..nlp.m_i()).map(|i| (-r.complementarity[i] - st.z[i] * pdx[i]) / e.s[i]),
        );

        // linearized infeasibility: an inconsistent linear model cannot
        // reduce ‖C‖ no matter how the step is scaled
        let infeas = amax(&e.c);
        if hard {
            infeas_hist.push(infeas);
            let lin = amax(&(&e.c + e.jac.mul(dx.as_slice())));
            let w = opts.stagnation_window;
            if infeas > opts.tol && infeas_hist.len() > w && lin >= 0.5 * infeas {
                let old = infeas_hist[infeas_hist.len() - 1 - w];
                if (old - infeas) / old < opts.stagnation_decrease {
                    return finish(st, Termination::InfeasibleStall, kkt, &e, history);
                }
            }
        }

        let alpha_max = max_step(&e.s, &pdx, opts.fraction_to_boundary);
        let alpha_z = max_step(&st.z, &dz, opts.fraction_to_boundary);

        // merit slope along dx
        let ratio: Vec<f64> = gbar.iter().zip(e.s.iter()).map(|(g, s)| g / s).collect();
        let barrier_grad = &e.grad - p.tr_mul(&ratio) * st.tau;
        let slope = if hard {
            nu = nu.max(1.1 * (&st.y + &dy).norm());
            barrier_grad.dot(&dx) - nu * e.c.norm()
        } else {
            (barrier_grad + e.jac.tr_mul(e.c.as_slice()) / st.omega).dot(&dx)
        };
        let m0 = merit(nlp, e.f, &e.c, &e.s, st.omega, st.tau, nu);
        let noise = opts.merit_noise * m0.abs().max(1.0);

        let acceptable = |alpha: f64, mt: f64| mt <= m0 + opts.armijo * alpha * slope.min(0.0) + noise;
        let mut alpha = alpha_max;
        let mut accepted = None;
        let mut dy_step = dy.clone();
        for trial in 0..=opts.max_backtracks {
            let xt = &st.x + &dx * alpha;
            if let Ok(et) = evaluate(nlp, xt.as_slice()) {
                let mt = merit(nlp, et.f, &et.c, &et.s, st.omega, st.tau, nu);
                if acceptable(alpha, mt) {
                    accepted = Some((xt, et, mt));
                    break;
                }
                if trial == 0 {
                    if let Some((xc, ec, mc, dyc)) = second_order(nlp, &linear, form, &p, &st, &e, &dx, &dy, alpha, et, opts, |m| {
                        acceptable(alpha, m)
                    }, nu) {
                        dy_step = dyc;
                        accepted = Some((xc, ec, mc));
                        break;
                    }
                }
            }
            alpha *= opts.backtrack;
        }
        let Some((xt, et, mt)) = accepted else {
            // no acceptable step: the stage is as converged as rounding allows
            if in_final {
                return finish(st, Termination::Stagnation, kkt, &e, history);
            }
            st.tau = (st.tau * opts.tau_factor).max(tau_final);
            st.omega = stage_omega(nlp, st.tau);
            continue;
        };

        st.x = xt;
        st.y += &dy_step * alpha;
        st.z += &dz * alpha_z;
        e = et;
        // keep z within a factor κ of its central-path value
        for i in 0..nlp.m_i() {
            let mu = st.tau * gbar[i] / e.s[i];
            st.z[i] = st.z[i].clamp(mu / opts.kappa_z, mu * opts.kappa_z);
        }
        let (ns, np, nc) = r.norms();
        history.push(IterationRecord {
            merit: mt,
            kkt,
            stationarity: ns,
            penalty: np,
            complementarity: nc,
            infeasibility: infeas,
            tau: st.tau,
            alpha_primal: alpha,
            alpha_dual: alpha_z,
            delta,
        });
    }
}

/// Corrects the rejected trial `x + α dx` towards the linearized
/// constraints with the factorization of the current step; returns the first
/// corrected point the merit accepts.
#[allow(clippy::too_many_arguments)]
fn second_order(
    nlp: &TranscribedNlp<'_>,
    linear: &Linear,
    form: KktForm,
    p: &BlockRows,
    st: &KktState,
    e: &Eval,
    dx: &DVector<f64>,
    dy: &DVector<f64>,
    alpha: f64,
    mut et: Eval,
    opts: &SolveOptions,
    accept: impl Fn(f64) -> bool,
    nu: f64,
) -> Option<(DVector<f64>, Eval, f64, DVector<f64>)> {
    let (n, omega) = (nlp.n(), st.omega);
    let mut dxc = dx * alpha;
    let mut dyc = dy * alpha;
    for _ in 0..opts.max_soc {
        let r2 = &et.c + (&st.y + &dyc) * omega;
        let (d2, dy2) = match form {
            KktForm::Augmented => {
                let mut rhs = DVector::zeros(n + nlp.m_e());
                rhs.rows_mut(n, nlp.m_e()).copy_from(&(-&r2));
                let sol = linear.resolve(rhs);
                (DVector::from_column_slice(&sol[..n]), -DVector::from_column_slice(&sol[n..]))
            }
            KktForm::Reduced => {
                let rhs = -e.jac.tr_mul(r2.as_slice()) / omega;
                let d2 = DVector::from_vec(linear.resolve(rhs));
                let dy2 = -(e.jac.mul(d2.as_slice()) + &r2) / omega;
                (d2, dy2)
            }
        };
        dxc += d2;
        dyc += dy2;
        let pd = p.mul(dxc.as_slice());
        let cap = max_step(&e.s, &pd, opts.fraction_to_boundary);
        if cap < 1.0 {
            dxc *= cap;
            dyc *= cap;
        }
        let xc = &st.x + &dxc;
        et = evaluate(nlp, xc.as_slice()).ok()?;
        let mc = merit(nlp, et.f, &et.c, &et.s, st.omega, st.tau, nu);
        if accept(mc) {
            return Some((xc, et, mc, dyc / alpha));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Mesh;
    use crate::ocp::{Bound, Dims, OcpProblem, ScalarEval, VectorEval};
    use crate::problems::{LinearScalar, StateConstrained};
    use crate::transcription::{transcribe_lgr, transcribe_pbf};
    use approx::assert_abs_diff_eq;

    /// `min F(y(0), y(1))` over a single linear element where the state
    /// coefficients are the only unknowns; `ẏ = u` with `u` free.
    struct Endpoint {
        quad: bool,
        bound: Option<f64>,
        fix: Option<f64>,
    }

    impl OcpProblem for Endpoint {
        fn name(&self) -> &str {
            "endpoint"
        }
        fn dims(&self) -> Dims {
            Dims { n_y: 1, n_u: 1, n_c: 1, n_g: usize::from(self.fix.is_some()) }
        }
        fn horizon(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
        fn mayer(&self, y0: &[f64], yf: &[f64]) -> ScalarEval {
            let mut e = ScalarEval::zero(2);
            if self.quad {
                e.value = 0.5 * (y0[0] * y0[0] + yf[0] * yf[0]);
                e.grad[0] = y0[0];
                e.grad[1] = yf[0];
                e.hess[(0, 0)] = 1.0;
                e.hess[(1, 1)] = 1.0;
            } else {
                e.value = 0.5 * (y0[0] + yf[0]);
                e.grad[0] = 0.5;
                e.grad[1] = 0.5;
            }
            e
        }
        fn running(&self, _: f64, _: &[f64], _: &[f64]) -> ScalarEval {
            ScalarEval::zero(2)
        }
        fn path(&self, _: f64, ydot: &[f64], _: &[f64], u: &[f64], _: &[f64]) -> VectorEval {
            let mut e = VectorEval::zeros(1, 3);
            e.value[0] = ydot[0] - u[0];
            e.jac[(0, 0)] = 1.0;
            e.jac[(0, 2)] = -1.0;
            e
        }
        fn boundary(&self, y0: &[f64], _: &[f64], _: &[f64]) -> VectorEval {
            let mut e = VectorEval::zeros(self.dims().n_g, 2);
            if let Some(v) = self.fix {
                e.value[0] = y0[0] - v;
                e.jac[(0, 0)] = 1.0;
            }
            e
        }
        fn bounds(&self) -> Vec<Bound> {
            self.bound.map(|b| vec![Bound::lower(0, b)]).unwrap_or_default()
        }
    }

    fn state(nlp: &TranscribedNlp<'_>, x: Vec<f64>, tau: f64) -> KktState {
        let s = nlp.slacks(&x);
        KktState {
            z: nlp.barrier_weights().component_div(&s) * tau,
            x: DVector::from_vec(x),
            y: DVector::zeros(nlp.m_e()),
            omega: nlp.omega(),
            tau,
        }
    }

    #[test]
    fn unconstrained_quadratic_residual() {
        let p = Endpoint { quad: true, bound: None, fix: None };
        let mesh = Mesh::uniform(0.0, 1.0, 1).unwrap();
        let nlp = transcribe_pbf(&p, &mesh, 1, 1, 1.0, 1e-3).unwrap();
        // x = (y0, y1, u); choose u so that C = 0
        let st = state(&nlp, vec![0.3, -0.7, -1.0], 1e-3);
        let r = kkt_residual(&nlp, &st).unwrap();
        assert_abs_diff_eq!(r.norm(), 0.7, epsilon = 1e-14);
        let st = state(&nlp, vec![0.0, 0.0, 0.0], 1e-3);
        assert_eq!(kkt_residual(&nlp, &st).unwrap().norm(), 0.0);
    }

    #[test]
    fn penalty_block_vanishes_for_consistent_multipliers() {
        let p = StateConstrained;
        let mesh = Mesh::uniform(0.0, 1.0, 3).unwrap();
        let nlp = transcribe_pbf(&p, &mesh, 2, 4, 1e-3, 1e-2).unwrap();
        let x = nlp.initial_guess();
        let c = nlp.constraints(&x).unwrap();
        let mut st = state(&nlp, x, 1e-2);
        st.y = -c / nlp.omega();
        assert_eq!(amax(&kkt_residual(&nlp, &st).unwrap().penalty), 0.0);
    }

    #[test]
    fn barrier_only_point() {
        // min (y0 + y1) / 2 s.t. y >= 0 at the single Gauss point: with z = 1
        // stationarity and complementarity hold at y = τ ḡ = τ
        let p = Endpoint { quad: false, bound: Some(0.0), fix: None };
        let mesh = Mesh::uniform(0.0, 1.0, 1).unwrap();
        let nlp = transcribe_pbf(&p, &mesh, 1, 1, 1.0, 0.25).unwrap();
        // single Gauss point at s = 1/2 with weight 1: s = (y0 + y1) / 2
        let tau = 0.25;
        let st = KktState {
            x: DVector::from_vec(vec![tau, tau, 0.0]),
            y: DVector::zeros(nlp.m_e()),
            z: DVector::from_element(1, 1.0),
            omega: 1.0,
            tau,
        };
        assert_eq!(nlp.barrier_weights().as_slice(), &[1.0]);
        let r = kkt_residual(&nlp, &st).unwrap();
        assert_abs_diff_eq!(r.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reduced_matrix_is_q_plus_ata_over_omega() {
        let p = Endpoint { quad: true, bound: None, fix: Some(1.0) };
        let mesh = Mesh::uniform(0.0, 1.0, 2).unwrap();
        let omega = 1e-2;
        let nlp = transcribe_pbf(&p, &mesh, 1, 2, omega, 1e-3).unwrap();
        let x = nlp.initial_guess();
        let st = state(&nlp, x.clone(), 1e-3);
        let sys = assemble_kkt(&nlp, &st, KktForm::Reduced).unwrap();
        let (_, j) = nlp.constraints_jacobian(&x).unwrap();
        let a = j.to_dense();
        let q = nlp.lagrangian_hessian(&x, &vec![0.0; nlp.m_e()]).unwrap().to_dense();
        let expect = q + a.transpose() * &a / omega;
        assert!((sys.to_dense() - expect).amax() <= 1e-12);
    }

    #[test]
    fn reduced_and_augmented_steps_agree() {
        let p = StateConstrained;
        let mesh = Mesh::uniform(0.0, 1.0, 3).unwrap();
        let nlp = transcribe_pbf(&p, &mesh, 2, 4, 1e-3, 1e-2).unwrap();
        let x = nlp.initial_guess();
        let mut st = state(&nlp, x, 1e-2);
        st.y = DVector::from_fn(nlp.m_e(), |i, _| 0.1 * ((i % 3) as f64 - 1.0));
        let aug = assemble_kkt(&nlp, &st, KktForm::Augmented).unwrap();
        let red = assemble_kkt(&nlp, &st, KktForm::Reduced).unwrap();
        let da = aug.to_dense().lu().solve(&aug.rhs).unwrap();
        let dr = red.to_dense().lu().solve(&red.rhs).unwrap();
        let diff = (da.rows(0, nlp.n()) - &dr).amax();
        assert!(diff <= 1e-8, "{diff}");
    }

    #[test]
    fn equality_qp_in_hard_mode() {
        // min (y0² + y1²)/2 s.t. y0 = 1, ẏ = u
        let p = Endpoint { quad: true, bound: None, fix: Some(1.0) };
        let mesh = Mesh::uniform(0.0, 1.0, 1).unwrap();
        let nlp = transcribe_lgr(&p, &mesh, 1).unwrap();
        let (st, rep) = solve(&nlp, &vec![0.0; nlp.n()], &SolveOptions::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(rep.iterations <= 2, "{}", rep.iterations);
        assert_abs_diff_eq!(st.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.x[1], 0.0, epsilon = 1e-12);
    }

    fn small_x2(omega: f64) -> (StateConstrained, Mesh, f64) {
        (StateConstrained, Mesh::uniform(0.0, 1.0, 4).unwrap(), omega)
    }

    #[test]
    fn penalty_solve_invariants() {
        let (p, mesh, omega) = small_x2(1e-4);
        let nlp = transcribe_pbf(&p, &mesh, 2, 4, omega, 1e-6).unwrap();
        let opts = SolveOptions { tol: 1e-8, ..SolveOptions::default() };
        let (st, rep) = solve(&nlp, &nlp.initial_guess(), &opts).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert_eq!(rep.history.len(), rep.iterations);
        let r = kkt_residual(&nlp, &st).unwrap();
        let (a, b, c) = r.norms();
        assert!(a <= 1e-8 && b <= 1e-8 && c <= 1e-8);
        assert!(nlp.slacks(st.x.as_slice()).iter().all(|&s| s > 0.0));
        assert!(st.z.iter().all(|&z| z > 0.0));
        // Φ non-increasing within each τ stage, up to rounding slack
        for w in rep.history.windows(2) {
            if w[0].tau == w[1].tau {
                assert!(w[1].merit <= w[0].merit + 1e-10 * w[0].merit.abs().max(1.0));
            }
        }
        let (_, warm) = solve_warm(&nlp, st, &opts).unwrap();
        assert!(warm.iterations <= 2 && warm.converged, "{warm:?}");
    }

    #[test]
    fn reduced_and_augmented_iterates_agree() {
        // a positive definite cost Hessian keeps both forms free of inertia
        // correction, so the steps are algebraically identical
        let p = LinearScalar { a: -0.5, q: 1.0, r: 1.0, control_bounds: Some((-0.5, 0.5)), ..LinearScalar::integrator(1.0) };
        let mesh = Mesh::uniform(0.0, 1.0, 6).unwrap();
        let nlp = transcribe_pbf(&p, &mesh, 3, 6, 1e-3, 1e-4).unwrap();
        let x0 = nlp.initial_guess();
        let opts = SolveOptions { tol: 1e-8, max_iter: 8, ..SolveOptions::default() };
        let (a, _) = solve(&nlp, &x0, &opts).unwrap();
        let (b, _) = solve(&nlp, &x0, &SolveOptions { form: KktForm::Reduced, ..opts }).unwrap();
        assert!((&a.x - &b.x).amax() <= 1e-8, "{}", (&a.x - &b.x).amax());
    }

    #[test]
    fn linear_problem_converges_in_hard_mode() {
        let lin = LinearScalar { q: 1.0, r: 1.0, m: 0.0, control_bounds: Some((-2.0, 2.0)), ..LinearScalar::integrator(1.0) };
        let mesh = Mesh::uniform(0.0, 1.0, 5).unwrap();
        let nlp = transcribe_lgr(&lin, &mesh, 3).unwrap();
        let (_, rep) = solve(&nlp, &nlp.initial_guess(), &SolveOptions::default()).unwrap();
        assert!(matches!(rep.reason, Termination::Tolerance | Termination::Stagnation), "{rep:?}");
        assert!(rep.infeasibility <= 1e-9);
    }

    #[test]
    fn options_are_validated() {
        let bad = SolveOptions { tol: 2.0, ..SolveOptions::default() };
        assert!(bad.validate().is_err());
        assert!(SolveOptions { stagnation_window: 0, ..SolveOptions::default() }.validate().is_err());
        assert!(SolveOptions::default().validate().is_ok());
    }

    #[test]
    fn termination_names_round_trip() {
        for t in [Termination::Tolerance, Termination::Stagnation, Termination::MaxIter, Termination::InfeasibleStall] {
            assert_eq!(t.name().parse::<Termination>().unwrap(), t);
        }
    }
}
