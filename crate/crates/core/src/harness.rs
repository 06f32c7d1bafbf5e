//! Batch runs: one transcription plus solve per case, oracle metrics,
//! mesh-refinement sweeps, CSV tables and Matrix Market sparsity dumps.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Mesh;
use crate::ocp::{gap, objective, residual, OcpProblem, Trajectory};
use crate::problems::{self, AnalyticReference};
use crate::solver::{solve, KktState, SolveOptions, SolveReport, Termination};
use crate::transcription::{transcribe, Method};

pub const CSV_HEADER: &str = "problem,method,p,q,K,omega,tau,n,mE,J,g_opt,r_feas,iters,reason,ms";

/// One transcription and solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub problem: String,
    pub method: Method,
    pub p: usize,
    /// Quadrature points per element for PBF; `None` means `2p`.
    pub q: Option<usize>,
    pub k: usize,
    pub omega: f64,
    pub tau: f64,
}

impl Case {
    pub fn new(problem: &str, method: Method, p: usize, k: usize) -> Self {
        Self { problem: problem.to_string(), method, p, q: None, k, omega: 1e-10, tau: 1e-10 }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = Some(q);
        self
    }

    /// Points per element at which the scheme samples the dynamics.
    pub fn points(&self) -> usize {
        match self.method {
            Method::Pbf => self.q.unwrap_or(2 * self.p),
            Method::Lgr => self.p,
            Method::HermiteSimpson => 3,
            Method::Trapezoidal => 2,
            Method::ExplicitEuler => 1,
        }
    }

    /// `ω` actually used: collocation baselines run in hard-equality mode.
    pub fn effective_omega(&self) -> f64 {
        if self.method == Method::Pbf {
            self.omega
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub problem: String,
    pub method: Method,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub omega: f64,
    pub tau: f64,
    pub n: usize,
    pub m_e: usize,
    pub j: f64,
    pub g_opt: f64,
    pub r_feas: f64,
    pub iters: usize,
    pub reason: String,
    pub ms: f64,
    /// Slope of `log r_feas` against `log h` from the previous mesh.
    pub order: Option<f64>,
}

/// Everything produced by [`run_case`].
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub record: SweepRecord,
    pub trajectory: Trajectory,
    pub state: KktState,
    pub report: SolveReport,
}

pub fn lookup(name: &str) -> Result<(Box<dyn OcpProblem>, AnalyticReference)> {
    problems::by_name(name).ok_or_else(|| Error::InvalidArgument(format!("unknown problem '{name}'")))
}

/// Transcribes and solves `case` with the default initial guess; metrics
/// come from the oracle rule.
pub fn run_case(case: &Case, opts: &SolveOptions) -> Result<CaseOutcome> {
    let (problem, reference) = lookup(&case.problem)?;
    let (t0, tf) = problem.horizon();
    let mesh = Mesh::uniform(t0, tf, case.k)?;
    let nlp = transcribe(problem.as_ref(), &mesh, case.method, case.p, case.points(), case.omega, case.tau)?;
    let (state, report) = solve(&nlp, &nlp.initial_guess(), opts)?;
    let trajectory = nlp.trajectory(state.x.as_slice())?;
    let j = objective(problem.as_ref(), &trajectory)?;
    let r_feas = residual(problem.as_ref(), &trajectory)?;
    let record = SweepRecord {
        problem: case.problem.clone(),
        method: case.method,
        p: nlp.degree(),
        q: case.points(),
        k: case.k,
        omega: case.effective_omega(),
        tau: case.tau,
        n: nlp.n(),
        m_e: nlp.m_e(),
        j,
        g_opt: reference.j_star.map_or(f64::NAN, |js| gap(j, js)),
        r_feas,
        iters: report.iterations,
        reason: report.reason.name().to_string(),
        ms: report.wall_time.as_secs_f64() * 1e3,
        order: None,
    };
    Ok(CaseOutcome { record, trajectory, state, report })
}

/// Exit status of a termination reason.
pub fn exit_code(reason: Termination) -> i32 {
    match reason {
        Termination::Tolerance => 0,
        Termination::Stagnation => 2,
        Termination::InfeasibleStall => 3,
        Termination::MaxIter => 4,
    }
}

/// `(method, ω)` pairs crossed with the mesh sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub problem: String,
    pub runs: Vec<(Method, f64)>,
    pub p: usize,
    pub q: Option<usize>,
    pub ks: Vec<usize>,
    pub tau: f64,
}

impl SweepSpec {
    pub fn cases(&self) -> Vec<Case> {
        let mut out = Vec::new();
        for &(method, omega) in &self.runs {
            for &k in &self.ks {
                out.push(Case { problem: self.problem.clone(), method, p: self.p, q: self.q, k, omega, tau: self.tau });
            }
        }
        out
    }
}

/// Runs all cases of a sweep in parallel and returns records in
/// `(method, ω, K)` order with empirical orders filled in. Failed solves
/// become records whose reason carries the error.
pub fn sweep(spec: &SweepSpec, opts: &SolveOptions) -> Result<Vec<SweepRecord>> {
    lookup(&spec.problem)?;
    let cases = spec.cases();
    let mut records: Vec<SweepRecord> = cases
        .par_iter()
        .map(|case| match run_case(case, opts) {
            Ok(o) => o.record,
            Err(e) => failed_record(case, &e),
        })
        .collect();
    let (_, reference) = lookup(&spec.problem)?;
    if reference.j_star.is_none() {
        reference_from_finest(&mut records);
    }
    fill_orders(&mut records);
    Ok(records)
}

fn failed_record(case: &Case, e: &Error) -> SweepRecord {
    SweepRecord {
        problem: case.problem.clone(),
        method: case.method,
        p: case.p,
        q: case.points(),
        k: case.k,
        omega: case.effective_omega(),
        tau: case.tau,
        n: 0,
        m_e: 0,
        j: f64::NAN,
        g_opt: f64::NAN,
        r_feas: f64::NAN,
        iters: 0,
        reason: format!("error: {}", e.to_string().replace(',', ";")),
        ms: 0.0,
        order: None,
    }
}

/// Without an analytic `J*`, the finest PBF run with the smallest `ω` serves
/// as reference; its reason field records that.
fn reference_from_finest(records: &mut [SweepRecord]) {
    let best = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.method == Method::Pbf && r.j.is_finite())
        .min_by(|a, b| (a.1.omega, std::cmp::Reverse(a.1.k)).partial_cmp(&(b.1.omega, std::cmp::Reverse(b.1.k))).unwrap())
        .map(|(i, r)| (i, r.j));
    if let Some((i, j_ref)) = best {
        for r in records.iter_mut() {
            r.g_opt = gap(r.j, j_ref);
        }
        records[i].reason.push_str("+reference");
    }
}

/// Consecutive records with the same method and `ω` form a refinement
/// sequence; uniform meshes give `h ∝ 1/K`.
pub fn fill_orders(records: &mut [SweepRecord]) {
    for i in 1..records.len() {
        let (a, b) = (&records[i - 1], &records[i]);
        if a.method == b.method && a.omega == b.omega && a.problem == b.problem && a.k != b.k {
            let slope = (b.r_feas / a.r_feas).ln() / (a.k as f64 / b.k as f64).ln();
            records[i].order = slope.is_finite().then_some(slope);
        }
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

/// Writes the CSV table; with `with_order`, an `order` column is appended.
pub fn write_csv<W: Write>(mut w: W, records: &[SweepRecord], with_order: bool) -> io::Result<()> {
    if with_order {
        writeln!(w, "{CSV_HEADER},order")?;
    } else {
        writeln!(w, "{CSV_HEADER}")?;
    }
    for r in records {
        write!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.problem,
            r.method,
            r.p,
            r.q,
            r.k,
            num(r.omega),
            num(r.tau),
            r.n,
            r.m_e,
            num(r.j),
            num(r.g_opt),
            num(r.r_feas),
            r.iters,
            r.reason,
            format!("{:.3}", r.ms)
        )?;
        if with_order {
            write!(w, ",{}", r.order.map(num).unwrap_or_default())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes `(t, y..., u...)` sampled at `per_element` equidistant points of
/// every element (both ends included).
pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory, n_y: usize, per_element: usize) -> io::Result<()> {
    let comps = traj.space.num_components();
    let mut head = vec!["t".to_string()];
    head.extend((0..n_y).map(|i| format!("y{}", i + 1)));
    head.extend((0..comps - n_y).map(|i| format!("u{}", i + 1)));
    writeln!(w, "{}", head.join(","))?;
    let mesh = traj.space.mesh();
    let denom = per_element.saturating_sub(1).max(1) as f64;
    for k in 0..mesh.num_elements() {
        for i in 0..per_element {
            let s = i as f64 / denom;
            let (_, y, u) = traj.sample_local(n_y, k, s);
            let mut row = vec![format!("{:e}", mesh.map(k, s))];
            row.extend(y.iter().chain(&u).map(|v| format!("{v:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Matrix Market coordinate pattern with 1-based indices.
pub fn write_matrix_market<W: Write>(
    mut w: W,
    nrows: usize,
    ncols: usize,
    entries: &[(usize, usize)],
    symmetric: bool,
) -> io::Result<()> {
    let kind = if symmetric { "symmetric" } else { "general" };
    writeln!(w, "%%MatrixMarket matrix coordinate pattern {kind}")?;
    writeln!(w, "{nrows} {ncols} {}", entries.len())?;
    for &(r, c) in entries {
        writeln!(w, "{} {}", r + 1, c + 1)?;
    }
    Ok(())
}

/// A pattern read back from Matrix Market, with 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub nrows: usize,
    pub ncols: usize,
    pub symmetric: bool,
    pub entries: Vec<(usize, usize)>,
}

pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Pattern> {
    let bad = |msg: &str| Error::InvalidArgument(format!("matrix market: {msg}"));
    let mut lines = r.lines().map(|l| l.map_err(|e| bad(&e.to_string())));
    let header = lines.next().ok_or_else(|| bad("empty input"))??;
    let words: Vec<&str> = header.split_whitespace().collect();
    if words.len() != 5 || words[0] != "%%MatrixMarket" || words[1] != "matrix" || words[2] != "coordinate" {
        return Err(bad("unsupported header"));
    }
    let symmetric = words[4] == "symmetric";
    let mut size = None;
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let v: Vec<usize> = t.split_whitespace().take(3).map(|x| x.parse().map_err(|_| bad("bad integer"))).collect::<Result<_>>()?;
        match size {
            None => {
                if v.len() != 3 {
                    return Err(bad("bad size line"));
                }
                size = Some((v[0], v[1], v[2]));
            }
            Some(_) => {
                if v.len() < 2 || v[0] == 0 || v[1] == 0 {
                    return Err(bad("bad entry"));
                }
                entries.push((v[0] - 1, v[1] - 1));
            }
        }
    }
    let (nrows, ncols, nnz) = size.ok_or_else(|| bad("missing size line"))?;
    if nnz != entries.len() {
        return Err(bad("entry count mismatch"));
    }
    Ok(Pattern { nrows, ncols, symmetric, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, r: f64) -> SweepRecord {
        SweepRecord {
            problem: "x2".into(),
            method: Method::Lgr,
            p: 5,
            q: 5,
            k,
            omega: 0.0,
            tau: 1e-10,
            n: 1,
            m_e: 1,
            j: 1.0,
            g_opt: 0.0,
            r_feas: r,
            iters: 3,
            reason: "tolerance".into(),
            ms: 0.0,
            order: None,
        }
    }

    #[test]
    fn orders_from_successive_meshes() {
        let mut rs = vec![record(10, 1e-4), record(20, 2.5e-5), record(40, 6.25e-6)];
        fill_orders(&mut rs);
        assert_eq!(rs[0].order, None);
        assert!((rs[1].order.unwrap() - 2.0).abs() < 1e-12);
        assert!((rs[2].order.unwrap() - 2.0).abs() < 1e-12);
        let mut one = vec![record(10, 1.0)];
        fill_orders(&mut one);
        assert_eq!(one[0].order, None);
    }

    #[test]
    fn csv_header_and_order_column() {
        let mut out = Vec::new();
        write_csv(&mut out, &[record(10, 1e-4)], false).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 15);
        let mut out = Vec::new();
        write_csv(&mut out, &[record(10, 1e-4)], true).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn matrix_market_round_trip() {
        let e = vec![(0, 0), (2, 1), (1, 1), (2, 2)];
        let mut out = Vec::new();
        write_matrix_market(&mut out, 3, 3, &e, true).unwrap();
        let back = read_matrix_market(&out[..]).unwrap();
        assert_eq!(back, Pattern { nrows: 3, ncols: 3, symmetric: true, entries: e });
        assert!(read_matrix_market(&b"%%MatrixMarket matrix coordinate pattern general\n2 2 3\n1 1\n"[..]).is_err());
    }

    #[test]
    fn unknown_problem() {
        let case = Case::new("x9", Method::Pbf, 2, 4);
        assert!(run_case(&case, &SolveOptions::default()).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(Termination::Tolerance), 0);
        assert_eq!(exit_code(Termination::Stagnation), 2);
        assert_eq!(exit_code(Termination::InfeasibleStall), 3);
        assert_eq!(exit_code(Termination::MaxIter), 4);
    }
}
