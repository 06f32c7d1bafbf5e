use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use pbf_core::harness::{self, Case, SweepSpec};
use pbf_core::quadrature::{gauss_legendre, stability_probe, zigzag, QuadratureRule};
use pbf_core::{transcribe, Mesh, Method, SolveOptions};

/// Exit status for unknown problems, methods or rules.
const USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "pbf", version, about = "Transcribe and solve optimal control benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write a single-record CSV
    Solve(SolveArgs),
    /// Mesh-refinement sweep over methods and meshes
    Sweep(SweepArgs),
    /// Write a Jacobian or Hessian pattern in Matrix Market format
    Sparsity(SparsityArgs),
    /// Compare a quadrature rule with the oracle on the zigzag control
    Quadcheck(QuadArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    method: String,
    #[arg(long)]
    p: usize,
    #[arg(long = "K")]
    k: usize,
    /// Quadrature points per element for pbf (default 2p)
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value_t = 1e-10)]
    omega: f64,
    #[arg(long, default_value_t = 1e-10)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write (t, y..., u...) at 20 points per element
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Write 0 for wall time so output is byte-stable
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    problem: String,
    /// Comma-separated methods, each optionally with its ω, e.g. pbf:1e-5,pbf:1e-10,lgr
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    p: usize,
    #[arg(long = "K-list", value_delimiter = ',')]
    k_list: Vec<usize>,
    #[arg(long)]
    q: Option<usize>,
    /// ω for pbf entries given without one
    #[arg(long, default_value_t = 1e-10)]
    omega: f64,
    #[arg(long, default_value_t = 1e-10)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SparsityArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    method: String,
    #[arg(long)]
    p: usize,
    #[arg(long = "K")]
    k: usize,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, value_parser = ["jacobian", "hessian"])]
    which: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuadArgs {
    /// midpoint, trapezoid or gauss:q
    #[arg(long)]
    rule: String,
    /// Coarsest mesh; the probe runs on K, 2K, 4K and 8K elements
    #[arg(long = "K", default_value_t = 4)]
    k: usize,
    /// Probe the zero control instead of the zigzag
    #[arg(long)]
    zero: bool,
}

/// Failure with a chosen exit status.
struct Exit(u8, String);

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        Exit(1, format!("{e:#}"))
    }
}

impl From<pbf_core::Error> for Exit {
    fn from(e: pbf_core::Error) -> Self {
        Exit(1, e.to_string())
    }
}

fn usage(msg: String) -> Exit {
    Exit(USAGE, msg)
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_method(name: &str) -> Result<Method, Exit> {
    name.parse().map_err(|e: pbf_core::Error| usage(e.to_string()))
}

fn check_problem(name: &str) -> Result<(), Exit> {
    harness::lookup(name).map(|_| ()).map_err(|e| usage(e.to_string()))
}

fn solve(a: SolveArgs) -> Result<u8, Exit> {
    check_problem(&a.problem)?;
    let method = parse_method(&a.method)?;
    let case = Case { problem: a.problem, method, p: a.p, q: a.q, k: a.k, omega: a.omega, tau: a.tau };
    let mut outcome = harness::run_case(&case, &SolveOptions::default())?;
    if a.deterministic {
        outcome.record.ms = 0.0;
    }
    let mut w = output(a.out.as_deref())?;
    harness::write_csv(&mut w, &[outcome.record], false).context("writing record")?;
    w.flush().context("writing record")?;
    if let Some(path) = a.trajectory {
        let (problem, _) = harness::lookup(&case.problem)?;
        let mut w = output(Some(&path))?;
        harness::write_trajectory(&mut w, &outcome.trajectory, problem.dims().n_y, 20).context("writing trajectory")?;
        w.flush().context("writing trajectory")?;
    }
    Ok(harness::exit_code(outcome.report.reason) as u8)
}

fn sweep(a: SweepArgs) -> Result<u8, Exit> {
    check_problem(&a.problem)?;
    let mut runs = Vec::new();
    for entry in &a.methods {
        let (name, omega) = match entry.split_once(':') {
            Some((m, w)) => (m, w.parse::<f64>().map_err(|_| usage(format!("bad ω in '{entry}'")))?),
            None => (entry.as_str(), a.omega),
        };
        runs.push((parse_method(name)?, omega));
    }
    if runs.is_empty() || a.k_list.is_empty() {
        return Err(usage("need at least one method and one K".into()));
    }
    let spec = SweepSpec { problem: a.problem, runs, p: a.p, q: a.q, ks: a.k_list, tau: a.tau };
    let mut records = harness::sweep(&spec, &SolveOptions::default())?;
    if a.deterministic {
        records.iter_mut().for_each(|r| r.ms = 0.0);
    }
    let mut w = output(a.out.as_deref())?;
    harness::write_csv(&mut w, &records, true).context("writing sweep")?;
    w.flush().context("writing sweep")?;
    Ok(0)
}

fn sparsity(a: SparsityArgs) -> Result<u8, Exit> {
    let (problem, _) = harness::lookup(&a.problem).map_err(|e| usage(e.to_string()))?;
    let method = parse_method(&a.method)?;
    let q = Case { problem: a.problem.clone(), method, p: a.p, q: a.q, k: a.k, omega: 1e-10, tau: 1e-10 }.points();
    let (t0, tf) = problem.horizon();
    let mesh = Mesh::uniform(t0, tf, a.k).context("building mesh")?;
    let omega = if method == Method::Pbf { 1e-10 } else { 0.0 };
    let nlp = transcribe(problem.as_ref(), &mesh, method, a.p, q, omega, 1e-10).context("transcribing")?;
    let mut w = output(a.out.as_deref())?;
    if a.which == "jacobian" {
        harness::write_matrix_market(&mut w, nlp.m_e(), nlp.n(), &nlp.jacobian_pattern(), false)
    } else {
        harness::write_matrix_market(&mut w, nlp.n(), nlp.n(), &nlp.hessian_pattern(), true)
    }
    .context("writing pattern")?;
    w.flush().context("writing pattern")?;
    Ok(0)
}

fn parse_rule(name: &str) -> Result<QuadratureRule, Exit> {
    match name {
        "midpoint" => Ok(QuadratureRule::midpoint()),
        "trapezoid" => Ok(QuadratureRule::trapezoid()),
        _ => {
            let q = name
                .strip_prefix("gauss:")
                .and_then(|q| q.parse().ok())
                .ok_or_else(|| usage(format!("unknown rule '{name}'")))?;
            gauss_legendre(q).map_err(|e| usage(e.to_string()))
        }
    }
}

fn quadcheck(a: QuadArgs) -> Result<u8, Exit> {
    let rule = parse_rule(&a.rule)?;
    let c = |u: f64| (std::f64::consts::PI * u).sin();
    println!("K,r_h,r_oracle");
    for level in 0..4 {
        let k = a.k.max(1) << level;
        let mesh = Mesh::uniform(0.0, 1.0, k).context("building mesh")?;
        let (space, mut x) = zigzag(&mesh).context("building zigzag")?;
        if a.zero {
            x.iter_mut().for_each(|v| *v = 0.0);
        }
        let r = stability_probe(&space, 0, c, &rule, &x).context("probing")?;
        println!("{k},{:e},{:e}", r.r_h, r.r_oracle);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Sparsity(a) => sparsity(a),
        Command::Quadcheck(a) => quadcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, msg)) => {
            eprintln!("pbf: {msg}");
            ExitCode::from(code)
        }
    }
}
