//! Command implementations: instance construction from a command-line spec,
//! the three solver entry points, certification, and the benchmark table.
//!
//! Everything here is deterministic for a fixed configuration and seed;
//! wall-clock time is the only measured quantity.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stride_core::admm::{admm_run, DEFAULT_MAX_ITER as ADMM_MAX_ITER, DEFAULT_TOL as ADMM_TOL};
use stride_core::ipgm::Schedule;
use stride_core::relax::{
    build_bqp, build_q4s, build_random, build_univariate, monomials_up_to, BuildError, PopKind,
    SdpProblem,
};
use stride_core::stride::{
    accel_candidate, kkt_residues, solve_loop, stride_run, AccelMode, Certificate, IterRecord,
    SolveOptions, WarmStart,
};
use stride_core::SolveError;

use crate::report::{kind_name, CertificateReport, SolveReport};
use crate::sdpa::{write_sdpa, SdpaError};

/// Command failures. Solver-layer errors keep their own variant so the
/// binary can distinguish a failed verdict (exit 1) from unusable input
/// (exit 2).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sdpa(#[from] SdpaError),
}

fn io_err(path: &Path, source: io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which problem to pose: a family plus either a seed for generated
/// coefficients or a file of explicit ones. The univariate demo is fixed and
/// accepts neither.
#[derive(Debug, Clone)]
pub struct PopSpec {
    pub kind: PopKind,
    pub d: usize,
    pub seed: Option<u64>,
    pub coeffs: Option<PathBuf>,
}

impl PopSpec {
    /// Compiles the specified instance.
    pub fn build(&self) -> Result<SdpProblem, CliError> {
        match self.kind {
            PopKind::Univariate => {
                if self.seed.is_some() || self.coeffs.is_some() {
                    return Err(CliError::Config(
                        "the univariate demo is fixed; --seed and --coeffs do not apply".into(),
                    ));
                }
                if self.d != 1 {
                    return Err(CliError::Config("the univariate demo has d = 1".into()));
                }
                Ok(build_univariate())
            }
            kind => {
                if self.d == 0 {
                    return Err(CliError::Config("--d must be at least 1".into()));
                }
                match (&self.coeffs, self.seed) {
                    (Some(path), None) => {
                        let coeffs = read_floats(path)?;
                        let expected = match kind {
                            PopKind::Bqp => monomials_up_to(self.d, 2).len(),
                            _ => monomials_up_to(self.d, 4).len(),
                        };
                        if coeffs.len() != expected {
                            return Err(CliError::Config(format!(
                                "{} expects {expected} coefficients at d = {}, file has {}",
                                kind_name(kind),
                                self.d,
                                coeffs.len()
                            )));
                        }
                        let built = match kind {
                            PopKind::Bqp => build_bqp(&coeffs, self.d),
                            _ => build_q4s(&coeffs, self.d),
                        };
                        Ok(built?)
                    }
                    (None, Some(seed)) => Ok(build_random(kind, self.d, seed)?),
                    (Some(_), Some(_)) => Err(CliError::Config(
                        "--seed and --coeffs are mutually exclusive".into(),
                    )),
                    (None, None) => Err(CliError::Config(format!(
                        "{} needs --seed or --coeffs",
                        kind_name(kind)
                    ))),
                }
            }
        }
    }
}

/// Solver selection and tuning knobs shared by solve and bench.
#[derive(Debug, Clone)]
pub struct SolverSpec {
    pub solver: SolverChoice,
    pub tol: f64,
    /// Defaults to 100 outer iterations for the gradient drivers and the
    /// splitting method's own default budget when absent.
    pub max_iter: Option<usize>,
    pub r: usize,
    pub sigma0: Option<f64>,
    pub eps0: Option<f64>,
    pub warm: WarmChoice,
    pub warm_point: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Stride,
    Ipgm,
    Admm,
}

impl SolverChoice {
    pub fn name(self) -> &'static str {
        match self {
            SolverChoice::Stride => "stride",
            SolverChoice::Ipgm => "ipgm",
            SolverChoice::Admm => "admm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmChoice {
    Admm,
    Zero,
    PopPoint,
}

const DEFAULT_OUTER_ITERS: usize = 100;

impl SolverSpec {
    fn validate(&self, problem: &SdpProblem) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol <= 1e-2) {
            return Err(CliError::Config(format!(
                "--tol must be in (0, 1e-2], got {}",
                self.tol
            )));
        }
        if self.r < 1 || self.r > problem.n() {
            return Err(CliError::Config(format!(
                "--r must be in [1, {}], got {}",
                problem.n(),
                self.r
            )));
        }
        for (flag, value) in [("--sigma0", self.sigma0), ("--eps0", self.eps0)] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{flag} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    fn schedule(&self, problem: &SdpProblem) -> Option<Schedule> {
        if self.sigma0.is_none() && self.eps0.is_none() {
            return None;
        }
        let mut schedule = Schedule::defaults(problem, self.tol);
        if let Some(s) = self.sigma0 {
            schedule.sigma0 = s;
        }
        if let Some(e) = self.eps0 {
            schedule.eps0 = e;
        }
        Some(schedule)
    }

    fn warm_start(&self, problem: &SdpProblem) -> Result<WarmStart, CliError> {
        match self.warm {
            WarmChoice::Admm => Ok(WarmStart::Admm {
                max_iter: ADMM_MAX_ITER,
                tol: ADMM_TOL,
            }),
            WarmChoice::Zero => Ok(WarmStart::Zero),
            WarmChoice::PopPoint => {
                let path = self.warm_point.as_ref().ok_or_else(|| {
                    CliError::Config("--warm pop-point needs --warm-point FILE".into())
                })?;
                let point = read_floats(path)?;
                if point.len() != problem.pop.d {
                    return Err(CliError::Config(format!(
                        "warm-start point has {} coordinates, the problem has {}",
                        point.len(),
                        problem.pop.d
                    )));
                }
                Ok(WarmStart::Point(point))
            }
        }
    }
}

/// Metrics and artifacts of one solve, before command-level packaging.
struct Solved {
    certificate: Certificate,
    obj_sdp: f64,
    obj_pop: f64,
    x_hat: Vec<f64>,
    y: Vec<f64>,
    iters: usize,
    accepted_vertices: usize,
    records: Vec<IterRecord>,
    admm_history: Vec<(f64, f64, f64)>,
}

/// Runs the selected solver on a compiled problem. The gradient drivers end
/// with the certificate of their best rounded point; the splitting method
/// rounds its final iterate once for the same purpose.
fn solve_problem(problem: &SdpProblem, spec: &SolverSpec) -> Result<Solved, CliError> {
    spec.validate(problem)?;
    match spec.solver {
        SolverChoice::Stride => {
            let opts = SolveOptions {
                tol: spec.tol,
                max_iter: spec.max_iter.unwrap_or(DEFAULT_OUTER_ITERS),
                hypotheses: spec.r,
                accel: AccelMode::On,
                schedule: spec.schedule(problem),
                eps_policy: None,
                warm: spec.warm_start(problem)?,
            };
            let (state, certificate) = stride_run(problem, &opts)?;
            let hyp = state
                .best_hypothesis
                .as_ref()
                .expect("driver always rounds the final iterate");
            Ok(Solved {
                obj_sdp: problem.c.inner(&state.x),
                obj_pop: hyp.value,
                x_hat: hyp.x.clone(),
                y: state.y.iter().copied().collect(),
                iters: state.k,
                accepted_vertices: state.vertex_ledger.len(),
                records: state.records,
                admm_history: Vec::new(),
                certificate,
            })
        }
        SolverChoice::Ipgm => {
            let (x0, y0, s0) = match spec.warm_start(problem)? {
                WarmStart::Admm { max_iter, tol } => {
                    let ws = admm_run(problem, max_iter, tol)?;
                    (ws.x, ws.y, ws.s)
                }
                WarmStart::Zero => (
                    stride_core::symcore::SymMat::zeros(problem.n()),
                    DVector::zeros(problem.m()),
                    stride_core::symcore::SymMat::zeros(problem.n()),
                ),
                WarmStart::Point(x) => (
                    problem.pop.lift(&x),
                    DVector::zeros(problem.m()),
                    stride_core::symcore::SymMat::zeros(problem.n()),
                ),
                WarmStart::Given { x, y, s } => (x, y, s),
            };
            let opts = SolveOptions {
                tol: spec.tol,
                max_iter: spec.max_iter.unwrap_or(DEFAULT_OUTER_ITERS),
                accel: AccelMode::Off,
                schedule: spec.schedule(problem),
                ..SolveOptions::default()
            };
            let state = solve_loop(problem, x0, y0, s0, &opts)?;
            let kkt = kkt_residues(problem, &state.x, &state.y, &state.s);
            let (_, hyp) = accel_candidate(problem, &state.x, spec.r);
            let certificate = stride_core::stride::subopt_gap(problem, &hyp.x, &state.y, kkt)?;
            Ok(Solved {
                obj_sdp: problem.c.inner(&state.x),
                obj_pop: hyp.value,
                x_hat: hyp.x,
                y: state.y.iter().copied().collect(),
                iters: state.k,
                accepted_vertices: 0,
                records: state.records,
                admm_history: Vec::new(),
                certificate,
            })
        }
        SolverChoice::Admm => {
            let ws = admm_run(problem, spec.max_iter.unwrap_or(ADMM_MAX_ITER), spec.tol)?;
            let kkt = kkt_residues(problem, &ws.x, &ws.y, &ws.s);
            let (_, hyp) = accel_candidate(problem, &ws.x, spec.r);
            let certificate = stride_core::stride::subopt_gap(problem, &hyp.x, &ws.y, kkt)?;
            Ok(Solved {
                obj_sdp: problem.c.inner(&ws.x),
                obj_pop: hyp.value,
                x_hat: hyp.x,
                y: ws.y.iter().copied().collect(),
                iters: ws.iters,
                accepted_vertices: 0,
                records: Vec::new(),
                admm_history: ws.residue_history,
                certificate,
            })
        }
    }
}

/// A finished solve command: the report, the gate verdict, and the raw
/// iteration log for optional tracing.
pub struct SolveOutput {
    pub report: SolveReport,
    /// Whether the final triple met the tolerance (the process exit gate).
    pub passed: bool,
    pub records: Vec<IterRecord>,
    /// Per-iteration `(η_p, η_d, η_g)` when the splitting method ran solo.
    pub admm_history: Vec<(f64, f64, f64)>,
}

/// Builds the instance, solves it, and packages the result JSON.
pub fn run_solve(pop: &PopSpec, spec: &SolverSpec) -> Result<SolveOutput, CliError> {
    let problem = pop.build()?;
    let started = Instant::now();
    let solved = solve_problem(&problem, spec)?;
    let wall_time_sec = started.elapsed().as_secs_f64();
    let report = SolveReport {
        pop_kind: kind_name(pop.kind).to_string(),
        d: problem.pop.d,
        seed: pop.seed,
        n: problem.n(),
        m: problem.m(),
        solver: spec.solver.name().to_string(),
        tol: spec.tol,
        eta_p: solved.certificate.eta_p,
        eta_d: solved.certificate.eta_d,
        eta_g: solved.certificate.eta_g,
        eta_s: solved.certificate.eta_s,
        obj_sdp: solved.obj_sdp,
        obj_pop: solved.obj_pop,
        x_hat: solved.x_hat,
        y: solved.y,
        iters: solved.iters,
        wall_time_sec,
        accepted_vertices: solved.accepted_vertices,
    };
    let passed = report.max_residue() <= spec.tol;
    Ok(SolveOutput {
        report,
        passed,
        records: solved.records,
        admm_history: solved.admm_history,
    })
}

/// Instance metadata written next to an exported file; enough to rebuild
/// the problem and pick the matching rounding rule.
#[derive(Debug, Serialize, Deserialize)]
pub struct BuildSidecar {
    pub pop_kind: String,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub coeffs: Vec<f64>,
    pub n: usize,
    pub m: usize,
    /// Trace cap on lifts of feasible points (enters the lower bound).
    pub trace_bound: f64,
    /// How candidate points are extracted from eigenvectors for this family.
    pub rounding: String,
}

/// Files written by the build command.
pub struct BuildOutput {
    pub sdpa_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub n: usize,
    pub m: usize,
}

fn rounding_tag(kind: PopKind) -> &'static str {
    match kind {
        PopKind::Univariate => "nearest-root-snap",
        PopKind::Bqp => "componentwise-sign",
        PopKind::QuarticSphere => "unit-normalize",
    }
}

/// Compiles the instance and writes the sparse export plus its JSON sidecar.
pub fn run_build(pop: &PopSpec, out: Option<&Path>) -> Result<BuildOutput, CliError> {
    let problem = pop.build()?;
    let sdpa_path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = format!("{}_d{}", kind_name(pop.kind), problem.pop.d);
            if let Some(seed) = pop.seed {
                name.push_str(&format!("_s{seed}"));
            }
            PathBuf::from(name + ".dat-s")
        }
    };
    export_sdpa(&problem, &sdpa_path)?;
    let sidecar = BuildSidecar {
        pop_kind: kind_name(pop.kind).to_string(),
        d: problem.pop.d,
        seed: pop.seed,
        coeffs: problem.pop.coeffs.clone(),
        n: problem.n(),
        m: problem.m(),
        trace_bound: problem.pop.trace_bound,
        rounding: rounding_tag(pop.kind).to_string(),
    };
    let sidecar_path = PathBuf::from(format!("{}.json", sdpa_path.display()));
    let text =
        serde_json::to_string_pretty(&sidecar).expect("sidecar serialization is infallible");
    fs::write(&sidecar_path, text + "\n").map_err(|e| io_err(&sidecar_path, e))?;
    Ok(BuildOutput {
        sdpa_path,
        sidecar_path,
        n: problem.n(),
        m: problem.m(),
    })
}

/// Writes the compiled `(A, b, C)` triple as a sparse SDPA file.
pub fn export_sdpa(problem: &SdpProblem, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write_sdpa(&mut out, problem.n(), problem.map.rows(), &problem.b, &problem.c)
        .and_then(|()| out.flush())
        .map_err(|e| io_err(path, e))
}

/// Where certify gets its candidate point and dual vector.
#[derive(Debug)]
pub enum CertifySource {
    /// A result JSON from the solve command.
    Result(PathBuf),
    /// Plain text files: a point, and optionally a dual (zeros when absent).
    Point { x_hat: PathBuf, y: Option<PathBuf> },
}

/// Recomputes a certificate from scratch: lifts the candidate, rebuilds the
/// dual slack, and re-derives every residue and bound without trusting any
/// solver output. The instance comes from `pop` when given, else from the
/// metadata inside a result JSON.
pub fn run_certify(
    pop: Option<&PopSpec>,
    source: &CertifySource,
) -> Result<CertificateReport, CliError> {
    let (x_hat, y_vals, report_spec) = match source {
        CertifySource::Result(path) => {
            let report: SolveReport = read_json(path)?;
            let spec = PopSpec {
                kind: parse_kind(&report.pop_kind)
                    .ok_or_else(|| CliError::Config(format!(
                        "result names unknown family {:?}",
                        report.pop_kind
                    )))?,
                d: report.d,
                seed: report.seed,
                coeffs: None,
            };
            (report.x_hat, Some(report.y), Some(spec))
        }
        CertifySource::Point { x_hat, y } => {
            let point = read_floats(x_hat)?;
            let dual = y.as_ref().map(|p| read_floats(p)).transpose()?;
            (point, dual, None)
        }
    };
    let spec = match (pop, &report_spec) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => s.clone(),
        (None, None) => {
            return Err(CliError::Config(
                "certify needs a problem spec (--pop ...) when no result JSON is given".into(),
            ))
        }
    };
    let problem = spec.build()?;
    if x_hat.len() != problem.pop.d {
        return Err(CliError::Config(format!(
            "candidate has {} coordinates, the problem has {}",
            x_hat.len(),
            problem.pop.d
        )));
    }
    let y = match y_vals {
        Some(vals) => {
            if vals.len() != problem.m() {
                return Err(CliError::Config(format!(
                    "dual has {} entries, the problem has {} constraints",
                    vals.len(),
                    problem.m()
                )));
            }
            DVector::from_vec(vals)
        }
        None => DVector::zeros(problem.m()),
    };
    certify_point(&problem, &x_hat, &y)
}

/// Certificate for an explicit `(x̂, y)` pair: the primal matrix is the
/// candidate's lift and the slack is `C − A*y`, so the dual residue is zero
/// by construction and the other metrics measure the pair itself.
pub fn certify_point(
    problem: &SdpProblem,
    x_hat: &[f64],
    y: &DVector<f64>,
) -> Result<CertificateReport, CliError> {
    let lift = problem.pop.lift(x_hat);
    let mut slack = problem.c.clone();
    slack.axpy(-1.0, &problem.map.adjoint(y));
    let kkt = kkt_residues(problem, &lift, y, &slack);
    let certificate = stride_core::stride::subopt_gap(problem, x_hat, y, kkt)?;
    Ok(CertificateReport::from(&certificate))
}

/// One benchmark line. Metric fields are NaN when `status` flags a failure.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub kind: String,
    pub d: usize,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_g: f64,
    pub eta_s: f64,
    pub wall_time_sec: f64,
    pub status: String,
}

/// Runs one instance per `(d, seed)` pair and returns rows in input order.
/// Failures are flagged rows, never early exits. Worker count comes from
/// `STRIDE_THREADS` (default: available parallelism), each worker owning its
/// whole solve.
pub fn run_bench(
    kind: PopKind,
    ds: &[usize],
    seeds: &[u64],
    spec: &SolverSpec,
) -> Result<Vec<BenchRow>, CliError> {
    let jobs: Vec<(usize, u64)> = ds
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let workers = worker_count(jobs.len())?;
    let results: Vec<OnceLock<BenchRow>> = jobs.iter().map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(d, seed)) = jobs.get(i) else { break };
                let row = bench_one(kind, d, seed, spec);
                results[i].set(row).expect("each job is claimed once");
            });
        }
    });
    Ok(results
        .into_iter()
        .map(|cell| cell.into_inner().expect("all jobs completed"))
        .collect())
}

fn worker_count(jobs: usize) -> Result<usize, CliError> {
    let cap = match std::env::var("STRIDE_THREADS") {
        Ok(raw) => raw.parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| {
            CliError::Config(format!("STRIDE_THREADS must be a positive integer, got {raw:?}"))
        })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |v| v.get()),
    };
    Ok(cap.min(jobs).max(1))
}

fn bench_one(kind: PopKind, d: usize, seed: u64, spec: &SolverSpec) -> BenchRow {
    let mut row = BenchRow {
        kind: kind_name(kind).to_string(),
        d,
        seed,
        n: 0,
        m: 0,
        eta_p: f64::NAN,
        eta_d: f64::NAN,
        eta_g: f64::NAN,
        eta_s: f64::NAN,
        wall_time_sec: f64::NAN,
        status: "ok".to_string(),
    };
    let started = Instant::now();
    let outcome = build_random(kind, d, seed)
        .map_err(CliError::from)
        .and_then(|problem| {
            row.n = problem.n();
            row.m = problem.m();
            solve_problem(&problem, spec)
        });
    row.wall_time_sec = started.elapsed().as_secs_f64();
    match outcome {
        Ok(solved) => {
            row.eta_p = solved.certificate.eta_p;
            row.eta_d = solved.certificate.eta_d;
            row.eta_g = solved.certificate.eta_g;
            row.eta_s = solved.certificate.eta_s;
            if solved.certificate.max_residue() > spec.tol {
                row.status = format!(
                    "not converged: max residue {:.3e} above tol {:.1e}",
                    solved.certificate.max_residue(),
                    spec.tol
                );
            }
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Writes the benchmark table as CSV (header always present).
pub fn write_bench_csv<W: Write>(out: &mut W, rows: &[BenchRow]) -> io::Result<()> {
    writeln!(out, "kind,d,seed,n,m,eta_p,eta_d,eta_g,eta_s,wall_time_sec,status")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{:e},{:e},{:.6},{}",
            r.kind, r.d, r.seed, r.n, r.m, r.eta_p, r.eta_d, r.eta_g, r.eta_s, r.wall_time_sec,
            r.status
        )?;
    }
    Ok(())
}

/// Command-line family names (also used in result JSON).
pub fn parse_kind(name: &str) -> Option<PopKind> {
    match name {
        "univariate" => Some(PopKind::Univariate),
        "bqp" => Some(PopKind::Bqp),
        "q4s" => Some(PopKind::QuarticSphere),
        _ => None,
    }
}

fn read_floats(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                message: format!("not a number: {tok:?}"),
            })
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
