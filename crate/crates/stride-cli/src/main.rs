//! `stride`: build, solve, certify, and benchmark dense second-order moment
//! relaxations of small polynomial problems.
//!
//! Exit codes: 0 on success (for solve: the final triple met the tolerance),
//! 1 when a solve or certificate reached a negative verdict (tolerance
//! missed, infeasible candidate), 2 for unusable input or I/O failures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stride_cli::report::write_trace_csv;
use stride_cli::run::{
    run_bench, run_build, run_certify, run_solve, write_bench_csv, CertifySource, CliError,
    PopSpec, SolveOutput, SolverChoice, SolverSpec, WarmChoice,
};
use stride_core::relax::PopKind;
use stride_core::symstore::Trace;
use stride_core::SolveError;

#[derive(Parser)]
#[command(
    name = "stride",
    about = "Moment-relaxation SDP solver for small polynomial problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile an instance and export it as sparse SDPA plus a JSON sidecar.
    Build {
        #[command(flatten)]
        pop: PopArgs,
        /// Export path; defaults to <kind>_d<d>[_s<seed>].dat-s.
        #[arg(long, value_name = "FILE")]
        export_sdpa: Option<PathBuf>,
    },
    /// Solve an instance and write the result JSON to stdout.
    Solve {
        #[command(flatten)]
        pop: PopArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also write the result JSON to this file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Also export the compiled instance as sparse SDPA.
        #[arg(long, value_name = "FILE")]
        export_sdpa: Option<PathBuf>,
        /// Write a per-iteration CSV trace (<out>.trace.csv or trace.csv).
        #[arg(long)]
        trace: bool,
    },
    /// Recompute a certificate from a result JSON or an explicit point.
    Certify {
        #[command(flatten)]
        pop: PopArgs,
        /// Result JSON produced by solve.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["x_hat", "y"])]
        result: Option<PathBuf>,
        /// Candidate point: whitespace-separated coordinates.
        #[arg(long, value_name = "FILE")]
        x_hat: Option<PathBuf>,
        /// Dual vector (defaults to zeros), whitespace-separated.
        #[arg(long, value_name = "FILE", requires = "x_hat")]
        y: Option<PathBuf>,
        /// Also write the certificate JSON to this file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Solve a grid of generated instances and print a CSV table.
    Bench {
        /// Problem family to generate.
        #[arg(long, value_enum)]
        pop: PopArg,
        /// Dimensions, comma separated (empty list gives an empty table).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        d: Vec<usize>,
        /// Seeds, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        seeds: Vec<u64>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also write the CSV table to this file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PopArg {
    Univariate,
    Bqp,
    Q4s,
}

impl From<PopArg> for PopKind {
    fn from(arg: PopArg) -> PopKind {
        match arg {
            PopArg::Univariate => PopKind::Univariate,
            PopArg::Bqp => PopKind::Bqp,
            PopArg::Q4s => PopKind::QuarticSphere,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    /// Projected-gradient backbone with rounding acceleration.
    Stride,
    /// Backbone only, no acceleration.
    Ipgm,
    /// Splitting method only.
    Admm,
}

impl From<SolverArg> for SolverChoice {
    fn from(arg: SolverArg) -> SolverChoice {
        match arg {
            SolverArg::Stride => SolverChoice::Stride,
            SolverArg::Ipgm => SolverChoice::Ipgm,
            SolverArg::Admm => SolverChoice::Admm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WarmArg {
    /// Splitting-method pass at its default budget.
    Admm,
    /// All-zero triple.
    Zero,
    /// Lift the point in --warm-point FILE.
    PopPoint,
}

impl From<WarmArg> for WarmChoice {
    fn from(arg: WarmArg) -> WarmChoice {
        match arg {
            WarmArg::Admm => WarmChoice::Admm,
            WarmArg::Zero => WarmChoice::Zero,
            WarmArg::PopPoint => WarmChoice::PopPoint,
        }
    }
}

#[derive(Args)]
struct PopArgs {
    /// Problem family.
    #[arg(long, value_enum)]
    pop: PopArg,
    /// Number of variables (fixed to 1 for the univariate demo).
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Generate coefficients from this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Read objective coefficients from a whitespace-separated file.
    #[arg(long, value_name = "FILE")]
    coeffs: Option<PathBuf>,
}

impl From<&PopArgs> for PopSpec {
    fn from(args: &PopArgs) -> PopSpec {
        PopSpec {
            kind: args.pop.into(),
            d: args.d,
            seed: args.seed,
            coeffs: args.coeffs.clone(),
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Solver to run.
    #[arg(long, value_enum, default_value_t = SolverArg::Stride)]
    solver: SolverArg,
    /// Termination tolerance on the largest KKT residue, in (0, 1e-2].
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration budget (default: 100 outer iterations; 2000 for admm).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Eigenvectors rounded per acceleration attempt, in [1, n].
    #[arg(long, default_value_t = 3)]
    r: usize,
    /// Initial proximal step size (default derived from the objective norm).
    #[arg(long)]
    sigma0: Option<f64>,
    /// Initial inexactness allowance (default derived from the right-hand side).
    #[arg(long)]
    eps0: Option<f64>,
    /// Warm-start source.
    #[arg(long, value_enum, default_value_t = WarmArg::Admm)]
    warm: WarmArg,
    /// Feasible point to lift when --warm pop-point is chosen.
    #[arg(long, value_name = "FILE", required_if_eq("warm", "pop-point"))]
    warm_point: Option<PathBuf>,
}

impl From<&SolverArgs> for SolverSpec {
    fn from(args: &SolverArgs) -> SolverSpec {
        SolverSpec {
            solver: args.solver.into(),
            tol: args.tol,
            max_iter: args.max_iter,
            r: args.r,
            sigma0: args.sigma0,
            eps0: args.eps0,
            warm: args.warm.into(),
            warm_point: args.warm_point.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CliError::Solve(SolveError::InfeasibleHypothesis) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Build { pop, export_sdpa } => {
            let spec = PopSpec::from(&pop);
            let out = run_build(&spec, export_sdpa.as_deref())?;
            println!(
                "wrote {} ({} constraints, block size {}) and {}",
                out.sdpa_path.display(),
                out.m,
                out.n,
                out.sidecar_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve {
            pop,
            solver,
            out,
            export_sdpa,
            trace,
        } => {
            let pop_spec = PopSpec::from(&pop);
            let solver_spec = SolverSpec::from(&solver);
            if let Some(path) = &export_sdpa {
                let problem = pop_spec.build()?;
                stride_cli::run::export_sdpa(&problem, path)?;
            }
            let output = run_solve(&pop_spec, &solver_spec)?;
            let text = serde_json::to_string_pretty(&output.report)
                .expect("report serialization is infallible");
            println!("{text}");
            if let Some(path) = &out {
                write_text(path, &(text.clone() + "\n"))?;
            }
            if trace {
                write_trace(&output, out.as_deref())?;
            }
            if output.passed {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "solve stopped after {} iterations with max residue {:.3e} above tol {:.1e}",
                    output.report.iters,
                    output.report.max_residue(),
                    output.report.tol
                );
                Ok(ExitCode::from(1))
            }
        }
        Command::Certify {
            pop,
            result,
            x_hat,
            y,
            out,
        } => {
            let source = match (result, x_hat) {
                (Some(path), None) => CertifySource::Result(path),
                (None, Some(point)) => CertifySource::Point { x_hat: point, y },
                (None, None) => {
                    return Err(CliError::Config(
                        "certify needs --result FILE or --x-hat FILE".into(),
                    ))
                }
                (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
            };
            let spec = PopSpec::from(&pop);
            let report = run_certify(Some(&spec), &source)?;
            let text = serde_json::to_string_pretty(&report)
                .expect("certificate serialization is infallible");
            println!("{text}");
            if let Some(path) = &out {
                write_text(path, &(text + "\n"))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            pop,
            d,
            seeds,
            solver,
            out,
        } => {
            let rows = run_bench(pop.into(), &d, &seeds, &SolverSpec::from(&solver))?;
            let mut buf = Vec::new();
            write_bench_csv(&mut buf, &rows).expect("in-memory write cannot fail");
            let text = String::from_utf8(buf).expect("CSV is UTF-8");
            print!("{text}");
            if let Some(path) = &out {
                write_text(path, &text)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn trace_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.with_extension("trace.csv"),
        None => PathBuf::from("trace.csv"),
    }
}

/// Writes the iteration log: outer-iteration records for the gradient
/// drivers, or the residue history when the splitting method ran alone.
fn write_trace(output: &SolveOutput, out: Option<&Path>) -> Result<(), CliError> {
    let path = trace_path(out);
    let file = File::create(&path).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    let io_result = if output.records.is_empty() && !output.admm_history.is_empty() {
        let mut trace = Trace::new(vec!["eta_p", "eta_d", "eta_g"]);
        for (k, &(ep, ed, eg)) in output.admm_history.iter().enumerate() {
            trace.push(k + 1, &[ep, ed, eg]);
        }
        trace.write_csv(&mut writer)
    } else {
        write_trace_csv(&mut writer, &output.records)
    };
    io_result
        .and_then(|()| writer.flush())
        .map_err(|e| CliError::Io { path, source: e })
}
