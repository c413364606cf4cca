//! `ocplab` command-line front end.
//!
//! Exit codes: 0 success or expected outcome, 1 unexpected verdict,
//! 2 usage or configuration error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExpectProperty, ExpectVerdict, Flux, PropertyArg, RunConfig, Source};

#[derive(Debug)]
pub enum CliError {
    /// Ran fine, but the outcome differs from `--expect`.
    Unexpected(String),
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Unexpected(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Unexpected(m) | CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ocplab::Error> for CliError {
    fn from(e: ocplab::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv error: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ocplab",
    version,
    about = "Dynamic programming and maximum-principle experiments on optimal control problems"
)]
struct Cli {
    /// JSON run configuration; flags and environment variables override it.
    #[arg(long, global = true, env = "OCPLAB_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory [default: ocplab-out].
    #[arg(long, global = true, env = "OCPLAB_OUT")]
    out: Option<PathBuf>,
    /// Seed for randomized sampling [default: 0].
    #[arg(long, global = true, env = "OCPLAB_SEED")]
    seed: Option<u64>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, env = "OCPLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the HJB equation on a grid, with refinement and error tables.
    Solve(SolveArgs),
    /// Check viscosity, extended-solution or semiconcavity properties.
    Verify(VerifyArgs),
    /// Flow extremals backward, scan for shocks and rebuild the value.
    Flow(FlowArgs),
    /// Run a hypothesis experiment and write its report.
    Report(ReportArgs),
    /// List the registered problems.
    ListProblems,
}

#[derive(Args, Debug)]
struct ProblemArg {
    /// Registered id or path to a problem JSON file.
    #[arg(long, env = "OCPLAB_PROBLEM")]
    problem: Option<String>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArg,
    /// Nodes per state dimension on the coarsest level [default: 160].
    #[arg(long)]
    nx: Option<usize>,
    /// Time steps on the coarsest level [default: smallest stable].
    #[arg(long)]
    nt: Option<usize>,
    /// Extra levels, each doubling nx and nt [default: 0].
    #[arg(long)]
    refine: Option<usize>,
    #[arg(long, value_enum)]
    flux: Option<Flux>,
    /// Control mesh points per dimension.
    #[arg(long)]
    control_mesh: Option<usize>,
    /// Lower corner of the state box, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lower: Option<Vec<f64>>,
    /// Upper corner of the state box, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    upper: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long, value_enum)]
    property: Option<PropertyArg>,
    #[arg(long, value_enum)]
    expect: Option<ExpectProperty>,
    /// Function to check [default: reference].
    #[arg(long, value_enum)]
    source: Option<Source>,
    /// Test points per state dimension and per time [default: 7].
    #[arg(long)]
    grid: Option<usize>,
    /// Coordinate of the kink hyperplane; semiconcavity pairs are drawn
    /// within 0.5 of it [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    kink: Option<f64>,
    /// Grid nodes when the source is an HJB solution [default: 160].
    #[arg(long)]
    nx: Option<usize>,
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[command(flatten)]
    problem: ProblemArg,
    /// Terminal states `lo:hi:n` (per dimension).
    #[arg(long, allow_hyphen_values = true)]
    xi_range: Option<String>,
    /// Time steps per extremal [default: 400].
    #[arg(long)]
    nt: Option<usize>,
    /// Times scanned for shocks [default: 21].
    #[arg(long)]
    taus: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    hypothesis: Option<u8>,
    #[arg(long, value_enum)]
    expect: Option<ExpectVerdict>,
    /// Initial data per state dimension and per time [default: 7].
    #[arg(long)]
    grid: Option<usize>,
    /// Shooting terminal states per dimension [default: 41].
    #[arg(long)]
    n_shoot: Option<usize>,
    /// Time steps per extremal [default: 200].
    #[arg(long)]
    nt: Option<usize>,
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let workers = pick(cli.workers, cfg.workers);
    if let Some(w) = workers {
        config::positive("workers", w)?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {w} workers: {e}")))?;
    }
    let ctx = commands::Context {
        out: pick(cli.out, cfg.out.take()).unwrap_or_else(|| PathBuf::from("ocplab-out")),
        seed: pick(cli.seed, cfg.seed).unwrap_or(0),
    };
    let problem = |arg: ProblemArg, cfg: &RunConfig| pick(arg.problem, cfg.problem.clone());
    match cli.command {
        Command::ListProblems => commands::list_problems(),
        Command::Solve(a) => {
            let s = &cfg.solve;
            commands::solve(
                &ctx,
                commands::SolveParams {
                    problem: problem(a.problem, &cfg),
                    nx: pick(a.nx, s.nx),
                    nt: pick(a.nt, s.nt),
                    refine: pick(a.refine, s.refine).unwrap_or(0),
                    flux: pick(a.flux, s.flux).unwrap_or(Flux::ControlWise),
                    control_mesh: pick(a.control_mesh, s.control_mesh),
                    lower: pick(a.lower, s.lower.clone()),
                    upper: pick(a.upper, s.upper.clone()),
                },
            )
        }
        Command::Verify(a) => {
            let v = &cfg.verify;
            commands::verify(
                &ctx,
                commands::VerifyParams {
                    problem: problem(a.problem, &cfg),
                    property: pick(a.property, v.property).unwrap_or(PropertyArg::Extended),
                    expect: pick(a.expect, v.expect),
                    source: pick(a.source, v.source).unwrap_or(Source::Reference),
                    grid: pick(a.grid, v.grid).unwrap_or(7),
                    kink: pick(a.kink, v.kink).unwrap_or(0.0),
                    nx: pick(a.nx, v.nx).unwrap_or(160),
                },
            )
        }
        Command::Flow(a) => {
            let f = &cfg.flow;
            commands::flow(
                &ctx,
                commands::FlowParams {
                    problem: problem(a.problem, &cfg),
                    xi_range: pick(a.xi_range, f.xi_range.clone()),
                    nt: pick(a.nt, f.nt).unwrap_or(400),
                    taus: pick(a.taus, f.taus).unwrap_or(21),
                },
            )
        }
        Command::Report(a) => {
            let r = &cfg.report;
            commands::report(
                &ctx,
                commands::ReportParams {
                    problem: problem(a.problem, &cfg),
                    hypothesis: pick(a.hypothesis, r.hypothesis),
                    expect: pick(a.expect, r.expect),
                    grid: pick(a.grid, r.grid),
                    n_shoot: pick(a.n_shoot, r.n_shoot),
                    nt: pick(a.nt, r.nt),
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
