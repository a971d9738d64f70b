//! `slidoc`: simulation, adjoints, gradient checks, optimization and
//! convergence studies for sliding-mode optimal control problems.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slidoc::verify::Quantity;
use slidoc::FunctionalId;

use commands::{CliError, Common};

#[derive(Debug, Parser)]
#[command(name = "slidoc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Built-in problem name.
    #[arg(long)]
    problem: Option<String>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps_per_interval: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<ProblemArgs> for Common {
    fn from(a: ProblemArgs) -> Self {
        Common {
            problem: a.problem,
            config: a.config,
            steps_per_interval: a.steps_per_interval,
            out: a.out,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the state; CSV of mesh nodes plus a transitions sidecar.
    Simulate(ProblemArgs),
    /// Discrete adjoint of one endpoint functional.
    Adjoint {
        #[command(flatten)]
        common: ProblemArgs,
        /// phi, g1:<i> or g2:<j>.
        #[arg(long, default_value = "phi")]
        functional: FunctionalId,
    },
    /// Reduced gradient with respect to the control values.
    Gradient {
        #[command(flatten)]
        common: ProblemArgs,
        #[arg(long, default_value = "phi")]
        functional: FunctionalId,
    },
    /// Compare the adjoint gradient with central differences.
    CheckGradient {
        #[command(flatten)]
        common: ProblemArgs,
        #[arg(long, default_value = "phi")]
        functional: FunctionalId,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Exact-penalty descent on the constrained problem.
    Optimize {
        #[command(flatten)]
        common: ProblemArgs,
        /// Per-iteration CSV (k, F0, M, c, sigma, alpha).
        #[arg(long)]
        history_csv: Option<PathBuf>,
    },
    /// Self-convergence study over a list of step sizes.
    VerifyOrders {
        #[command(flatten)]
        common: ProblemArgs,
        #[arg(long)]
        quantity: Quantity,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125")]
        h: Vec<f64>,
    },
    /// Order conditions of a tableau and of its adjoint.
    TableauCheck {
        /// JSON file with `a`, `b`, `c`; Radau IIA when omitted.
        #[arg(long)]
        tableau: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SLIDOC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SLIDOC_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a.into()),
        Command::Adjoint { common, functional } => commands::adjoint(&common.into(), functional),
        Command::Gradient { common, functional } => commands::gradient(&common.into(), functional),
        Command::CheckGradient { common, functional, eps } => {
            if !(eps > 0.0) {
                return Err(CliError::Usage(format!("--eps must be positive, got {eps}")));
            }
            commands::check_gradient(&common.into(), functional, eps)
        }
        Command::Optimize { common, history_csv } => commands::optimize_cmd(&common.into(), history_csv),
        Command::VerifyOrders { common, quantity, h } => commands::verify_orders(&common.into(), quantity, &h),
        Command::TableauCheck { tableau, out } => commands::tableau_check(tableau.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
