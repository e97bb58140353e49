use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use energy_attention::cli::{self, CliError, Outcome, RunConfig};

/// Energy-functional attention: generate inputs, run heads, check gradients.
#[derive(Debug, Parser)]
#[command(name = "energy-attention", version)]
struct Args {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (directory for `gen`). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Include head outputs in the `run` report.
    #[arg(long, global = true)]
    emit_z: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded X and per-head weights as matrix files into `--out`.
    Gen,
    /// Run every head on the matrix files in `--in`.
    Run {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of E_R.
    Gradcheck {
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Check that the gradient of E_R vanishes at the attention output.
    Stationarity {
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Per-iteration energy and gradient norm of head 0, as CSV.
    Trace,
    /// Vary one config parameter over a grid, as CSV.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
}

fn execute(args: &Args) -> Result<Outcome, CliError> {
    let config_path = args
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let config = RunConfig::load(config_path)?;
    let out = args.out.as_deref();
    match &args.command {
        Command::Gen => {
            let dir = out.ok_or_else(|| CliError::Usage("gen needs --out <dir>".into()))?;
            for path in cli::cmd_gen(&config, dir)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(Outcome::Ok)
        }
        Command::Run { input } => {
            let report = cli::cmd_run(&config, input, args.emit_z)?;
            cli::write_output(out, &report.to_json())?;
            Ok(report.outcome())
        }
        Command::Gradcheck { h, tol } => {
            let report = cli::cmd_gradcheck(&config, *h, *tol)?;
            cli::write_output(out, &cli::report_json(&report))?;
            Ok(report.outcome())
        }
        Command::Stationarity { tol } => {
            let report = cli::cmd_stationarity(&config, *tol)?;
            cli::write_output(out, &cli::report_json(&report))?;
            Ok(report.outcome())
        }
        Command::Trace => {
            let (csv, outcome) = cli::cmd_trace(&config)?;
            cli::write_output(out, &csv)?;
            Ok(outcome)
        }
        Command::Sweep { param, values } => {
            let csv = cli::cmd_sweep(&config, param, values)?;
            cli::write_output(out, &csv)?;
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let code = match execute(&args) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
