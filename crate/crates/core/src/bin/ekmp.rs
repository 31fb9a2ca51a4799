use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ekmp::pipeline::{run, write_outputs, RunOptions};
use ekmp::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "ekmp",
    version,
    about = "Constrained trajectory adaptation from demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory (default: the scenario's `output.dir`, else `out/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
        /// Export a snapshot every n iterations.
        #[arg(long)]
        snapshot_every: Option<usize>,
        /// Override the demonstration and GMM seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(line: std::fmt::Arguments) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => {
            let violations = Scenario::validate_file(&scenario);
            if violations.is_empty() {
                say(format_args!("{}: ok", scenario.display()));
                ExitCode::SUCCESS
            } else {
                for v in &violations {
                    eprintln!("{v}");
                }
                eprintln!("{}: {} violation(s)", scenario.display(), violations.len());
                ExitCode::from(2)
            }
        }
        Command::Run {
            scenario,
            out,
            iterations,
            snapshot_every,
            seed,
        } => {
            let parsed = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(violations) => {
                    for v in &violations {
                        eprintln!("{v}");
                    }
                    return ExitCode::from(2);
                }
            };
            let opts = RunOptions {
                iterations,
                snapshot_every,
                seed,
            };
            let started = Instant::now();
            let result = match run(&parsed, &opts) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let elapsed = started.elapsed().as_secs_f64();
            let dir = out
                .or_else(|| parsed.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&parsed.name));
            if let Err(e) = write_outputs(&result, &dir) {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            let m = result.trace.final_metrics();
            say(format_args!(
                "{}: {} iteration(s), converged = {}, U_obs {:.6e} -> {:.6e}, max violation {:.3e}",
                parsed.name,
                result.trace.records.len(),
                result.trace.converged,
                result.trace.initial.u_obs,
                m.u_obs,
                m.max_violation
            ));
            say(format_args!("runtime: {elapsed:.3} s"));
            say(format_args!("wrote {}", dir.display()));
            ExitCode::SUCCESS
        }
    }
}
