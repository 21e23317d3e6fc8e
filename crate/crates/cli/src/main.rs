use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neurofilter::experiment::{export_fixtures, run_experiment_file, verify_suite};
use neurofilter::Error;

/// Train and evaluate RNN approximations of the Kalman filter.
#[derive(Parser)]
#[command(name = "neurofilter", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides the config and NEUROFILTER_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the oracle self-checks.
    Verify {
        /// Perturb the BPTT gradient so the gradient check must fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Write reference data sets into a directory.
    ExportFixtures { dir: PathBuf },
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Run { config, output_dir } => match run_experiment_file(&config, output_dir.as_deref()) {
            Ok(summary) => {
                println!("output: {}", summary.output_dir.display());
                println!("final training loss: {}", summary.loss_history.last().copied().unwrap_or(f64::NAN));
                for m in &summary.report.methods {
                    let tail = m.rmse_vs_oracle.last().copied().unwrap_or(f64::NAN);
                    match m.overflow_at {
                        Some(t) => println!("{}: overflow at t={t}", m.name),
                        None => println!("{}: rmse vs oracle at t={} is {tail:.4}", m.name, m.rmse_vs_oracle.len()),
                    }
                }
                let acc = summary.rnn_accumulation;
                println!("rnn accumulation ratio {:.3} (flagged: {})", acc.ratio, acc.flagged);
                println!(
                    "contraction: kalman {:.4} (closed form {:.4}), rnn {:.4}",
                    summary.kalman_contraction.kappa_hat,
                    summary.kalman_contraction_closed_form,
                    summary.rnn_contraction.kappa_hat
                );
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("error: {err}");
                exit_code(&err)
            }
        },
        Command::Verify { corrupt_gradient } => {
            let outcomes = verify_suite(corrupt_gradient);
            for c in &outcomes {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if outcomes.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::ExportFixtures { dir } => match export_fixtures(&dir) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("error: {err}");
                exit_code(&err)
            }
        },
    }
}
