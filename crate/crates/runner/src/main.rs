use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lunarsim::scenario::Scenario;
use runner::batch::batch_run;
use runner::record::{replay, RecordError};
use runner::run::{run_scenario, RunError, RunOptions, VlmChoice};
use runner::serve::{bind, serve, ServeError, ServeOptions};
use runner::train::{train, TrainOptions};

#[derive(Parser)]
#[command(name = "sim", about = "Run, batch, train, replay and serve lunar rover and excavation scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario headless and print its summary as JSON.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a JSONL trajectory record.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, value_enum)]
        vlm: Option<VlmChoice>,
        /// Trained Drive policy checkpoint.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Cycle table for excavation scenarios.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Attach camera images to VLM requests.
        #[arg(long)]
        images: bool,
    },
    /// Run consecutive seeds and print the aggregate report as JSON.
    Batch {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Directory for per-run records.
        #[arg(long)]
        record_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        vlm: Option<VlmChoice>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Train the Drive skill with PPO on the scenario's terrain.
    Train {
        scenario: PathBuf,
        /// PPO settings as JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-iteration training curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Print the rows of a record, paced by simulation time.
    Replay {
        record: PathBuf,
        /// Simulation seconds per wall-clock second; 0 prints at once.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
    },
    /// Host a live session over WebSocket at /ws.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        vlm: Option<VlmChoice>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Console assets served from the root path.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialises"));
}

fn fail(e: &dyn std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn run_error(e: RunError) -> ExitCode {
    fail(&e, e.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run { scenario, seed, record, vlm, policy, csv, images } => {
            let opts = RunOptions { seed, vlm, record, policy, csv, images };
            match run_scenario(&scenario, &opts) {
                Ok(s) => {
                    print_json(&s);
                    ExitCode::SUCCESS
                }
                Err(e) => run_error(e),
            }
        }
        Cmd::Batch { scenario, runs, seed_base, parallel, record_dir, vlm, policy } => {
            if runs == 0 {
                return fail(&"--runs must be at least 1", 2);
            }
            if let Err(e) = Scenario::load(&scenario, Some(seed_base)) {
                return run_error(e.into());
            }
            if let Some(dir) = &record_dir {
                if let Err(e) = std::fs::create_dir_all(dir) {
                    return fail(&format!("{}: {e}", dir.display()), 1);
                }
            }
            let opts = RunOptions { vlm, policy, ..RunOptions::default() };
            let report = batch_run(&scenario, runs, seed_base, parallel, &opts, record_dir.as_deref());
            print_json(&report);
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Cmd::Train { scenario, config, out, seed, curve } => {
            let opts = TrainOptions { config, out, seed, curve };
            let progress = |l: &lunarsim::learn::IterationLog| {
                eprintln!(
                    "iteration {:>3}  steps {:>8}  return {:>8.3}  success {:.2}  lr {:.2e}",
                    l.iteration, l.timesteps, l.mean_return, l.success_rate, l.lr
                )
            };
            match train(&scenario, &opts, progress) {
                Ok(r) => {
                    print_json(&r);
                    ExitCode::SUCCESS
                }
                Err(e) => run_error(e),
            }
        }
        Cmd::Replay { record, speed } => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let result = replay(&record, speed, |row| {
                let _ = writeln!(out, "{}", serde_json::to_string(row).expect("row serialises"));
            });
            match result {
                Ok(_) => ExitCode::SUCCESS,
                Err(e @ (RecordError::VersionMismatch { .. } | RecordError::CorruptRecord { .. })) => fail(&e, 2),
                Err(e) => fail(&e, 1),
            }
        }
        Cmd::Serve { scenario, port, seed, vlm, policy, speed, static_dir } => {
            let scenario = match Scenario::load(&scenario, seed) {
                Ok(s) => s,
                Err(e) => return run_error(e.into()),
            };
            let opts = ServeOptions { seed, vlm, policy, speed, static_dir, images: true };
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            let result = rt.block_on(async {
                let listener = bind(port).await?;
                eprintln!("serving on http://{}", listener.local_addr()?);
                serve(listener, &scenario, &opts).await
            });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(ServeError::Run(e)) => run_error(e),
                Err(e @ ServeError::PortInUse(_)) => fail(&e, 2),
                Err(e) => fail(&e, 1),
            }
        }
    }
}
