use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use riskdesk::commands;
use riskdesk::service::{router, AppState, Speed, DEFAULT_LISTEN_ADDR};
use riskdesk_core::scenario::{RunMode, ScenarioRunner};

#[derive(Parser)]
#[command(name = "riskdesk", version, about = "Desk-scale risk simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Batch,
    Interactive,
}

#[derive(Subcommand)]
enum Cmd {
    /// Play a scenario file or a shipped scenario by name.
    Run {
        scenario: String,
        #[arg(long, value_enum, default_value_t = Mode::Batch)]
        mode: Mode,
        /// Simulated seconds per wall second in interactive mode; 0 is unpaced.
        #[arg(long, default_value_t = 60.0)]
        speed: f64,
        /// Where batch mode writes its logs and final state.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the shipped case study and check every checkpoint.
    ReplayCaseStudy {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the hash chain of an NDJSON audit log.
    VerifyAudit { log: PathBuf },
    /// Accuracy and Brier score over a trailing window of resolved pairs.
    EvalWindow {
        pairs: PathBuf,
        #[arg(long, default_value_t = 168)]
        hours: u32,
        #[arg(long)]
        top_n: Option<u32>,
        /// Window end; defaults to the latest resolution in the file.
        #[arg(long)]
        now: Option<String>,
    },
    /// Run the seeded subnet epoch simulator.
    SubnetSim {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-epoch telemetry CSV.
        #[arg(long)]
        telemetry: Option<PathBuf>,
    },
}

fn serve(scenario: &str, speed: f64) -> Result<()> {
    let file = commands::load_scenario(scenario)?;
    let id = file.metadata.name.clone();
    let runner = ScenarioRunner::new(file, RunMode::Interactive)?;
    let state = AppState::new();
    state.host(&id, runner, Speed(speed));
    let addr = std::env::var("LISTEN_ADDR").unwrap_or_else(|_| DEFAULT_LISTEN_ADDR.to_string());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("serving run {id} on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn dispatch(cli: Cli) -> Result<bool> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Cmd::Run { scenario, mode: Mode::Batch, out: dir, .. } => {
            commands::run_scenario(&scenario, dir.as_deref(), &mut out)
        }
        Cmd::Run { scenario, mode: Mode::Interactive, speed, .. } => {
            drop(out);
            serve(&scenario, speed).map(|()| true)
        }
        Cmd::ReplayCaseStudy { out: dir } => commands::replay(dir.as_deref(), &mut out),
        Cmd::VerifyAudit { log } => commands::verify_audit(&log, &mut out),
        Cmd::EvalWindow { pairs, hours, top_n, now } => {
            commands::eval_window(&pairs, hours, top_n, now.as_deref(), &mut out)
        }
        Cmd::SubnetSim { config, epochs, seed, telemetry } => {
            commands::subnet_sim(&config, epochs, seed, telemetry.as_ref(), &mut out)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
