//! Batch subcommands. Each returns whether its checks passed so `main` can
//! pick the exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use riskdesk_core::calibration::{emit_metrics_csv, evaluate_window, read_pairs_csv};
use riskdesk_core::fabric::{read_log_file, verify_chain, CanonicalTimestamp, ChainVerdict};
use riskdesk_core::scenario::{replay_case_study, run_batch, shipped_scenario, CheckpointReport, RunOutput, ScenarioFile};
use riskdesk_core::subnet::{run_epochs, Metagraph, MinerProfile, SimConfig, SyntheticTraces};
use serde::Deserialize;

/// A path on disk, or else the name of a shipped scenario.
pub fn load_scenario(source: &str) -> Result<ScenarioFile> {
    let path = Path::new(source);
    if path.exists() {
        return ScenarioFile::load(path).with_context(|| format!("loading {source}"));
    }
    shipped_scenario(source).with_context(|| format!("{source} is neither a file nor a shipped scenario"))
}

pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("decision_log.csv"), &output.decision_log)?;
    fs::write(dir.join("audit.ndjson"), output.audit_log.to_ndjson())?;
    fs::write(dir.join("final_state.json"), serde_json::to_string_pretty(&output.final_state)? + "\n")?;
    fs::write(dir.join("checkpoints.json"), serde_json::to_string_pretty(&output.report)? + "\n")?;
    Ok(())
}

fn print_report(out: &mut impl Write, report: &CheckpointReport) -> Result<()> {
    for result in &report.results {
        writeln!(out, "{result}")?;
    }
    let failed = report.failures().count();
    writeln!(out, "{} of {} assertions passed", report.results.len() - failed, report.results.len())?;
    Ok(())
}

pub fn run_scenario(source: &str, out_dir: Option<&Path>, out: &mut impl Write) -> Result<bool> {
    let file = load_scenario(source)?;
    let name = file.metadata.name.clone();
    let output = run_batch(file)?;
    writeln!(out, "scenario {name}: {} buys fired", output.final_state.buys_fired)?;
    print_report(out, &output.report)?;
    if let Some(dir) = out_dir {
        write_outputs(&output, dir)?;
        writeln!(out, "outputs written to {}", dir.display())?;
    }
    Ok(output.report.passed())
}

pub fn replay(out_dir: Option<&Path>, out: &mut impl Write) -> Result<bool> {
    let replay = replay_case_study()?;
    print_report(out, &replay.report)?;
    writeln!(out, "replayed in {:.3} s", replay.elapsed.as_secs_f64())?;
    if let Some(dir) = out_dir {
        write_outputs(&replay.output, dir)?;
    }
    Ok(replay.report.passed())
}

pub fn verify_audit(path: &Path, out: &mut impl Write) -> Result<bool> {
    let entries = read_log_file(path).with_context(|| format!("reading {}", path.display()))?;
    let verdict = verify_chain(&entries);
    writeln!(out, "{}", serde_json::json!({ "entries": entries.len(), "result": verdict }))?;
    Ok(matches!(verdict, ChainVerdict::Intact))
}

pub fn eval_window(
    pairs_csv: &Path,
    hours: u32,
    top_n: Option<u32>,
    now: Option<&str>,
    out: &mut impl Write,
) -> Result<bool> {
    let reader = fs::File::open(pairs_csv).with_context(|| format!("opening {}", pairs_csv.display()))?;
    let pairs = read_pairs_csv(reader)?;
    let now = match now {
        Some(s) => CanonicalTimestamp::parse_utc(s)?,
        None => match pairs.iter().map(|p| p.resolved_at).max() {
            Some(t) => t,
            None => bail!("{} holds no pairs; pass --now", pairs_csv.display()),
        },
    };
    let metrics = evaluate_window(&pairs, hours, now, top_n);
    write!(out, "{}", emit_metrics_csv(&[metrics]))?;
    Ok(true)
}

/// Input to `subnet-sim`.
#[derive(Debug, Deserialize)]
pub struct SubnetSimConfig {
    pub profiles: Vec<MinerProfile>,
    pub validators: Vec<(String, f64)>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_drop")]
    pub drop_fraction: f64,
}

fn default_kappa() -> f64 {
    0.5
}

fn default_drop() -> f64 {
    0.5
}

pub fn subnet_sim(
    config: &Path,
    epochs: usize,
    seed: u64,
    telemetry: Option<&PathBuf>,
    out: &mut impl Write,
) -> Result<bool> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: SubnetSimConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let miners = cfg.profiles.iter().map(|p| p.miner_id.clone()).collect();
    let metagraph = Metagraph { validators: cfg.validators, miners, kappa: cfg.kappa };
    let mut traces = SyntheticTraces { base_rate: cfg.sim.base_rate, drop_fraction: cfg.drop_fraction };
    let report = run_epochs(&cfg.profiles, &metagraph, &mut traces, epochs, seed, &cfg.sim)?;
    writeln!(out, "miner_id,mean_loss,mean_weight")?;
    for ((id, loss), weight) in report.miner_ids.iter().zip(report.mean_losses()).zip(report.mean_weights()) {
        writeln!(out, "{id},{loss:.6},{weight:.6}")?;
    }
    if let Some(path) = telemetry {
        fs::write(path, report.telemetry_csv())?;
    }
    Ok(true)
}
