//! The three-phase liquidity stress-response case study.
//!
//! Pool calibration. Quoted USD liquidity `L = 2 * base * sol_usd` and spot
//! price `p = base / quote * sol_usd` give `L^2 / p = 4 k sol_usd`, so the
//! quoted (price, liquidity) pairs fix only `k * sol_usd`. That product is
//! taken from the post-sell pair (USD 4,661 at 4.14e-5). `sol_usd` is then
//! fitted from the Phase I recovery: thirty 0.10 SOL buys lifting price by
//! 19.5% means `((b + 3) / b)^2 = 1.195`, so `b ~ 32.2 SOL` at the first
//! buy, and `sol_usd = L / 2b ~ 84.77`.

use std::str::FromStr;
use std::time::{Duration, Instant};

use rust_decimal::prelude::FromPrimitive;
use rust_decimal::Decimal;
use serde_json::json;

use super::checkpoint::{Assertion, Checkpoint, CheckpointReport, Comparator};
use super::runner::{run_batch, RunMode, RunOutput, ScenarioRunner};
use super::{ScenarioClock, ScenarioError, ScenarioEvent, ScenarioFile, ScenarioMetadata, TimedEvent};
use crate::amm::Pool;
use crate::fabric::CanonicalTimestamp;
use crate::governance::EscalationPayload;
use crate::policy::{Ladder, LiveFlags, RoleConstitution, TraderPolicyConfig, WalletId};

/// Shipped files, by file name.
pub const SHIPPED_SCENARIOS: [(&str, &str); 4] = [
    ("case_study.json", include_str!("../../scenarios/case_study.json")),
    ("phase1.json", include_str!("../../scenarios/phase1.json")),
    ("phase2.json", include_str!("../../scenarios/phase2.json")),
    ("phase3.json", include_str!("../../scenarios/phase3.json")),
];

pub fn shipped_scenario(name: &str) -> Result<ScenarioFile, ScenarioError> {
    let (_, text) = SHIPPED_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name || n.trim_end_matches(".json") == name)
        .ok_or_else(|| ScenarioError::Invalid(format!("no shipped scenario named {name}")))?;
    ScenarioFile::from_json(text)
}

fn d(s: &str) -> Decimal {
    Decimal::from_str(s).expect("literal decimal")
}

fn at(s: &str) -> CanonicalTimestamp {
    CanonicalTimestamp::parse_utc(s).expect("literal timestamp")
}

const SOL_USD: &str = "84.77";
const BASELINE_LIQUIDITY_USD: &str = "6098";
const POST_SELL_LIQUIDITY_USD: &str = "4661";
const POST_SELL_PRICE_USD: &str = "0.0000414";
const BOTTOM_TIER_USD: &str = "0.0000740";

/// Phase boundaries: Phase II starts at the first, Phase III at the second.
const PHASE_BOUNDARIES: [&str; 2] = ["2026-05-06T20:00:00Z", "2026-05-07T01:45:00Z"];

fn calibrated_pool() -> Pool {
    let sol_usd = d(SOL_USD);
    let liquidity = d(BASELINE_LIQUIDITY_USD);
    let rearm = d(POST_SELL_LIQUIDITY_USD);
    let k_sol_usd_times4 = rearm * rearm / d(POST_SELL_PRICE_USD);
    let baseline_price = liquidity * liquidity / k_sol_usd_times4;
    let base = (liquidity / (Decimal::TWO * sol_usd)).round_dp(9);
    let quote = (base * sol_usd / baseline_price).round_dp(0);
    Pool::new(base, quote, 25).expect("calibrated pool is valid")
}

/// `n` prices stepping geometrically from `from` (exclusive) to `to`.
fn geometric_path(from: &str, to: &str, n: u32) -> Vec<Decimal> {
    let (a, b) = (f64::from_str(from).unwrap(), f64::from_str(to).unwrap());
    (1..=n)
        .map(|i| {
            let p = if i == n { b } else { a * (b / a).powf(f64::from(i) / f64::from(n)) };
            Decimal::from_f64(p).expect("finite").round_dp(12)
        })
        .collect()
}

fn ev(t: &str, event: ScenarioEvent) -> TimedEvent {
    TimedEvent { at: at(t), event }
}

fn to_price(p: Decimal) -> ScenarioEvent {
    ScenarioEvent::ExternalTradeToPrice { target_price_usd: p }
}

fn mark(label: &str) -> ScenarioEvent {
    ScenarioEvent::Mark { label: label.into() }
}

fn request(reference: &str, request: EscalationPayload) -> ScenarioEvent {
    ScenarioEvent::EscalationRequest { reference: reference.into(), request, requested_by: "trader-engine".into() }
}

fn approval(reference: &str, rationale: &str) -> ScenarioEvent {
    ScenarioEvent::Approval {
        escalation_ref: reference.into(),
        approver: "board".into(),
        rationale: rationale.into(),
    }
}

fn top_up(reference: &str, sol: &str) -> ScenarioEvent {
    ScenarioEvent::TopUp { reference: reference.into(), sol: d(sol), requested_by: "operator".into() }
}

fn check(path: &str, comparator: Comparator, expected: serde_json::Value) -> Assertion {
    Assertion { path: path.into(), comparator, expected, tolerance: None }
}

fn approx(path: &str, expected: &str, tolerance: f64) -> Assertion {
    Assertion { path: path.into(), comparator: Comparator::Approx, expected: json!(expected), tolerance: Some(tolerance) }
}

fn eq(path: &str, expected: serde_json::Value) -> Assertion {
    check(path, Comparator::Eq, expected)
}

fn phase1_checks() -> Vec<Assertion> {
    vec![
        eq("/buys/completed", json!(30)),
        eq("/buys/slices", json!(150)),
        eq("/spend/daily/2026-05-06", json!("3.000")),
        eq("/state/daily_cap_sol", json!("3.0")),
        eq("/buys/by_index/1/started_at", json!("2026-05-06T01:04:00Z")),
        approx("/buys/by_index/1/price_usd", "0.00005679", 0.005),
    ]
}

fn phase3_checks() -> Vec<Assertion> {
    vec![
        eq("/stoploss/trips", json!(1)),
        approx("/stoploss/trip/0/drop_fraction", "0.46", 0.01),
        eq("/stoploss/trip/0/at", json!("2026-05-07T02:38:00Z")),
        approx("/stoploss/trip/0/drain_usd", "1666", 0.02),
        eq("/stoploss/slices_while_tripped", json!(0)),
        eq("/stoploss/resumes/0/at", json!("2026-05-07T03:44:30Z")),
        approx("/stoploss/resumes/0/baseline_liquidity_usd", POST_SELL_LIQUIDITY_USD, 0.01),
        eq("/state/stoploss_armed", json!(true)),
        eq("/state/mode", json!("LIVE")),
    ]
}

/// The composite case study, with external trades still expressed as
/// target prices. [`freeze_scenario`] turns it into the shipped file.
pub fn case_study_template() -> ScenarioFile {
    let policy = TraderPolicyConfig {
        ratchet_spend_thresholds: vec![d("0.8"), d("2.8"), d("5.1")],
        ..TraderPolicyConfig::default()
    };
    let b0 = d(BOTTOM_TIER_USD);
    let ladder = Ladder::new([b0, b0 * d("1.05"), b0 * d("1.10"), b0 * d("1.15")]).expect("ascending");

    let mut timeline = Vec::new();
    // Phase I: pre-registration drift down to the first-buy level.
    for (i, p) in geometric_path("0.000070864", "0.00005679", 5).into_iter().enumerate() {
        timeline.push(ev(&format!("2026-05-06T00:{}0:00Z", i + 1), to_price(p)));
    }
    timeline.extend([
        ev("2026-05-06T01:00:00Z", mark("phase1-stress-registered")),
        ev("2026-05-06T01:00:00Z", request("live-flip", EscalationPayload::LiveFlip)),
        ev("2026-05-06T01:00:00Z", top_up("top-up-1", "5.000")),
        ev("2026-05-06T01:03:00Z", approval("top-up-1", "Fund the execution hot wallet for the stress response.")),
        ev("2026-05-06T01:04:00Z", approval("live-flip", "Both flags set; board sign-off recorded on the issue thread.")),
        ev("2026-05-06T01:07:00Z", request("cap-raise-1", EscalationPayload::CapRaise { new_cap_sol: d("3.0") })),
        ev("2026-05-06T01:07:00Z", approval("cap-raise-1", "Stress persists; widen the daily cap to 3.0 SOL.")),
        ev("2026-05-06T10:00:00Z", to_price(d("0.00007385"))),
        ev("2026-05-06T19:59:00Z", mark("phase1-end")),
        // Phase II.
        ev("2026-05-06T20:00:00Z", to_price(d("0.00007"))),
    ]);
    for (i, p) in geometric_path("0.00007", "0.00006591", 4).into_iter().enumerate() {
        let minute = 30 + 15 * i;
        timeline.push(ev(&format!("2026-05-06T{:02}:{:02}:00Z", 20 + minute / 60, minute % 60), to_price(p)));
    }
    timeline.extend([
        ev("2026-05-06T21:15:00Z", mark("phase2-stress-registered")),
        ev("2026-05-06T21:30:00Z", request("cap-raise-2", EscalationPayload::CapRaise { new_cap_sol: d("5.0") })),
        ev("2026-05-06T21:30:00Z", approval("cap-raise-2", "Second stress event; widen the daily cap to 5.0 SOL.")),
        ev("2026-05-07T01:44:30Z", mark("phase2-end")),
        // Phase III.
        ev("2026-05-07T01:50:00Z", to_price(d("0.0000769"))),
        ev("2026-05-07T02:38:00Z", to_price(d(POST_SELL_PRICE_USD))),
        ev("2026-05-07T03:40:00Z", request("resume", EscalationPayload::Resume)),
        ev("2026-05-07T03:40:00Z", top_up("top-up-2", "5.000")),
        ev("2026-05-07T03:44:30Z", approval("resume", "Resume under bounded execution at the new price floor.")),
        ev("2026-05-07T03:44:30Z", approval("top-up-2", "Refill the execution wallet after resumption.")),
    ]);

    let mut end_checks = vec![
        eq("/buys/completed", json!(52)),
        eq("/buys/fired", json!(52)),
        eq("/spend/lifetime_sol", json!("5.200")),
        eq("/caps/sequence", json!(["1.0", "3.0", "5.0"])),
        eq("/caps/all_gated", json!(true)),
        eq("/approvals/boundary_widening", json!(3)),
        eq("/approvals/by_kind/RESUME", json!(1)),
        eq("/approvals/all_have_rationale", json!(true)),
        approx("/buys/by_index/31/price_usd", "0.00006591", 0.005),
        eq("/ratchet/crossing_buy_index", json!([8, 28, 51])),
        eq("/ratchet/crossing_spend_sol", json!(["0.8", "2.8", "5.1"])),
        eq("/ratchet/at_thresholds", json!(true)),
        eq("/role_contract/violations", json!(0)),
        eq("/denials", json!(0)),
        approx("/stoploss/trip/0/baseline_liquidity_usd", BASELINE_LIQUIDITY_USD, 0.01),
        eq("/state/wallet_balance_sol", json!("5.793")),
        eq("/audit/chain_intact", json!(true)),
    ];
    end_checks.extend(phase3_checks());

    ScenarioFile {
        metadata: ScenarioMetadata {
            name: "case-study".into(),
            seed: 20260506,
            sol_usd: d(SOL_USD),
            description: "Three-phase stress response on a single constant-product pool. Reserves fitted so that \
                          L^2/p matches the post-sell pair and 30 buys lift price 19.5%; see the generator."
                .into(),
        },
        clock: ScenarioClock {
            start_at: at("2026-05-06T00:00:00Z"),
            end_at: at("2026-05-07T03:44:30Z"),
            tick_seconds: 60,
        },
        pool: calibrated_pool(),
        policy,
        ladder,
        constitution: RoleConstitution::trader(WalletId::new("deployer-wallet")),
        flags: LiveFlags { live_trading_enabled: true, execution_wallet_armed: true },
        trader_wallet: WalletId::new("execution-hot-wallet"),
        initial_wallet_sol: d("0.993"),
        engine_identity: "trader-engine".into(),
        initial_state: None,
        runtime: None,
        timeline,
        checkpoints: vec![
            Checkpoint {
                label: "phase-1-cap-bound".into(),
                at_mark: Some("phase1-end".into()),
                assertions: phase1_checks(),
            },
            Checkpoint {
                label: "phase-2-complete".into(),
                at_mark: Some("phase2-end".into()),
                assertions: vec![
                    eq("/buys/completed", json!(52)),
                    eq("/stoploss/trips", json!(0)),
                    eq("/spend/daily/2026-05-06", json!("4.300")),
                ],
            },
            Checkpoint { label: "full-arc".into(), at_mark: None, assertions: end_checks },
        ],
    }
}

/// Replaces every target-price trade with the concrete trade the run
/// executed for it.
pub fn freeze_scenario(template: &ScenarioFile) -> Result<ScenarioFile, ScenarioError> {
    let output = run_batch(template.clone())?;
    let mut frozen = template.clone();
    for (index, side, amount) in output.resolved_trades {
        frozen.timeline[index].event = ScenarioEvent::ExternalTrade { side, amount };
    }
    Ok(frozen)
}

/// Cuts a frozen composite into the three phase files. Phases II and III
/// start from the engine state and pool the composite had at their start.
pub fn split_phases(composite: &ScenarioFile) -> Result<Vec<ScenarioFile>, ScenarioError> {
    let bounds: Vec<CanonicalTimestamp> = PHASE_BOUNDARIES.iter().map(|b| at(b)).collect();
    let starts = [composite.clock.start_at, bounds[0], bounds[1]];
    let ends = [bounds[0] - 1, bounds[1] - 1, composite.clock.end_at];
    let checkpoints = [
        Checkpoint { label: "phase-1".into(), at_mark: None, assertions: phase1_checks() },
        Checkpoint {
            label: "phase-2".into(),
            at_mark: None,
            assertions: vec![
                eq("/buys/completed", json!(22)),
                approx("/buys/by_index/31/price_usd", "0.00006591", 0.005),
                eq("/state/daily_cap_sol", json!("5.0")),
                eq("/state/lifetime_spend_sol", json!("5.200")),
            ],
        },
        Checkpoint {
            label: "phase-3".into(),
            at_mark: None,
            assertions: {
                let mut a = phase3_checks();
                a.push(eq("/buys/completed", json!(0)));
                a
            },
        },
    ];

    let mut phases = Vec::new();
    for (i, checkpoint) in checkpoints.into_iter().enumerate() {
        let mut phase = composite.clone();
        phase.metadata.name = format!("case-study-phase-{}", i + 1);
        phase.clock.start_at = starts[i];
        phase.clock.end_at = ends[i];
        phase.timeline.retain(|e| e.at >= starts[i] && e.at <= ends[i]);
        phase.checkpoints = vec![checkpoint];
        if i > 0 {
            let mut runner = ScenarioRunner::new(composite.clone(), RunMode::Batch)?;
            runner.run_until(starts[i])?;
            let state = runner.desk().state().clone();
            phase.pool = runner.desk().pool().clone();
            phase.initial_wallet_sol = state.wallet_balance_sol;
            phase.initial_state = Some(state);
        }
        phases.push(phase);
    }
    Ok(phases)
}

#[derive(Debug, Clone)]
pub struct CaseStudyReport {
    pub report: CheckpointReport,
    pub output: RunOutput,
    pub elapsed: Duration,
}

/// Plays the shipped composite and evaluates its checkpoints.
pub fn replay_case_study() -> Result<CaseStudyReport, ScenarioError> {
    let started = Instant::now();
    let file = shipped_scenario("case_study.json")?;
    let output = run_batch(file)?;
    Ok(CaseStudyReport { report: output.report.clone(), output, elapsed: started.elapsed() })
}
