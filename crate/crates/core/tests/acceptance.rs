//! Headline acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskdesk_core::amm::{relative_diff, Pool, SwapSide};
use riskdesk_core::calibration::{
    emit_metrics_csv, evaluate_window, ingest_metrics_csv, PredictionOutcomePair,
};
use riskdesk_core::desk::{allow_verdicts, fold_audit_log, ActionOutcome, ActionRequest, Desk, PolicyGateway, TickOutcome};
use riskdesk_core::fabric::{verify_chain, AuditKind, CanonicalTimestamp, ChainVerdict};
use riskdesk_core::governance::EscalationPayload;
use riskdesk_core::policy::{ActionKind, RuleId, WalletId};
use riskdesk_core::runtime::{FailureInjector, RunInputs, Runtime, TierHealth};
use riskdesk_core::scenario::{
    replay_case_study, run_batch, shipped_scenario, RuntimeSchedule, DECISION_LOG_HEADER,
};
use riskdesk_core::sentiment::FusionConfig;
use riskdesk_core::subnet::{
    brier, calibration_gap, consensus_scores, inconsistency, run_epochs, uplift_decision, validator_loss,
    yuma_allocate, Metagraph, MinerOutput, MinerProfile, PredictionSource, ReplayGuard, ReplayRejection,
    ScoringConfig, SimConfig, Strategy, SyntheticTraces, UpliftState, UpliftSwitch,
};
use rust_decimal::prelude::*;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn d(s: &str) -> Decimal {
    Decimal::from_str(s).unwrap()
}

fn ts(s: u64) -> CanonicalTimestamp {
    CanonicalTimestamp::from_secs(s)
}

fn case_study_replay() -> Outcome {
    let replay = replay_case_study().map_err(|e| e.to_string())?;
    let failures: Vec<String> = replay.report.failures().map(ToString::to_string).collect();
    ensure!(failures.is_empty(), "checkpoint failures: {failures:?}");

    // Re-derive the headline numbers from the decision log alone.
    let log = &replay.output.decision_log;
    let mut lines = log.lines();
    ensure!(lines.next() == Some(DECISION_LOG_HEADER), "decision log header");
    let mut buys = std::collections::BTreeSet::new();
    let mut total = Decimal::ZERO;
    let mut phase_one = Decimal::ZERO;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        buys.insert(cols[1].parse::<u32>().map_err(|e| e.to_string())?);
        let slice = d(cols[6]);
        total += slice;
        if cols[0].starts_with("2026-05-06") && cols[0] < "2026-05-06T20:00" {
            phase_one += slice;
        }
    }
    ensure!(buys.len() == 52 && buys.last() == Some(&52), "{} buys", buys.len());
    ensure!(total == d("5.200"), "lifetime spend {total}");
    ensure!(phase_one == d("3.000"), "phase I spend {phase_one}");

    let entries = replay.output.audit_log.entries();
    let caps: Vec<&AuditEntryRef> = entries.iter().filter(|e| e.kind == AuditKind::Approval).collect();
    let cap_raises: Vec<_> = caps
        .iter()
        .filter(|e| e.payload.to_string().contains("CAP_RAISE"))
        .map(|e| e.payload.pointer("/rationale").and_then(Value::as_str).unwrap_or_default().to_string())
        .collect();
    ensure!(cap_raises.len() == 2 && cap_raises.iter().all(|r| !r.is_empty()), "cap raises {cap_raises:?}");

    let trip = entries.iter().find(|e| e.kind == AuditKind::StopLossTrip).ok_or("no trip")?;
    let resume = entries
        .iter()
        .find(|e| e.kind == AuditKind::Approval && e.payload.to_string().contains("RESUME"))
        .ok_or("no resume approval")?;
    let between = entries[trip.seq as usize..resume.seq as usize]
        .iter()
        .filter(|e| e.kind == AuditKind::BuySlice)
        .count();
    ensure!(between == 0, "{between} slices between trip and resume");

    let elapsed = replay.elapsed;
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{} checkpoints, 52 buys, 5.200 SOL, {:.2} s", replay.report.results.len(), elapsed.as_secs_f64()))
}

type AuditEntryRef = riskdesk_core::fabric::AuditEntry;

fn random_action(rng: &mut ChaCha8Rng, id: String) -> ActionRequest {
    let kind = match rng.random_range(0..10) {
        0..=4 => ActionKind::Buy,
        5..=7 => ActionKind::Sell,
        8 => ActionKind::CapRaise,
        _ => ActionKind::Resume,
    };
    let wallet = match rng.random_range(0..6) {
        0 => Some(WalletId::new("deployer-wallet")),
        1 => Some(WalletId::new("elsewhere")),
        2 => Some(WalletId::new("execution-hot-wallet")),
        _ => None,
    };
    ActionRequest {
        action_id: id,
        kind,
        amount_sol: Decimal::new(rng.random_range(-5..400), 3),
        wallet,
        approval_ref: rng.random_bool(0.2).then(|| "esc-1".to_string()),
        on_behalf_of: rng.random_bool(0.2).then(|| "deployer-wallet".to_string()),
    }
}

fn policy_boundary_fuzz() -> Outcome {
    let base = shipped_scenario("case_study").map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let (mut total_swaps, mut total_sells, mut total_allows) = (0usize, 0usize, 0usize);
    for seq in 0..10_000 {
        let mut setup = base.desk_setup();
        setup.initial_wallet_sol = Decimal::new(rng.random_range(0..3_000), 3);
        let mut desk = Desk::new(setup).map_err(|e| e.to_string())?;
        let mut runtime = Runtime {
            fusion: FusionConfig::default(),
            uplift: UpliftSwitch::new(3, 0.05),
            injector: FailureInjector::new(0.2, seq),
        };
        let mut t = base.clock.start_at.secs();
        if rng.random_bool(0.7) {
            let r = desk.request_escalation(EscalationPayload::LiveFlip, "trader-engine", ts(t)).unwrap();
            desk.approve(&r.id, "board", "fuzz", ts(t + 1)).unwrap();
        }
        if rng.random_bool(0.3) {
            let r = desk
                .request_escalation(EscalationPayload::CapRaise { new_cap_sol: d("3.0") }, "trader-engine", ts(t))
                .unwrap();
            desk.approve(&r.id, "board", "fuzz", ts(t + 2)).unwrap();
        }
        let mut sells = Vec::new();
        for step in 0..rng.random_range(1..12) {
            t += rng.random_range(1..900);
            if rng.random_bool(0.15) {
                if let Ok(TickOutcome::BuyStarted { buy_index, remaining }) = desk.tick(ts(t)) {
                    for s in remaining {
                        desk.run_slice(buy_index, s.fire_at).map_err(|e| e.to_string())?;
                    }
                }
                continue;
            }
            let action = random_action(&mut rng, format!("fz-{seq}-{step}"));
            let inputs = RunInputs {
                run_id: format!("run-{seq}-{step}"),
                at: ts(t),
                text: "steady flow".into(),
                onchain_flow: rng.random_range(-1.0..1.0),
                grey_feed: rng.random_range(-1.0..1.0),
                standalone_p: rng.random_range(0.0..1.0),
                subnet_p: None,
                proposed_action: Some(action.clone()),
            };
            let health = TierHealth { remote: rng.random_bool(0.8), in_process: rng.random_bool(0.8) };
            let record = runtime.execute_run(&mut desk as &mut dyn PolicyGateway, &inputs, health);
            if action.kind == ActionKind::Sell {
                sells.push(record.action_outcome.clone());
            }
        }
        let counters = desk.counters();
        let swaps = (counters.policy_buy_swaps + counters.policy_sell_swaps) as usize;
        let allows = allow_verdicts(desk.audit_log().entries());
        ensure!(swaps == allows, "sequence {seq}: {swaps} swaps vs {allows} ALLOW verdicts");
        ensure!(counters.policy_sell_swaps == 0, "sequence {seq}: sell swap executed");
        for outcome in sells {
            ensure!(
                matches!(
                    outcome,
                    Some(ActionOutcome::Denied { rule: RuleId::BuyOnly, .. }) | Some(ActionOutcome::Rejected { .. })
                ),
                "sequence {seq}: sell outcome {outcome:?}"
            );
        }
        total_swaps += swaps;
        total_allows += allows;
        total_sells += counters.policy_sell_swaps as usize;
    }
    ensure!(total_swaps > 1_000, "fuzz reached only {total_swaps} swaps");
    Ok(format!("10000 sequences, {total_swaps} swaps = {total_allows} ALLOW, {total_sells} sells"))
}

fn audit_chain() -> Outcome {
    let mut file = shipped_scenario("case_study").map_err(|e| e.to_string())?;
    file.runtime = Some(RuntimeSchedule { every_seconds: 120, remote_failure_probability: 0.1 });
    let initial = Desk::new(file.desk_setup()).map_err(|e| e.to_string())?.initial_state().clone();
    let policy = file.policy.clone();
    let out = run_batch(file).map_err(|e| e.to_string())?;
    let entries = out.audit_log.entries();
    ensure!(entries.len() >= 1_000, "only {} entries", entries.len());

    let folded = fold_audit_log(&initial, &policy, entries).map_err(|e| e.to_string())?;
    ensure!(folded == out.final_state, "fold differs from final state");

    let log = &entries[..1_000];
    ensure!(verify_chain(log).is_intact(), "clean log fails verification");
    let mut tampers = 0;
    let mut copy = log.to_vec();
    for i in 0..copy.len() {
        for field in 0..7 {
            let original = copy[i].clone();
            let e = &mut copy[i];
            match field {
                0 => e.seq += 1,
                1 => e.timestamp = e.timestamp + 1,
                2 => e.actor.push('x'),
                3 => e.kind = if e.kind == AuditKind::Emission { AuditKind::BuySlice } else { AuditKind::Emission },
                4 => {
                    e.payload.as_object_mut().ok_or("payload is not an object")?.insert("tampered".into(), Value::Bool(true));
                }
                5 => e.prev_hash.0[31] ^= 1,
                _ => e.this_hash.0[0] ^= 1,
            }
            match verify_chain(&copy) {
                ChainVerdict::Broken { seq, .. } if seq == i as u64 => tampers += 1,
                other => return Err(format!("tamper of field {field} at {i} gave {other:?}")),
            }
            copy[i] = original;
        }
    }
    Ok(format!("{tampers} tampers detected at their seq, fold exact over {} entries", entries.len()))
}

fn output(p: f64, context: &str) -> MinerOutput {
    MinerOutput { miner_id: "m".into(), p, c: 0.5, emitted_at: ts(0), context_id: context.into() }
}

fn loss_identities() -> Outcome {
    ensure!(brier(0.5, true).unwrap() == 0.25 && brier(0.5, false).unwrap() == 0.25, "brier(0.5, y) != 0.25");

    // Components 0.25, 0.1 and 0.2 built from first principles.
    let m = output(0.5, "ctx");
    let paired = [m.clone(), output(0.6, "ctx")];
    let mut history: Vec<(f64, bool)> = (0..20).map(|i| (0.25, i < 3)).collect();
    history.extend((0..20).map(|i| (0.65, i < 7)));
    let l = validator_loss(&m, true, &paired, &history, &ScoringConfig::default()).map_err(|e| e.to_string())?;
    ensure!((l.brier - 0.25).abs() < 1e-12, "brier {}", l.brier);
    ensure!((l.inconsistency - 0.1).abs() < 1e-12, "inconsistency {}", l.inconsistency);
    ensure!((l.calibration_gap - 0.2).abs() < 1e-12, "gap {}", l.calibration_gap);
    ensure!((l.total - 0.21).abs() < 1e-12, "total {}", l.total);

    let config = ScoringConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1055);
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    for n in 0..1_000_000 {
        let p = rng.random::<f64>();
        let y = rng.random_bool(0.5);
        let b = brier(p, y).unwrap();
        ensure!(in_unit(b), "brier({p}, {y}) = {b}");
        let partner = output(rng.random::<f64>(), "ctx");
        let inc = inconsistency(&[output(p, "ctx"), partner]).unwrap();
        ensure!(in_unit(inc), "inconsistency {inc}");
        if n % 100 == 0 {
            let h: Vec<(f64, bool)> = (0..rng.random_range(1..40)).map(|_| (rng.random::<f64>(), rng.random_bool(0.5))).collect();
            let gap = calibration_gap(&h, config.bin_width).unwrap().value;
            ensure!(in_unit(gap), "gap {gap}");
            let mut m = output(p, "ctx");
            m.c = rng.random::<f64>();
            let l = validator_loss(&m, y, &[m.clone(), output(rng.random::<f64>(), "ctx")], &h, &config).unwrap();
            ensure!(in_unit(l.total), "total {}", l.total);
        }
    }
    Ok("0.25 prior, 0.21 fixture, 10^6 bounded draws".into())
}

fn graph(stakes: &[f64], miners: usize, kappa: f64) -> Metagraph {
    Metagraph {
        validators: stakes.iter().enumerate().map(|(i, s)| (format!("v{i}"), *s)).collect(),
        miners: (0..miners).map(|j| format!("m{j}")).collect(),
        kappa,
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
}

fn yuma_clipping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4D4A);
    for trial in 0..1_000 {
        let miners = rng.random_range(2..8);
        // Honest validators hold 0.8 of the stake and agree; the colluding
        // validator holds 0.2, reports honestly elsewhere, and maxes out a
        // miner of its choice.
        let honest: Vec<f64> = (0..miners).map(|_| rng.random::<f64>()).collect();
        let mut stakes: Vec<f64> = (0..rng.random_range(1..5)).map(|_| rng.random_range(0.1..1.0)).collect();
        let honest_total: f64 = stakes.iter().sum();
        for s in &mut stakes {
            *s *= 0.8 / honest_total;
        }
        stakes.push(0.2);
        let target = rng.random_range(0..miners);
        let mut scores = vec![honest.clone(); stakes.len() - 1];
        let mut colluding = honest.clone();
        colluding[target] = 1.0;
        scores.push(colluding);
        let g = graph(&stakes, miners, 0.5);
        let clean = yuma_allocate(&vec![honest.clone(); stakes.len()], &g).map_err(|e| e.to_string())?;
        let attacked = yuma_allocate(&scores, &g).map_err(|e| e.to_string())?;
        ensure!(argmax(&clean) == argmax(&attacked), "trial {trial}: top miner moved");
        ensure!(argmax(&attacked) == argmax(&honest), "trial {trial}: top is not the honest leader");
    }

    let g = graph(&[0.3, 0.1, 0.6], 2, 0.5);
    let scores = vec![vec![0.1, 0.5], vec![0.1, 0.5], vec![1.0, 0.5]];
    let consensus = consensus_scores(&scores, &g).map_err(|e| e.to_string())?;
    ensure!(consensus[0] == 1.0, "0.6 coalition consensus {}", consensus[0]);
    let w = yuma_allocate(&scores, &g).map_err(|e| e.to_string())?;
    ensure!(argmax(&w) == 0, "0.6 coalition did not flip ranking: {w:?}");
    let minority = graph(&[0.5, 0.3, 0.2], 2, 0.5);
    ensure!(argmax(&yuma_allocate(&scores, &minority).unwrap()) == 1, "0.2 coalition flipped the instance");
    Ok("1000 matrices hold under 0.2 collusion; 0.6 flips".into())
}

fn noise_monotonicity() -> Outcome {
    let started = Instant::now();
    let sigmas = [0.0, 0.1, 0.2, 0.3];
    let profiles: Vec<MinerProfile> = sigmas
        .iter()
        .map(|&s| MinerProfile {
            miner_id: format!("sigma-{s}"),
            true_skill: 0.7,
            confidence_noise_sigma: s,
            strategy: Strategy::Honest,
        })
        .collect();
    let metagraph = Metagraph::new(
        vec![("v0".into(), 0.5), ("v1".into(), 0.3), ("v2".into(), 0.2)],
        profiles.iter().map(|p| p.miner_id.clone()).collect(),
    );
    let mut traces = SyntheticTraces { base_rate: 0.5, drop_fraction: 0.46 };
    let report = run_epochs(&profiles, &metagraph, &mut traces, 1_000, 2026, &SimConfig::default())
        .map_err(|e| e.to_string())?;
    let w = report.mean_weights();
    ensure!(w.windows(2).all(|p| p[0] > p[1]), "weights not strictly decreasing: {w:?}");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("mean weights {:.5?} over 1000 epochs in {:.1} s", w, elapsed.as_secs_f64()))
}

struct NullGateway;

impl PolicyGateway for NullGateway {
    fn submit(&mut self, _: &ActionRequest, _: CanonicalTimestamp) -> ActionOutcome {
        ActionOutcome::Rejected { reason: "no actions in this check".into() }
    }

    fn record_emission(
        &mut self,
        _: &riskdesk_core::fabric::Emission,
        _: CanonicalTimestamp,
    ) -> Result<u64, riskdesk_core::fabric::FabricError> {
        Ok(0)
    }
}

fn killable_uplift() -> Outcome {
    let window = 3;
    let threshold = 0.01;
    let high_variance = vec![vec![0.05, 0.1, 0.05], vec![0.6, 0.7, 0.65], vec![0.3, 0.25, 0.35]];
    let (verdict, variance) = uplift_decision(&high_variance, threshold);
    ensure!(verdict == UpliftState::Disabled, "variance {variance} kept uplift enabled");

    let mut runtime = Runtime {
        fusion: FusionConfig::default(),
        uplift: UpliftSwitch::new(window, threshold),
        injector: FailureInjector::never(),
    };
    for i in 0..window {
        let state = runtime.uplift.observe(&high_variance);
        let want = if i + 1 == window { UpliftState::Disabled } else { UpliftState::Enabled };
        ensure!(state == want, "after {} observations state {state:?}", i + 1);
    }
    let inputs = RunInputs {
        run_id: "uplift".into(),
        at: ts(1_000),
        text: "calm".into(),
        onchain_flow: 0.0,
        grey_feed: 0.0,
        standalone_p: 0.31,
        subnet_p: Some(0.9),
        proposed_action: None,
    };
    let record = runtime.execute_run(&mut NullGateway, &inputs, TierHealth::default());
    let prediction = &record.emission.body["prediction"];
    ensure!(prediction["source"] == "STANDALONE" && prediction["p"] == 0.31, "served {prediction}");

    // Means straddle the threshold on alternate observations.
    let above = vec![vec![0.1], vec![0.3 + 1e-3]];
    let below = vec![vec![0.1], vec![0.3 - 1e-3]];
    ensure!(uplift_decision(&above, threshold).0 == UpliftState::Disabled, "fixture not above");
    ensure!(uplift_decision(&below, threshold).0 == UpliftState::Enabled, "fixture not below");
    for start in [UpliftState::Enabled, UpliftState::Disabled] {
        let mut sw = UpliftSwitch::new(window, threshold);
        if start == UpliftState::Disabled {
            for _ in 0..window {
                sw.observe(&above);
            }
        }
        let mut flips = 0;
        let mut last = sw.state();
        for i in 0..200 {
            let s = sw.observe(if i % 2 == 0 { &below } else { &above });
            flips += usize::from(s != last);
            last = s;
        }
        ensure!(flips == 0 && last == start, "switch flapped {flips} times from {start:?}");
    }
    ensure!(runtime.uplift.serve(0.31, Some(0.9)).source == PredictionSource::Standalone, "serve path");
    Ok("disabled after one window, standalone served, no flapping".into())
}

fn calibration_evaluator() -> Outcome {
    let table = "generated_utc,window_h,samples,did_crash_accuracy_pct,brier
2026-04-21 02:43,168,499,50.90,0.1983
2026-04-25 22:35,168,1393,77.32,0.1477
2026-04-26 00:01,168,1292,77.48,0.1475
2026-05-01 03:47,168,100,100.00,0.1314
2026-05-07 01:41,168,915,99.34,0.1335
";
    let rows = ingest_metrics_csv(table.as_bytes()).map_err(|e| e.to_string())?;
    ensure!(emit_metrics_csv(&rows) == table, "table rows do not round-trip");

    let now = CanonicalTimestamp::parse_utc("2026-05-07 01:41").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(915);
    let pairs: Vec<PredictionOutcomePair> = (0..915)
        .map(|i| {
            let y = rng.random_bool(0.4);
            // The last six are called the wrong way.
            let calls_crash = if i < 909 { y } else { !y };
            let p = if calls_crash { rng.random_range(0.5..1.0) } else { rng.random_range(0.0..0.5) };
            let emitted = now.saturating_sub(rng.random_range(86_400..7 * 86_400));
            PredictionOutcomePair::new(format!("T{i}"), rng.random_range(1..1_000), p, y, emitted, 3_600)
        })
        .collect();
    let m = evaluate_window(&pairs, 168, now, Some(1_000));
    ensure!(m.samples == 915, "samples {}", m.samples);
    let accuracy = m.did_crash_accuracy.ok_or("empty cohort")? * 100.0;
    ensure!((accuracy - 99.34).abs() <= 0.01, "accuracy {accuracy}");

    // Oracle: exact decimal sum of squared errors.
    let exact: Decimal = pairs
        .iter()
        .map(|p| {
            let e = Decimal::from_f64(p.predicted_p).unwrap() - if p.realised_y { Decimal::ONE } else { Decimal::ZERO };
            e * e
        })
        .sum::<Decimal>()
        / Decimal::from(pairs.len());
    let oracle = exact.to_f64().unwrap();
    let brier = m.brier.ok_or("no brier")?;
    ensure!((brier - oracle).abs() < 1e-12, "brier {brier} vs oracle {oracle}");

    let imbalanced: Vec<PredictionOutcomePair> = (0..1_000)
        .map(|i| PredictionOutcomePair::new(format!("R{i}"), 1, 0.0, i % 100 == 0, now.saturating_sub(3_600 + i), 60))
        .collect();
    let m = evaluate_window(&imbalanced, 168, now, None);
    let text = emit_metrics_csv(std::slice::from_ref(&m));
    ensure!(text.lines().nth(1).is_some_and(|l| l.ends_with(",1000,99.00,0.0100")), "constant predictor row {text}");
    ensure!((m.brier.unwrap() - 0.01).abs() < 1e-15, "constant predictor brier {:?}", m.brier);
    Ok(format!("table round-trips, 915 pairs at {accuracy:.2}%, 1% base rate at 99.00% / 0.0100"))
}

fn random_pool(rng: &mut ChaCha8Rng, fee_bps: u32) -> Pool {
    let base = Decimal::new(rng.random_range(1_000..10_000_000), 3);
    let quote = Decimal::new(rng.random_range(1_000_000..100_000_000_000), 0);
    Pool::new(base, quote, fee_bps).unwrap()
}

fn random_amount(rng: &mut ChaCha8Rng, pool: &Pool, side: SwapSide) -> Decimal {
    let reserve = match side {
        SwapSide::BuyQuote => pool.reserve_base,
        SwapSide::SellQuote => pool.reserve_quote,
    };
    (reserve * Decimal::new(rng.random_range(1..5_000), 4)).round_dp(6).max(Decimal::new(1, 6))
}

fn amm_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA33);
    let mut worst = 0.0f64;
    for n in 0..100_000 {
        let start = random_pool(&mut rng, 0);
        let k0 = start.invariant_k();
        let mut pool = start.clone();
        for _ in 0..rng.random_range(1..8) {
            let side = if rng.random_bool(0.5) { SwapSide::BuyQuote } else { SwapSide::SellQuote };
            let amount = random_amount(&mut rng, &pool, side);
            pool = pool.execute_swap(side, amount).map_err(|e| e.to_string())?.new_pool;
            let drift = relative_diff(pool.invariant_k(), k0);
            worst = worst.max(drift);
            ensure!(drift < 1e-12, "sequence {n}: k drifted by {drift}");
        }

        // Two swaps in a row land where one combined swap does.
        let side = if rng.random_bool(0.5) { SwapSide::BuyQuote } else { SwapSide::SellQuote };
        let a = random_amount(&mut rng, &start, side);
        let b = random_amount(&mut rng, &start, side);
        let first = start.execute_swap(side, a).unwrap();
        let second = first.new_pool.execute_swap(side, b).unwrap();
        let combined = start.execute_swap(side, a + b).unwrap();
        let split_out = first.amount_out + second.amount_out;
        ensure!(relative_diff(split_out, combined.amount_out) < 1e-12, "sequence {n}: path dependence");
        ensure!(
            relative_diff(second.new_pool.reserve_base, combined.new_pool.reserve_base) < 1e-12
                && relative_diff(second.new_pool.reserve_quote, combined.new_pool.reserve_quote) < 1e-12,
            "sequence {n}: reserves differ by path"
        );

        // Larger trades get worse prices, with and without the fee.
        let fee_pool = Pool { fee_bps: rng.random_range(0..100), ..start.clone() };
        let (small, large) = if a < b { (a, b) } else { (b, a) };
        if small < large {
            let s = fee_pool.execute_swap(side, small).unwrap().execution_price;
            let l = fee_pool.execute_swap(side, large).unwrap().execution_price;
            let monotone = match side {
                SwapSide::BuyQuote => s < l,
                SwapSide::SellQuote => s > l,
            };
            ensure!(monotone, "sequence {n}: execution price not monotone ({side:?} {small} -> {s}, {large} -> {l})");
        }
    }
    Ok(format!("10^5 sequences, worst k drift {worst:.1e}"))
}

fn replay_defence() -> Outcome {
    let width = 3_600i64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E9);
    let mut guard = ReplayGuard::new(width).map_err(|e| e.to_string())?;
    let mut rejected = 0;
    for trial in 0..10_000u64 {
        let window = rng.random_range(1..100_000u64);
        let emitted = window * 3_600 + rng.random_range(0..3_600);
        let forecast = MinerOutput {
            miner_id: format!("m{}", trial % 37),
            p: rng.random::<f64>(),
            c: rng.random::<f64>(),
            emitted_at: ts(emitted),
            context_id: format!("ctx-{trial}"),
        };
        let later = (window + rng.random_range(1..50)) * 3_600 + rng.random_range(0..3_600);
        let resubmit = if rng.random_bool(0.5) { later } else { (window - 1) * 3_600 + rng.random_range(0..3_600) };
        match guard.submit(&forecast, ts(resubmit)) {
            Err(ReplayRejection::OutOfWindow { .. }) => rejected += 1,
            other => return Err(format!("trial {trial}: out-of-window resubmission gave {other:?}")),
        }
    }
    ensure!(rejected == 10_000, "{rejected} rejected");

    let mut fresh = ReplayGuard::new(width).unwrap();
    let copy = |miner: &str| MinerOutput {
        miner_id: miner.into(),
        p: 0.42,
        c: 0.8,
        emitted_at: ts(7_300),
        context_id: "ctx".into(),
    };
    ensure!(fresh.submit(&copy("a"), ts(7_400)).is_ok(), "first in-window submission");
    ensure!(fresh.submit(&copy("b"), ts(7_500)).is_ok(), "same-window copy from a second miner");
    ensure!(fresh.submit(&copy("a"), ts(7_600)).is_err(), "same miner twice in one window");
    Ok("10^4/10^4 out-of-window rejected; same-window copies accepted".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("case-study replay", case_study_replay),
        ("policy-boundary fuzzing", policy_boundary_fuzz),
        ("audit chain", audit_chain),
        ("loss identities", loss_identities),
        ("yuma clipping", yuma_clipping),
        ("noise monotonicity", noise_monotonicity),
        ("killable uplift", killable_uplift),
        ("calibration evaluator", calibration_evaluator),
        ("amm properties", amm_properties),
        ("replay defence", replay_defence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.2} s): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2} s): {reason}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
