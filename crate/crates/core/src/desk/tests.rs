use std::str::FromStr;

use super::*;

fn d(s: &str) -> Decimal {
    Decimal::from_str(s).unwrap()
}

fn ts(s: u64) -> CanonicalTimestamp {
    CanonicalTimestamp::from_secs(s)
}

/// Spot 1e-6 SOL per token at 100 USD/SOL, so 1e-4 USD; liquidity 200k USD.
fn setup() -> DeskSetup {
    DeskSetup {
        pool: Pool::new(d("1000"), d("1000000000"), 0).unwrap(),
        sol_usd: d("100"),
        policy: TraderPolicyConfig::default(),
        ladder: Ladder::new([d("0.00011"), d("0.00012"), d("0.00013"), d("0.00014")]).unwrap(),
        constitution: RoleConstitution::trader(WalletId::new("deployer")),
        flags: LiveFlags { live_trading_enabled: true, execution_wallet_armed: true },
        trader_wallet: WalletId::new("trader"),
        initial_wallet_sol: d("5"),
        engine_identity: "trader-engine".into(),
        initial_state: None,
    }
}

fn live_desk() -> Desk {
    let mut desk = Desk::new(setup()).unwrap();
    let r = desk.request_escalation(EscalationPayload::LiveFlip, "trader-engine", ts(0)).unwrap();
    desk.approve(&r.id, "board", "go live", ts(1)).unwrap();
    desk
}

fn run_buy(desk: &mut Desk, at: u64) -> u32 {
    match desk.tick(ts(at)).unwrap() {
        TickOutcome::BuyStarted { buy_index, remaining } => {
            for s in remaining {
                desk.run_slice(buy_index, s.fire_at).unwrap();
            }
            buy_index
        }
        other => panic!("expected a buy, got {other:?}"),
    }
}

#[test]
fn paused_by_default_and_requires_buy_only() {
    let mut desk = Desk::new(setup()).unwrap();
    assert_eq!(desk.tick(ts(10)).unwrap(), TickOutcome::Held { reason: HoldReason::Paused });
    let mut s = setup();
    s.constitution.rules.retain(|r| *r != RuleId::BuyOnly);
    assert!(matches!(Desk::new(s), Err(DeskError::MissingBuyOnly)));
}

#[test]
fn sliced_buy_charges_and_audits() {
    let mut desk = live_desk();
    assert_eq!(run_buy(&mut desk, 100), 1);
    let st = desk.state();
    assert_eq!(st.lifetime_spend_sol, d("0.10"));
    assert_eq!(st.wallet_balance_sol, d("4.90"));
    assert_eq!(st.buys_completed, 1);
    assert_eq!(st.last_buy_completed_at, Some(ts(220)));
    assert!(!st.buy_in_flight);
    assert_eq!(desk.counters().policy_buy_swaps, 5);
    assert_eq!(allow_verdicts(desk.audit_log().entries()), 5);
    // Cooldown runs from the last slice.
    assert_eq!(desk.tick(ts(819)).unwrap(), TickOutcome::Held { reason: HoldReason::Cooldown });
    assert!(matches!(desk.tick(ts(820)).unwrap(), TickOutcome::BuyStarted { buy_index: 2, .. }));
}

#[test]
fn governance_examples() {
    let mut desk = Desk::new(setup()).unwrap();
    let cap = desk
        .request_escalation(EscalationPayload::CapRaise { new_cap_sol: d("3.0") }, "trader-engine", ts(0))
        .unwrap();
    assert_eq!(desk.approve(&cap.id, "board", "", ts(1)), Err(GovernanceError::EmptyRationale));
    assert_eq!(desk.approve(&cap.id, "trader-engine", "self", ts(1)), Err(GovernanceError::SelfApproval));

    let before = desk.state().clone();
    let other = desk
        .request_escalation(EscalationPayload::CapRaise { new_cap_sol: d("9.0") }, "trader-engine", ts(2))
        .unwrap();
    desk.deny_escalation(&other.id, "board", "no", ts(3)).unwrap();
    assert_eq!(desk.state(), &before);
    assert!(desk.approve(&other.id, "board", "changed mind", ts(4)).is_err());

    let rec = desk.approve(&cap.id, "board", "more headroom", ts(5)).unwrap();
    assert_eq!(desk.state().daily_cap_sol, d("3.0"));
    assert_eq!(desk.audit_log().entries()[rec.audit_seq as usize].kind, AuditKind::Approval);
    assert_eq!(desk.audit_log().last().unwrap().kind, AuditKind::CapChange);
    assert!(matches!(
        desk.approve(&cap.id, "board", "again", ts(6)),
        Err(GovernanceError::NotPending { .. })
    ));

    let resume = desk.request_escalation(EscalationPayload::Resume, "trader-engine", ts(7)).unwrap();
    assert_eq!(desk.approve(&resume.id, "board", "ok", ts(8)), Err(GovernanceError::NotStopLossPaused));
}

#[test]
fn live_flip_needs_both_flags() {
    let mut s = setup();
    s.flags.execution_wallet_armed = false;
    let mut desk = Desk::new(s).unwrap();
    let r = desk.request_escalation(EscalationPayload::LiveFlip, "trader-engine", ts(0)).unwrap();
    assert_eq!(
        desk.approve(&r.id, "board", "go", ts(1)),
        Err(GovernanceError::Constitution(RuleId::LiveRequiresTwoFlagsPlusApproval))
    );
    assert_eq!(desk.state().mode, Mode::Paused);
    assert_eq!(desk.audit_log().last().unwrap().kind, AuditKind::Denial);
}

#[test]
fn stoploss_trip_blocks_until_resume_and_rearms_at_current_liquidity() {
    let mut desk = live_desk();
    desk.tick(ts(100)).unwrap();
    // Sell enough tokens to push the price down by more than 30%.
    let (side, amount) = desk.pool().trade_to_spot(d("0.00000054")).unwrap();
    assert_eq!(side, SwapSide::SellQuote);
    desk.external_trade(side, amount, ts(200)).unwrap();
    assert!(matches!(desk.tick(ts(260)).unwrap(), TickOutcome::Tripped { .. }));
    let fired = desk.state().buys_fired;
    let spent = desk.state().lifetime_spend_sol;
    assert!(desk.state().is_stoploss_paused());
    assert!(!desk.state().stoploss_armed);
    for t in (320..3_000).step_by(60) {
        assert_eq!(desk.tick(ts(t)).unwrap(), TickOutcome::Held { reason: HoldReason::Paused });
    }
    assert_eq!(desk.state().buys_fired, fired);
    assert_eq!(desk.state().lifetime_spend_sol, spent);

    let r = desk.request_escalation(EscalationPayload::Resume, "trader-engine", ts(3_000)).unwrap();
    desk.approve(&r.id, "board", "market stabilised", ts(3_010)).unwrap();
    let st = desk.state();
    assert_eq!(st.mode, Mode::Live);
    assert!(st.stoploss_armed);
    assert_eq!(st.stoploss_baseline_liquidity_usd, desk.liquidity_usd());
    // History was reset, so the old peak cannot re-trip.
    assert!(matches!(desk.tick(ts(3_060)).unwrap(), TickOutcome::BuyStarted { .. }));
}

#[test]
fn trip_cancels_in_flight_program() {
    let mut desk = live_desk();
    let TickOutcome::BuyStarted { buy_index, remaining } = desk.tick(ts(100)).unwrap() else {
        panic!("expected buy")
    };
    desk.run_slice(buy_index, remaining[0].fire_at).unwrap();
    let (side, amount) = desk.pool().trade_to_spot(d("0.00000050")).unwrap();
    desk.external_trade(side, amount, ts(140)).unwrap();
    assert!(matches!(desk.tick(ts(145)).unwrap(), TickOutcome::Tripped { .. }));
    assert_eq!(desk.run_slice(buy_index, remaining[1].fire_at).unwrap(), None);
    assert_eq!(desk.state().lifetime_spend_sol, d("0.04"));
    assert!(!desk.state().buy_in_flight);
    assert_eq!(desk.reconstruct().unwrap(), *desk.state());
}

#[test]
fn gateway_sell_is_denied_and_buy_goes_through_constitution() {
    let mut desk = live_desk();
    let sell = ActionRequest {
        action_id: "a1".into(),
        kind: ActionKind::Sell,
        amount_sol: d("0.1"),
        wallet: None,
        approval_ref: None,
        on_behalf_of: None,
    };
    assert!(matches!(desk.submit(&sell, ts(10)), ActionOutcome::Denied { rule: RuleId::BuyOnly, .. }));
    let deployer = ActionRequest {
        action_id: "a2".into(),
        kind: ActionKind::Buy,
        wallet: Some(WalletId::new("deployer")),
        ..sell.clone()
    };
    assert!(matches!(
        desk.submit(&deployer, ts(11)),
        ActionOutcome::Denied { rule: RuleId::NoDeployerWallet, .. }
    ));
    let buy = ActionRequest { action_id: "a3".into(), kind: ActionKind::Buy, ..sell.clone() };
    let first = desk.submit(&buy, ts(12));
    assert!(matches!(first, ActionOutcome::Executed { .. }));
    // Idempotent by action id.
    assert_eq!(desk.submit(&buy, ts(13)), first);
    assert_eq!(desk.counters().policy_buy_swaps, 1);
    assert_eq!(desk.counters().policy_sell_swaps, 0);
    let flip = ActionRequest { action_id: "a4".into(), kind: ActionKind::CapRaise, ..sell };
    assert!(matches!(desk.submit(&flip, ts(14)), ActionOutcome::Rejected { .. }));
}

#[test]
fn fold_reconstructs_after_mixed_history() {
    let mut desk = live_desk();
    let top = desk
        .request_escalation(EscalationPayload::TopUp { top_up_sol: d("2") }, "trader-engine", ts(5))
        .unwrap();
    desk.approve(&top.id, "board", "funding", ts(6)).unwrap();
    let mut t = 100;
    for _ in 0..10 {
        run_buy(&mut desk, t);
        t += 780;
    }
    assert_eq!(desk.tick(ts(t)).unwrap(), TickOutcome::Held { reason: HoldReason::CapBound });
    let cap = desk
        .request_escalation(EscalationPayload::CapRaise { new_cap_sol: d("3") }, "trader-engine", ts(t))
        .unwrap();
    desk.approve(&cap.id, "board", "headroom", ts(t + 1)).unwrap();
    for _ in 0..20 {
        run_buy(&mut desk, t + 60);
        t += 780;
    }
    let st = desk.state();
    assert_eq!(st.lifetime_spend_sol, d("3.0"));
    assert_eq!(st.ratchet_level, 1);
    assert_eq!(desk.reconstruct().unwrap(), *st);
}
