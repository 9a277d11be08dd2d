//! The execution boundary. The desk owns the pool, the trader state, the
//! escalation book and the audit log; every swap the policy makes passes
//! through the constitution here, and nothing outside this module holds a
//! handle to the pool.

mod fold;

use std::collections::HashMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::amm::{AmmError, Pool, SwapResult, SwapSide};
use crate::fabric::{AuditKind, AuditLog, CanonicalTimestamp, Emission, FabricError};
use crate::governance::{
    ApprovalRecord, EscalationBook, EscalationKind, EscalationPayload, EscalationRequest,
    GovernanceError,
};
use crate::policy::{
    apply_ratchet, check_constitution, evaluate_tick, slice_schedule, ActionKind,
    Decision, GovernanceView, HoldReason, Ladder, LiveFlags, MarketView, Mode, PolicyError,
    PricePoint, ProposedAction, RoleConstitution, RuleId, ScheduledSlice, TraderPolicyConfig,
    TraderPolicyState, Verdict, WalletId,
};

pub use fold::{allow_verdicts, fold_audit_log, FoldError};

#[derive(Debug, thiserror::Error)]
pub enum DeskError {
    #[error("the constitution must contain BUY_ONLY")]
    MissingBuyOnly,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Amm(#[from] AmmError),
    #[error(transparent)]
    Audit(#[from] FabricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSetup {
    pub pool: Pool,
    pub sol_usd: Decimal,
    pub policy: TraderPolicyConfig,
    pub ladder: Ladder,
    pub constitution: RoleConstitution,
    pub flags: LiveFlags,
    pub trader_wallet: WalletId,
    pub initial_wallet_sol: Decimal,
    /// Actor name the engine writes under; it may never approve.
    pub engine_identity: String,
    /// Starts the engine from a saved state instead of a fresh one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<TraderPolicyState>,
}

/// A request arriving from outside the tick loop, such as a runtime run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action_id: String,
    pub kind: ActionKind,
    pub amount_sol: Decimal,
    pub wallet: Option<WalletId>,
    pub approval_ref: Option<String>,
    pub on_behalf_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionOutcome {
    Executed { audit_seq: u64, amount_out: Decimal },
    Denied { rule: RuleId, audit_seq: u64 },
    /// Failed a precondition before any verdict was taken.
    Rejected { reason: String },
}

/// What the runtime can reach: constitution-gated execution and the shared
/// audit surface. It holds no pool handle.
pub trait PolicyGateway {
    fn submit(&mut self, action: &ActionRequest, clock: CanonicalTimestamp) -> ActionOutcome;

    /// Appends an EMISSION entry and returns its seq.
    fn record_emission(&mut self, emission: &Emission, clock: CanonicalTimestamp) -> Result<u64, FabricError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TickOutcome {
    Held { reason: HoldReason },
    Tripped { audit_seq: u64 },
    BuyStarted { buy_index: u32, remaining: Vec<ScheduledSlice> },
    BuyDenied { rule: RuleId, audit_seq: u64 },
    BuyRejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyProgram {
    pub buy_index: u32,
    pub slices: Vec<ScheduledSlice>,
    pub next_slice: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCounters {
    pub policy_buy_swaps: u64,
    pub policy_sell_swaps: u64,
    pub external_swaps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSnapshot {
    pub state: TraderPolicyState,
    pub pool: Pool,
    pub sol_usd: Decimal,
    pub spot_price_usd: Decimal,
    pub liquidity_usd: Decimal,
    pub stoploss_paused: bool,
    pub program: Option<BuyProgram>,
    pub counters: SwapCounters,
    pub audit_len: usize,
}

#[derive(Debug, Clone)]
pub struct Desk {
    pool: Pool,
    sol_usd: Decimal,
    config: TraderPolicyConfig,
    constitution: RoleConstitution,
    flags: LiveFlags,
    trader_wallet: WalletId,
    engine_identity: String,
    initial_state: TraderPolicyState,
    state: TraderPolicyState,
    book: EscalationBook,
    log: AuditLog,
    price_history: Vec<PricePoint>,
    /// Pool liquidity at each price observation, index-aligned.
    liquidity_history: Vec<Decimal>,
    program: Option<BuyProgram>,
    counters: SwapCounters,
    next_buy_index: u32,
    outcomes: HashMap<String, ActionOutcome>,
}

impl Desk {
    pub fn new(setup: DeskSetup) -> Result<Self, DeskError> {
        Self::with_log(setup, AuditLog::new())
    }

    /// Uses `log` as the audit surface, for instance one opened on a file.
    pub fn with_log(setup: DeskSetup, log: AuditLog) -> Result<Self, DeskError> {
        setup.policy.validate()?;
        setup.pool.validate()?;
        if !setup.constitution.contains(RuleId::BuyOnly) {
            return Err(DeskError::MissingBuyOnly);
        }
        let state = match setup.initial_state {
            Some(saved) => saved,
            None => {
                let mut fresh = TraderPolicyState::new(&setup.policy, setup.ladder, setup.initial_wallet_sol);
                fresh.stoploss_baseline_liquidity_usd = setup.pool.liquidity_usd(setup.sol_usd);
                fresh
            }
        };
        let next_buy_index = state.buys_fired + 1;
        Ok(Self {
            pool: setup.pool,
            sol_usd: setup.sol_usd,
            config: setup.policy,
            constitution: setup.constitution,
            flags: setup.flags,
            trader_wallet: setup.trader_wallet,
            engine_identity: setup.engine_identity,
            initial_state: state.clone(),
            state,
            book: EscalationBook::new(),
            log,
            price_history: Vec::new(),
            liquidity_history: Vec::new(),
            program: None,
            counters: SwapCounters::default(),
            next_buy_index,
            outcomes: HashMap::new(),
        })
    }

    pub fn state(&self) -> &TraderPolicyState {
        &self.state
    }

    pub fn initial_state(&self) -> &TraderPolicyState {
        &self.initial_state
    }

    pub fn config(&self) -> &TraderPolicyConfig {
        &self.config
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.log
    }

    pub fn escalations(&self) -> &EscalationBook {
        &self.book
    }

    pub fn counters(&self) -> SwapCounters {
        self.counters
    }

    pub fn program(&self) -> Option<&BuyProgram> {
        self.program.as_ref()
    }

    pub fn engine_identity(&self) -> &str {
        &self.engine_identity
    }

    pub fn spot_price_usd(&self) -> Decimal {
        self.pool.spot_price_usd(self.sol_usd).expect("pool stays valid")
    }

    pub fn liquidity_usd(&self) -> Decimal {
        self.pool.liquidity_usd(self.sol_usd)
    }

    pub fn snapshot(&self) -> DeskSnapshot {
        DeskSnapshot {
            state: self.state.clone(),
            pool: self.pool.clone(),
            sol_usd: self.sol_usd,
            spot_price_usd: self.spot_price_usd(),
            liquidity_usd: self.liquidity_usd(),
            stoploss_paused: self.state.is_stoploss_paused(),
            program: self.program.clone(),
            counters: self.counters,
            audit_len: self.log.len(),
        }
    }

    fn observe_price(&mut self, clock: CanonicalTimestamp) {
        let price = self.spot_price_usd();
        self.price_history.push(PricePoint { at: clock, price_usd: price });
        self.liquidity_history.push(self.liquidity_usd());
        let horizon = clock.saturating_sub(self.config.stoploss_window_seconds);
        let keep_from = self.price_history.partition_point(|p| p.at < horizon);
        self.price_history.drain(..keep_from);
        self.liquidity_history.drain(..keep_from);
    }

    /// A market participant's trade. Not an engine action, so not audited.
    pub fn external_trade(
        &mut self,
        side: SwapSide,
        amount_in: Decimal,
        clock: CanonicalTimestamp,
    ) -> Result<SwapResult, DeskError> {
        let result = self.pool.execute_swap(side, amount_in)?;
        self.pool = result.new_pool.clone();
        self.counters.external_swaps += 1;
        self.observe_price(clock);
        Ok(result)
    }

    /// One evaluation of the trader policy. A fired buy executes its first
    /// slice immediately; the caller schedules the rest.
    pub fn tick(&mut self, clock: CanonicalTimestamp) -> Result<TickOutcome, DeskError> {
        self.observe_price(clock);
        let market = MarketView {
            spot_price_usd: self.spot_price_usd(),
            liquidity_usd: self.liquidity_usd(),
            price_history: &self.price_history,
        };
        match evaluate_tick(&self.state, &self.config, &market, clock) {
            Decision::Hold(reason) => Ok(TickOutcome::Held { reason }),
            Decision::TripStoploss => self.trip(clock).map(|audit_seq| TickOutcome::Tripped { audit_seq }),
            Decision::FireBuy => {
                let buy_index = self.next_buy_index;
                let slices = slice_schedule(clock, &self.config);
                let action_id = format!("buy-{buy_index}-slice-0");
                match self.execute_buy_slice(&action_id, buy_index, 0, slices.len(), slices[0].amount, None, clock)? {
                    ActionOutcome::Denied { rule, audit_seq } => Ok(TickOutcome::BuyDenied { rule, audit_seq }),
                    ActionOutcome::Rejected { reason } => Ok(TickOutcome::BuyRejected { reason }),
                    ActionOutcome::Executed { .. } => {
                        self.next_buy_index += 1;
                        let remaining = slices[1..].to_vec();
                        if !remaining.is_empty() {
                            self.program = Some(BuyProgram { buy_index, slices, next_slice: 1 });
                        }
                        Ok(TickOutcome::BuyStarted { buy_index, remaining })
                    }
                }
            }
        }
    }

    /// Executes the next scheduled slice of the in-flight buy. Returns
    /// `None` when that program was cancelled or has already finished.
    pub fn run_slice(
        &mut self,
        buy_index: u32,
        clock: CanonicalTimestamp,
    ) -> Result<Option<ActionOutcome>, DeskError> {
        let Some(program) = self.program.as_ref().filter(|p| p.buy_index == buy_index) else {
            return Ok(None);
        };
        let slice_index = program.next_slice;
        let count = program.slices.len();
        let amount = program.slices[slice_index].amount;
        let action_id = format!("buy-{buy_index}-slice-{slice_index}");
        let outcome = self.execute_buy_slice(&action_id, buy_index, slice_index, count, amount, None, clock)?;
        match &outcome {
            ActionOutcome::Executed { .. } => {
                let program = self.program.as_mut().expect("checked above");
                program.next_slice += 1;
                if program.next_slice == count {
                    self.program = None;
                }
            }
            _ => self.abandon_program(),
        }
        Ok(Some(outcome))
    }

    fn abandon_program(&mut self) {
        self.program = None;
        self.state.buy_in_flight = false;
    }

    fn trip(&mut self, clock: CanonicalTimestamp) -> Result<u64, DeskError> {
        let (peak, peak_liquidity) = self
            .price_history
            .iter()
            .zip(&self.liquidity_history)
            .max_by_key(|(p, _)| p.price_usd)
            .map_or((Decimal::ZERO, Decimal::ZERO), |(p, l)| (p.price_usd, *l));
        let current = self.spot_price_usd();
        let cancelled = self.program.as_ref().map_or(0, |p| p.slices.len() - p.next_slice);
        let entry = self.log.append(
            &self.engine_identity,
            AuditKind::StopLossTrip,
            &json!({
                "peak_price_usd": peak,
                "price_usd": current,
                "drop_fraction": if peak.is_zero() { Decimal::ZERO } else { (peak - current) / peak },
                "liquidity_usd": self.liquidity_usd(),
                "peak_liquidity_usd": peak_liquidity,
                "baseline_liquidity_usd": self.state.stoploss_baseline_liquidity_usd,
                "cancelled_slices": cancelled,
            }),
            clock,
        )?;
        let seq = entry.seq;
        self.abandon_program();
        self.state.mode = Mode::Paused;
        self.state.stoploss_armed = false;
        self.state.stoploss_tripped_at = Some(clock);
        Ok(seq)
    }

    fn proposed(&self, kind: ActionKind, wallet: Option<&WalletId>) -> ProposedAction {
        ProposedAction {
            kind,
            wallet: wallet.cloned().unwrap_or_else(|| self.trader_wallet.clone()),
            flags: self.flags,
            mode: self.state.mode,
            approval_ref: None,
            on_behalf_of: None,
        }
    }

    fn deny(&mut self, action_id: &str, action: &ProposedAction, rule: RuleId, clock: CanonicalTimestamp) -> Result<u64, FabricError> {
        let entry = self.log.append(
            &self.engine_identity,
            AuditKind::Denial,
            &json!({
                "action_id": action_id,
                "action": action,
                "verdict": "DENY",
                "rule": rule,
            }),
            clock,
        )?;
        Ok(entry.seq)
    }

    #[allow(clippy::too_many_arguments)]
    fn execute_buy_slice(
        &mut self,
        action_id: &str,
        buy_index: u32,
        slice_index: usize,
        slice_count: usize,
        amount: Decimal,
        overrides: Option<&ActionRequest>,
        clock: CanonicalTimestamp,
    ) -> Result<ActionOutcome, DeskError> {
        if amount <= Decimal::ZERO {
            return Ok(ActionOutcome::Rejected { reason: "amount must be positive".into() });
        }
        if amount > self.state.wallet_balance_sol {
            return Ok(ActionOutcome::Rejected { reason: "insufficient wallet balance".into() });
        }
        if self.state.daily_spend(clock) + amount > self.state.daily_cap_sol {
            return Ok(ActionOutcome::Rejected { reason: "daily cap would be exceeded".into() });
        }
        let mut action = self.proposed(ActionKind::Buy, overrides.and_then(|o| o.wallet.as_ref()));
        if let Some(o) = overrides {
            action.approval_ref = o.approval_ref.clone();
            action.on_behalf_of = o.on_behalf_of.clone();
        }
        if let Verdict::Deny(rule) = check_constitution(&action, &self.constitution, &self.book) {
            let audit_seq = self.deny(action_id, &action, rule, clock)?;
            return Ok(ActionOutcome::Denied { rule, audit_seq });
        }
        let price_before = self.spot_price_usd();
        let result = match self.pool.execute_swap(SwapSide::BuyQuote, amount) {
            Ok(r) => r,
            Err(e) => return Ok(ActionOutcome::Rejected { reason: e.to_string() }),
        };
        self.pool = result.new_pool.clone();
        self.counters.policy_buy_swaps += 1;

        let final_slice = slice_index + 1 == slice_count;
        self.state.charge(clock, amount);
        if slice_index == 0 {
            self.state.buys_fired += 1;
        }
        self.state.buy_in_flight = !final_slice;
        if final_slice {
            self.state.buys_completed += 1;
            self.state.last_buy_completed_at = Some(clock);
            self.state = apply_ratchet(&self.state, &self.config);
        }
        self.observe_price(clock);
        let entry = self.log.append(
            &self.engine_identity,
            AuditKind::BuySlice,
            &json!({
                "action_id": action_id,
                "verdict": "ALLOW",
                "buy_index": buy_index,
                "slice_index": slice_index,
                "slice_count": slice_count,
                "final_slice": final_slice,
                "amount_sol": amount,
                "amount_out": result.amount_out,
                "execution_price": result.execution_price,
                "price_usd": price_before,
                "price_usd_after": self.spot_price_usd(),
                "bottom_tier_usd": self.state.ladder.bottom(),
                "ratchet_level": self.state.ratchet_level,
                "daily_spend_sol": self.state.daily_spend(clock),
                "daily_cap_sol": self.state.daily_cap_sol,
                "lifetime_spend_sol": self.state.lifetime_spend_sol,
                "wallet_sol": self.state.wallet_balance_sol,
                "mode": self.state.mode,
            }),
            clock,
        )?;
        Ok(ActionOutcome::Executed { audit_seq: entry.seq, amount_out: result.amount_out })
    }

    pub fn request_escalation(
        &mut self,
        payload: EscalationPayload,
        requested_by: &str,
        clock: CanonicalTimestamp,
    ) -> Result<EscalationRequest, GovernanceError> {
        self.book.request(payload, requested_by, clock, &mut self.log)
    }

    /// Approves a pending escalation. The APPROVAL entry and the resulting
    /// policy mutation happen together or not at all.
    pub fn approve(
        &mut self,
        escalation_id: &str,
        approver: &str,
        rationale: &str,
        clock: CanonicalTimestamp,
    ) -> Result<ApprovalRecord, GovernanceError> {
        let request = self
            .book
            .check_approvable(escalation_id, approver, rationale, &self.engine_identity)?
            .clone();

        match &request.payload {
            EscalationPayload::CapRaise { new_cap_sol } if *new_cap_sol <= self.state.daily_cap_sol => {
                return Err(GovernanceError::MalformedPayload(format!(
                    "new cap {new_cap_sol} does not exceed current cap {}",
                    self.state.daily_cap_sol
                )));
            }
            EscalationPayload::Resume if !self.state.is_stoploss_paused() => {
                return Err(GovernanceError::NotStopLossPaused);
            }
            _ => {}
        }

        let kind = match request.kind() {
            EscalationKind::LiveFlip => ActionKind::LiveFlip,
            EscalationKind::CapRaise => ActionKind::CapRaise,
            EscalationKind::Resume => ActionKind::Resume,
            EscalationKind::TopUp => ActionKind::TopUp,
        };
        let mut action = self.proposed(kind, None);
        action.approval_ref = Some(escalation_id.to_string());
        let verdict = {
            let view = self.book.with_candidate(escalation_id, rationale);
            check_constitution(&action, &self.constitution, &view as &dyn GovernanceView)
        };
        if let Verdict::Deny(rule) = verdict {
            self.deny(escalation_id, &action, rule, clock)?;
            return Err(GovernanceError::Constitution(rule));
        }

        let approval_seq = self
            .log
            .append(
                approver,
                AuditKind::Approval,
                &json!({
                    "escalation_id": escalation_id,
                    "escalation_kind": request.kind(),
                    "request": request.payload,
                    "approver": approver,
                    "rationale": rationale,
                    "verdict": "ALLOW",
                }),
                clock,
            )?
            .seq;
        let record = self.book.commit_approval(escalation_id, approver, rationale, clock, approval_seq)?;

        match request.payload {
            EscalationPayload::LiveFlip => self.state.mode = Mode::Live,
            EscalationPayload::TopUp { top_up_sol } => self.state.wallet_balance_sol += top_up_sol,
            EscalationPayload::CapRaise { new_cap_sol } => {
                let old = self.state.daily_cap_sol;
                self.state.daily_cap_sol = new_cap_sol;
                self.log.append(
                    &self.engine_identity,
                    AuditKind::CapChange,
                    &json!({
                        "escalation_id": escalation_id,
                        "approval_seq": approval_seq,
                        "old_cap_sol": old,
                        "new_cap_sol": new_cap_sol,
                    }),
                    clock,
                )?;
            }
            EscalationPayload::Resume => {
                let baseline = self.liquidity_usd();
                self.state.mode = Mode::Live;
                self.state.stoploss_armed = true;
                self.state.stoploss_tripped_at = None;
                self.state.stoploss_baseline_liquidity_usd = baseline;
                self.price_history.clear();
                self.liquidity_history.clear();
                self.observe_price(clock);
                self.log.append(
                    &self.engine_identity,
                    AuditKind::Resume,
                    &json!({
                        "escalation_id": escalation_id,
                        "approval_seq": approval_seq,
                        "baseline_liquidity_usd": baseline,
                    }),
                    clock,
                )?;
            }
        }
        Ok(record)
    }

    pub fn deny_escalation(
        &mut self,
        escalation_id: &str,
        approver: &str,
        rationale: &str,
        clock: CanonicalTimestamp,
    ) -> Result<EscalationRequest, GovernanceError> {
        self.book.deny(escalation_id, approver, rationale, clock, &mut self.log)
    }

    /// Recomputes state from genesis by folding the audit log.
    pub fn reconstruct(&self) -> Result<TraderPolicyState, FoldError> {
        fold_audit_log(&self.initial_state, &self.config, self.log.entries())
    }
}

impl PolicyGateway for Desk {
    fn submit(&mut self, action: &ActionRequest, clock: CanonicalTimestamp) -> ActionOutcome {
        if let Some(prior) = self.outcomes.get(&action.action_id) {
            return prior.clone();
        }
        let outcome = self.submit_fresh(action, clock).unwrap_or_else(|e| ActionOutcome::Rejected { reason: e.to_string() });
        self.outcomes.insert(action.action_id.clone(), outcome.clone());
        outcome
    }

    fn record_emission(&mut self, emission: &Emission, clock: CanonicalTimestamp) -> Result<u64, FabricError> {
        let actor = self.engine_identity.clone();
        Ok(self.log.append(&actor, AuditKind::Emission, &emission.to_document(), clock)?.seq)
    }
}

impl Desk {
    fn submit_fresh(&mut self, request: &ActionRequest, clock: CanonicalTimestamp) -> Result<ActionOutcome, DeskError> {
        match request.kind {
            ActionKind::Buy => {
                if self.program.is_some() {
                    return Ok(ActionOutcome::Rejected { reason: "a buy program is in flight".into() });
                }
                let buy_index = self.next_buy_index;
                let outcome =
                    self.execute_buy_slice(&request.action_id, buy_index, 0, 1, request.amount_sol, Some(request), clock)?;
                if matches!(outcome, ActionOutcome::Executed { .. }) {
                    self.next_buy_index += 1;
                }
                Ok(outcome)
            }
            ActionKind::Sell => {
                if request.amount_sol <= Decimal::ZERO {
                    return Ok(ActionOutcome::Rejected { reason: "amount must be positive".into() });
                }
                let mut action = self.proposed(ActionKind::Sell, request.wallet.as_ref());
                action.approval_ref = request.approval_ref.clone();
                action.on_behalf_of = request.on_behalf_of.clone();
                // BUY_ONLY is mandatory, so every sell ends here.
                let Verdict::Deny(rule) = check_constitution(&action, &self.constitution, &self.book) else {
                    unreachable!("constitution contains BUY_ONLY");
                };
                let audit_seq = self.deny(&request.action_id, &action, rule, clock)?;
                Ok(ActionOutcome::Denied { rule, audit_seq })
            }
            _ => Ok(ActionOutcome::Rejected {
                reason: format!("{:?} is only reachable through governance approval", request.kind),
            }),
        }
    }
}

#[cfg(test)]
mod tests;
