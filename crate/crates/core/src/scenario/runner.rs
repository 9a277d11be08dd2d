use std::collections::HashMap;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::checkpoint::{evaluate_checkpoint, evidence_document, CheckpointReport};
use super::decision_log::decision_log_csv;
use super::{ScenarioError, ScenarioEvent, ScenarioFile};
use crate::amm::SwapSide;
use crate::desk::{ActionOutcome, Desk, DeskSnapshot, TickOutcome};
use crate::fabric::{AuditEntry, AuditLog, CanonicalTimestamp};
use crate::governance::{ApprovalRecord, EscalationPayload, EscalationRequest, EscalationStatus};
use crate::policy::TraderPolicyState;
use crate::runtime::{FailureInjector, RunInputs, Runtime, Tier, TierHealth};
use crate::sentiment::FusionConfig;
use crate::subnet::UpliftSwitch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunMode {
    /// Approvals and denials come from the timeline.
    Batch,
    /// Timeline approvals and denials are ignored; the loop holds at every
    /// pending escalation until a command resolves it.
    Interactive,
}

/// Operator input for an interactive run. With `at` set, the command takes
/// effect at that simulated instant, which lets an interactive run replay a
/// batch timeline exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    Approve {
        escalation_id: String,
        approver: String,
        rationale: String,
        #[serde(default)]
        at: Option<CanonicalTimestamp>,
    },
    Deny {
        escalation_id: String,
        approver: String,
        rationale: String,
        #[serde(default)]
        at: Option<CanonicalTimestamp>,
    },
}

impl Command {
    fn at(&self) -> Option<CanonicalTimestamp> {
        match self {
            Command::Approve { at, .. } | Command::Deny { at, .. } => *at,
        }
    }

    fn escalation_id(&self) -> &str {
        match self {
            Command::Approve { escalation_id, .. } | Command::Deny { escalation_id, .. } => escalation_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunEventKind {
    Tick { price_usd: Decimal, liquidity_usd: Decimal, outcome: TickOutcome },
    Slice { buy_index: u32, outcome: ActionOutcome },
    ExternalTrade { side: SwapSide, amount: Decimal, price_usd_after: Decimal },
    Escalation { request: EscalationRequest },
    Approved { record: ApprovalRecord },
    ApprovalRejected { escalation_id: String, reason: String },
    Denied { escalation_id: String },
    TierHealth { health: TierHealth },
    Emission { tier: Tier, audit_seq: Option<u64> },
    Mark { label: String },
    Blocked { pending: Vec<String> },
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub at: CanonicalTimestamp,
    #[serde(flatten)]
    pub kind: RunEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    Blocked,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Advanced(CanonicalTimestamp),
    Blocked,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub name: String,
    pub mode: RunMode,
    pub status: RunStatus,
    pub now: CanonicalTimestamp,
    pub desk: DeskSnapshot,
    pub pending_escalations: Vec<EscalationRequest>,
    pub marks: Vec<(String, CanonicalTimestamp)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub decision_log: String,
    pub audit_log: AuditLog,
    pub final_state: TraderPolicyState,
    pub report: CheckpointReport,
    pub snapshot: RunSnapshot,
    /// Timeline index, side and amount of every external trade executed.
    pub resolved_trades: Vec<(usize, SwapSide, Decimal)>,
}

struct RuntimeSlot {
    runtime: Runtime,
    every_seconds: u64,
    next_at: CanonicalTimestamp,
    runs: u64,
}

/// Single-threaded owner of a scenario's mutable state. Drive it with
/// [`step`](Self::step) or [`run_to_end`](Self::run_to_end).
pub struct ScenarioRunner {
    file: ScenarioFile,
    mode: RunMode,
    desk: Desk,
    cursor: usize,
    next_tick: CanonicalTimestamp,
    now: CanonicalTimestamp,
    open_instant: Option<CanonicalTimestamp>,
    started: bool,
    finished: bool,
    refs: HashMap<String, String>,
    scheduled: Vec<(CanonicalTimestamp, Command)>,
    health: TierHealth,
    runtime: Option<RuntimeSlot>,
    events: Vec<RunEvent>,
    marks: Vec<(String, CanonicalTimestamp)>,
    report: CheckpointReport,
    resolved_trades: Vec<(usize, SwapSide, Decimal)>,
}

impl ScenarioRunner {
    pub fn new(file: ScenarioFile, mode: RunMode) -> Result<Self, ScenarioError> {
        file.validate()?;
        let desk = Desk::new(file.desk_setup())?;
        let start = file.clock.start_at;
        let runtime = file.runtime.map(|rt| RuntimeSlot {
            runtime: Runtime {
                fusion: FusionConfig::default(),
                uplift: UpliftSwitch::new(3, 0.05),
                injector: FailureInjector::new(rt.remote_failure_probability, file.metadata.seed),
            },
            every_seconds: rt.every_seconds,
            next_at: start,
            runs: 0,
        });
        Ok(Self {
            mode,
            desk,
            cursor: 0,
            next_tick: start,
            now: start,
            open_instant: None,
            started: false,
            finished: false,
            refs: HashMap::new(),
            scheduled: Vec::new(),
            health: TierHealth::default(),
            runtime,
            events: Vec::new(),
            marks: Vec::new(),
            report: CheckpointReport::default(),
            resolved_trades: Vec::new(),
            file,
        })
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn desk(&self) -> &Desk {
        &self.desk
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn now(&self) -> CanonicalTimestamp {
        self.now
    }

    pub fn report(&self) -> &CheckpointReport {
        &self.report
    }

    pub fn status(&self) -> RunStatus {
        if self.finished {
            RunStatus::Finished
        } else if self.open_instant.is_some() && self.blocked() {
            RunStatus::Blocked
        } else {
            RunStatus::Running
        }
    }

    pub fn snapshot(&self) -> RunSnapshot {
        RunSnapshot {
            name: self.file.metadata.name.clone(),
            mode: self.mode,
            status: self.status(),
            now: self.now,
            desk: self.desk.snapshot(),
            pending_escalations: self.desk.escalations().pending().cloned().collect(),
            marks: self.marks.clone(),
        }
    }

    pub fn escalations(&self) -> Vec<EscalationRequest> {
        self.desk.escalations().all().cloned().collect()
    }

    pub fn decision_log_csv(&self) -> String {
        decision_log_csv(self.desk.audit_log().entries())
    }

    pub fn audit_entries(&self) -> &[AuditEntry] {
        self.desk.audit_log().entries()
    }

    /// Events produced since the last drain, in order.
    pub fn drain_events(&mut self) -> Vec<RunEvent> {
        std::mem::take(&mut self.events)
    }

    fn emit(&mut self, at: CanonicalTimestamp, kind: RunEventKind) {
        self.events.push(RunEvent { at, kind });
    }

    /// The earliest instant with anything to do, if it is within the clock.
    pub fn next_instant(&self) -> Option<CanonicalTimestamp> {
        if self.finished {
            return None;
        }
        if let Some(t) = self.open_instant {
            return Some(t);
        }
        let candidates = [
            self.file.timeline.get(self.cursor).map(|e| e.at),
            self.scheduled.iter().map(|(t, _)| *t).min(),
            self.desk.program().map(|p| p.slices[p.next_slice].fire_at),
            Some(self.next_tick),
            self.runtime.as_ref().map(|r| r.next_at),
        ];
        candidates.into_iter().flatten().min().filter(|t| *t <= self.file.clock.end_at)
    }

    fn blocked(&self) -> bool {
        self.mode == RunMode::Interactive
            && self
                .desk
                .escalations()
                .pending()
                .any(|r| !self.scheduled.iter().any(|(_, c)| c.escalation_id() == r.id))
    }

    fn pending_ids(&self) -> Vec<String> {
        self.desk.escalations().pending().map(|r| r.id.clone()).collect()
    }

    /// Queues or applies an operator command. Commands without a timestamp
    /// apply at the instant the run is held at.
    pub fn submit_command(&mut self, command: Command) -> Result<(), ScenarioError> {
        let id = command.escalation_id();
        match self.desk.escalations().get(id) {
            None => return Err(ScenarioError::Command(format!("unknown escalation {id}"))),
            Some(r) if r.status != EscalationStatus::Pending => {
                return Err(ScenarioError::Command(format!("escalation {id} is {}", r.status)));
            }
            Some(_) => {}
        }
        if self.scheduled.iter().any(|(_, c)| c.escalation_id() == id) {
            return Err(ScenarioError::Command(format!("escalation {id} already has a queued decision")));
        }
        let floor = self.open_instant.unwrap_or(if self.started { self.now + 1 } else { self.file.clock.start_at });
        match command.at() {
            Some(at) if at < floor => Err(ScenarioError::Command(format!("{at} is in the simulated past"))),
            Some(at) if at > self.file.clock.end_at => Err(ScenarioError::Command(format!("{at} is after the run ends"))),
            Some(at) if Some(at) == self.open_instant => self.apply(&command, at),
            Some(at) => {
                self.scheduled.push((at, command));
                Ok(())
            }
            None => {
                let at = self.open_instant.unwrap_or(self.now);
                self.apply(&command, at)
            }
        }
    }

    fn apply(&mut self, command: &Command, at: CanonicalTimestamp) -> Result<(), ScenarioError> {
        let result = match command {
            Command::Approve { escalation_id, approver, rationale, .. } => {
                self.approve(escalation_id, approver, rationale, at)
            }
            Command::Deny { escalation_id, approver, rationale, .. } => self.deny(escalation_id, approver, rationale, at),
        };
        result.map_err(ScenarioError::Command)
    }

    /// Failures are reported as events as well as returned; a rejected
    /// approval never stops a run.
    fn approve(&mut self, id: &str, approver: &str, rationale: &str, at: CanonicalTimestamp) -> Result<(), String> {
        match self.desk.approve(id, approver, rationale, at) {
            Ok(record) => {
                self.emit(at, RunEventKind::Approved { record });
                Ok(())
            }
            Err(e) => {
                let reason = e.to_string();
                self.emit(at, RunEventKind::ApprovalRejected { escalation_id: id.into(), reason: reason.clone() });
                Err(reason)
            }
        }
    }

    fn deny(&mut self, id: &str, approver: &str, rationale: &str, at: CanonicalTimestamp) -> Result<(), String> {
        match self.desk.deny_escalation(id, approver, rationale, at) {
            Ok(_) => {
                self.emit(at, RunEventKind::Denied { escalation_id: id.into() });
                Ok(())
            }
            Err(e) => {
                let reason = e.to_string();
                self.emit(at, RunEventKind::ApprovalRejected { escalation_id: id.into(), reason: reason.clone() });
                Err(reason)
            }
        }
    }

    fn request(&mut self, reference: &str, payload: EscalationPayload, by: &str, at: CanonicalTimestamp) -> Result<(), ScenarioError> {
        let request = self
            .desk
            .request_escalation(payload, by, at)
            .map_err(|e| ScenarioError::Invalid(format!("escalation {reference}: {e}")))?;
        self.refs.insert(reference.to_string(), request.id.clone());
        self.emit(at, RunEventKind::Escalation { request });
        Ok(())
    }

    fn timeline_phase(&mut self, t: CanonicalTimestamp) -> Result<(), ScenarioError> {
        while let Some(ev) = self.file.timeline.get(self.cursor).filter(|e| e.at == t) {
            let index = self.cursor;
            let event = ev.event.clone();
            self.cursor += 1;
            match event {
                ScenarioEvent::ExternalTrade { side, amount } => self.external(index, side, amount, t)?,
                ScenarioEvent::ExternalTradeToPrice { target_price_usd } => {
                    let target = target_price_usd / self.file.metadata.sol_usd;
                    let (side, amount) = self.desk.pool().trade_to_spot(target).map_err(crate::desk::DeskError::from)?;
                    self.external(index, side, amount, t)?;
                }
                ScenarioEvent::TopUp { reference, sol, requested_by } => {
                    self.request(&reference, EscalationPayload::TopUp { top_up_sol: sol }, &requested_by, t)?;
                }
                ScenarioEvent::EscalationRequest { reference, request, requested_by } => {
                    self.request(&reference, request, &requested_by, t)?;
                }
                ScenarioEvent::Approval { escalation_ref, approver, rationale } => {
                    if self.mode == RunMode::Batch {
                        let id = self.resolve(&escalation_ref)?;
                        let _ = self.approve(&id, &approver, &rationale, t);
                    }
                }
                ScenarioEvent::Denial { escalation_ref, approver, rationale } => {
                    if self.mode == RunMode::Batch {
                        let id = self.resolve(&escalation_ref)?;
                        let _ = self.deny(&id, &approver, &rationale, t);
                    }
                }
                ScenarioEvent::TierHealth(health) => {
                    self.health = health;
                    self.emit(t, RunEventKind::TierHealth { health });
                }
                ScenarioEvent::Mark { label } => self.mark(label, t),
            }
        }
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.scheduled).into_iter().partition(|(at, _)| *at == t);
        self.scheduled = later;
        for (_, command) in due {
            let _ = self.apply(&command, t);
        }
        Ok(())
    }

    fn resolve(&self, reference: &str) -> Result<String, ScenarioError> {
        self.refs
            .get(reference)
            .cloned()
            .ok_or_else(|| ScenarioError::UnknownEscalation { index: self.cursor - 1, reference: reference.into() })
    }

    fn external(&mut self, index: usize, side: SwapSide, amount: Decimal, t: CanonicalTimestamp) -> Result<(), ScenarioError> {
        self.desk.external_trade(side, amount, t)?;
        self.resolved_trades.push((index, side, amount));
        let price_usd_after = self.desk.spot_price_usd();
        self.emit(t, RunEventKind::ExternalTrade { side, amount, price_usd_after });
        Ok(())
    }

    fn mark(&mut self, label: String, t: CanonicalTimestamp) {
        self.marks.push((label.clone(), t));
        self.emit(t, RunEventKind::Mark { label: label.clone() });
        let evidence = self.evidence();
        let results: Vec<_> = self
            .file
            .checkpoints
            .iter()
            .filter(|c| c.at_mark.as_deref() == Some(label.as_str()))
            .flat_map(|c| evaluate_checkpoint(c, &evidence))
            .collect();
        self.report.results.extend(results);
    }

    pub fn evidence(&self) -> serde_json::Value {
        evidence_document(self.desk.audit_log().entries(), self.desk.initial_state(), self.desk.config())
    }

    fn rest_phase(&mut self, t: CanonicalTimestamp) -> Result<(), ScenarioError> {
        while let Some(p) = self.desk.program().filter(|p| p.slices[p.next_slice].fire_at <= t) {
            let buy_index = p.buy_index;
            if let Some(outcome) = self.desk.run_slice(buy_index, t)? {
                self.emit(t, RunEventKind::Slice { buy_index, outcome });
            }
        }
        if self.next_tick == t {
            let outcome = self.desk.tick(t)?;
            self.next_tick = t + self.file.clock.tick_seconds;
            let (price_usd, liquidity_usd) = (self.desk.spot_price_usd(), self.desk.liquidity_usd());
            self.emit(t, RunEventKind::Tick { price_usd, liquidity_usd, outcome });
        }
        if self.runtime.as_ref().is_some_and(|r| r.next_at == t) {
            self.runtime_run(t);
        }
        Ok(())
    }

    fn runtime_run(&mut self, t: CanonicalTimestamp) {
        let baseline = self.desk.state().stoploss_baseline_liquidity_usd;
        let liquidity = self.desk.liquidity_usd();
        let drawdown = if baseline.is_zero() { 0.0 } else { (Decimal::ONE - liquidity / baseline).to_f64().unwrap_or(0.0) };
        let slot = self.runtime.as_mut().expect("checked by caller");
        slot.runs += 1;
        let inputs = RunInputs {
            run_id: format!("{}-run-{}", self.file.metadata.name, slot.runs),
            at: t,
            text: String::new(),
            onchain_flow: (-drawdown).clamp(-1.0, 1.0),
            grey_feed: 0.0,
            standalone_p: drawdown.clamp(0.0, 1.0),
            subnet_p: None,
            proposed_action: None,
        };
        slot.next_at = t + slot.every_seconds;
        let record = slot.runtime.execute_run(&mut self.desk, &inputs, self.health);
        self.emit(t, RunEventKind::Emission { tier: record.tier_used, audit_seq: record.emission_seq });
    }

    /// Processes one simulated instant, or resumes one that was held.
    pub fn step(&mut self) -> Result<StepStatus, ScenarioError> {
        if let Some(t) = self.open_instant {
            if self.blocked() {
                return Ok(StepStatus::Blocked);
            }
            self.open_instant = None;
            self.rest_phase(t)?;
            return Ok(StepStatus::Advanced(t));
        }
        let Some(t) = self.next_instant() else {
            if !self.finished {
                self.finish();
            }
            return Ok(StepStatus::Finished);
        };
        self.now = t;
        self.started = true;
        self.timeline_phase(t)?;
        if self.blocked() {
            self.open_instant = Some(t);
            let pending = self.pending_ids();
            self.emit(t, RunEventKind::Blocked { pending });
            return Ok(StepStatus::Blocked);
        }
        self.rest_phase(t)?;
        Ok(StepStatus::Advanced(t))
    }

    fn finish(&mut self) {
        self.finished = true;
        let evidence = self.evidence();
        let results: Vec<_> = self
            .file
            .checkpoints
            .iter()
            .filter(|c| c.at_mark.is_none())
            .flat_map(|c| evaluate_checkpoint(c, &evidence))
            .collect();
        self.report.results.extend(results);
        let end = self.file.clock.end_at;
        self.emit(end, RunEventKind::Finished);
    }

    /// Processes every instant strictly before `t`.
    pub fn run_until(&mut self, t: CanonicalTimestamp) -> Result<StepStatus, ScenarioError> {
        while self.next_instant().is_some_and(|n| n < t) {
            if self.step()? == StepStatus::Blocked {
                return Ok(StepStatus::Blocked);
            }
            self.events.clear();
        }
        Ok(StepStatus::Advanced(self.now))
    }

    /// Steps until the run finishes or blocks, discarding events.
    pub fn run_to_end(&mut self) -> Result<StepStatus, ScenarioError> {
        loop {
            let status = self.step()?;
            self.events.clear();
            if !matches!(status, StepStatus::Advanced(_)) {
                return Ok(status);
            }
        }
    }

    pub fn into_output(self) -> RunOutput {
        let snapshot = self.snapshot();
        let decision_log = self.decision_log_csv();
        RunOutput {
            decision_log,
            final_state: self.desk.state().clone(),
            audit_log: self.desk.audit_log().clone(),
            report: self.report,
            snapshot,
            resolved_trades: self.resolved_trades,
        }
    }
}

/// Plays a scenario with timeline approvals to completion.
pub fn run_batch(file: ScenarioFile) -> Result<RunOutput, ScenarioError> {
    let mut runner = ScenarioRunner::new(file, RunMode::Batch)?;
    runner.run_to_end()?;
    Ok(runner.into_output())
}
