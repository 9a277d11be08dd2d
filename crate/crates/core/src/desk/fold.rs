use rust_decimal::Decimal;
use serde::Deserialize;
use serde_json::Value;

use crate::fabric::{AuditEntry, AuditKind};
use crate::governance::EscalationPayload;
use crate::policy::{apply_ratchet, Mode, TraderPolicyConfig, TraderPolicyState};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FoldError {
    #[error("entry {seq} ({kind}) has an unreadable payload: {detail}")]
    BadPayload { seq: u64, kind: AuditKind, detail: String },
}

#[derive(Deserialize)]
struct SlicePayload {
    slice_index: usize,
    final_slice: bool,
    amount_sol: Decimal,
}

#[derive(Deserialize)]
struct ApprovalPayload {
    request: EscalationPayload,
}

#[derive(Deserialize)]
struct CapChangePayload {
    new_cap_sol: Decimal,
}

#[derive(Deserialize)]
struct ResumePayload {
    baseline_liquidity_usd: Decimal,
}

fn read<T: for<'de> Deserialize<'de>>(entry: &AuditEntry) -> Result<T, FoldError> {
    T::deserialize(&entry.payload).map_err(|e| FoldError::BadPayload {
        seq: entry.seq,
        kind: entry.kind,
        detail: e.to_string(),
    })
}

/// Rebuilds trader state from `initial` using only what the audit log
/// records. Every state-changing event has its own entry, so the fold needs
/// no access to the pool or the escalation book.
pub fn fold_audit_log(
    initial: &TraderPolicyState,
    config: &TraderPolicyConfig,
    entries: &[AuditEntry],
) -> Result<TraderPolicyState, FoldError> {
    let mut state = initial.clone();
    for entry in entries {
        match entry.kind {
            AuditKind::BuySlice => {
                let slice: SlicePayload = read(entry)?;
                state.charge(entry.timestamp, slice.amount_sol);
                if slice.slice_index == 0 {
                    state.buys_fired += 1;
                }
                state.buy_in_flight = !slice.final_slice;
                if slice.final_slice {
                    state.buys_completed += 1;
                    state.last_buy_completed_at = Some(entry.timestamp);
                    state = apply_ratchet(&state, config);
                }
            }
            AuditKind::StopLossTrip => {
                state.buy_in_flight = false;
                state.mode = Mode::Paused;
                state.stoploss_armed = false;
                state.stoploss_tripped_at = Some(entry.timestamp);
            }
            AuditKind::Approval => match read::<ApprovalPayload>(entry)?.request {
                EscalationPayload::LiveFlip => state.mode = Mode::Live,
                EscalationPayload::TopUp { top_up_sol } => state.wallet_balance_sol += top_up_sol,
                EscalationPayload::CapRaise { .. } | EscalationPayload::Resume => {}
            },
            AuditKind::CapChange => state.daily_cap_sol = read::<CapChangePayload>(entry)?.new_cap_sol,
            AuditKind::Resume => {
                let resume: ResumePayload = read(entry)?;
                state.mode = Mode::Live;
                state.stoploss_armed = true;
                state.stoploss_tripped_at = None;
                state.stoploss_baseline_liquidity_usd = resume.baseline_liquidity_usd;
            }
            AuditKind::EscalationRequest | AuditKind::Emission | AuditKind::Denial => {}
        }
    }
    Ok(state)
}

/// Count of ALLOW verdicts recorded for swap actions.
pub fn allow_verdicts(entries: &[AuditEntry]) -> usize {
    entries
        .iter()
        .filter(|e| e.kind == AuditKind::BuySlice && e.payload.get("verdict") == Some(&Value::from("ALLOW")))
        .count()
}
