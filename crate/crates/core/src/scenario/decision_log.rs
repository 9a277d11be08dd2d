use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fabric::{AuditEntry, AuditKind};

pub const DECISION_LOG_HEADER: &str = "ts_utc,buy_index,slice_index,price_usd,bottom_tier_usd,ratchet_level,slice_sol,daily_spend_sol,lifetime_spend_sol,wallet_sol,mode";

/// One executed slice. Decimal fields keep the audit log's exact text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub ts_utc: String,
    pub buy_index: u64,
    pub slice_index: u64,
    pub price_usd: String,
    pub bottom_tier_usd: String,
    pub ratchet_level: u64,
    pub slice_sol: String,
    pub daily_spend_sol: String,
    pub lifetime_spend_sol: String,
    pub wallet_sol: String,
    pub mode: String,
}

fn text(payload: &Value, key: &str) -> String {
    match payload.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

fn int(payload: &Value, key: &str) -> u64 {
    payload.get(key).and_then(Value::as_u64).unwrap_or_default()
}

/// The decision log is a projection of the audit log: one row per
/// BUY_SLICE entry, in seq order.
pub fn decision_rows(entries: &[AuditEntry]) -> Vec<DecisionRow> {
    entries
        .iter()
        .filter(|e| e.kind == AuditKind::BuySlice)
        .map(|e| {
            let p = &e.payload;
            DecisionRow {
                ts_utc: e.timestamp.to_rfc3339(),
                buy_index: int(p, "buy_index"),
                slice_index: int(p, "slice_index"),
                price_usd: text(p, "price_usd"),
                bottom_tier_usd: text(p, "bottom_tier_usd"),
                ratchet_level: int(p, "ratchet_level"),
                slice_sol: text(p, "amount_sol"),
                daily_spend_sol: text(p, "daily_spend_sol"),
                lifetime_spend_sol: text(p, "lifetime_spend_sol"),
                wallet_sol: text(p, "wallet_sol"),
                mode: text(p, "mode"),
            }
        })
        .collect()
}

pub fn decision_log_csv(entries: &[AuditEntry]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(DECISION_LOG_HEADER.split(',')).expect("in-memory write");
    for row in decision_rows(entries) {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
