use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::desk::fold_audit_log;
use crate::fabric::{verify_chain, AuditEntry, AuditKind};
use crate::policy::{TraderPolicyConfig, TraderPolicyState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Comparator {
    Eq,
    /// Relative tolerance: `|actual - expected| <= tolerance * |expected|`.
    Approx,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    /// JSON pointer into the evidence document.
    pub path: String,
    pub comparator: Comparator,
    pub expected: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub label: String,
    /// Evaluated when this mark is reached; at the end of the run if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_mark: Option<String>,
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub checkpoint: String,
    pub path: String,
    pub comparator: Comparator,
    pub expected: Value,
    pub actual: Option<Value>,
    pub passed: bool,
}

impl fmt::Display for AssertionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let actual = self.actual.as_ref().map_or_else(|| "<missing>".to_string(), Value::to_string);
        write!(
            f,
            "{} [{}] {} {:?} {} (actual {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.checkpoint,
            self.path,
            self.comparator,
            self.expected,
            actual
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub results: Vec<AssertionResult>,
}

impl CheckpointReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertionResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

fn as_decimal(v: &Value) -> Option<Decimal> {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return None,
    };
    Decimal::from_str(&text).or_else(|_| Decimal::from_scientific(&text)).ok()
}

fn compare(actual: &Value, comparator: Comparator, expected: &Value, tolerance: f64) -> bool {
    if let (Value::Array(a), Value::Array(e)) = (actual, expected) {
        return a.len() == e.len() && a.iter().zip(e).all(|(a, e)| compare(a, comparator, e, tolerance));
    }
    if let (Some(a), Some(e)) = (as_decimal(actual), as_decimal(expected)) {
        return match comparator {
            Comparator::Eq => a == e,
            Comparator::Le => a <= e,
            Comparator::Ge => a >= e,
            Comparator::Approx => {
                let tol = Decimal::from_f64_retain(tolerance).unwrap_or_default();
                (a - e).abs() <= tol * e.abs()
            }
        };
    }
    comparator == Comparator::Eq && actual == expected
}

pub fn evaluate_checkpoint(checkpoint: &Checkpoint, evidence: &Value) -> Vec<AssertionResult> {
    checkpoint
        .assertions
        .iter()
        .map(|a| {
            let actual = evidence.pointer(&a.path).cloned();
            let passed = actual
                .as_ref()
                .is_some_and(|v| compare(v, a.comparator, &a.expected, a.tolerance.unwrap_or(0.0)));
            AssertionResult {
                checkpoint: checkpoint.label.clone(),
                path: a.path.clone(),
                comparator: a.comparator,
                expected: a.expected.clone(),
                actual,
                passed,
            }
        })
        .collect()
}

fn dec(payload: &Value, key: &str) -> Decimal {
    payload.get(key).and_then(as_decimal).unwrap_or_default()
}

fn text<'a>(payload: &'a Value, key: &str) -> &'a str {
    payload.get(key).and_then(Value::as_str).unwrap_or_default()
}

/// Everything a checkpoint may assert on, derived only from the audit log
/// (and the starting state the log is folded from).
pub fn evidence_document(
    entries: &[AuditEntry],
    initial: &TraderPolicyState,
    config: &TraderPolicyConfig,
) -> Value {
    let engine = entries
        .iter()
        .find(|e| e.kind == AuditKind::BuySlice)
        .map(|e| e.actor.clone());

    let mut by_index: BTreeMap<u64, Value> = BTreeMap::new();
    let (mut slices, mut fired, mut completed) = (0u64, 0u64, 0u64);
    let mut daily: BTreeMap<String, Decimal> = BTreeMap::new();
    let mut lifetime = initial.lifetime_spend_sol;
    let mut level = initial.ratchet_level;
    let (mut crossing_spend, mut crossing_buy) = (Vec::new(), Vec::new());
    let mut at_thresholds = true;
    let mut violations = 0u64;

    let mut caps = vec![initial.daily_cap_sol];
    let mut all_gated = true;
    let mut approvals_by_seq: BTreeMap<u64, &AuditEntry> = BTreeMap::new();
    let mut by_kind: BTreeMap<String, u64> = BTreeMap::new();
    let mut all_rationale = true;

    let mut tripped = false;
    let mut slices_while_tripped = 0u64;
    let (mut trips, mut resumes) = (Vec::new(), Vec::new());
    let mut denials = 0u64;
    let mut emissions = 0u64;

    for e in entries {
        let p = &e.payload;
        match e.kind {
            AuditKind::BuySlice => {
                slices += 1;
                let buy = p.get("buy_index").and_then(Value::as_u64).unwrap_or_default();
                let slice = p.get("slice_index").and_then(Value::as_u64).unwrap_or_default();
                let final_slice = p.get("final_slice").and_then(Value::as_bool).unwrap_or_default();
                if slice == 0 {
                    fired += 1;
                    by_index.insert(
                        buy,
                        json!({ "price_usd": p["price_usd"], "started_at": e.timestamp.to_rfc3339() }),
                    );
                }
                lifetime = dec(p, "lifetime_spend_sol");
                daily.insert(e.timestamp.utc_date().format("%Y-%m-%d").to_string(), dec(p, "daily_spend_sol"));
                if final_slice {
                    completed += 1;
                    if let Some(Value::Object(m)) = by_index.get_mut(&buy) {
                        m.insert("completed_at".into(), Value::from(e.timestamp.to_rfc3339()));
                        m.insert("price_usd_after".into(), p["price_usd_after"].clone());
                    }
                    let recorded = p.get("ratchet_level").and_then(Value::as_u64).unwrap_or_default() as u32;
                    let crossed = config.ratchet_spend_thresholds.iter().filter(|t| **t <= lifetime).count() as u32;
                    if recorded != crossed.max(initial.ratchet_level) {
                        at_thresholds = false;
                    }
                    if recorded > level {
                        crossing_spend.push(Value::from(lifetime.to_string()));
                        crossing_buy.push(Value::from(buy));
                        level = recorded;
                    }
                }
                if tripped {
                    slices_while_tripped += 1;
                }
                if text(p, "verdict") != "ALLOW"
                    || text(p, "mode") != "LIVE"
                    || dec(p, "daily_spend_sol") > dec(p, "daily_cap_sol")
                {
                    violations += 1;
                }
            }
            AuditKind::Approval => {
                approvals_by_seq.insert(e.seq, e);
                *by_kind.entry(text(p, "escalation_kind").to_string()).or_default() += 1;
                if text(p, "rationale").trim().is_empty() {
                    all_rationale = false;
                    violations += 1;
                }
                if engine.as_deref() == Some(e.actor.as_str()) {
                    violations += 1;
                }
            }
            AuditKind::CapChange => {
                caps.push(dec(p, "new_cap_sol"));
                let gated = p
                    .get("approval_seq")
                    .and_then(Value::as_u64)
                    .and_then(|s| approvals_by_seq.get(&s))
                    .is_some_and(|a| {
                        text(&a.payload, "escalation_kind") == "CAP_RAISE"
                            && !text(&a.payload, "rationale").trim().is_empty()
                    });
                all_gated &= gated;
            }
            AuditKind::StopLossTrip => {
                tripped = true;
                let mut t = p.clone();
                t["at"] = Value::from(e.timestamp.to_rfc3339());
                t["drain_usd"] = Value::from((dec(p, "peak_liquidity_usd") - dec(p, "liquidity_usd")).to_string());
                trips.push(t);
            }
            AuditKind::Resume => {
                tripped = false;
                let mut r = p.clone();
                r["at"] = Value::from(e.timestamp.to_rfc3339());
                resumes.push(r);
            }
            AuditKind::Denial => denials += 1,
            AuditKind::Emission => emissions += 1,
            AuditKind::EscalationRequest => {}
        }
    }

    let boundary = by_kind.get("LIVE_FLIP").copied().unwrap_or(0) + by_kind.get("CAP_RAISE").copied().unwrap_or(0);
    let state = fold_audit_log(initial, config, entries)
        .ok()
        .map(|s| serde_json::to_value(s).expect("state serialises"));
    json!({
        "buys": {
            "fired": fired,
            "completed": completed,
            "slices": slices,
            "by_index": by_index.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<serde_json::Map<_, _>>(),
        },
        "spend": {
            "lifetime_sol": lifetime.to_string(),
            "daily": daily.into_iter().map(|(k, v)| (k, Value::from(v.to_string()))).collect::<serde_json::Map<_, _>>(),
        },
        "caps": {
            "sequence": caps.iter().map(|c| Value::from(c.to_string())).collect::<Vec<_>>(),
            "all_gated": all_gated,
        },
        "approvals": {
            "count": approvals_by_seq.len(),
            "by_kind": by_kind,
            "boundary_widening": boundary,
            "all_have_rationale": all_rationale,
        },
        "ratchet": {
            "crossing_spend_sol": crossing_spend,
            "crossing_buy_index": crossing_buy,
            "at_thresholds": at_thresholds,
        },
        "stoploss": {
            "trips": trips.len(),
            "trip": trips,
            "resumes": resumes,
            "slices_while_tripped": slices_while_tripped,
        },
        "role_contract": { "violations": violations },
        "denials": denials,
        "emissions": emissions,
        "state": state,
        "audit": { "entries": entries.len(), "chain_intact": verify_chain(entries).is_intact() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparators() {
        assert!(compare(&json!("3.000"), Comparator::Eq, &json!("3.0"), 0.0));
        assert!(!compare(&json!("3.0001"), Comparator::Eq, &json!("3.0"), 0.0));
        assert!(compare(&json!("6.59e-5"), Comparator::Approx, &json!("0.00006591"), 0.005));
        assert!(!compare(&json!("6.0e-5"), Comparator::Approx, &json!("0.00006591"), 0.005));
        assert!(compare(&json!(0), Comparator::Le, &json!(0), 0.0));
        assert!(compare(&json!(["1.0", "3.0"]), Comparator::Eq, &json!([1, 3]), 0.0));
        assert!(!compare(&json!(["1.0"]), Comparator::Eq, &json!([1, 3]), 0.0));
        assert!(compare(&json!(true), Comparator::Eq, &json!(true), 0.0));
        assert!(!compare(&json!(true), Comparator::Ge, &json!(true), 0.0));
    }

    #[test]
    fn missing_path_fails() {
        let cp = Checkpoint {
            label: "x".into(),
            at_mark: None,
            assertions: vec![Assertion {
                path: "/nope".into(),
                comparator: Comparator::Eq,
                expected: json!(1),
                tolerance: None,
            }],
        };
        let r = evaluate_checkpoint(&cp, &json!({}));
        assert!(!r[0].passed && r[0].actual.is_none());
    }
}
