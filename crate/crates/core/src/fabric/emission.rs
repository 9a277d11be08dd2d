//! Strict schema for run emissions. Consumers refuse anything that does not
//! validate here.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::CanonicalTimestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValidationStatus {
    Valid,
    Degraded,
    Fallback,
}

impl ValidationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationStatus::Valid => "VALID",
            ValidationStatus::Degraded => "DEGRADED",
            ValidationStatus::Fallback => "FALLBACK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "VALID" => Some(Self::Valid),
            "DEGRADED" => Some(Self::Degraded),
            "FALLBACK" => Some(Self::Fallback),
            _ => None,
        }
    }
}

pub const STATUS_FIELD: &str = "validationStatus";
const TOP_LEVEL_FIELDS: [&str; 4] = ["run_id", "produced_at", STATUS_FIELD, "body"];
const BODY_TIERS: [&str; 3] = ["REMOTE", "IN_PROCESS", "LEGACY"];

#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub run_id: String,
    pub produced_at: CanonicalTimestamp,
    pub validation_status: ValidationStatus,
    pub body: Map<String, Value>,
}

impl Emission {
    pub fn to_document(&self) -> Value {
        json!({
            "run_id": self.run_id,
            "produced_at": self.produced_at.secs(),
            STATUS_FIELD: self.validation_status.as_str(),
            "body": Value::Object(self.body.clone()),
        })
    }
}

/// Schema rules, checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaRule {
    DocumentIsObject,
    NoUnknownFields,
    RunIdString,
    ProducedAtEpochSeconds,
    StatusPresent,
    StatusClosedEnum,
    BodyIsObject,
    BodyTier,
    BodyDecision,
}

impl SchemaRule {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaRule::DocumentIsObject => "document_is_object",
            SchemaRule::NoUnknownFields => "no_unknown_fields",
            SchemaRule::RunIdString => "run_id_string",
            SchemaRule::ProducedAtEpochSeconds => "produced_at_epoch_seconds",
            SchemaRule::StatusPresent => "validation_status_present",
            SchemaRule::StatusClosedEnum => "validation_status_closed_enum",
            SchemaRule::BodyIsObject => "body_is_object",
            SchemaRule::BodyTier => "body_tier",
            SchemaRule::BodyDecision => "body_decision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SchemaRejection {
    pub rule: SchemaRule,
    pub detail: String,
}

impl fmt::Display for SchemaRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "emission rejected by rule {}: {}", self.rule.as_str(), self.detail)
    }
}

fn reject(rule: SchemaRule, detail: impl Into<String>) -> SchemaRejection {
    SchemaRejection { rule, detail: detail.into() }
}

/// Validates a raw JSON document against the emission schema.
///
/// Required: `run_id` (non-empty string), `produced_at` (non-negative integer
/// seconds), `validationStatus` (`VALID` | `DEGRADED` | `FALLBACK`), `body`
/// (object with string `tier` in `REMOTE` | `IN_PROCESS` | `LEGACY` and
/// string `decision`). No other top-level fields.
pub fn validate_emission(document: &Value) -> Result<Emission, SchemaRejection> {
    let obj = document
        .as_object()
        .ok_or_else(|| reject(SchemaRule::DocumentIsObject, "top level must be an object"))?;

    if let Some(extra) = obj.keys().find(|k| !TOP_LEVEL_FIELDS.contains(&k.as_str())) {
        return Err(reject(SchemaRule::NoUnknownFields, format!("unexpected field {extra:?}")));
    }

    let run_id = match obj.get("run_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(_) => return Err(reject(SchemaRule::RunIdString, "run_id must be a non-empty string")),
        None => return Err(reject(SchemaRule::RunIdString, "missing run_id")),
    };

    let produced_at = obj
        .get("produced_at")
        .ok_or_else(|| reject(SchemaRule::ProducedAtEpochSeconds, "missing produced_at"))?
        .as_u64()
        .ok_or_else(|| {
            reject(SchemaRule::ProducedAtEpochSeconds, "produced_at must be a non-negative integer")
        })?;

    let status = match obj.get(STATUS_FIELD) {
        None => return Err(reject(SchemaRule::StatusPresent, "missing validationStatus")),
        Some(Value::String(s)) => ValidationStatus::parse(s).ok_or_else(|| {
            reject(SchemaRule::StatusClosedEnum, format!("unknown validationStatus {s:?}"))
        })?,
        Some(other) => {
            return Err(reject(
                SchemaRule::StatusClosedEnum,
                format!("validationStatus must be a string, got {other}"),
            ))
        }
    };

    let body = match obj.get("body") {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(reject(SchemaRule::BodyIsObject, "body must be an object")),
        None => return Err(reject(SchemaRule::BodyIsObject, "missing body")),
    };

    match body.get("tier") {
        Some(Value::String(t)) if BODY_TIERS.contains(&t.as_str()) => {}
        Some(other) => return Err(reject(SchemaRule::BodyTier, format!("invalid body.tier {other}"))),
        None => return Err(reject(SchemaRule::BodyTier, "missing body.tier")),
    }
    match body.get("decision") {
        Some(Value::String(_)) => {}
        Some(_) => return Err(reject(SchemaRule::BodyDecision, "body.decision must be a string")),
        None => return Err(reject(SchemaRule::BodyDecision, "missing body.decision")),
    }

    Ok(Emission {
        run_id,
        produced_at: CanonicalTimestamp::from_secs(produced_at),
        validation_status: status,
        body,
    })
}
