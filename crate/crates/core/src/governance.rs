//! Escalation requests, human approvals and denials.
//!
//! The book tracks request status and approval records and writes the
//! ESCALATION_REQUEST and DENIAL entries itself. Approvals are driven by the
//! desk, which owns the policy state that an approval mutates, so that the
//! APPROVAL entry and the mutation land in the same step.

use std::collections::BTreeMap;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fabric::{AuditKind, AuditLog, CanonicalTimestamp, FabricError};
use crate::policy::{GovernanceView, RuleId};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GovernanceError {
    #[error("no escalation with id {0}")]
    UnknownEscalation(String),
    #[error("escalation {id} is already {status}")]
    NotPending { id: String, status: EscalationStatus },
    #[error("a cap raise needs a non-empty rationale")]
    EmptyRationale,
    #[error("the engine cannot approve its own escalation")]
    SelfApproval,
    #[error("malformed escalation payload: {0}")]
    MalformedPayload(String),
    #[error("resume is only possible from the stop-loss-paused state")]
    NotStopLossPaused,
    #[error("denied by constitution rule {0}")]
    Constitution(RuleId),
    #[error(transparent)]
    Audit(#[from] FabricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EscalationKind {
    LiveFlip,
    CapRaise,
    Resume,
    TopUp,
}

impl EscalationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EscalationKind::LiveFlip => "LIVE_FLIP",
            EscalationKind::CapRaise => "CAP_RAISE",
            EscalationKind::Resume => "RESUME",
            EscalationKind::TopUp => "TOP_UP",
        }
    }
}

impl fmt::Display for EscalationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EscalationPayload {
    LiveFlip,
    CapRaise { new_cap_sol: Decimal },
    Resume,
    TopUp { top_up_sol: Decimal },
}

impl EscalationPayload {
    pub fn kind(&self) -> EscalationKind {
        match self {
            EscalationPayload::LiveFlip => EscalationKind::LiveFlip,
            EscalationPayload::CapRaise { .. } => EscalationKind::CapRaise,
            EscalationPayload::Resume => EscalationKind::Resume,
            EscalationPayload::TopUp { .. } => EscalationKind::TopUp,
        }
    }

    /// Builds a payload from a kind and an untyped body, as received from a
    /// scenario file or the service.
    pub fn from_parts(kind: EscalationKind, body: &Value) -> Result<Self, GovernanceError> {
        let mut doc = match body {
            Value::Null => serde_json::Map::new(),
            Value::Object(m) => m.clone(),
            other => return Err(GovernanceError::MalformedPayload(format!("expected object, got {other}"))),
        };
        doc.insert("kind".into(), Value::String(kind.as_str().into()));
        let payload: EscalationPayload = serde_json::from_value(Value::Object(doc))
            .map_err(|e| GovernanceError::MalformedPayload(e.to_string()))?;
        payload.validate()?;
        Ok(payload)
    }

    pub fn validate(&self) -> Result<(), GovernanceError> {
        match self {
            EscalationPayload::CapRaise { new_cap_sol } if *new_cap_sol <= Decimal::ZERO => {
                Err(GovernanceError::MalformedPayload("new_cap_sol must be positive".into()))
            }
            EscalationPayload::TopUp { top_up_sol } if *top_up_sol <= Decimal::ZERO => {
                Err(GovernanceError::MalformedPayload("top_up_sol must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EscalationStatus {
    Pending,
    Approved,
    Denied,
}

impl fmt::Display for EscalationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EscalationStatus::Pending => "PENDING",
            EscalationStatus::Approved => "APPROVED",
            EscalationStatus::Denied => "DENIED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationRequest {
    /// Doubles as the issue-thread reference.
    pub id: String,
    pub payload: EscalationPayload,
    pub requested_by: String,
    pub requested_at: CanonicalTimestamp,
    pub status: EscalationStatus,
}

impl EscalationRequest {
    pub fn kind(&self) -> EscalationKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRecord {
    pub escalation_id: String,
    pub approver: String,
    pub rationale: String,
    pub approved_at: CanonicalTimestamp,
    /// Seq of the APPROVAL audit entry.
    pub audit_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationBook {
    requests: BTreeMap<u64, EscalationRequest>,
    approvals: BTreeMap<String, ApprovalRecord>,
}

fn numeric_id(id: &str) -> Option<u64> {
    id.strip_prefix("esc-")?.parse().ok()
}

impl EscalationBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a PENDING request and appends its ESCALATION_REQUEST entry.
    pub fn request(
        &mut self,
        payload: EscalationPayload,
        requested_by: &str,
        clock: CanonicalTimestamp,
        log: &mut AuditLog,
    ) -> Result<EscalationRequest, GovernanceError> {
        payload.validate()?;
        let n = self.requests.keys().next_back().map_or(1, |k| k + 1);
        let request = EscalationRequest {
            id: format!("esc-{n}"),
            payload,
            requested_by: requested_by.to_string(),
            requested_at: clock,
            status: EscalationStatus::Pending,
        };
        log.append(
            requested_by,
            AuditKind::EscalationRequest,
            &json!({ "escalation_id": request.id, "request": request.payload }),
            clock,
        )?;
        self.requests.insert(n, request.clone());
        Ok(request)
    }

    pub fn get(&self, id: &str) -> Option<&EscalationRequest> {
        self.requests.get(&numeric_id(id)?)
    }

    pub fn all(&self) -> impl Iterator<Item = &EscalationRequest> {
        self.requests.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &EscalationRequest> {
        self.all().filter(|r| r.status == EscalationStatus::Pending)
    }

    pub fn approval(&self, id: &str) -> Option<&ApprovalRecord> {
        self.approvals.get(id)
    }

    /// Checks that do not depend on policy state: the request exists and is
    /// pending, the approver is not the engine, and a cap raise carries a
    /// rationale.
    pub fn check_approvable(
        &self,
        id: &str,
        approver: &str,
        rationale: &str,
        engine_identity: &str,
    ) -> Result<&EscalationRequest, GovernanceError> {
        let request = self.pending_request(id)?;
        if approver == engine_identity {
            return Err(GovernanceError::SelfApproval);
        }
        if request.kind() == EscalationKind::CapRaise && rationale.trim().is_empty() {
            return Err(GovernanceError::EmptyRationale);
        }
        Ok(request)
    }

    /// A view that treats `id` as already approved with `rationale`, used to
    /// run the constitution before the approval is committed.
    pub fn with_candidate<'a>(&'a self, id: &'a str, rationale: &'a str) -> CandidateView<'a> {
        CandidateView { book: self, id, rationale }
    }

    /// Marks a request approved. The caller has already appended the
    /// APPROVAL entry at `audit_seq`.
    pub fn commit_approval(
        &mut self,
        id: &str,
        approver: &str,
        rationale: &str,
        clock: CanonicalTimestamp,
        audit_seq: u64,
    ) -> Result<ApprovalRecord, GovernanceError> {
        self.pending_request(id)?;
        let key = numeric_id(id).expect("pending request has a numeric id");
        self.requests.get_mut(&key).expect("exists").status = EscalationStatus::Approved;
        let record = ApprovalRecord {
            escalation_id: id.to_string(),
            approver: approver.to_string(),
            rationale: rationale.to_string(),
            approved_at: clock,
            audit_seq,
        };
        self.approvals.insert(id.to_string(), record.clone());
        Ok(record)
    }

    /// PENDING to DENIED with a DENIAL entry. No policy state changes.
    pub fn deny(
        &mut self,
        id: &str,
        approver: &str,
        rationale: &str,
        clock: CanonicalTimestamp,
        log: &mut AuditLog,
    ) -> Result<EscalationRequest, GovernanceError> {
        let request = self.pending_request(id)?;
        log.append(
            approver,
            AuditKind::Denial,
            &json!({
                "escalation_id": id,
                "escalation_kind": request.kind(),
                "approver": approver,
                "rationale": rationale,
            }),
            clock,
        )?;
        let key = numeric_id(id).expect("pending request has a numeric id");
        let stored = self.requests.get_mut(&key).expect("exists");
        stored.status = EscalationStatus::Denied;
        Ok(stored.clone())
    }

    fn pending_request(&self, id: &str) -> Result<&EscalationRequest, GovernanceError> {
        let request = self.get(id).ok_or_else(|| GovernanceError::UnknownEscalation(id.to_string()))?;
        if request.status != EscalationStatus::Pending {
            return Err(GovernanceError::NotPending { id: id.to_string(), status: request.status });
        }
        Ok(request)
    }
}

impl GovernanceView for EscalationBook {
    fn approved(&self, escalation_id: &str) -> Option<(EscalationKind, &str)> {
        let record = self.approvals.get(escalation_id)?;
        let request = self.get(escalation_id)?;
        Some((request.kind(), record.rationale.as_str()))
    }
}

pub struct CandidateView<'a> {
    book: &'a EscalationBook,
    id: &'a str,
    rationale: &'a str,
}

impl GovernanceView for CandidateView<'_> {
    fn approved(&self, escalation_id: &str) -> Option<(EscalationKind, &str)> {
        if escalation_id == self.id {
            let request = self.book.get(escalation_id)?;
            return Some((request.kind(), self.rationale));
        }
        self.book.approved(escalation_id)
    }
}
