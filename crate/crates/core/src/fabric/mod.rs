//! Shared substrate: the canonical clock, window alignment, the hash-chained
//! audit log and the emission schema.

mod audit;
mod emission;
mod time;

pub use audit::{
    canonical_json, entry_hash, parse_log, read_log_file, verify_chain, AuditEntry, AuditKind,
    AuditLog, BreakReason, ChainVerdict, Digest, SharedAuditLog,
};
pub use emission::{
    validate_emission, Emission, SchemaRejection, SchemaRule, ValidationStatus, STATUS_FIELD,
};
pub use time::{window_of, CanonicalTimestamp, WindowId};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FabricError {
    #[error("window width must be positive, got {0}")]
    InvalidWindowWidth(i64),
    #[error("unparseable timestamp {0:?}")]
    BadTimestamp(String),
    #[error("audit payload is not serialisable: {0}")]
    UnserialisablePayload(String),
    #[error("malformed audit record on line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("audit chain broken at seq {0}")]
    BrokenChain(u64),
    #[error("audit log i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for FabricError {
    fn from(e: std::io::Error) -> Self {
        FabricError::Io(e.to_string())
    }
}
