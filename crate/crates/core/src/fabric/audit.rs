//! Append-only, SHA-256 hash-chained audit log.
//!
//! Each entry commits to its predecessor through `prev_hash`, so editing any
//! persisted field of any entry breaks verification at or before that entry.
//! The on-disk form is one canonical JSON record per line.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};

use super::{CanonicalTimestamp, FabricError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditKind {
    BuySlice,
    EscalationRequest,
    Approval,
    StopLossTrip,
    Resume,
    CapChange,
    Emission,
    Denial,
}

impl AuditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditKind::BuySlice => "BUY_SLICE",
            AuditKind::EscalationRequest => "ESCALATION_REQUEST",
            AuditKind::Approval => "APPROVAL",
            AuditKind::StopLossTrip => "STOP_LOSS_TRIP",
            AuditKind::Resume => "RESUME",
            AuditKind::CapChange => "CAP_CHANGE",
            AuditKind::Emission => "EMISSION",
            AuditKind::Denial => "DENIAL",
        }
    }
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 32-byte SHA-256 digest, hex encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: CanonicalTimestamp,
    pub actor: String,
    pub kind: AuditKind,
    pub payload: Value,
    pub prev_hash: Digest,
    pub this_hash: Digest,
}

impl AuditEntry {
    /// Recomputes the digest this entry should carry.
    pub fn expected_hash(&self) -> Digest {
        entry_hash(
            self.seq,
            self.timestamp,
            &self.actor,
            self.kind,
            &self.payload,
            &self.prev_hash,
        )
    }

    /// The canonical one-line record written to the log file.
    pub fn to_record(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("audit entries always serialise"))
    }
}

/// Sorted keys, no insignificant whitespace.
///
/// `serde_json::Map` is ordered by key unless the `preserve_order` feature is
/// enabled, which this crate never does.
pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).expect("serde_json::Value always serialises")
}

fn put_field(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_be_bytes());
    hasher.update(bytes);
}

/// H(seq ‖ timestamp ‖ actor ‖ kind ‖ canonical-payload ‖ prev_hash), with
/// variable-length fields length-prefixed.
pub fn entry_hash(
    seq: u64,
    timestamp: CanonicalTimestamp,
    actor: &str,
    kind: AuditKind,
    payload: &Value,
    prev_hash: &Digest,
) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(seq.to_be_bytes());
    hasher.update(timestamp.secs().to_be_bytes());
    put_field(&mut hasher, actor.as_bytes());
    put_field(&mut hasher, kind.as_str().as_bytes());
    put_field(&mut hasher, canonical_json(payload).as_bytes());
    hasher.update(prev_hash.0);
    Digest(hasher.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakReason {
    SeqOutOfOrder,
    PrevHashMismatch,
    HashMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChainVerdict {
    Intact,
    /// `seq` is the position of the first entry that fails.
    Broken { seq: u64, reason: BreakReason },
}

impl ChainVerdict {
    pub fn is_intact(&self) -> bool {
        matches!(self, ChainVerdict::Intact)
    }
}

pub fn verify_chain(entries: &[AuditEntry]) -> ChainVerdict {
    let mut prev = Digest::ZERO;
    for (pos, entry) in entries.iter().enumerate() {
        let pos = pos as u64;
        if entry.seq != pos {
            return ChainVerdict::Broken { seq: pos, reason: BreakReason::SeqOutOfOrder };
        }
        if entry.prev_hash != prev {
            return ChainVerdict::Broken { seq: pos, reason: BreakReason::PrevHashMismatch };
        }
        if entry.expected_hash() != entry.this_hash {
            return ChainVerdict::Broken { seq: pos, reason: BreakReason::HashMismatch };
        }
        prev = entry.this_hash;
    }
    ChainVerdict::Intact
}

/// In-memory audit log with an optional newline-delimited file sink.
#[derive(Default)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
    sink: Option<BufWriter<File>>,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog")
            .field("len", &self.entries.len())
            .field("file_backed", &self.sink.is_some())
            .finish()
    }
}

impl Clone for AuditLog {
    /// Clones the entries only; the clone is never file-backed.
    fn clone(&self) -> Self {
        Self { entries: self.entries.clone(), sink: None }
    }
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed log. Existing records are loaded and
    /// must verify before new entries are appended.
    pub fn open(path: &Path) -> Result<Self, FabricError> {
        let entries = if path.exists() { read_log_file(path)? } else { Vec::new() };
        if let ChainVerdict::Broken { seq, .. } = verify_chain(&entries) {
            return Err(FabricError::BrokenChain(seq));
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { entries, sink: Some(BufWriter::new(file)) })
    }

    pub fn from_entries(entries: Vec<AuditEntry>) -> Self {
        Self { entries, sink: None }
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&AuditEntry> {
        self.entries.last()
    }

    pub fn since(&self, seq: u64) -> &[AuditEntry] {
        let start = (seq as usize).min(self.entries.len());
        &self.entries[start..]
    }

    pub fn append<P: Serialize>(
        &mut self,
        actor: &str,
        kind: AuditKind,
        payload: &P,
        clock: CanonicalTimestamp,
    ) -> Result<&AuditEntry, FabricError> {
        let payload = serde_json::to_value(payload)
            .map_err(|e| FabricError::UnserialisablePayload(e.to_string()))?;
        let seq = self.entries.len() as u64;
        let prev_hash = self.entries.last().map(|e| e.this_hash).unwrap_or(Digest::ZERO);
        let this_hash = entry_hash(seq, clock, actor, kind, &payload, &prev_hash);
        let entry = AuditEntry {
            seq,
            timestamp: clock,
            actor: actor.to_string(),
            kind,
            payload,
            prev_hash,
            this_hash,
        };
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", entry.to_record())?;
            sink.flush()?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn verify(&self) -> ChainVerdict {
        verify_chain(&self.entries)
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_record());
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), FabricError> {
        std::fs::write(path, self.to_ndjson())?;
        Ok(())
    }
}

pub fn parse_log(text: &str) -> Result<Vec<AuditEntry>, FabricError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FabricError::MalformedRecord {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn read_log_file(path: &Path) -> Result<Vec<AuditEntry>, FabricError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| FabricError::MalformedRecord {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(entries)
}

/// A log shared between one writer and any number of readers.
///
/// Appends take the write lock, so they are serialised; readers always see a
/// consistent prefix of the chain.
#[derive(Debug, Clone, Default)]
pub struct SharedAuditLog(Arc<RwLock<AuditLog>>);

impl SharedAuditLog {
    pub fn new(log: AuditLog) -> Self {
        Self(Arc::new(RwLock::new(log)))
    }

    pub fn append<P: Serialize>(
        &self,
        actor: &str,
        kind: AuditKind,
        payload: &P,
        clock: CanonicalTimestamp,
    ) -> Result<AuditEntry, FabricError> {
        let mut log = self.0.write().expect("audit lock poisoned");
        log.append(actor, kind, payload, clock).cloned()
    }

    pub fn since(&self, seq: u64) -> Vec<AuditEntry> {
        self.0.read().expect("audit lock poisoned").since(seq).to_vec()
    }

    pub fn len(&self) -> usize {
        self.0.read().expect("audit lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn verify(&self) -> ChainVerdict {
        self.0.read().expect("audit lock poisoned").verify()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_log(n: usize) -> AuditLog {
        let mut log = AuditLog::new();
        for i in 0..n {
            log.append(
                "trader",
                AuditKind::BuySlice,
                &json!({ "i": i, "amount_sol": "0.02" }),
                CanonicalTimestamp::from_secs(1_000 + i as u64),
            )
            .unwrap();
        }
        log
    }

    /// Independent re-statement of the chain rule, hashing a differently
    /// assembled byte string than `entry_hash` would if it had a bug in field
    /// ordering.
    fn oracle_hash(e: &AuditEntry) -> [u8; 32] {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&e.seq.to_be_bytes());
        bytes.extend_from_slice(&e.timestamp.secs().to_be_bytes());
        for field in [
            e.actor.clone(),
            e.kind.as_str().to_string(),
            serde_json::to_string(&e.payload).unwrap(),
        ] {
            bytes.extend_from_slice(&(field.len() as u64).to_be_bytes());
            bytes.extend_from_slice(field.as_bytes());
        }
        bytes.extend_from_slice(&e.prev_hash.0);
        Sha256::digest(&bytes).into()
    }

    #[test]
    fn genesis_entry() {
        let log = sample_log(1);
        let e = &log.entries()[0];
        assert_eq!(e.seq, 0);
        assert_eq!(e.prev_hash, Digest::ZERO);
        assert!(log.verify().is_intact());
    }

    #[test]
    fn empty_log_verifies() {
        assert!(verify_chain(&[]).is_intact());
    }

    #[test]
    fn hash_matches_oracle() {
        let log = sample_log(5);
        for e in log.entries() {
            assert_eq!(oracle_hash(e), e.this_hash.0);
        }
    }

    #[test]
    fn payload_tamper_detected_at_its_seq() {
        let mut entries = sample_log(5).entries().to_vec();
        entries[3].payload = json!({ "i": 3, "amount_sol": "0.03" });
        // Oracle: the stored hash no longer matches the recomputed one at 3.
        assert_ne!(oracle_hash(&entries[3]), entries[3].this_hash.0);
        assert_eq!(
            verify_chain(&entries),
            ChainVerdict::Broken { seq: 3, reason: BreakReason::HashMismatch }
        );
    }

    #[test]
    fn rehashing_a_tampered_entry_breaks_the_next_link() {
        let mut entries = sample_log(5).entries().to_vec();
        entries[2].actor = "mallory".into();
        entries[2].this_hash = entries[2].expected_hash();
        assert_eq!(
            verify_chain(&entries),
            ChainVerdict::Broken { seq: 3, reason: BreakReason::PrevHashMismatch }
        );
    }

    #[test]
    fn keys_are_canonicalised() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":{"d":2,"c":3}}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":{"c":3,"d":2},"b":1}"#);
    }

    #[test]
    fn unserialisable_payload_rejected() {
        use std::collections::HashMap;
        let mut log = AuditLog::new();
        let mut bad: HashMap<(u8, u8), u8> = HashMap::new();
        bad.insert((1, 2), 3);
        let err = log
            .append("x", AuditKind::Denial, &bad, CanonicalTimestamp::EPOCH)
            .unwrap_err();
        assert!(matches!(err, FabricError::UnserialisablePayload(_)));
        assert!(log.is_empty());
    }

    #[test]
    fn file_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.ndjson");
        {
            let mut log = AuditLog::open(&path).unwrap();
            for i in 0..3u64 {
                log.append("a", AuditKind::CapChange, &json!({ "i": i }), CanonicalTimestamp::from_secs(i))
                    .unwrap();
            }
        }
        let mut log = AuditLog::open(&path).unwrap();
        assert_eq!(log.len(), 3);
        log.append("a", AuditKind::Resume, &json!({}), CanonicalTimestamp::from_secs(9)).unwrap();
        let reread = read_log_file(&path).unwrap();
        assert_eq!(reread.len(), 4);
        assert!(verify_chain(&reread).is_intact());
        assert_eq!(reread, log.entries());
    }

    #[test]
    fn reopening_a_tampered_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.ndjson");
        sample_log(4).write_to(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("0.02", "0.05");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(AuditLog::open(&path), Err(FabricError::BrokenChain(0))));
    }

    #[test]
    fn shared_log_serialises_writers() {
        let shared = SharedAuditLog::default();
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let s = shared.clone();
                std::thread::spawn(move || {
                    for i in 0..50 {
                        s.append("w", AuditKind::Emission, &json!({ "t": t, "i": i }), CanonicalTimestamp::EPOCH)
                            .unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(shared.len(), 200);
        assert!(shared.verify().is_intact());
        assert_eq!(shared.since(190).len(), 10);
    }
}
