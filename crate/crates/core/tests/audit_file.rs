use riskdesk_core::fabric::{read_log_file, verify_chain, AuditKind, AuditLog, CanonicalTimestamp, FabricError};
use riskdesk_core::scenario::{run_batch, shipped_scenario};
use serde_json::json;

#[test]
fn file_backed_log_reopens_and_extends() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.ndjson");
    {
        let mut log = AuditLog::open(&path).unwrap();
        for i in 0..5u64 {
            log.append("engine", AuditKind::Emission, &json!({ "i": i }), CanonicalTimestamp::from_secs(i)).unwrap();
        }
    }
    let mut log = AuditLog::open(&path).unwrap();
    assert_eq!(log.len(), 5);
    log.append("board", AuditKind::Approval, &json!({ "rationale": "ok" }), CanonicalTimestamp::from_secs(9)).unwrap();
    drop(log);
    let entries = read_log_file(&path).unwrap();
    assert_eq!(entries.len(), 6);
    assert!(verify_chain(&entries).is_intact());
}

#[test]
fn tampered_file_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.ndjson");
    let out = run_batch(shipped_scenario("phase1").unwrap()).unwrap();
    out.audit_log.write_to(&path).unwrap();
    assert_eq!(read_log_file(&path).unwrap(), out.audit_log.entries());

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"amount_sol\":\"0.02", "\"amount_sol\":\"0.03", 1)).unwrap();
    assert!(matches!(AuditLog::open(&path), Err(FabricError::BrokenChain(_))));
}
