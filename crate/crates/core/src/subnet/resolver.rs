use serde::{Deserialize, Serialize};

use crate::fabric::{AuditEntry, AuditKind, CanonicalTimestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub at: CanonicalTimestamp,
    pub price_usd: f64,
    pub liquidity_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub at: CanonicalTimestamp,
    pub source: String,
}

/// Observed chain state. `observed_until` marks how far the trace is
/// complete, whether or not anything happened near the end.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub points: Vec<TracePoint>,
    pub anomalies: Vec<Anomaly>,
    pub governance: Vec<AuditEntry>,
    pub observed_until: CanonicalTimestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventClassConfig {
    pub e1_liquidity_contraction_fraction: f64,
    pub e2_price_drop_fraction: f64,
    pub e2_subwindow_seconds: u64,
    pub e3_anomaly_source: String,
}

impl Default for EventClassConfig {
    /// Scenario parameters, not measured values.
    fn default() -> Self {
        Self {
            e1_liquidity_contraction_fraction: 0.20,
            e2_price_drop_fraction: 0.30,
            e2_subwindow_seconds: 600,
            e3_anomaly_source: "bridge-oracle-monitor".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventClass {
    LiquidityContraction,
    PriceDrop,
    BridgeOracleAnomaly,
    GovernanceChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub y: bool,
    pub classes: Vec<EventClass>,
}

fn is_governance_change(kind: AuditKind) -> bool {
    matches!(kind, AuditKind::CapChange | AuditKind::Approval | AuditKind::Resume)
}

/// Decides the binary outcome over `[t_emit, t_emit + delta]`. Returns
/// `None` while the trace does not yet cover the whole window.
pub fn resolve_event(
    trace: &ChainTrace,
    t_emit: CanonicalTimestamp,
    config: &EventClassConfig,
    delta_seconds: u64,
) -> Option<Resolution> {
    let end = t_emit + delta_seconds;
    if trace.observed_until < end {
        return None;
    }
    let within = |at: CanonicalTimestamp| at >= t_emit && at <= end;
    let mut classes = Vec::new();

    let reference_liquidity = trace
        .points
        .iter()
        .rev()
        .find(|p| p.at <= t_emit)
        .or_else(|| trace.points.iter().find(|p| within(p.at)))
        .map(|p| p.liquidity_usd);
    if let Some(base) = reference_liquidity.filter(|b| *b > 0.0) {
        let floor = base * (1.0 - config.e1_liquidity_contraction_fraction);
        if trace.points.iter().any(|p| within(p.at) && p.liquidity_usd <= floor) {
            classes.push(EventClass::LiquidityContraction);
        }
    }

    let window: Vec<&TracePoint> = trace.points.iter().filter(|p| within(p.at)).collect();
    let dropped = window.iter().enumerate().any(|(i, now)| {
        let since = now.at.saturating_sub(config.e2_subwindow_seconds);
        let peak = window[..i]
            .iter()
            .filter(|p| p.at >= since)
            .map(|p| p.price_usd)
            .fold(f64::NEG_INFINITY, f64::max);
        peak > 0.0 && (peak - now.price_usd) / peak >= config.e2_price_drop_fraction
    });
    if dropped {
        classes.push(EventClass::PriceDrop);
    }

    if trace.anomalies.iter().any(|a| within(a.at) && a.source == config.e3_anomaly_source) {
        classes.push(EventClass::BridgeOracleAnomaly);
    }
    if trace.governance.iter().any(|e| within(e.timestamp) && is_governance_change(e.kind)) {
        classes.push(EventClass::GovernanceChange);
    }
    Some(Resolution { y: !classes.is_empty(), classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::AuditLog;

    fn ts(s: u64) -> CanonicalTimestamp {
        CanonicalTimestamp::from_secs(s)
    }

    fn pt(at: u64, price: f64, liq: f64) -> TracePoint {
        TracePoint { at: ts(at), price_usd: price, liquidity_usd: liq }
    }

    #[test]
    fn phase_three_drop_resolves_positive() {
        let trace = ChainTrace {
            points: vec![pt(0, 7.69e-5, 6000.0), pt(300, 4.14e-5, 5800.0)],
            observed_until: ts(86_400),
            ..Default::default()
        };
        let r = resolve_event(&trace, ts(0), &EventClassConfig::default(), 86_400).unwrap();
        assert!(r.y);
        assert_eq!(r.classes, vec![EventClass::PriceDrop]);
    }

    #[test]
    fn quiet_trace_is_negative_and_short_trace_unresolved() {
        let trace = ChainTrace { observed_until: ts(86_400), ..Default::default() };
        assert_eq!(
            resolve_event(&trace, ts(0), &EventClassConfig::default(), 86_400),
            Some(Resolution { y: false, classes: vec![] })
        );
        assert_eq!(resolve_event(&trace, ts(1), &EventClassConfig::default(), 86_400), None);
    }

    #[test]
    fn cap_change_resolves_via_governance() {
        let mut log = AuditLog::new();
        log.append("desk", AuditKind::CapChange, &serde_json::json!({"new_cap_sol": "3.0"}), ts(500)).unwrap();
        let trace = ChainTrace { governance: log.entries().to_vec(), observed_until: ts(90_000), ..Default::default() };
        let r = resolve_event(&trace, ts(100), &EventClassConfig::default(), 86_400).unwrap();
        assert_eq!(r.classes, vec![EventClass::GovernanceChange]);
    }

    #[test]
    fn liquidity_contraction_and_anomaly() {
        let c = EventClassConfig::default();
        let trace = ChainTrace {
            points: vec![pt(0, 1.0, 6098.0), pt(100, 1.0, 4661.0)],
            anomalies: vec![Anomaly { at: ts(50), source: c.e3_anomaly_source.clone() }],
            observed_until: ts(1_000),
            ..Default::default()
        };
        let r = resolve_event(&trace, ts(0), &c, 1_000).unwrap();
        assert_eq!(r.classes, vec![EventClass::LiquidityContraction, EventClass::BridgeOracleAnomaly]);
        // A slow slide spread beyond the sub-window is not a price drop.
        let slide = ChainTrace {
            points: (0..10).map(|i| pt(i * 700, 1.0 - 0.05 * i as f64, 6000.0)).collect(),
            observed_until: ts(7_000),
            ..Default::default()
        };
        assert!(!resolve_event(&slide, ts(0), &c, 7_000).unwrap().y);
    }
}
