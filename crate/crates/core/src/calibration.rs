//! Windowed evaluation of prediction-outcome pairs and the metrics CSV.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::fabric::CanonicalTimestamp;

pub const LABEL_THRESHOLD: f64 = 0.5;
pub const METRICS_HEADER: [&str; 5] = ["generated_utc", "window_h", "samples", "did_crash_accuracy_pct", "brier"];

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("unexpected metrics header {0:?}")]
    Header(Vec<String>),
    #[error("line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CrashLabel {
    Crash,
    NoCrash,
}

impl CrashLabel {
    pub fn from_probability(p: f64) -> Self {
        if p >= LABEL_THRESHOLD {
            CrashLabel::Crash
        } else {
            CrashLabel::NoCrash
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcomePair {
    pub symbol: String,
    pub mcap_rank: u32,
    pub predicted_p: f64,
    pub predicted_label: CrashLabel,
    #[serde(with = "bool_as_int")]
    pub realised_y: bool,
    pub emitted_at: CanonicalTimestamp,
    pub resolved_at: CanonicalTimestamp,
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

impl PredictionOutcomePair {
    pub fn new(
        symbol: impl Into<String>,
        mcap_rank: u32,
        predicted_p: f64,
        realised_y: bool,
        emitted_at: CanonicalTimestamp,
        horizon_seconds: u64,
    ) -> Self {
        Self {
            symbol: symbol.into(),
            mcap_rank,
            predicted_p,
            predicted_label: CrashLabel::from_probability(predicted_p),
            realised_y,
            emitted_at,
            resolved_at: emitted_at + horizon_seconds,
        }
    }

    pub fn is_correct(&self) -> bool {
        (self.predicted_label == CrashLabel::Crash) == self.realised_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub generated_at: CanonicalTimestamp,
    pub window_hours: u32,
    pub samples: u64,
    /// Fraction in `[0, 1]`; `None` for an empty cohort.
    pub did_crash_accuracy: Option<f64>,
    pub brier: Option<f64>,
    /// Not carried in the CSV.
    pub cohort: Option<String>,
}

pub fn cohort_filter(pairs: &[PredictionOutcomePair], top_n_by_mcap: u32) -> Vec<PredictionOutcomePair> {
    pairs.iter().filter(|p| p.mcap_rank <= top_n_by_mcap).cloned().collect()
}

/// Metrics over pairs resolved within `[now - window, now]`, optionally
/// restricted to the top `top_n` assets by market cap.
pub fn evaluate_window(
    pairs: &[PredictionOutcomePair],
    window_hours: u32,
    now: CanonicalTimestamp,
    top_n: Option<u32>,
) -> WindowMetrics {
    let start = now.saturating_sub(u64::from(window_hours) * 3_600);
    let in_window: Vec<&PredictionOutcomePair> = pairs
        .iter()
        .filter(|p| p.resolved_at >= start && p.resolved_at <= now)
        .filter(|p| top_n.is_none_or(|n| p.mcap_rank <= n))
        .collect();
    let samples = in_window.len() as u64;
    let (accuracy, brier) = if in_window.is_empty() {
        (None, None)
    } else {
        let n = in_window.len() as f64;
        let correct = in_window.iter().filter(|p| p.is_correct()).count() as f64;
        let squared: f64 = in_window
            .iter()
            .map(|p| (p.predicted_p - if p.realised_y { 1.0 } else { 0.0 }).powi(2))
            .sum();
        (Some(correct / n), Some(squared / n))
    };
    WindowMetrics {
        generated_at: now,
        window_hours,
        samples,
        did_crash_accuracy: accuracy,
        brier,
        cohort: top_n.map(|n| format!("top-{n}-by-mcap")),
    }
}

fn malformed(line: u64, detail: impl Into<String>) -> CalibrationError {
    CalibrationError::MalformedRow { line, detail: detail.into() }
}

/// Parses a metrics CSV. Accuracy is read as a percentage and stored as a
/// fraction. Empty metric cells denote an empty cohort.
pub fn ingest_metrics_csv(reader: impl Read) -> Result<Vec<WindowMetrics>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(CalibrationError::Header(header));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != METRICS_HEADER.len() {
            return Err(malformed(line, format!("expected 5 fields, found {}", record.len())));
        }
        let generated_at = CanonicalTimestamp::parse_utc(&record[0]).map_err(|e| malformed(line, e.to_string()))?;
        let window_hours = record[1].parse().map_err(|e| malformed(line, format!("window_h: {e}")))?;
        let samples = record[2].replace(',', "").parse().map_err(|e| malformed(line, format!("samples: {e}")))?;
        let optional = |s: &str, name: &str| -> Result<Option<f64>, CalibrationError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| malformed(line, format!("{name}: {e}")))
        };
        let accuracy_pct = optional(&record[3], "did_crash_accuracy_pct")?;
        let brier = optional(&record[4], "brier")?;
        out.push(WindowMetrics {
            generated_at,
            window_hours,
            samples,
            did_crash_accuracy: accuracy_pct.map(|p| p / 100.0),
            brier,
            cohort: None,
        });
    }
    Ok(out)
}

/// Accuracy is written as a percentage to 2 d.p., Brier to 4 d.p., and the
/// timestamp to the minute.
pub fn emit_metrics_csv(metrics: &[WindowMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("in-memory write");
    for m in metrics {
        w.write_record([
            m.generated_at.to_minute_string(),
            m.window_hours.to_string(),
            m.samples.to_string(),
            m.did_crash_accuracy.map(|a| format!("{:.2}", a * 100.0)).unwrap_or_default(),
            m.brier.map(|b| format!("{b:.4}")).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn read_pairs_csv(reader: impl Read) -> Result<Vec<PredictionOutcomePair>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_pairs_csv(pairs: &[PredictionOutcomePair]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in pairs {
        w.serialize(p).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
