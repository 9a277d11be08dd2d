use std::fmt;
use std::ops::{Add, Sub};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::FabricError;

/// Whole seconds since the Unix epoch, UTC.
///
/// Serialises as a bare integer. Deserialises from an integer or an
/// RFC 3339 string (`2026-05-06T01:04:00Z`) so scenario files can be written
/// by hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CanonicalTimestamp(u64);

impl CanonicalTimestamp {
    pub const EPOCH: CanonicalTimestamp = CanonicalTimestamp(0);

    pub const fn from_secs(epoch_seconds: u64) -> Self {
        Self(epoch_seconds)
    }

    pub const fn secs(self) -> u64 {
        self.0
    }

    pub fn parse_utc(s: &str) -> Result<Self, FabricError> {
        let s = s.trim();
        let dt = DateTime::parse_from_rfc3339(s)
            .map(|d| d.with_timezone(&Utc))
            .or_else(|_| {
                NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").map(|n| n.and_utc())
            })
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").map(|n| n.and_utc()))
            .map_err(|_| FabricError::BadTimestamp(s.to_string()))?;
        let secs = dt.timestamp();
        if secs < 0 {
            return Err(FabricError::BadTimestamp(s.to_string()));
        }
        Ok(Self(secs as u64))
    }

    fn datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0 as i64, 0).expect("timestamp within chrono range")
    }

    /// Calendar date in UTC; the key for daily spend accounting.
    pub fn utc_date(self) -> NaiveDate {
        self.datetime().date_naive()
    }

    pub fn to_rfc3339(self) -> String {
        self.datetime().format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// `YYYY-MM-DD HH:MM`, seconds truncated.
    pub fn to_minute_string(self) -> String {
        self.datetime().format("%Y-%m-%d %H:%M").to_string()
    }

    pub fn saturating_sub(self, secs: u64) -> Self {
        Self(self.0.saturating_sub(secs))
    }

    /// Seconds elapsed since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: CanonicalTimestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for CanonicalTimestamp {
    type Output = CanonicalTimestamp;
    fn add(self, rhs: u64) -> Self::Output {
        CanonicalTimestamp(self.0 + rhs)
    }
}

impl Sub<u64> for CanonicalTimestamp {
    type Output = CanonicalTimestamp;
    fn sub(self, rhs: u64) -> Self::Output {
        CanonicalTimestamp(self.0 - rhs)
    }
}

impl fmt::Display for CanonicalTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl Serialize for CanonicalTimestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for CanonicalTimestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = CanonicalTimestamp;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("epoch seconds or an RFC 3339 UTC timestamp")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(CanonicalTimestamp(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                u64::try_from(v)
                    .map(CanonicalTimestamp)
                    .map_err(|_| E::custom("timestamp must be non-negative"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                CanonicalTimestamp::parse_utc(v).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

/// A fixed-width window of the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowId {
    pub index: u64,
    pub width_seconds: u64,
}

impl WindowId {
    pub fn start(&self) -> CanonicalTimestamp {
        CanonicalTimestamp(self.index * self.width_seconds)
    }

    pub fn end_exclusive(&self) -> CanonicalTimestamp {
        CanonicalTimestamp((self.index + 1) * self.width_seconds)
    }
}

/// Floor-divides `t` into windows of `width_seconds`. A timestamp on a
/// boundary belongs to the window that starts there.
pub fn window_of(t: CanonicalTimestamp, width_seconds: i64) -> Result<WindowId, FabricError> {
    if width_seconds <= 0 {
        return Err(FabricError::InvalidWindowWidth(width_seconds));
    }
    let width = width_seconds as u64;
    Ok(WindowId {
        index: t.secs() / width,
        width_seconds: width,
    })
}
