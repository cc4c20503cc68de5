//! UTC timestamps and evaluation windows.
//!
//! Everything downstream keys off two conventions: timestamps are
//! second-resolution UTC with a fixed serialized form (so artifacts are
//! byte-stable across runs), and evaluation days are 24-hour windows
//! anchored at 02:00 UTC.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Hour-of-day (UTC) at which an evaluation day window opens.
pub const DAY_WINDOW_ANCHOR_HOUR: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimeError {
    #[error("invalid timestamp {0:?}, expected YYYY-MM-DDTHH:MM:SSZ")]
    BadTimestamp(String),
    #[error("invalid compact timestamp {0:?}, expected YYYYMMDDHHMMSS")]
    BadCompact(String),
    #[error("invalid day window {0:?}, expected YYYY-MM-DD")]
    BadWindow(String),
    #[error("window start {start} is not before end {end}")]
    EmptyWindow {
        start: UtcTimestamp,
        end: UtcTimestamp,
    },
}

/// Second-resolution UTC timestamp with a canonical string form.
///
/// Serializes as `2026-03-25T05:10:00Z` always; sub-second precision is
/// deliberately unrepresentable so that parse/serialize round-trips are
/// byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UtcTimestamp(DateTime<Utc>);

impl UtcTimestamp {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        UtcTimestamp(Utc.timestamp_opt(dt.timestamp(), 0).unwrap())
    }

    pub fn from_unix(secs: i64) -> Self {
        UtcTimestamp(Utc.timestamp_opt(secs, 0).unwrap())
    }

    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    /// Parses the canonical `YYYY-MM-DDTHH:MM:SSZ` form (also accepts an
    /// RFC 3339 offset suffix, normalized to UTC).
    pub fn parse(s: &str) -> Result<Self, TimeError> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Self::from_datetime(dt.with_timezone(&Utc)))
            .map_err(|_| TimeError::BadTimestamp(s.to_string()))
    }

    /// Parses the GDELT compact form `YYYYMMDDHHMMSS`.
    pub fn parse_compact(s: &str) -> Result<Self, TimeError> {
        let naive = NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S")
            .map_err(|_| TimeError::BadCompact(s.to_string()))?;
        Ok(Self::from_datetime(Utc.from_utc_datetime(&naive)))
    }

    /// Formats as `YYYYMMDDHHMMSS` (GDELT slice naming).
    pub fn to_compact(&self) -> String {
        self.0.format("%Y%m%d%H%M%S").to_string()
    }
}

impl fmt::Display for UtcTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl FromStr for UtcTimestamp {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for UtcTimestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UtcTimestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl Add<Duration> for UtcTimestamp {
    type Output = UtcTimestamp;
    fn add(self, rhs: Duration) -> UtcTimestamp {
        UtcTimestamp::from_datetime(self.0 + rhs)
    }
}

impl Sub<Duration> for UtcTimestamp {
    type Output = UtcTimestamp;
    fn sub(self, rhs: Duration) -> UtcTimestamp {
        UtcTimestamp::from_datetime(self.0 - rhs)
    }
}

/// Half-open-agnostic `[start, end]` time span; callers state their own
/// boundary conventions where it matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: UtcTimestamp,
    pub end: UtcTimestamp,
}

impl TimeWindow {
    pub fn new(start: UtcTimestamp, end: UtcTimestamp) -> Result<Self, TimeError> {
        if start >= end {
            return Err(TimeError::EmptyWindow { start, end });
        }
        Ok(TimeWindow { start, end })
    }

    /// Inclusive on both bounds.
    pub fn contains(&self, ts: UtcTimestamp) -> bool {
        self.start <= ts && ts <= self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// One 24-hour evaluation day, opening at 02:00 UTC on `date`.
///
/// The identifier is the opening calendar date, e.g. `2026-03-25` names
/// the window `2026-03-25T02:00:00Z .. 2026-03-26T02:00:00Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DayWindow {
    date: NaiveDate,
}

impl DayWindow {
    pub fn from_date(date: NaiveDate) -> Self {
        DayWindow { date }
    }

    pub fn parse(s: &str) -> Result<Self, TimeError> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(DayWindow::from_date)
            .map_err(|_| TimeError::BadWindow(s.to_string()))
    }

    /// The window containing `ts` (windows roll at 02:00 UTC, so events
    /// before 02:00 belong to the previous calendar date's window).
    pub fn containing(ts: UtcTimestamp) -> Self {
        let shifted = ts.datetime() - Duration::hours(DAY_WINDOW_ANCHOR_HOUR as i64);
        DayWindow {
            date: shifted.date_naive(),
        }
    }

    pub fn id(&self) -> String {
        self.date.format("%Y-%m-%d").to_string()
    }

    pub fn start(&self) -> UtcTimestamp {
        let dt = self
            .date
            .and_hms_opt(DAY_WINDOW_ANCHOR_HOUR, 0, 0)
            .expect("02:00 exists on every date");
        UtcTimestamp::from_datetime(Utc.from_utc_datetime(&dt))
    }

    pub fn end(&self) -> UtcTimestamp {
        self.start() + Duration::hours(24)
    }

    pub fn time_window(&self) -> TimeWindow {
        TimeWindow {
            start: self.start(),
            end: self.end(),
        }
    }

    pub fn contains(&self, ts: UtcTimestamp) -> bool {
        self.start() <= ts && ts < self.end()
    }

    pub fn next(&self) -> Self {
        DayWindow {
            date: self.date + Duration::days(1),
        }
    }
}

impl fmt::Display for DayWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for DayWindow {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for DayWindow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for DayWindow {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

pub fn hours(n: i64) -> Duration {
    Duration::hours(n)
}

pub fn minutes(n: i64) -> Duration {
    Duration::minutes(n)
}

pub fn days(n: i64) -> Duration {
    Duration::days(n)
}

pub fn seconds(n: i64) -> Duration {
    Duration::seconds(n)
}
