//! Instants, local calendar days and windows.
//!
//! Instants are integer seconds since the Unix epoch (UTC). Local time is a
//! single fixed offset from UTC; no daylight-saving rules are applied.

use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

/// Seconds since 1970-01-01T00:00:00Z.
pub type Instant = i64;

pub const SECS_PER_DAY: i64 = 86_400;
pub const SECS_PER_HOUR: i64 = 3_600;

/// Fixed offset of local time from UTC, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtcOffset(pub i32);

impl Default for UtcOffset {
    fn default() -> Self {
        UtcOffset(120)
    }
}

impl UtcOffset {
    pub fn seconds(self) -> i64 {
        i64::from(self.0) * 60
    }

    pub fn local_day(self, ts: Instant) -> LocalDay {
        LocalDay((ts + self.seconds()).div_euclid(SECS_PER_DAY) as i32)
    }

    /// Hour of the local day, 0..24.
    pub fn local_hour_of_day(self, ts: Instant) -> u8 {
        ((ts + self.seconds()).rem_euclid(SECS_PER_DAY) / SECS_PER_HOUR) as u8
    }

    /// Index of the local clock hour the instant falls in.
    pub fn local_hour_bucket(self, ts: Instant) -> i64 {
        (ts + self.seconds()).div_euclid(SECS_PER_HOUR)
    }

    /// UTC instant of local midnight starting `day`.
    pub fn day_start(self, day: LocalDay) -> Instant {
        i64::from(day.0) * SECS_PER_DAY - self.seconds()
    }
}

/// A local calendar date as a day number (days since 1970-01-01).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalDay(pub i32);

impl LocalDay {
    pub fn from_date(date: NaiveDate) -> LocalDay {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch");
        LocalDay((date - epoch).num_days() as i32)
    }

    pub fn date(self) -> NaiveDate {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch");
        epoch + chrono::Duration::days(i64::from(self.0))
    }

    pub fn parse(s: &str) -> Option<LocalDay> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()
            .filter(|_| s.len() == 10)
            .map(LocalDay::from_date)
    }

    pub fn offset(self, days: i32) -> LocalDay {
        LocalDay(self.0 + days)
    }
}

impl fmt::Display for LocalDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.date().format("%Y-%m-%d"))
    }
}

/// Half-open interval of instants `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeWindow {
    pub start: Instant,
    pub end: Instant,
}

impl TimeWindow {
    pub fn new(start: Instant, end: Instant) -> Option<TimeWindow> {
        (start < end).then_some(TimeWindow { start, end })
    }

    /// Whole local days `first..=last`, both inclusive.
    pub fn from_local_days(first: LocalDay, last: LocalDay, offset: UtcOffset) -> Option<TimeWindow> {
        TimeWindow::new(offset.day_start(first), offset.day_start(last.offset(1)))
    }

    pub fn contains(&self, ts: Instant) -> bool {
        ts >= self.start && ts < self.end
    }

    /// Local days whose span overlaps the window: `(first, last)` inclusive.
    pub fn local_days(&self, offset: UtcOffset) -> (LocalDay, LocalDay) {
        (offset.local_day(self.start), offset.local_day(self.end - 1))
    }
}

/// Parses the strict `YYYY-MM-DDThh:mm:ssZ` form.
pub fn parse_instant(s: &str) -> Option<Instant> {
    let b = s.as_bytes();
    if b.len() != 20 || b[4] != b'-' || b[7] != b'-' || b[10] != b'T' || b[13] != b':' || b[16] != b':' || b[19] != b'Z'
    {
        return None;
    }
    let num = |range: std::ops::Range<usize>| -> Option<u32> {
        b[range].iter().try_fold(0u32, |acc, &c| {
            c.is_ascii_digit().then(|| acc * 10 + u32::from(c - b'0'))
        })
    };
    let date = NaiveDate::from_ymd_opt(num(0..4)? as i32, num(5..7)?, num(8..10)?)?;
    let time = NaiveTime::from_hms_opt(num(11..13)?, num(14..16)?, num(17..19)?)?;
    Some(date.and_time(time).and_utc().timestamp())
}

pub fn format_instant(ts: Instant) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}
