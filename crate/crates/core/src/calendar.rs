//! Timestamp arithmetic and cyclic calendar encodings.
//!
//! Series positions map to timestamps through a start stamp plus a
//! granularity step; calendar covariates are computable arbitrarily far into
//! the future, which is what lets the decoder condition on horizon steps
//! that have no observed data yet.

use alloc::format;
use alloc::string::String;

use chrono::{Datelike, Months, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Stamp = NaiveDateTime;

/// Fixed spacing between consecutive observations of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Hourly,
    Daily,
    Monthly,
}

impl Granularity {
    /// Seasonal frequency used as the MASE default: 24 for hourly, 7 for
    /// daily, 12 for monthly.
    pub fn season_length(self) -> usize {
        match self {
            Granularity::Hourly => 24,
            Granularity::Daily => 7,
            Granularity::Monthly => 12,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Hourly => "hourly",
            Granularity::Daily => "daily",
            Granularity::Monthly => "monthly",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hourly" => Ok(Granularity::Hourly),
            "daily" => Ok(Granularity::Daily),
            "monthly" => Ok(Granularity::Monthly),
            other => Err(Error::Data(format!("unknown granularity '{other}'"))),
        }
    }
}

/// Stamp at `offset` periods after `start`.
pub fn step(start: Stamp, granularity: Granularity, offset: i64) -> Stamp {
    match granularity {
        Granularity::Hourly => start + chrono::Duration::hours(offset),
        Granularity::Daily => start + chrono::Duration::days(offset),
        Granularity::Monthly => {
            if offset >= 0 {
                start
                    .checked_add_months(Months::new(offset as u32))
                    .expect("month overflow")
            } else {
                start
                    .checked_sub_months(Months::new((-offset) as u32))
                    .expect("month underflow")
            }
        }
    }
}

/// Signed number of whole periods from `start` to `stamp`, or an error when
/// the stamp is not aligned to the grid.
pub fn index_of(start: Stamp, granularity: Granularity, stamp: Stamp) -> Result<i64> {
    let misaligned = || {
        Error::Data(format!(
            "timestamp {stamp} is not aligned to the {} grid starting at {start}",
            granularity.as_str()
        ))
    };
    match granularity {
        Granularity::Hourly => {
            let d = stamp.signed_duration_since(start);
            let secs = d.num_seconds();
            if secs % 3600 != 0 {
                return Err(misaligned());
            }
            Ok(secs / 3600)
        }
        Granularity::Daily => {
            let d = stamp.signed_duration_since(start);
            let secs = d.num_seconds();
            if secs % 86_400 != 0 {
                return Err(misaligned());
            }
            Ok(secs / 86_400)
        }
        Granularity::Monthly => {
            if stamp.day() != start.day() || stamp.time() != start.time() {
                return Err(misaligned());
            }
            let months = (stamp.year() as i64 - start.year() as i64) * 12
                + (stamp.month() as i64 - start.month() as i64);
            Ok(months)
        }
    }
}

/// Parse an ISO-8601 date (`2011-06-05`) or date-hour
/// (`2011-06-05T14`, `2011-06-05T14:00`, `2011-06-05 14:00:00`).
pub fn parse_stamp(s: &str) -> Result<Stamp> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap());
    }
    let bad = || Error::Data(format!("cannot parse timestamp '{s}'"));
    let (date_part, time_part) = s.split_once(['T', ' ']).ok_or_else(bad)?;
    let date = NaiveDate::parse_from_str(date_part, "%Y-%m-%d").map_err(|_| bad())?;
    for fmt in ["%H:%M:%S", "%H:%M"] {
        if let Ok(t) = chrono::NaiveTime::parse_from_str(time_part, fmt) {
            return Ok(date.and_time(t));
        }
    }
    // bare hour form
    if let Ok(h) = time_part.parse::<u32>() {
        if let Some(t) = chrono::NaiveTime::from_hms_opt(h, 0, 0) {
            return Ok(date.and_time(t));
        }
    }
    Err(bad())
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| Error::Data(format!("cannot parse date '{s}'")))
}

pub fn format_stamp(stamp: Stamp, granularity: Granularity) -> String {
    match granularity {
        Granularity::Hourly => format!("{}", stamp.format("%Y-%m-%dT%H:%M:%S")),
        Granularity::Daily | Granularity::Monthly => format!("{}", stamp.format("%Y-%m-%d")),
    }
}

/// Calendar covariates, each encoded as one sin/cos pair of its cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarFeature {
    HourOfDay,
    DayOfWeek,
    DayOfMonth,
    DayOfYear,
    MonthOfYear,
}

impl CalendarFeature {
    /// Features enabled by default per granularity: hour-of-day, day-of-week
    /// and day-of-month for hourly data; day-of-week and day-of-year for
    /// daily data; month-of-year for monthly data.
    pub fn defaults(granularity: Granularity) -> &'static [CalendarFeature] {
        match granularity {
            Granularity::Hourly => &[
                CalendarFeature::HourOfDay,
                CalendarFeature::DayOfWeek,
                CalendarFeature::DayOfMonth,
            ],
            Granularity::Daily => &[CalendarFeature::DayOfWeek, CalendarFeature::DayOfYear],
            Granularity::Monthly => &[CalendarFeature::MonthOfYear],
        }
    }

    fn phase(self, stamp: Stamp) -> (f64, f64) {
        match self {
            CalendarFeature::HourOfDay => (stamp.hour() as f64, 24.0),
            CalendarFeature::DayOfWeek => {
                (stamp.weekday().num_days_from_monday() as f64, 7.0)
            }
            CalendarFeature::DayOfMonth => ((stamp.day() - 1) as f64, 31.0),
            CalendarFeature::DayOfYear => ((stamp.ordinal() - 1) as f64, 366.0),
            CalendarFeature::MonthOfYear => ((stamp.month() - 1) as f64, 12.0),
        }
    }

    /// `(sin, cos)` of the feature's cyclic phase.
    pub fn encode(self, stamp: Stamp) -> (f64, f64) {
        let (value, period) = self.phase(stamp);
        let angle = 2.0 * core::f64::consts::PI * value / period;
        (libm::sin(angle), libm::cos(angle))
    }
}
