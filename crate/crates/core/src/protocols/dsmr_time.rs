//! DSMR local timestamps (`YYMMDDhhmmssX`) and their conversion to Unix time.
//!
//! DSMR 4.0 and later append `S` (summer) or `W` (winter) so the offset is
//! explicit. DSMR 3.0 omits the flag, which leaves the repeated autumn hour
//! ambiguous; callers resolve it with the previous resolved time.

use std::fmt;

use chrono::offset::LocalResult;
use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeZone, Timelike};
use chrono_tz::{OffsetComponents, Tz};
use serde::{Deserialize, Serialize};

use crate::domain::UnixTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DstFlag {
    #[serde(rename = "S")]
    Summer,
    #[serde(rename = "W")]
    Winter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DsmrTimestamp {
    pub year: i32,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
    pub dst_flag: Option<DstFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DsmrTimeError {
    #[error("malformed DSMR timestamp {0:?}")]
    Malformed(String),
    #[error("{0} is not a calendar date/time")]
    NotACalendarTime(DsmrTimestamp),
    #[error("{0} does not exist in {1} (skipped by the spring-forward transition)")]
    Nonexistent(DsmrTimestamp, Tz),
    #[error("{0} carries a DST flag that contradicts {1}")]
    InconsistentFlag(DsmrTimestamp, Tz),
    #[error("unknown time zone {0:?}")]
    UnknownZone(String),
}

pub fn parse_tz(name: &str) -> Result<Tz, DsmrTimeError> {
    name.parse::<Tz>().map_err(|_| DsmrTimeError::UnknownZone(name.to_string()))
}

impl DsmrTimestamp {
    pub fn parse(text: &str) -> Result<Self, DsmrTimeError> {
        let malformed = || DsmrTimeError::Malformed(text.to_string());
        if !text.is_ascii() {
            return Err(malformed());
        }
        let (digits, flag) = match text.len() {
            12 => (text, None),
            13 => {
                let flag = match &text[12..] {
                    "S" => DstFlag::Summer,
                    "W" => DstFlag::Winter,
                    _ => return Err(malformed()),
                };
                (&text[..12], Some(flag))
            }
            _ => return Err(malformed()),
        };
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        let field = |i: usize| digits[i..i + 2].parse::<u32>().map_err(|_| malformed());
        Ok(Self {
            year: 2000 + field(0)? as i32,
            month: field(2)?,
            day: field(4)?,
            hour: field(6)?,
            minute: field(8)?,
            second: field(10)?,
            dst_flag: flag,
        })
    }

    pub fn naive(&self) -> Option<NaiveDateTime> {
        NaiveDate::from_ymd_opt(self.year, self.month, self.day)?.and_hms_opt(self.hour, self.minute, self.second)
    }

    /// Local representation of `t` in `tz`, flagged when `with_flag`.
    pub fn from_unix(t: UnixTime, tz: Tz, with_flag: bool) -> Self {
        let local = tz.timestamp_opt(t, 0).single().expect("UTC instants map to one local time");
        let flag = if local.offset().dst_offset().num_seconds() != 0 {
            DstFlag::Summer
        } else {
            DstFlag::Winter
        };
        Self {
            year: local.year(),
            month: local.month(),
            day: local.day(),
            hour: local.hour(),
            minute: local.minute(),
            second: local.second(),
            dst_flag: with_flag.then_some(flag),
        }
    }
}

impl fmt::Display for DsmrTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02}{:02}{:02}{:02}{:02}{:02}",
            self.year.rem_euclid(100),
            self.month,
            self.day,
            self.hour,
            self.minute,
            self.second
        )?;
        match self.dst_flag {
            Some(DstFlag::Summer) => f.write_str("S"),
            Some(DstFlag::Winter) => f.write_str("W"),
            None => Ok(()),
        }
    }
}

fn is_summer<T: TimeZone>(dt: &chrono::DateTime<T>) -> bool
where
    T::Offset: OffsetComponents,
{
    dt.offset().dst_offset().num_seconds() != 0
}

/// Every UTC instant that `ts` (ignoring its flag) can denote in `tz`,
/// earliest first.
pub fn candidate_instants(ts: &DsmrTimestamp, tz: Tz) -> Result<Vec<(UnixTime, DstFlag)>, DsmrTimeError> {
    let naive = ts.naive().ok_or(DsmrTimeError::NotACalendarTime(*ts))?;
    let tag = |dt: chrono::DateTime<Tz>| {
        let flag = if is_summer(&dt) { DstFlag::Summer } else { DstFlag::Winter };
        (dt.timestamp(), flag)
    };
    let mut out = match tz.from_local_datetime(&naive) {
        LocalResult::Single(dt) => vec![tag(dt)],
        LocalResult::Ambiguous(a, b) => vec![tag(a), tag(b)],
        LocalResult::None => return Err(DsmrTimeError::Nonexistent(*ts, tz)),
    };
    out.sort_unstable();
    Ok(out)
}

/// Resolve a DSMR timestamp to Unix time.
///
/// A flag selects the offset directly. Without one, an ambiguous local time
/// resolves to the smallest candidate strictly after `prev_time`, or to the
/// earlier candidate when there is no previous time. If neither candidate is
/// after `prev_time` the later one is returned.
pub fn dsmr_timestamp_to_unix(
    ts: &DsmrTimestamp,
    tz: Tz,
    prev_time: Option<UnixTime>,
) -> Result<UnixTime, DsmrTimeError> {
    let candidates = candidate_instants(ts, tz)?;
    if let Some(flag) = ts.dst_flag {
        return candidates
            .iter()
            .find(|(_, f)| *f == flag)
            .map(|(t, _)| *t)
            .ok_or(DsmrTimeError::InconsistentFlag(*ts, tz));
    }
    let chosen = match prev_time {
        None => candidates[0].0,
        Some(prev) => candidates
            .iter()
            .map(|(t, _)| *t)
            .find(|t| *t > prev)
            .unwrap_or(candidates[candidates.len() - 1].0),
    };
    Ok(chosen)
}

/// Resolve a timestamp known to lie at or before `reference` (a register
/// capture time, for instance). Ambiguous flagless times take the latest
/// candidate not after `reference`.
pub fn resolve_not_after(
    ts: &DsmrTimestamp,
    tz: Tz,
    reference: UnixTime,
) -> Result<UnixTime, DsmrTimeError> {
    if ts.dst_flag.is_some() {
        return dsmr_timestamp_to_unix(ts, tz, None);
    }
    let candidates = candidate_instants(ts, tz)?;
    Ok(candidates
        .iter()
        .rev()
        .map(|(t, _)| *t)
        .find(|t| *t <= reference)
        .unwrap_or(candidates[0].0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const AMS: Tz = chrono_tz::Europe::Amsterdam;

    fn ts(s: &str) -> DsmrTimestamp {
        DsmrTimestamp::parse(s).unwrap()
    }

    #[test]
    fn parse_and_display() {
        let t = ts("241027023000S");
        assert_eq!((t.year, t.month, t.day, t.hour, t.minute, t.second), (2024, 10, 27, 2, 30, 0));
        assert_eq!(t.dst_flag, Some(DstFlag::Summer));
        assert_eq!(t.to_string(), "241027023000S");
        assert_eq!(ts("120517020000").dst_flag, None);
        for bad in ["2410270230", "241027023000X", "24102702300aS", ""] {
            assert!(DsmrTimestamp::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn flag_fixes_offset() {
        // 2024-10-27T00:30:00Z and 2024-10-27T01:30:00Z
        assert_eq!(dsmr_timestamp_to_unix(&ts("241027023000S"), AMS, None), Ok(1_729_989_000));
        assert_eq!(dsmr_timestamp_to_unix(&ts("241027023000W"), AMS, None), Ok(1_729_992_600));
    }

    #[test]
    fn flagless_ambiguous_uses_previous_time() {
        let first_pass_0250 = 1_729_990_200; // 02:50 CEST
        let got = dsmr_timestamp_to_unix(&ts("241027023000"), AMS, Some(first_pass_0250)).unwrap();
        assert_eq!(got, 1_729_992_600);
        assert_eq!(dsmr_timestamp_to_unix(&ts("241027023000"), AMS, None), Ok(1_729_989_000));
    }

    #[test]
    fn spring_gap_and_inconsistent_flags() {
        assert!(matches!(
            dsmr_timestamp_to_unix(&ts("240331023000"), AMS, None),
            Err(DsmrTimeError::Nonexistent(..))
        ));
        assert!(matches!(
            dsmr_timestamp_to_unix(&ts("240115120000S"), AMS, None),
            Err(DsmrTimeError::InconsistentFlag(..))
        ));
        assert!(matches!(
            dsmr_timestamp_to_unix(&ts("240715120000W"), AMS, None),
            Err(DsmrTimeError::InconsistentFlag(..))
        ));
        assert!(matches!(
            dsmr_timestamp_to_unix(&ts("240231120000"), AMS, None),
            Err(DsmrTimeError::NotACalendarTime(..))
        ));
    }

    #[test]
    fn not_after_reference() {
        let t = ts("241027020000");
        // second pass: reference 02:10 CET = 01:10Z
        assert_eq!(resolve_not_after(&t, AMS, 1_729_991_400), Ok(1_729_990_800));
        // first pass: reference 02:10 CEST = 00:10Z
        assert_eq!(resolve_not_after(&t, AMS, 1_729_987_800), Ok(1_729_987_200));
    }
}
