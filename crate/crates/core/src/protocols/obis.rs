//! Mapping from P1 telegram objects to smart-meter properties.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::dsmr_time::{dsmr_timestamp_to_unix, parse_tz, resolve_not_after, DsmrTimeError, DsmrTimestamp};
use super::p1::P1Telegram;
use crate::domain::{canonicalize, Measurement, UnixTime, ValueFormat};

const BUILTIN_MAP: &str = include_str!("../../data/obis_map.toml");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct VersionEntry {
    pub property: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct TimestampEntry {
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct GasEntry {
    pub property: String,
    pub references: Vec<String>,
    #[serde(default)]
    pub legacy_references: Vec<String>,
}

/// Which OBIS references feed which property.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct ObisMap {
    pub meter_code_property: String,
    pub version: VersionEntry,
    pub timestamp: TimestampEntry,
    /// Cumulative electricity registers in kWh.
    pub registers: BTreeMap<String, String>,
    pub gas: GasEntry,
}

impl ObisMap {
    pub fn builtin() -> &'static ObisMap {
        static MAP: OnceLock<ObisMap> = OnceLock::new();
        MAP.get_or_init(|| ObisMap::from_toml(BUILTIN_MAP).expect("built-in OBIS map parses"))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Every property this map can produce.
    pub fn properties(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.registers.values().map(String::as_str).collect();
        out.push(&self.gas.property);
        out.push(&self.meter_code_property);
        out.push(&self.version.property);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ReadingIssue {
    /// A mapped register is not in the telegram. The property is left out.
    Missing(String),
    NegativeRegister { reference: String, text: String },
    UnitMismatch { reference: String, expected: &'static str, found: Option<String> },
    BadValue { reference: String, text: String },
    BadGasTimestamp { reference: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmartMeterReading {
    pub measurements: Vec<Measurement>,
    pub telegram_time: UnixTime,
    pub issues: Vec<ReadingIssue>,
}

impl SmartMeterReading {
    pub fn get(&self, property: &str) -> Option<&Measurement> {
        self.measurements.iter().find(|m| m.property == property)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReadingError {
    #[error(transparent)]
    Time(#[from] DsmrTimeError),
    #[error("telegram has no timestamp object and no capture time was given")]
    NoTime,
}

/// Extra inputs for [`telegram_to_reading_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReadingContext {
    /// Resolved time of the previous telegram, used for flagless timestamps.
    pub prev_time: Option<UnixTime>,
    /// When the telegram was received; the telegram time if it carries none.
    pub capture_time: Option<UnixTime>,
}

/// Map a telegram to smart-meter measurements with the built-in OBIS map.
pub fn telegram_to_reading(
    t: &P1Telegram,
    tz: &str,
    prev_time: Option<UnixTime>,
) -> Result<SmartMeterReading, ReadingError> {
    let tz = parse_tz(tz)?;
    let ctx = ReadingContext {
        prev_time,
        capture_time: None,
    };
    telegram_to_reading_with(t, tz, ObisMap::builtin(), ctx)
}

fn decimal(text: &str, format: ValueFormat) -> Option<String> {
    canonicalize(format, text).ok()
}

pub fn telegram_to_reading_with(
    t: &P1Telegram,
    tz: Tz,
    map: &ObisMap,
    ctx: ReadingContext,
) -> Result<SmartMeterReading, ReadingError> {
    let stamped = map
        .timestamp
        .references
        .iter()
        .find_map(|r| t.object(r))
        .and_then(|o| o.value(0));
    let telegram_time = match stamped {
        Some(text) => dsmr_timestamp_to_unix(&DsmrTimestamp::parse(text)?, tz, ctx.prev_time)?,
        None => ctx.capture_time.ok_or(ReadingError::NoTime)?,
    };

    let mut measurements = Vec::new();
    let mut issues = Vec::new();

    for (reference, property) in &map.registers {
        let Some(obj) = t.object(reference) else {
            issues.push(ReadingIssue::Missing(property.clone()));
            continue;
        };
        let Some((text, unit)) = obj.values.first() else {
            issues.push(ReadingIssue::Missing(property.clone()));
            continue;
        };
        if unit.as_deref() != Some("kWh") {
            issues.push(ReadingIssue::UnitMismatch {
                reference: reference.clone(),
                expected: "kWh",
                found: unit.clone(),
            });
            continue;
        }
        if text.starts_with('-') {
            issues.push(ReadingIssue::NegativeRegister {
                reference: reference.clone(),
                text: text.clone(),
            });
            continue;
        }
        match decimal(text, ValueFormat::Fixed3) {
            Some(v) => measurements.push(Measurement::new(property, telegram_time, v)),
            None => issues.push(ReadingIssue::BadValue {
                reference: reference.clone(),
                text: text.clone(),
            }),
        }
    }

    match gas_reading(t, tz, map, telegram_time) {
        Ok(Some(m)) => measurements.push(m),
        Ok(None) => issues.push(ReadingIssue::Missing(map.gas.property.clone())),
        Err(issue) => issues.push(issue),
    }

    if !t.header.is_empty() {
        measurements.push(Measurement::new(&map.meter_code_property, telegram_time, t.header.clone()));
    }

    let version = map
        .version
        .references
        .iter()
        .find_map(|r| t.object(r).map(|o| (r, o)));
    if let Some((reference, obj)) = version {
        let text = obj.value(0).unwrap_or_default();
        let tenths = (!text.is_empty() && text.len() <= 4 && text.bytes().all(|b| b.is_ascii_digit()))
            .then(|| text.parse::<u32>().ok())
            .flatten();
        match tenths {
            Some(n) => measurements.push(Measurement::new(
                &map.version.property,
                telegram_time,
                format!("{}.{}", n / 10, n % 10),
            )),
            None => issues.push(ReadingIssue::BadValue {
                reference: reference.clone(),
                text: text.to_string(),
            }),
        }
    }

    Ok(SmartMeterReading {
        measurements,
        telegram_time,
        issues,
    })
}

fn gas_reading(
    t: &P1Telegram,
    tz: Tz,
    map: &ObisMap,
    telegram_time: UnixTime,
) -> Result<Option<Measurement>, ReadingIssue> {
    // (timestamp)(value*m3) in DSMR 4 and 5
    let modern = map.gas.references.iter().find_map(|r| t.object(r).map(|o| (r, o)));
    // (timestamp)(status)(period)(count)(ref)(unit) + (value) in DSMR 3
    let legacy = map
        .gas
        .legacy_references
        .iter()
        .find_map(|r| t.object(r).map(|o| (r, o)));
    let (reference, ts_text, value, unit) = match (modern, legacy) {
        (Some((r, o)), _) if o.values.len() >= 2 => {
            let (v, u) = &o.values[o.values.len() - 1];
            (r, &o.values[0].0, v, u.clone())
        }
        (_, Some((r, o))) if o.values.len() >= 7 => {
            let unit = o.value(5).map(str::to_string);
            (r, &o.values[0].0, &o.values[6].0, unit)
        }
        (Some((r, o)), _) | (_, Some((r, o))) => {
            return Err(ReadingIssue::BadValue {
                reference: r.clone(),
                text: format!("{:?}", o.values),
            })
        }
        (None, None) => return Ok(None),
    };
    if unit.as_deref() != Some("m3") {
        return Err(ReadingIssue::UnitMismatch {
            reference: reference.clone(),
            expected: "m3",
            found: unit,
        });
    }
    if value.starts_with('-') {
        return Err(ReadingIssue::NegativeRegister {
            reference: reference.clone(),
            text: value.clone(),
        });
    }
    let value = decimal(value, ValueFormat::Fixed3).ok_or_else(|| ReadingIssue::BadValue {
        reference: reference.clone(),
        text: value.clone(),
    })?;
    let bad_ts = || ReadingIssue::BadGasTimestamp {
        reference: reference.clone(),
        text: ts_text.clone(),
    };
    let ts = DsmrTimestamp::parse(ts_text).map_err(|_| bad_ts())?;
    // The gas register is captured at or before the telegram it arrives in.
    let time = resolve_not_after(&ts, tz, telegram_time).map_err(|_| bad_ts())?;
    Ok(Some(Measurement::new(&map.gas.property, time, value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::p1::parse_p1_telegram;

    const DSMR5: &str = "/XMX5LGBBFG1012463183\r\n\r\n1-3:0.2.8(50)\r\n0-0:1.0.0(240115120000W)\r\n\
        1-0:1.8.1(001234.567*kWh)\r\n1-0:1.8.2(002345.678*kWh)\r\n1-0:2.8.1(000010.001*kWh)\r\n\
        1-0:2.8.2(000020.002*kWh)\r\n0-1:24.2.1(240115115500W)(01234.567*m3)\r\n!";

    #[test]
    fn full_dsmr5_reading() {
        let t = parse_p1_telegram(DSMR5).unwrap();
        let r = telegram_to_reading(&t, "Europe/Amsterdam", None).unwrap();
        // 2024-01-15T11:00:00Z
        assert_eq!(r.telegram_time, 1_705_316_400);
        assert_eq!(r.measurements.len(), 7);
        assert!(r.issues.is_empty());
        assert_eq!(r.get("e_use_lo_cum__kWh").unwrap().value, "1234.567");
        assert_eq!(r.get("e_use_hi_cum__kWh").unwrap().value, "2345.678");
        assert_eq!(r.get("dsmr_version__0").unwrap().value, "5.0");
        assert_eq!(r.get("meter_code_str").unwrap().value, "XMX5LGBBFG1012463183");
        let gas = r.get("g_use_cum__m3").unwrap();
        assert_eq!((gas.time, gas.value.as_str()), (1_705_316_100, "1234.567"));
    }

    #[test]
    fn missing_gas_is_absent_not_zero() {
        let text = DSMR5.replace("0-1:24.2.1(240115115500W)(01234.567*m3)\r\n", "");
        let r = telegram_to_reading(&parse_p1_telegram(&text).unwrap(), "Europe/Amsterdam", None).unwrap();
        assert_eq!(r.measurements.len(), 6);
        assert!(r.get("g_use_cum__m3").is_none());
        assert_eq!(r.issues, vec![ReadingIssue::Missing("g_use_cum__m3".into())]);
    }

    #[test]
    fn negative_register_is_skipped() {
        let text = DSMR5.replace("001234.567*kWh", "-01234.567*kWh");
        let r = telegram_to_reading(&parse_p1_telegram(&text).unwrap(), "Europe/Amsterdam", None).unwrap();
        assert!(r.get("e_use_lo_cum__kWh").is_none());
        assert!(matches!(r.issues[0], ReadingIssue::NegativeRegister { .. }));
    }

    #[test]
    fn dsmr3_hourly_gas_keeps_register_time() {
        let mk = |capture: &str, gas_ts: &str| {
            format!(
                "/ISk5\\2ME382-1003\r\n\r\n0-0:96.1.1(4B414C37303035313134)\r\n1-0:1.8.1(00185.000*kWh)\r\n\
                 1-0:1.8.2(00084.000*kWh)\r\n1-0:2.8.1(00000.000*kWh)\r\n1-0:2.8.2(00000.000*kWh)\r\n\
                 0-1:24.3.0({gas_ts})(08)(60)(1)(0-1:24.2.1)(m3)\r\n(00124.477)\r\n!\r\n{capture}"
            )
        };
        let tz = chrono_tz::Europe::Amsterdam;
        let mut gas = Vec::new();
        for capture in [1_705_316_400, 1_705_317_000] {
            let t = parse_p1_telegram(&mk("", "240115120000")).unwrap();
            let ctx = ReadingContext {
                prev_time: None,
                capture_time: Some(capture),
            };
            let r = telegram_to_reading_with(&t, tz, ObisMap::builtin(), ctx).unwrap();
            assert_eq!(r.telegram_time, capture);
            assert!(r.get("dsmr_version__0").is_none());
            gas.push(r.get("g_use_cum__m3").unwrap().clone());
        }
        assert_eq!(gas[0], gas[1]);
        assert_eq!(gas[0].time, 1_705_316_400);
        assert_eq!(gas[0].value, "124.477");
    }

    #[test]
    fn map_is_overridable() {
        let custom = BUILTIN_MAP.replace("\"1-0:1.8.1\" = \"e_use_lo_cum__kWh\"", "\"1-0:1.8.1\" = \"e_use_t1__kWh\"");
        let map = ObisMap::from_toml(&custom).unwrap();
        assert!(map.properties().contains(&"e_use_t1__kWh"));
        let t = parse_p1_telegram(DSMR5).unwrap();
        let r = telegram_to_reading_with(&t, chrono_tz::Europe::Amsterdam, &map, ReadingContext::default()).unwrap();
        assert_eq!(r.get("e_use_t1__kWh").unwrap().value, "1234.567");
    }
}
