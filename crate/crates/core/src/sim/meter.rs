//! Smart meter P1 output for DSMR 3.0, 4.2 and 5.0.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::house::House;
use crate::domain::UnixTime;
use crate::protocols::{crc16, DsmrTimestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DsmrVersion {
    #[serde(rename = "3.0")]
    V30,
    #[serde(rename = "4.2")]
    V42,
    #[serde(rename = "5.0")]
    V50,
}

impl DsmrVersion {
    pub const ALL: [DsmrVersion; 3] = [DsmrVersion::V30, DsmrVersion::V42, DsmrVersion::V50];

    /// Seconds between telegrams.
    pub fn telegram_interval_s(self) -> i64 {
        match self {
            DsmrVersion::V50 => 1,
            _ => 10,
        }
    }

    /// Seconds between gas register captures.
    pub fn gas_interval_s(self) -> i64 {
        match self {
            DsmrVersion::V50 => 300,
            _ => 3600,
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            DsmrVersion::V30 => "/ISk5\\2ME382-1003",
            DsmrVersion::V42 => "/KFM5KAIFA-METER",
            DsmrVersion::V50 => "/Ene5\\T210-D ESMR5.0",
        }
    }
}

impl fmt::Display for DsmrVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DsmrVersion::V30 => "3.0",
            DsmrVersion::V42 => "4.2",
            DsmrVersion::V50 => "5.0",
        })
    }
}

impl FromStr for DsmrVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "3.0" | "3" => Ok(DsmrVersion::V30),
            "4.2" => Ok(DsmrVersion::V42),
            "5.0" | "5" => Ok(DsmrVersion::V50),
            _ => Err(format!("unsupported DSMR version {s:?}")),
        }
    }
}

/// Register contents at one instant, in integer Wh and dm3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterSnapshot {
    pub time: UnixTime,
    pub electricity_wh: [u64; 4],
    pub gas_time: UnixTime,
    pub gas_dm3: u64,
}

impl RegisterSnapshot {
    pub fn of(house: &House, version: DsmrVersion, time: UnixTime) -> Self {
        let capture = match version {
            DsmrVersion::V50 => house.gas_5min,
            _ => house.gas_hourly,
        };
        Self {
            time,
            electricity_wh: house.electricity_wh.map(|wh| wh.floor() as u64),
            gas_time: capture.time,
            gas_dm3: (capture.value * 1000.0).floor() as u64,
        }
    }
}

fn kwh(wh: u64, int_digits: usize) -> String {
    format!("{:0int_digits$}.{:03}", wh / 1000, wh % 1000)
}

fn m3(dm3: u64) -> String {
    format!("{:05}.{:03}", dm3 / 1000, dm3 % 1000)
}

/// Meter identity printed in every telegram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterIdentity {
    pub version: DsmrVersion,
    pub equipment_id: String,
    pub gas_equipment_id: String,
}

impl MeterIdentity {
    pub fn new(version: DsmrVersion, serial: u64) -> Self {
        Self {
            version,
            equipment_id: hex::encode_upper(format!("E{:015}", serial % 10u64.pow(15))),
            gas_equipment_id: hex::encode_upper(format!("G{:015}", (serial / 7) % 10u64.pow(15))),
        }
    }
}

/// Render a complete telegram, CRC included for DSMR 4 and later.
pub fn render_telegram(id: &MeterIdentity, snap: &RegisterSnapshot, tz: Tz) -> String {
    let v = id.version;
    let digits = if v == DsmrVersion::V30 { 5 } else { 6 };
    let e = snap.electricity_wh;
    let mut s = String::with_capacity(640);
    let _ = write!(s, "{}\r\n\r\n", v.header());
    match v {
        DsmrVersion::V30 => {}
        DsmrVersion::V42 => s.push_str("1-3:0.2.8(42)\r\n"),
        DsmrVersion::V50 => s.push_str("1-3:0.2.8(50)\r\n"),
    }
    if v != DsmrVersion::V30 {
        let _ = write!(s, "0-0:1.0.0({})\r\n", DsmrTimestamp::from_unix(snap.time, tz, true));
    }
    let _ = write!(s, "0-0:96.1.1({})\r\n", id.equipment_id);
    let _ = write!(s, "1-0:1.8.1({}*kWh)\r\n", kwh(e[0], digits));
    let _ = write!(s, "1-0:1.8.2({}*kWh)\r\n", kwh(e[1], digits));
    let _ = write!(s, "1-0:2.8.1({}*kWh)\r\n", kwh(e[2], digits));
    let _ = write!(s, "1-0:2.8.2({}*kWh)\r\n", kwh(e[3], digits));
    let _ = write!(s, "0-0:96.14.0({:04})\r\n", 1 + (e[1] > 0) as u8);
    if v == DsmrVersion::V30 {
        s.push_str("1-0:1.7.0(0000.42*kW)\r\n1-0:2.7.0(0000.00*kW)\r\n0-0:17.0.0(999*A)\r\n0-0:96.3.10(1)\r\n");
        s.push_str("0-0:96.13.1()\r\n0-0:96.13.0()\r\n0-1:24.1.0(3)\r\n");
        let _ = write!(s, "0-1:96.1.0({})\r\n", id.gas_equipment_id);
        let _ = write!(
            s,
            "0-1:24.3.0({})(00)(60)(1)(0-1:24.2.1)(m3)\r\n({})\r\n",
            DsmrTimestamp::from_unix(snap.gas_time, tz, false),
            m3(snap.gas_dm3)
        );
        s.push_str("0-1:24.4.0(1)\r\n!\r\n");
        return s;
    }
    s.push_str("1-0:1.7.0(00.420*kW)\r\n1-0:2.7.0(00.000*kW)\r\n0-0:96.7.21(00003)\r\n0-0:96.7.9(00001)\r\n");
    s.push_str("1-0:99.97.0(1)(0-0:96.7.19)(000101000001W)(2147483647*s)\r\n");
    s.push_str("1-0:32.32.0(00000)\r\n1-0:32.36.0(00000)\r\n0-0:96.13.0()\r\n");
    s.push_str("1-0:32.7.0(230.1*V)\r\n1-0:31.7.0(002*A)\r\n1-0:21.7.0(00.420*kW)\r\n1-0:22.7.0(00.000*kW)\r\n");
    s.push_str("0-1:24.1.0(003)\r\n");
    let _ = write!(s, "0-1:96.1.0({})\r\n", id.gas_equipment_id);
    let _ = write!(
        s,
        "0-1:24.2.1({})({}*m3)\r\n!",
        DsmrTimestamp::from_unix(snap.gas_time, tz, true),
        m3(snap.gas_dm3)
    );
    let crc = crc16(s.as_bytes());
    let _ = write!(s, "{crc:04X}\r\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{parse_p1_telegram, telegram_to_reading_with, verify_telegram_crc, CrcVerdict, ObisMap, ReadingContext};

    fn snap(time: UnixTime) -> RegisterSnapshot {
        RegisterSnapshot {
            time,
            electricity_wh: [1_234_567, 7_654_321, 1, 0],
            gas_time: time - time % 3600,
            gas_dm3: 4_321_098,
        }
    }

    #[test]
    fn every_version_parses_back() {
        let tz = chrono_tz::Europe::Amsterdam;
        let t = 1_705_316_400;
        for v in DsmrVersion::ALL {
            let id = MeterIdentity::new(v, 42);
            let text = render_telegram(&id, &snap(t), tz);
            let expected_crc = if v == DsmrVersion::V30 { CrcVerdict::Absent } else { CrcVerdict::Ok };
            assert_eq!(verify_telegram_crc(text.as_bytes()), expected_crc, "{v}");
            let tel = parse_p1_telegram(&text).unwrap();
            let ctx = ReadingContext {
                prev_time: None,
                capture_time: Some(t),
            };
            let r = telegram_to_reading_with(&tel, tz, ObisMap::builtin(), ctx).unwrap();
            assert!(r.issues.is_empty(), "{v}: {:?}", r.issues);
            assert_eq!(r.telegram_time, t);
            assert_eq!(r.get("e_use_lo_cum__kWh").unwrap().value, "1234.567");
            assert_eq!(r.get("g_use_cum__m3").unwrap().value, "4321.098");
            assert_eq!(r.get("g_use_cum__m3").unwrap().time, t);
        }
    }
}
