//! OpenTherm 32-bit frames and the data-ids the boiler monitor records.
//!
//! ```text
//!  31   30..28    27..24  23..16   15..0
//!  P    msg type  spare   data-id  data-value
//! ```
//!
//! P makes the number of set bits in the whole word even.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::RawValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MsgType {
    ReadData = 0,
    WriteData = 1,
    InvalidData = 2,
    Reserved = 3,
    ReadAck = 4,
    WriteAck = 5,
    DataInvalid = 6,
    UnknownDataId = 7,
}

impl MsgType {
    pub fn from_bits(bits: u8) -> Self {
        match bits & 0x7 {
            0 => MsgType::ReadData,
            1 => MsgType::WriteData,
            2 => MsgType::InvalidData,
            3 => MsgType::Reserved,
            4 => MsgType::ReadAck,
            5 => MsgType::WriteAck,
            6 => MsgType::DataInvalid,
            _ => MsgType::UnknownDataId,
        }
    }

    /// Slave-to-master replies that carry a valid value.
    pub fn is_reply(self) -> bool {
        matches!(self, MsgType::ReadAck | MsgType::WriteAck)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpenThermFrame {
    pub parity_bit: bool,
    pub msg_type: MsgType,
    /// Bits 27..24, zero on the wire but kept so words round-trip.
    pub spare: u8,
    pub data_id: u8,
    pub data_value: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum OpenThermError {
    #[error("parity violation in frame {0:#010x}")]
    Parity(u32),
}

impl OpenThermFrame {
    /// Build a frame with the parity bit set correctly.
    pub fn new(msg_type: MsgType, data_id: u8, data_value: u16) -> Self {
        let mut f = Self {
            parity_bit: false,
            msg_type,
            spare: 0,
            data_id,
            data_value,
        };
        f.parity_bit = encode_opentherm_frame(&f) >> 31 == 1;
        f
    }

    pub fn hb(&self) -> u8 {
        (self.data_value >> 8) as u8
    }

    pub fn lb(&self) -> u8 {
        self.data_value as u8
    }
}

impl fmt::Display for OpenThermFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08X}", encode_opentherm_frame(self))
    }
}

pub fn decode_opentherm_frame(word: u32) -> Result<OpenThermFrame, OpenThermError> {
    if !word.count_ones().is_multiple_of(2) {
        return Err(OpenThermError::Parity(word));
    }
    Ok(OpenThermFrame {
        parity_bit: word >> 31 == 1,
        msg_type: MsgType::from_bits((word >> 28) as u8),
        spare: ((word >> 24) & 0xF) as u8,
        data_id: (word >> 16) as u8,
        data_value: word as u16,
    })
}

/// Encode a frame; the parity bit is recomputed, not copied.
pub fn encode_opentherm_frame(f: &OpenThermFrame) -> u32 {
    let body = ((f.msg_type as u32) << 28)
        | (((f.spare & 0xF) as u32) << 24)
        | ((f.data_id as u32) << 16)
        | f.data_value as u32;
    body | ((body.count_ones() & 1) << 31)
}

pub fn decode_f88(value: u16) -> f64 {
    value as i16 as f64 / 256.0
}

/// Nearest f8.8 representation, saturating at the i16 range.
pub fn encode_f88(value: f64) -> u16 {
    (value * 256.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16 as u16
}

pub mod data_id {
    pub const STATUS: u8 = 0;
    pub const MAX_REL_MODULATION: u8 = 14;
    pub const MAX_CAPACITY_MIN_MODULATION: u8 = 15;
    pub const ROOM_SETPOINT: u8 = 16;
    pub const REL_MODULATION: u8 = 17;
    pub const ROOM_TEMP: u8 = 24;
    pub const BOILER_WATER_TEMP: u8 = 25;
    pub const RETURN_WATER_TEMP: u8 = 28;
    pub const MAX_CH_SETPOINT: u8 = 57;
}

/// Slave status flags in the low byte of data-id 0.
pub mod slave_status {
    pub const FAULT: u8 = 1 << 0;
    pub const CH_MODE: u8 = 1 << 1;
    pub const DHW_MODE: u8 = 1 << 2;
    pub const FLAME: u8 = 1 << 3;
}

/// Property values carried by a reply frame, or `None` for data-ids the
/// monitor does not record.
pub fn frame_values(f: &OpenThermFrame) -> Option<Vec<(&'static str, RawValue)>> {
    use data_id::*;
    let flag = |mask: u8| RawValue::Int((f.lb() & mask != 0) as i64);
    let f88 = || RawValue::Float(decode_f88(f.data_value));
    let percent = || RawValue::Int(decode_f88(f.data_value).round() as i64);
    let out = match f.data_id {
        STATUS => vec![
            ("isCentralHeatingModeOn", flag(slave_status::CH_MODE)),
            ("isDomesticHotWaterModeOn", flag(slave_status::DHW_MODE)),
            ("isBoilerFlameOn", flag(slave_status::FLAME)),
        ],
        MAX_REL_MODULATION => vec![("maxModulationLevel", percent())],
        MAX_CAPACITY_MIN_MODULATION => vec![
            ("maxBoilerCap", RawValue::Int(f.hb() as i64)),
            ("minModulationLevel", RawValue::Int(f.lb() as i64)),
        ],
        ROOM_SETPOINT => vec![("roomSetpointTemp", f88())],
        REL_MODULATION => vec![("relativeModulationLevel", percent())],
        ROOM_TEMP => vec![("roomTemp", f88())],
        BOILER_WATER_TEMP => vec![("boilerSupplyTemp", f88())],
        RETURN_WATER_TEMP => vec![("boilerReturnTemp", f88())],
        MAX_CH_SETPOINT => vec![("boilerMaxSupplyTemp", f88())],
        _ => return None,
    };
    Some(out)
}
