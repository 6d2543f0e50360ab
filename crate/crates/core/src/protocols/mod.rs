//! Field protocols: DSMR P1 smart-meter telegrams and OpenTherm frames.
//!
//! Bit layouts and the OBIS map are described in `docs/formats.md`.

pub mod crc;
pub mod dsmr_time;
pub mod obis;
pub mod opentherm;
pub mod ot_sampler;
pub mod p1;

pub use crc::{crc16, verify_telegram_crc, CrcVerdict};
pub use dsmr_time::{dsmr_timestamp_to_unix, resolve_not_after, DsmrTimeError, DsmrTimestamp, DstFlag};
pub use obis::{telegram_to_reading, telegram_to_reading_with, ObisMap, ReadingContext, SmartMeterReading};
pub use opentherm::{
    decode_f88, decode_opentherm_frame, encode_f88, encode_opentherm_frame, MsgType, OpenThermError, OpenThermFrame,
};
pub use ot_sampler::{frames_to_measurements, FrameSampler, SamplerStats};
pub use p1::{parse_p1_bytes, parse_p1_telegram, ObisObject, P1Error, P1Telegram};
