//! Down-sampling a timestamped OpenTherm frame stream to the per-property
//! intervals of the boiler monitor.
//!
//! Property `p` with interval `I` has one slot per multiple of `I`. Slot `k`
//! collects frames in `[kI - I/2, kI + I/2)` and keeps the frame nearest to
//! `kI`, the earlier one on a tie. The measurement carries the frame's own
//! capture time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::opentherm::{decode_opentherm_frame, frame_values, OpenThermFrame};
use crate::domain::catalog::{Catalog, OPENTHERM_MONITOR};
use crate::domain::{render_value, Measurement, UnixTime, ValueFormat};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub frames: u64,
    pub parity_errors: u64,
    pub non_reply: u64,
    pub unknown_ids: BTreeMap<u8, u64>,
    /// Frames for a slot that was already decided.
    pub late: u64,
    pub emitted: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    slot: i64,
    /// Twice the distance to the slot centre.
    dist2: i64,
    measurement: Measurement,
}

#[derive(Debug, Clone)]
struct Track {
    interval: i64,
    format: ValueFormat,
    pending: Option<Pending>,
    /// Highest slot already emitted.
    done: Option<i64>,
}

fn slot_of(t: UnixTime, interval: i64) -> i64 {
    (2 * t + interval).div_euclid(2 * interval)
}

#[derive(Debug, Clone)]
pub struct FrameSampler {
    tracks: BTreeMap<String, Track>,
    stats: SamplerStats,
}

impl FrameSampler {
    pub fn new(properties: impl IntoIterator<Item = (String, i64, ValueFormat)>) -> Self {
        let tracks = properties
            .into_iter()
            .map(|(name, interval, format)| {
                assert!(interval > 0, "interval of {name} must be positive");
                let track = Track {
                    interval,
                    format,
                    pending: None,
                    done: None,
                };
                (name, track)
            })
            .collect();
        Self {
            tracks,
            stats: SamplerStats::default(),
        }
    }

    /// Sampler with the boiler monitor's catalog intervals.
    pub fn opentherm_monitor() -> Self {
        let ty = Catalog::shipped().get(OPENTHERM_MONITOR).expect("catalog has the OpenTherm monitor");
        Self::new(
            ty.properties
                .iter()
                .map(|p| (p.name.clone(), p.default_interval_s, p.value_format)),
        )
    }

    pub fn stats(&self) -> &SamplerStats {
        &self.stats
    }

    /// Feed one raw word; parity failures are counted and dropped.
    pub fn push_word(&mut self, time: UnixTime, word: u32) -> Vec<Measurement> {
        match decode_opentherm_frame(word) {
            Ok(f) => self.push(time, &f),
            Err(_) => {
                self.stats.frames += 1;
                self.stats.parity_errors += 1;
                Vec::new()
            }
        }
    }

    /// Feed one frame. Returns measurements of slots this frame closed.
    pub fn push(&mut self, time: UnixTime, frame: &OpenThermFrame) -> Vec<Measurement> {
        self.stats.frames += 1;
        if !frame.msg_type.is_reply() {
            self.stats.non_reply += 1;
            return Vec::new();
        }
        let Some(values) = frame_values(frame) else {
            *self.stats.unknown_ids.entry(frame.data_id).or_default() += 1;
            return Vec::new();
        };
        let mut out = Vec::new();
        for (name, raw) in values {
            let Some(track) = self.tracks.get_mut(name) else {
                continue;
            };
            let slot = slot_of(time, track.interval);
            if track.done.is_some_and(|d| slot <= d) {
                self.stats.late += 1;
                continue;
            }
            let Ok(value) = render_value(track.format, &raw) else {
                continue;
            };
            let dist2 = (2 * time - 2 * slot * track.interval).abs();
            let candidate = Pending {
                slot,
                dist2,
                measurement: Measurement::new(name, time, value),
            };
            match &track.pending {
                None => track.pending = Some(candidate),
                Some(p) if slot < p.slot => self.stats.late += 1,
                Some(p) if slot > p.slot => {
                    let old = track.pending.replace(candidate).expect("pending present");
                    track.done = Some(old.slot);
                    out.push(old.measurement);
                }
                Some(p) => {
                    if (dist2, time) < (p.dist2, p.measurement.time) {
                        track.pending = Some(candidate);
                    }
                }
            }
        }
        self.stats.emitted += out.len() as u64;
        out
    }

    /// Emit every pending slot whose window closes at or before `horizon`,
    /// i.e. no frame stamped `>= horizon` could still land in it.
    pub fn flush_until(&mut self, horizon: UnixTime) -> Vec<Measurement> {
        let mut out = Vec::new();
        for track in self.tracks.values_mut() {
            let complete = track
                .pending
                .as_ref()
                .is_some_and(|p| 2 * horizon >= 2 * p.slot * track.interval + track.interval);
            if complete {
                let p = track.pending.take().expect("checked");
                track.done = Some(p.slot);
                out.push(p.measurement);
            }
        }
        out.sort();
        self.stats.emitted += out.len() as u64;
        out
    }

    /// Emit everything still pending.
    pub fn finish(&mut self) -> Vec<Measurement> {
        self.flush_until(UnixTime::MAX / 4)
    }
}

/// One-shot sampling of a whole frame stream.
pub fn frames_to_measurements(frames: &[(UnixTime, OpenThermFrame)]) -> (Vec<Measurement>, SamplerStats) {
    let mut sampler = FrameSampler::opentherm_monitor();
    let mut out = Vec::new();
    for (t, f) in frames {
        out.extend(sampler.push(*t, f));
    }
    out.extend(sampler.finish());
    out.sort_by(|a, b| (a.time, &a.property).cmp(&(b.time, &b.property)));
    (out, sampler.stats.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}: {text:?}")]
pub struct ReplayError {
    pub line: usize,
    pub text: String,
    pub reason: &'static str,
}

/// Parse a replay file: `<unix-seconds> <8 hex digits>` per line, separated
/// by whitespace. Blank lines and `#` comments are skipped.
pub fn parse_replay(text: &str) -> Result<Vec<(UnixTime, u32)>, ReplayError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason| ReplayError {
            line: idx + 1,
            text: raw.to_string(),
            reason,
        };
        let mut parts = line.split_whitespace();
        let (Some(t), Some(w), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected two fields"));
        };
        let t: UnixTime = t.parse().map_err(|_| err("bad time"))?;
        let w = w.strip_prefix("0x").unwrap_or(w);
        if w.len() != 8 {
            return Err(err("frame is not 8 hex digits"));
        }
        let w = u32::from_str_radix(w, 16).map_err(|_| err("frame is not 8 hex digits"))?;
        out.push((t, w));
    }
    Ok(out)
}

pub fn format_replay(frames: &[(UnixTime, u32)]) -> String {
    frames.iter().map(|(t, w)| format!("{t}\t{w:08X}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::opentherm::{encode_f88, MsgType};

    fn ack(id: u8, v: u16) -> OpenThermFrame {
        OpenThermFrame::new(MsgType::ReadAck, id, v)
    }

    #[test]
    fn one_room_temp_per_five_minutes() {
        let frames = [(1_000_100, ack(24, encode_f88(20.0))), (1_000_340, ack(24, encode_f88(20.5)))];
        let (m, _) = frames_to_measurements(&frames);
        assert_eq!(m.len(), 1);
        // slot centre 1_000_200: 100 s vs 140 s away
        assert_eq!(m[0], Measurement::new("roomTemp", 1_000_100, "20.00"));
    }

    #[test]
    fn supply_temp_keeps_frame_time() {
        let (m, _) = frames_to_measurements(&[(1_000_003, ack(25, 0x1480))]);
        assert_eq!(m, vec![Measurement::new("boilerSupplyTemp", 1_000_003, "20.50")]);
    }

    #[test]
    fn tie_goes_to_earlier_frame() {
        let frames = [(1_000_006, ack(25, encode_f88(30.0))), (1_000_014, ack(25, encode_f88(31.0)))];
        let (m, _) = frames_to_measurements(&frames);
        // both 4 s from 1_000_010
        assert_eq!(m, vec![Measurement::new("boilerSupplyTemp", 1_000_006, "30.00")]);
        // same result with the frames reversed
        let rev = [frames[1], frames[0]];
        let mut s = FrameSampler::opentherm_monitor();
        let mut out = Vec::new();
        for (t, f) in rev {
            out.extend(s.push(t, &f));
        }
        out.extend(s.finish());
        assert_eq!(out, m);
    }

    #[test]
    fn upper_window_edge_belongs_to_next_slot() {
        let frames = [(1_000_005, ack(25, encode_f88(30.0))), (1_000_015, ack(25, encode_f88(31.0)))];
        let (m, _) = frames_to_measurements(&frames);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn unknown_and_non_reply_frames_are_counted() {
        let frames = [
            (10, ack(200, 1)),
            (11, OpenThermFrame::new(MsgType::ReadData, 25, 0)),
            (12, ack(25, 0x1480)),
        ];
        let (m, stats) = frames_to_measurements(&frames);
        assert_eq!(m.len(), 1);
        assert_eq!(stats.unknown_ids.get(&200), Some(&1));
        assert_eq!(stats.non_reply, 1);
    }

    #[test]
    fn flush_emits_only_closed_windows() {
        let mut s = FrameSampler::opentherm_monitor();
        s.push(100, &ack(25, 0x1480));
        // slot 10 covers [95, 105)
        assert!(s.flush_until(104).is_empty());
        assert_eq!(s.flush_until(105).len(), 1);
        assert!(s.push(101, &ack(25, 0x1480)).is_empty());
        assert_eq!(s.stats().late, 1);
    }

    #[test]
    fn replay_round_trip() {
        let frames = vec![(1_700_000_000, 0xC019_1480), (1_700_000_001, 0x0000_0000)];
        let text = format!("# capture\n{}", format_replay(&frames));
        assert_eq!(parse_replay(&text).unwrap(), frames);
        assert_eq!(parse_replay("1 2 3").unwrap_err().line, 1);
        assert_eq!(parse_replay("\n5 C01914").unwrap_err().line, 2);
    }
}
