//! Sensor topics emitted on the simulated clock.
//!
//! Frame `k` of a stream at rate `r` is stamped `round(k · 10⁹ / r)` ns after
//! the stream epoch. Emission windows are half-open, so a stream running for
//! `D` seconds from phase zero yields `ceil(r · D)` frames.

use crate::protocol::{topics, Encode, RobotStateMsg, Timestamp};
use serde::{Deserialize, Serialize};

pub const IMAGE_SIDE: usize = 32;
pub const RGB_FRAME_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * 3;
pub const DEPTH_FRAME_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSet {
    pub rgb_front_hz: f64,
    pub rgb_top_hz: f64,
    pub depth_top_hz: f64,
    pub robot_state_hz: f64,
    /// Image topics can be switched off for large load tests.
    pub images: bool,
}

impl Default for StreamSet {
    fn default() -> Self {
        StreamSet { rgb_front_hz: 30.0, rgb_top_hz: 30.0, depth_top_hz: 30.0, robot_state_hz: 100.0, images: true }
    }
}

impl StreamSet {
    pub fn validate(&self) -> super::Result<()> {
        let rates = [self.rgb_front_hz, self.rgb_top_hz, self.depth_top_hz, self.robot_state_hz];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(super::SimError::InvalidArgument(format!("stream rates must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(topic_id, rate)` for every enabled sensor stream.
    pub fn enabled(&self) -> Vec<(u16, f64)> {
        let mut v = vec![(topics::ROBOT_STATE, self.robot_state_hz)];
        if self.images {
            v.extend([
                (topics::RGB_FRONT, self.rgb_front_hz),
                (topics::RGB_TOP, self.rgb_top_hz),
                (topics::DEPTH_TOP, self.depth_top_hz),
            ]);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamClock {
    pub topic_id: u16,
    pub rate_hz: f64,
    /// Offset of frame 0 from the epoch.
    pub phase_ns: u64,
    next_index: u64,
}

impl StreamClock {
    pub fn new(topic_id: u16, rate_hz: f64, phase_ns: u64) -> Self {
        StreamClock { topic_id, rate_hz, phase_ns, next_index: 0 }
    }

    pub fn frame_time(&self, k: u64) -> Timestamp {
        Timestamp(self.phase_ns + (k as f64 * 1e9 / self.rate_hz).round() as u64)
    }

    /// Indices of all not-yet-emitted frames stamped strictly before `until`.
    pub fn due(&mut self, until: Timestamp) -> std::ops::Range<u64> {
        let start = self.next_index;
        while self.frame_time(self.next_index) < until {
            self.next_index += 1;
        }
        start..self.next_index
    }
}

/// What the arm looks like when a frame is captured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub state: RobotStateMsg,
}

impl Snapshot {
    fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.state.joints {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub topic_id: u16,
    pub t: Timestamp,
    pub payload: Vec<u8>,
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic synthetic image bytes for `(topic, frame, arm state)`.
pub fn synthetic_frame(topic_id: u16, frame_index: u64, state_hash: u64, len: usize) -> Vec<u8> {
    let mut seed = state_hash ^ ((topic_id as u64) << 48) ^ frame_index.wrapping_mul(0x2545_f491_4f6c_dd1d);
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        out.extend_from_slice(&splitmix(&mut seed).to_le_bytes());
    }
    out.truncate(len);
    out
}

/// Emits every enabled sensor topic on a shared epoch.
#[derive(Debug, Clone)]
pub struct StreamEmitter {
    clocks: Vec<StreamClock>,
}

impl StreamEmitter {
    pub fn new(streams: &StreamSet) -> Self {
        StreamEmitter { clocks: streams.enabled().into_iter().map(|(id, r)| StreamClock::new(id, r, 0)).collect() }
    }

    pub fn with_clocks(clocks: Vec<StreamClock>) -> Self {
        StreamEmitter { clocks }
    }

    /// Records for all frames stamped in `[last emitted, until)`, ordered by
    /// time then topic id. Every frame in one call captures `snapshot`.
    pub fn emit_until(&mut self, until: Timestamp, snapshot: &Snapshot) -> Vec<StreamRecord> {
        let hash = snapshot.hash();
        let mut out = Vec::new();
        for clock in &mut self.clocks {
            for k in clock.due(until) {
                let t = clock.frame_time(k);
                let payload = match clock.topic_id {
                    topics::ROBOT_STATE => RobotStateMsg { t, ..snapshot.state }.encode(),
                    topics::DEPTH_TOP => synthetic_frame(clock.topic_id, k, hash, DEPTH_FRAME_LEN),
                    _ => synthetic_frame(clock.topic_id, k, hash, RGB_FRAME_LEN),
                };
                out.push(StreamRecord { topic_id: clock.topic_id, t, payload });
            }
        }
        out.sort_by_key(|r| (r.t, r.topic_id));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Pose, JOINTS};

    fn snapshot() -> Snapshot {
        Snapshot {
            state: RobotStateMsg {
                t: Timestamp(0),
                joints: [0.1; JOINTS],
                joint_vel: [0.0; JOINTS],
                ee_pose: Pose::default(),
                gripper: 1.0,
            },
        }
    }

    fn count(records: &[StreamRecord], topic: u16) -> usize {
        records.iter().filter(|r| r.topic_id == topic).count()
    }

    #[test]
    fn ten_seconds_rate_arithmetic() {
        let mut e = StreamEmitter::new(&StreamSet::default());
        let recs = e.emit_until(Timestamp::from_secs_f64(10.0), &snapshot());
        assert_eq!(count(&recs, topics::RGB_FRONT), 300);
        assert_eq!(count(&recs, topics::RGB_TOP), 300);
        assert_eq!(count(&recs, topics::DEPTH_TOP), 300);
        assert_eq!(count(&recs, topics::ROBOT_STATE), 1000);
        assert!(recs.windows(2).all(|w| (w[0].t, w[0].topic_id) <= (w[1].t, w[1].topic_id)));
    }

    #[test]
    fn incremental_emission_matches_one_shot() {
        let mut a = StreamEmitter::new(&StreamSet::default());
        let mut b = StreamEmitter::new(&StreamSet::default());
        let whole = a.emit_until(Timestamp::from_secs_f64(2.0), &snapshot());
        let mut parts = Vec::new();
        for ms in (7..=2000).step_by(7).chain([2000]) {
            parts.extend(b.emit_until(Timestamp::from_millis(ms), &snapshot()));
        }
        let key = |r: &StreamRecord| (r.topic_id, r.t);
        let mut w: Vec<_> = whole.iter().map(key).collect();
        let mut p: Vec<_> = parts.iter().map(key).collect();
        w.sort();
        p.sort();
        assert_eq!(w, p);
    }

    #[test]
    fn zero_duration_emits_nothing() {
        let mut e = StreamEmitter::new(&StreamSet::default());
        assert!(e.emit_until(Timestamp(0), &snapshot()).is_empty());
    }

    #[test]
    fn deterministic_payloads() {
        let a = StreamEmitter::new(&StreamSet::default()).emit_until(Timestamp::from_secs_f64(1.0), &snapshot());
        let b = StreamEmitter::new(&StreamSet::default()).emit_until(Timestamp::from_secs_f64(1.0), &snapshot());
        assert_eq!(a, b);
        let rgb = a.iter().find(|r| r.topic_id == topics::RGB_FRONT).unwrap();
        assert_eq!(rgb.payload.len(), RGB_FRAME_LEN);
        let depth = a.iter().find(|r| r.topic_id == topics::DEPTH_TOP).unwrap();
        assert_eq!(depth.payload.len(), DEPTH_FRAME_LEN);
    }

    #[test]
    fn phase_offset_count() {
        // phase 10 ms, 30 Hz over [0, 1 s): frames at 10 ms + k·33.3 ms, k = 0..29
        let mut c = StreamClock::new(9, 30.0, 10_000_000);
        assert_eq!(c.due(Timestamp::from_secs_f64(1.0)).count(), 30);
    }
}
