//! Shared domain types, quaternion/pose math, timestamps and the
//! fixed-layout little-endian wire encoding used by every other module.

mod math;
mod wire;

pub use math::{Pose, UnitQuat, Vec3};
pub use wire::{Decode, Encode, PHONE_SAMPLE_LEN, ROBOT_STATE_LEN};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Sub};

/// Number of joints on every simulated arm.
pub const JOINTS: usize = 7;

/// Topic ids used in every session log.
pub mod topics {
    pub const PHONE: u16 = 0;
    pub const ROBOT_STATE: u16 = 1;
    pub const RGB_FRONT: u16 = 2;
    pub const RGB_TOP: u16 = 3;
    pub const DEPTH_TOP: u16 = 4;
    pub const EVENTS: u16 = 5;
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("decode error in field `{field}`: {detail}")]
    Decode { field: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Nanoseconds since the session epoch.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_nanos(nanos: u64) -> Self {
        Timestamp(nanos)
    }

    /// Rounds to the nearest nanosecond. Negative inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e9).round().max(0.0) as u64)
    }

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000_000)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Elapsed nanoseconds from `earlier` to `self`, zero if `earlier` is later.
    pub fn saturating_since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    /// Signed difference `self - other` in seconds.
    pub fn secs_since(self, other: Timestamp) -> f64 {
        (self.0 as i128 - other.0 as i128) as f64 / 1e9
    }
}

impl Add<u64> for Timestamp {
    type Output = Timestamp;
    fn add(self, nanos: u64) -> Timestamp {
        Timestamp(self.0 + nanos)
    }
}

impl Sub for Timestamp {
    type Output = u64;
    /// Panics on underflow in debug builds, like integer subtraction.
    fn sub(self, rhs: Timestamp) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// One 6-DoF controller message from the operator's device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhoneSample {
    pub seq: u32,
    pub t_client: Timestamp,
    /// Position change since the previous sample, in the robot base frame (meters).
    pub delta_pos: Vec3,
    /// Absolute device orientation.
    pub orientation: UnitQuat,
    pub clutch: bool,
}

/// Robot joint and end-effector telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotStateMsg {
    pub t: Timestamp,
    pub joints: [f64; JOINTS],
    pub joint_vel: [f64; JOINTS],
    pub ee_pose: Pose,
    /// Fraction open in `[0, 1]`.
    pub gripper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Phone,
    RobotState,
    RgbFrame,
    DepthFrame,
    Event,
}

impl MsgKind {
    pub fn code(self) -> u8 {
        match self {
            MsgKind::Phone => 0,
            MsgKind::RobotState => 1,
            MsgKind::RgbFrame => 2,
            MsgKind::DepthFrame => 3,
            MsgKind::Event => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => MsgKind::Phone,
            1 => MsgKind::RobotState,
            2 => MsgKind::RgbFrame,
            3 => MsgKind::DepthFrame,
            4 => MsgKind::Event,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDescriptor {
    pub topic_id: u16,
    pub name: String,
    pub msg_kind: MsgKind,
    pub declared_rate_hz: f64,
}

impl TopicDescriptor {
    pub fn new(topic_id: u16, name: impl Into<String>, msg_kind: MsgKind, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(ProtocolError::InvalidArgument(format!(
                "declared rate must be positive, got {rate_hz}"
            )));
        }
        Ok(TopicDescriptor {
            topic_id,
            name: name.into(),
            msg_kind,
            declared_rate_hz: rate_hz,
        })
    }
}

/// Angle in `[0, π]` of the rotation taking `a` to `b`.
pub fn quat_geodesic_angle(a: &UnitQuat, b: &UnitQuat) -> f64 {
    a.angle_to(b)
}

/// Hamilton product `a ∘ b`, renormalized.
pub fn quat_compose(a: &UnitQuat, b: &UnitQuat) -> UnitQuat {
    a.compose(b)
}

pub fn quat_inverse(a: &UnitQuat) -> UnitQuat {
    a.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_arithmetic() {
        let t = Timestamp::from_secs_f64(1.5);
        assert_eq!(t.nanos(), 1_500_000_000);
        assert_eq!(t.saturating_since(Timestamp(2_000_000_000)), 0);
        assert!((Timestamp(0).secs_since(t) + 1.5).abs() < 1e-12);
        assert_eq!(Timestamp::from_secs_f64(-3.0), Timestamp::ZERO);
    }

    #[test]
    fn topic_rate_must_be_positive() {
        assert!(TopicDescriptor::new(0, "x", MsgKind::Event, 0.0).is_err());
        assert!(TopicDescriptor::new(0, "x", MsgKind::Event, f64::NAN).is_err());
        assert!(TopicDescriptor::new(0, "x", MsgKind::Event, 30.0).is_ok());
    }

    #[test]
    fn msg_kind_codes_round_trip() {
        for code in 0..5u8 {
            assert_eq!(MsgKind::from_code(code).unwrap().code(), code);
        }
        assert!(MsgKind::from_code(5).is_none());
    }
}
