//! Fixed-layout little-endian payloads.
//!
//! ```text
//! PhoneSample   = seq u32 | t u64 | delta 3×f64 | quat 4×f64 (w,x,y,z) | clutch u8
//! RobotStateMsg = t u64 | joints 7×f64 | joint_vel 7×f64 | position 3×f64 + quat 4×f64 | gripper f64
//! ```
//!
//! Quaternions are written in their `w ≥ 0` canonical form, and the decoder
//! rejects anything else, so every value has exactly one byte sequence.

use super::{Pose, ProtocolError, Result, RobotStateMsg, Timestamp, UnitQuat, Vec3, PhoneSample, JOINTS};

pub const PHONE_SAMPLE_LEN: usize = 4 + 8 + 3 * 8 + 4 * 8 + 1;
pub const ROBOT_STATE_LEN: usize = 8 + JOINTS * 8 * 2 + 7 * 8 + 8;

pub trait Encode {
    fn encode(&self) -> Vec<u8>;
}

pub trait Decode: Sized {
    fn decode(bytes: &[u8]) -> Result<Self>;
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.buf.get(self.pos..end).ok_or_else(|| ProtocolError::Decode {
            field,
            detail: format!("need {N} bytes at offset {}, have {}", self.pos, self.buf.len()),
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take::<1>(field)?[0])
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(field)?))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(field)?))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(field)?);
        if !v.is_finite() {
            return Err(ProtocolError::Decode { field, detail: "non-finite value".into() });
        }
        Ok(v)
    }

    fn vec3(&mut self, field: &'static str) -> Result<Vec3> {
        Ok(Vec3::new(self.f64(field)?, self.f64(field)?, self.f64(field)?))
    }

    fn quat(&mut self, field: &'static str) -> Result<UnitQuat> {
        let (w, x, y, z) = (self.f64(field)?, self.f64(field)?, self.f64(field)?, self.f64(field)?);
        let q = UnitQuat::new(w, x, y, z)
            .map_err(|e| ProtocolError::Decode { field, detail: e.to_string() })?;
        let c = q.canonical();
        if q.to_array().map(f64::to_bits) != c.to_array().map(f64::to_bits) {
            return Err(ProtocolError::Decode { field, detail: "quaternion not in canonical form".into() });
        }
        Ok(q)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::Decode {
                field: "length",
                detail: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_quat(out: &mut Vec<u8>, q: &UnitQuat) {
    put_f64s(out, &q.canonical().to_array());
}

impl Encode for PhoneSample {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PHONE_SAMPLE_LEN);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.t_client.0.to_le_bytes());
        put_f64s(&mut out, &self.delta_pos.to_array());
        put_quat(&mut out, &self.orientation);
        out.push(self.clutch as u8);
        out
    }
}

impl Decode for PhoneSample {
    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let seq = c.u32("seq")?;
        let t_client = Timestamp(c.u64("t_client")?);
        let delta_pos = c.vec3("delta_pos")?;
        let orientation = c.quat("orientation")?;
        let clutch = match c.u8("clutch")? {
            0 => false,
            1 => true,
            other => {
                return Err(ProtocolError::Decode { field: "clutch", detail: format!("invalid flag {other}") })
            }
        };
        c.finish()?;
        Ok(PhoneSample { seq, t_client, delta_pos, orientation, clutch })
    }
}

impl Encode for RobotStateMsg {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ROBOT_STATE_LEN);
        out.extend_from_slice(&self.t.0.to_le_bytes());
        put_f64s(&mut out, &self.joints);
        put_f64s(&mut out, &self.joint_vel);
        put_f64s(&mut out, &self.ee_pose.position.to_array());
        put_quat(&mut out, &self.ee_pose.orientation);
        put_f64s(&mut out, &[self.gripper]);
        out
    }
}

impl Decode for RobotStateMsg {
    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let t = Timestamp(c.u64("t")?);
        let mut joints = [0.0; JOINTS];
        for j in joints.iter_mut() {
            *j = c.f64("joints")?;
        }
        let mut joint_vel = [0.0; JOINTS];
        for v in joint_vel.iter_mut() {
            *v = c.f64("joint_vel")?;
        }
        let position = c.vec3("ee_pose.position")?;
        let orientation = c.quat("ee_pose.orientation")?;
        let gripper = c.f64("gripper")?;
        if !(0.0..=1.0).contains(&gripper) {
            return Err(ProtocolError::Decode { field: "gripper", detail: format!("{gripper} outside [0, 1]") });
        }
        c.finish()?;
        Ok(RobotStateMsg { t, joints, joint_vel, ee_pose: Pose::new(position, orientation), gripper })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        -1e3..1e3f64
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuat::normalized(w, x, y, z).unwrap())
    }

    fn arb_phone() -> impl Strategy<Value = PhoneSample> {
        (any::<u32>(), any::<u64>(), finite(), finite(), finite(), arb_quat(), any::<bool>()).prop_map(
            |(seq, t, x, y, z, q, clutch)| PhoneSample {
                seq,
                t_client: Timestamp(t),
                delta_pos: Vec3::new(x, y, z),
                orientation: q.canonical(),
                clutch,
            },
        )
    }

    fn arb_state() -> impl Strategy<Value = RobotStateMsg> {
        (
            any::<u64>(),
            prop::array::uniform7(-3.0..3.0f64),
            prop::array::uniform7(-3.0..3.0f64),
            (finite(), finite(), finite()),
            arb_quat(),
            0.0..=1.0f64,
        )
            .prop_map(|(t, joints, joint_vel, (x, y, z), q, gripper)| RobotStateMsg {
                t: Timestamp(t),
                joints,
                joint_vel,
                ee_pose: Pose::new(Vec3::new(x, y, z), q.canonical()),
                gripper,
            })
    }

    fn sample(q: UnitQuat) -> PhoneSample {
        PhoneSample {
            seq: 7,
            t_client: Timestamp(1234),
            delta_pos: Vec3::new(0.01, -0.02, 0.0),
            orientation: q,
            clutch: false,
        }
    }

    #[test]
    fn layout_lengths() {
        assert_eq!(PHONE_SAMPLE_LEN, 69);
        assert_eq!(ROBOT_STATE_LEN, 184);
        assert_eq!(sample(UnitQuat::IDENTITY).encode().len(), PHONE_SAMPLE_LEN);
    }

    #[test]
    fn round_trip_clutch_false() {
        let s = sample(UnitQuat::normalized(0.5, 0.1, 0.2, -0.3).unwrap());
        assert_eq!(PhoneSample::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn empty_input_is_decode_error() {
        let err = PhoneSample::decode(&[]).unwrap_err();
        assert!(matches!(err, ProtocolError::Decode { field: "seq", .. }));
        assert!(RobotStateMsg::decode(&[]).is_err());
    }

    #[test]
    fn truncation_names_field() {
        let bytes = sample(UnitQuat::IDENTITY).encode();
        let err = PhoneSample::decode(&bytes[..20]).unwrap_err();
        assert!(matches!(err, ProtocolError::Decode { field: "delta_pos", .. }), "{err}");
        let err = PhoneSample::decode(&bytes[..68]).unwrap_err();
        assert!(matches!(err, ProtocolError::Decode { field: "clutch", .. }), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(PhoneSample::decode(&long), Err(ProtocolError::Decode { field: "length", .. })));
    }

    #[test]
    fn negative_w_is_canonicalized() {
        let q = UnitQuat::normalized(-0.6, 0.3, -0.2, 0.7).unwrap();
        let decoded = PhoneSample::decode(&sample(q).encode()).unwrap().orientation;
        assert!(decoded.w() >= 0.0);
        // same rotation: compare matrices entrywise
        let (a, b) = (q.to_rotation_matrix(), decoded.to_rotation_matrix());
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-15);
            }
        }
        assert_eq!(sample(q).encode(), sample(q.negated()).encode());
    }

    #[test]
    fn non_canonical_bytes_are_rejected() {
        let mut bytes = sample(UnitQuat::IDENTITY).encode();
        // overwrite w with -1.0
        bytes[36..44].copy_from_slice(&(-1.0f64).to_le_bytes());
        let err = PhoneSample::decode(&bytes).unwrap_err();
        assert!(matches!(err, ProtocolError::Decode { field: "orientation", .. }));
    }

    #[test]
    fn bad_clutch_flag() {
        let mut bytes = sample(UnitQuat::IDENTITY).encode();
        bytes[68] = 2;
        assert!(matches!(PhoneSample::decode(&bytes), Err(ProtocolError::Decode { field: "clutch", .. })));
    }

    proptest! {
        #[test]
        fn phone_sample_round_trip(s in arb_phone()) {
            let bytes = s.encode();
            let back = PhoneSample::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back, s);
        }

        #[test]
        fn robot_state_round_trip(m in arb_state()) {
            let bytes = m.encode();
            prop_assert_eq!(bytes.len(), ROBOT_STATE_LEN);
            let back = RobotStateMsg::decode(&bytes).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn encoding_equal_iff_same_rotation(a in arb_quat(), b in arb_quat()) {
            prop_assert_eq!(sample(a).encode(), sample(a.negated()).encode());
            let same = sample(a).encode() == sample(b).encode();
            prop_assert_eq!(same, a.canonical() == b.canonical());
        }
    }
}
