//! Encodes a phone sample, shows that q and -q produce the same bytes, and
//! decodes it back.

use telefleet::protocol::{Decode, Encode, PhoneSample, Timestamp, UnitQuat, Vec3};

fn main() {
    let q = UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 2.5);
    let mut sample = PhoneSample {
        seq: 41,
        t_client: Timestamp::from_millis(820),
        delta_pos: Vec3::new(0.004, -0.001, 0.0),
        orientation: q,
        clutch: true,
    };
    let bytes = sample.encode();
    println!("{} bytes: {:02x?}", bytes.len(), &bytes[..16]);

    sample.orientation = q.negated();
    assert_eq!(sample.encode(), bytes, "antipodal quaternions share one encoding");

    let back = PhoneSample::decode(&bytes).expect("valid sample");
    println!("seq {} clutch {} w={:.4} z={:.4}", back.seq, back.clutch, back.orientation.w(), back.orientation.z());
    println!("angle between q and -q: {}", q.angle_to(&q.negated()));

    // truncated buffers are rejected, not padded
    println!("decode 68 bytes: {:?}", PhoneSample::decode(&bytes[..68]).err());
}
