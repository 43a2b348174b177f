//! Feeds clutched phone deltas through the teleop pipeline: smoothing,
//! clutch re-anchoring and the safety gate.

use telefleet::protocol::{PhoneSample, Pose, Timestamp, UnitQuat, Vec3};
use telefleet::teleop::{PipelineConfig, SampleOutcome, TeleopPipeline};

fn sample(seq: u32, dx: f64, clutch: bool) -> PhoneSample {
    PhoneSample {
        seq,
        t_client: Timestamp::from_millis(seq as u64 * 20),
        delta_pos: Vec3::new(dx, 0.0, 0.0),
        orientation: UnitQuat::IDENTITY,
        clutch,
    }
}

fn main() {
    let home = Pose::new(Vec3::new(0.5, 0.0, 0.4), UnitQuat::IDENTITY);
    let mut pipe = TeleopPipeline::new(PipelineConfig::default(), home, Timestamp::ZERO);

    // 0.5 s pushing +x, 0.2 s released, 0.3 s pushing again
    let mut seq = 0;
    for (n, dx, clutch) in [(25, 0.002, true), (10, 0.002, false), (15, 0.002, true)] {
        for _ in 0..n {
            let now = Timestamp::from_millis(seq as u64 * 20);
            pipe.on_sample(&sample(seq, dx, clutch), now, home);
            let cmd = pipe.tick(now);
            if seq % 5 == 0 {
                println!("t={:.2}s clutch={clutch:<5} commanded x={:.4}", now.as_secs_f64(), cmd.position.x);
            }
            seq += 1;
        }
    }

    // a 10 cm jump in one tick is far beyond the velocity bound
    loop {
        let now = Timestamp::from_millis(seq as u64 * 20);
        match pipe.on_sample(&sample(seq, 0.1, true), now, home) {
            SampleOutcome::Rejected(r) => println!("rejected: {r:?}"),
            SampleOutcome::Abort(r) => {
                println!("session aborted: {r:?}");
                break;
            }
            SampleOutcome::Accepted(_) => unreachable!(),
        }
        seq += 1;
    }
}
