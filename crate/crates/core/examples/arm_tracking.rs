//! Drives the simulated 7-joint arm to a Cartesian goal and prints the
//! convergence, then shows a command arriving through a delayed link.

use telefleet::protocol::{Pose, Timestamp, Vec3};
use telefleet::sim::{track_step, ArmState, DelayModel, IkParams, KinematicChain, SimRobot};

fn main() {
    let chain = KinematicChain::default();
    let ik = IkParams::default();
    let start = chain.fk(&chain.ready).unwrap();
    let goal = Pose::new(Vec3::new(start.position.x + 0.1, start.position.y - 0.05, start.position.z), start.orientation);

    let mut st = ArmState { q: chain.ready, t: Timestamp::ZERO };
    for k in 1..=100u64 {
        st = track_step(&st, &goal, 0.02, &chain, &ik);
        if k % 10 == 0 {
            let err = (chain.fk(&st.q).unwrap().position - goal.position).norm();
            println!("step {k:>3}: position error {:.5} m", err);
        }
    }
    println!("joints: {:.3?}", st.q);

    let delay = DelayModel { base_ms: 100.0, jitter_median_ms: 20.0, ..DelayModel::default() };
    let mut robot = SimRobot::new(chain, ik, &delay).unwrap();
    robot.command(goal, Timestamp::ZERO);
    for ms in (0..=300).step_by(50) {
        let now = Timestamp::from_millis(ms);
        robot.step(now, 0.05);
        println!("{ms:>3} ms: target applied = {}", robot.active_target().is_some());
    }
}
