//! Kinematic stand-in for a physical arm: follows filtered targets through a
//! stochastic delay and publishes sensor topics at fixed rates.

mod chain;
mod delay;
mod streams;

pub use chain::{track_step, ArmState, DhLink, IkParams, Jacobian, KinematicChain};
pub use delay::{DelayLine, DelayModel, DelaySampler};
pub use streams::{
    synthetic_frame, Snapshot, StreamClock, StreamEmitter, StreamRecord, StreamSet, DEPTH_FRAME_LEN, IMAGE_SIDE,
    RGB_FRAME_LEN,
};

use crate::protocol::{Pose, RobotStateMsg, Timestamp, JOINTS};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// One simulated arm. Mutated only by its owner's stepping loop.
pub struct SimRobot {
    chain: KinematicChain,
    ik: IkParams,
    state: ArmState,
    joint_vel: [f64; JOINTS],
    target: Option<Pose>,
    delay: DelayLine<Pose>,
    applied: u64,
}

impl SimRobot {
    pub fn new(chain: KinematicChain, ik: IkParams, delay: &DelayModel) -> Result<Self> {
        chain.validate()?;
        delay.validate()?;
        Ok(SimRobot {
            state: ArmState { q: chain.ready, t: Timestamp::ZERO },
            chain,
            ik,
            joint_vel: [0.0; JOINTS],
            target: None,
            delay: DelayLine::new(delay),
            applied: 0,
        })
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn state(&self) -> &ArmState {
        &self.state
    }

    pub fn ee_pose(&self) -> Pose {
        self.chain.fk(&self.state.q).expect("joint limits are maintained")
    }

    /// Latest target that has reached the arm.
    pub fn active_target(&self) -> Option<Pose> {
        self.target
    }

    pub fn commands_applied(&self) -> u64 {
        self.applied
    }

    /// Homes the arm between sessions: back to the ready configuration with
    /// no target and nothing in flight.
    pub fn reset(&mut self, now: Timestamp) {
        self.delay.clear();
        self.target = None;
        self.state = ArmState { q: self.chain.ready, t: now };
        self.joint_vel = [0.0; JOINTS];
    }

    /// Sends a target through the delay line; returns when it will apply.
    pub fn command(&mut self, target: Pose, now: Timestamp) -> Timestamp {
        self.delay.delayed_apply(target, now)
    }

    /// Applies every command due by `now`, then takes one tracking step of `dt` seconds.
    pub fn step(&mut self, now: Timestamp, dt: f64) {
        for (_, target) in self.delay.pop_due(now) {
            self.target = Some(target);
            self.applied += 1;
        }
        let prev = self.state.q;
        if let Some(target) = self.target {
            self.state = track_step(&self.state, &target, dt, &self.chain, &self.ik);
        }
        self.state.t = now;
        for i in 0..JOINTS {
            self.joint_vel[i] = (self.state.q[i] - prev[i]) / dt;
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: RobotStateMsg {
                t: self.state.t,
                joints: self.state.q,
                joint_vel: self.joint_vel,
                ee_pose: self.ee_pose(),
                gripper: 1.0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Vec3;

    #[test]
    fn commands_apply_after_delay() {
        let delay = DelayModel { base_ms: 100.0, jitter_median_ms: 0.0, jitter_sigma: 0.0, seed: 0 };
        let mut r = SimRobot::new(KinematicChain::default(), IkParams::default(), &delay).unwrap();
        let home = r.ee_pose();
        let target = Pose::new(home.position + Vec3::new(0.05, 0.0, 0.0), home.orientation);
        assert_eq!(r.command(target, Timestamp::ZERO), Timestamp::from_millis(100));
        let tick = 0.02;
        for k in 1..5u64 {
            r.step(Timestamp::from_millis(20 * k), tick);
            assert_eq!(r.state().q, r.chain().ready);
        }
        r.step(Timestamp::from_millis(100), tick);
        assert_eq!(r.active_target(), Some(target));
        assert_ne!(r.state().q, r.chain().ready);
        assert_eq!(r.snapshot().state.t, Timestamp::from_millis(100));
    }
}
