//! Clutch re-anchoring: device motion maps onto the robot only while engaged,
//! relative to the device and robot poses captured at the moment of engagement.

use crate::protocol::{PhoneSample, Pose, UnitQuat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Anchors {
    phone: UnitQuat,
    robot: Pose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClutchState {
    engaged: bool,
    anchors: Option<Anchors>,
    accumulated_translation: Vec3,
    last_target: Option<Pose>,
}

impl ClutchState {
    /// Engages and re-anchors. The accumulated translation restarts at zero.
    pub fn engage(phone_orientation: UnitQuat, robot_pose: Pose) -> Self {
        let mut c = ClutchState::default();
        c.re_engage(phone_orientation, robot_pose);
        c
    }

    pub fn re_engage(&mut self, phone_orientation: UnitQuat, robot_pose: Pose) {
        self.engaged = true;
        self.anchors = Some(Anchors { phone: phone_orientation, robot: robot_pose });
        self.accumulated_translation = Vec3::ZERO;
        self.last_target = Some(robot_pose);
    }

    pub fn disengage(&mut self) {
        self.engaged = false;
    }

    pub fn is_engaged(&self) -> bool {
        self.engaged
    }

    pub fn phone_anchor(&self) -> Option<UnitQuat> {
        self.anchors.map(|a| a.phone)
    }

    pub fn robot_anchor(&self) -> Option<Pose> {
        self.anchors.map(|a| a.robot)
    }

    pub fn accumulated_translation(&self) -> Vec3 {
        self.accumulated_translation
    }

    /// The most recently composed target.
    pub fn last_target(&self) -> Option<Pose> {
        self.last_target
    }

    /// Target that `compose_target` would produce, without committing it.
    pub fn preview(&self, s: &PhoneSample, gain: f64) -> Option<Pose> {
        if !self.engaged {
            return self.last_target;
        }
        let a = self.anchors?;
        let offset = self.accumulated_translation + s.delta_pos * gain;
        let relative = a.phone.inverse().compose(&s.orientation);
        Some(Pose::new(a.robot.position + offset, a.robot.orientation.compose(&relative)))
    }

    /// Accumulates the sample's translation and returns the new target.
    /// While disengaged this is a no-op returning the last target.
    pub fn compose_target(&mut self, s: &PhoneSample, gain: f64) -> Option<Pose> {
        if !self.engaged {
            return self.last_target;
        }
        let target = self.preview(s, gain)?;
        self.accumulated_translation += s.delta_pos * gain;
        self.last_target = Some(target);
        Some(target)
    }
}
