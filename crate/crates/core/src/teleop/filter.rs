//! First-order exponential smoother for end-effector targets.
//!
//! Each step blends toward the target with `α = dt / (τ + dt)`, where
//! `τ = 1 / (2π · cutoff_hz)`. Positions blend linearly per axis,
//! orientation by slerp with the same `α`.

use super::{Result, TeleopError};
use crate::protocol::{Pose, Timestamp, UnitQuat, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub cutoff_hz: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { cutoff_hz: 2.0 }
    }
}

impl FilterParams {
    pub fn new(cutoff_hz: f64) -> Result<Self> {
        let p = FilterParams { cutoff_hz };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz.is_finite()) {
            return Err(TeleopError::InvalidArgument(format!(
                "filter.cutoff_hz must be positive, got {}",
                self.cutoff_hz
            )));
        }
        Ok(())
    }

    /// Time constant in seconds.
    pub fn tau(&self) -> f64 {
        1.0 / (2.0 * PI * self.cutoff_hz)
    }

    /// Blend factor for a step of `dt` seconds.
    pub fn alpha(&self, dt: f64) -> f64 {
        dt / (self.tau() + dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub y_pos: Vec3,
    pub y_quat: UnitQuat,
    pub last_t: Timestamp,
}

impl FilterState {
    pub fn at_rest(pose: Pose, t: Timestamp) -> Self {
        FilterState { y_pos: pose.position, y_quat: pose.orientation, last_t: t }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.y_pos, self.y_quat)
    }
}

pub fn lowpass_step(state: &FilterState, target: &Pose, t: Timestamp, params: &FilterParams) -> Result<FilterState> {
    if t <= state.last_t {
        return Err(TeleopError::InvalidArgument(format!(
            "filter time must advance: {} <= {}",
            t, state.last_t
        )));
    }
    let dt = t.secs_since(state.last_t);
    let alpha = params.alpha(dt);
    let y_pos = state.y_pos + (target.position - state.y_pos) * alpha;
    let y_quat = state.y_quat.slerp(&target.orientation, alpha);
    Ok(FilterState { y_pos, y_quat, last_t: t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT_NS: u64 = 10_000_000;

    #[test]
    fn alpha_at_two_hz_and_100hz() {
        let p = FilterParams::default();
        // τ = 1/(4π) = 0.0795775; α = 0.01 / 0.0895775
        assert!((p.tau() - 0.079_577_471_545_947_67).abs() < 1e-12);
        assert!((p.alpha(0.01) - 0.111_635_211_705_9).abs() < 1e-9);
        assert!(p.alpha(0.01) > 0.0 && p.alpha(0.01) < 1.0);
    }

    #[test]
    fn rejects_bad_cutoff_and_time_regression() {
        assert!(FilterParams::new(0.0).is_err());
        assert!(FilterParams::new(-1.0).is_err());
        let s = FilterState::at_rest(Pose::default(), Timestamp(100));
        assert!(lowpass_step(&s, &Pose::default(), Timestamp(100), &FilterParams::default()).is_err());
        assert!(lowpass_step(&s, &Pose::default(), Timestamp(50), &FilterParams::default()).is_err());
    }

    #[test]
    fn fixed_point() {
        let pose = Pose::new(Vec3::new(0.4, -0.1, 0.3), UnitQuat::normalized(0.9, 0.1, 0.2, 0.3).unwrap());
        let s = FilterState::at_rest(pose, Timestamp(0));
        let n = lowpass_step(&s, &pose, Timestamp(DT_NS), &FilterParams::default()).unwrap();
        assert_eq!(n.y_pos, pose.position);
        assert!(n.y_quat.angle_to(&pose.orientation) < 1e-12);
    }

    #[test]
    fn constant_target_decays_geometrically() {
        let params = FilterParams::default();
        let alpha = params.alpha(0.01);
        let target = Pose::new(Vec3::new(1.0, -2.0, 0.5), UnitQuat::IDENTITY);
        let mut s = FilterState::at_rest(Pose::default(), Timestamp(0));
        for n in 1..=200u64 {
            s = lowpass_step(&s, &target, Timestamp(n * DT_NS), &params).unwrap();
            let k = (1.0 - alpha).powi(n as i32);
            for (y, x) in s.y_pos.to_array().iter().zip(target.position.to_array()) {
                assert!(((y - x).abs() - k * x.abs()).abs() < 1e-12, "n={n}");
            }
        }
    }

    proptest! {
        // output stays inside the per-axis hull of the start value and all targets
        #[test]
        fn output_in_convex_hull(
            start in -1.0..1.0f64,
            targets in prop::collection::vec((-1.0..1.0f64, 1u64..50_000_000), 1..60),
        ) {
            let params = FilterParams::default();
            let mut s = FilterState::at_rest(Pose::new(Vec3::new(start, 0.0, 0.0), UnitQuat::IDENTITY), Timestamp(0));
            let (mut lo, mut hi) = (start, start);
            let mut t = 0u64;
            for (x, dt) in targets {
                t += dt;
                lo = lo.min(x);
                hi = hi.max(x);
                s = lowpass_step(&s, &Pose::new(Vec3::new(x, 0.0, 0.0), UnitQuat::IDENTITY), Timestamp(t), &params).unwrap();
                prop_assert!(s.y_pos.x >= lo - 1e-12 && s.y_pos.x <= hi + 1e-12);
            }
        }
    }
}
