use super::{Result, TeleopError};
use crate::protocol::{PhoneSample, Pose, Vec3};
use serde::{Deserialize, Serialize};

/// Nominal reach center of the default arm (its ready-pose end-effector position).
pub const DEFAULT_WORKSPACE_CENTER: Vec3 = Vec3::new(0.55, 0.0, 0.45);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    /// m/s
    pub v_max: f64,
    /// rad/s
    pub omega_max: f64,
    pub workspace_min: Vec3,
    pub workspace_max: Vec3,
    pub violation_limit: u32,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        let half = Vec3::new(0.4, 0.4, 0.3);
        SafetyConfig {
            v_max: 0.5,
            omega_max: 2.0,
            workspace_min: DEFAULT_WORKSPACE_CENTER - half,
            workspace_max: DEFAULT_WORKSPACE_CENTER + half,
            violation_limit: 5,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TeleopError::InvalidArgument(m));
        if !(self.v_max > 0.0) || !(self.omega_max > 0.0) {
            return bad(format!("safety limits must be positive (v_max={}, omega_max={})", self.v_max, self.omega_max));
        }
        let (lo, hi) = (self.workspace_min.to_array(), self.workspace_max.to_array());
        if lo.iter().zip(hi).any(|(l, h)| !(*l < h)) {
            return bad("workspace box min must be below max on every axis".into());
        }
        if self.violation_limit == 0 {
            return bad("safety.violation_limit must be at least 1".into());
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let (lo, hi, v) = (self.workspace_min.to_array(), self.workspace_max.to_array(), p.to_array());
        (0..3).all(|i| v[i] >= lo[i] && v[i] <= hi[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Velocity,
    AngularVelocity,
    OutOfWorkspace,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyVerdict {
    Accept,
    Reject(RejectReason),
    /// Emitted on the reject that reaches `violation_limit` consecutive rejects.
    AbortSession(RejectReason),
}

/// Checks one sample against its predecessor, timing with `t_client`.
pub fn validate(s: &PhoneSample, prev: &PhoneSample, cfg: &SafetyConfig, target_preview: &Pose) -> Option<RejectReason> {
    let dt = s.t_client.secs_since(prev.t_client);
    validate_with_dt(s, prev, dt, cfg, Some(target_preview))
}

/// Core check with an explicit interval in seconds. `None` means accept.
///
/// A missing preview skips the workspace test (the clutch is disengaged, so
/// the target does not move).
pub fn validate_with_dt(
    s: &PhoneSample,
    prev: &PhoneSample,
    dt: f64,
    cfg: &SafetyConfig,
    target_preview: Option<&Pose>,
) -> Option<RejectReason> {
    if !s.delta_pos.is_finite() || !(dt > 0.0) || !dt.is_finite() || s.seq <= prev.seq {
        return Some(RejectReason::Malformed);
    }
    if let Some(t) = target_preview {
        if !t.is_finite() {
            return Some(RejectReason::Malformed);
        }
    }
    if s.delta_pos.norm() / dt > cfg.v_max {
        return Some(RejectReason::Velocity);
    }
    if prev.orientation.angle_to(&s.orientation) / dt > cfg.omega_max {
        return Some(RejectReason::AngularVelocity);
    }
    if let Some(t) = target_preview {
        if !cfg.contains(&t.position) {
            return Some(RejectReason::OutOfWorkspace);
        }
    }
    None
}

/// Tracks consecutive rejects and escalates to an abort.
#[derive(Debug, Clone, Default)]
pub struct SafetyMonitor {
    consecutive: u32,
    total_rejects: u64,
}

impl SafetyMonitor {
    pub fn record(&mut self, outcome: Option<RejectReason>, cfg: &SafetyConfig) -> SafetyVerdict {
        match outcome {
            None => {
                self.consecutive = 0;
                SafetyVerdict::Accept
            }
            Some(reason) => {
                self.consecutive += 1;
                self.total_rejects += 1;
                if self.consecutive >= cfg.violation_limit {
                    SafetyVerdict::AbortSession(reason)
                } else {
                    SafetyVerdict::Reject(reason)
                }
            }
        }
    }

    pub fn consecutive(&self) -> u32 {
        self.consecutive
    }

    pub fn total_rejects(&self) -> u64 {
        self.total_rejects
    }
}
