//! Per-session command pipeline: safety validation, clutch composition and
//! low-pass filtering, applied in that order.

mod clutch;
mod filter;
mod safety;

pub use clutch::ClutchState;
pub use filter::{lowpass_step, FilterParams, FilterState};
pub use safety::{
    validate, validate_with_dt, RejectReason, SafetyConfig, SafetyMonitor, SafetyVerdict, DEFAULT_WORKSPACE_CENTER,
};

use crate::protocol::{PhoneSample, Pose, Timestamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TeleopError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TeleopError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleopParams {
    pub gain: f64,
    /// Control-loop tick.
    pub rate_hz: f64,
}

impl Default for TeleopParams {
    fn default() -> Self {
        TeleopParams { gain: 1.0, rate_hz: 50.0 }
    }
}

/// The `filter.*`, `safety.*` and `teleop.*` configuration tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterParams,
    pub safety: SafetyConfig,
    pub teleop: TeleopParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.safety.validate()?;
        if !(self.teleop.rate_hz > 0.0) || !self.teleop.gain.is_finite() {
            return Err(TeleopError::InvalidArgument(format!(
                "teleop.rate_hz must be positive and teleop.gain finite ({:?})",
                self.teleop
            )));
        }
        Ok(())
    }

    pub fn tick_nanos(&self) -> u64 {
        (1e9 / self.teleop.rate_hz).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleOutcome {
    /// Accepted; carries the composed (unfiltered) target if one exists.
    Accepted(Option<Pose>),
    Rejected(RejectReason),
    Abort(RejectReason),
}

/// One session's command pipeline. Single writer: samples must be fed in order.
#[derive(Debug, Clone)]
pub struct TeleopPipeline {
    cfg: PipelineConfig,
    clutch: ClutchState,
    monitor: SafetyMonitor,
    filter: FilterState,
    last_accepted: Option<(PhoneSample, Timestamp)>,
    aborted: Option<RejectReason>,
}

impl TeleopPipeline {
    /// Starts with the filter at rest on the robot's current pose.
    pub fn new(cfg: PipelineConfig, robot_pose: Pose, start: Timestamp) -> Self {
        TeleopPipeline {
            cfg,
            clutch: ClutchState::default(),
            monitor: SafetyMonitor::default(),
            filter: FilterState::at_rest(robot_pose, start),
            last_accepted: None,
            aborted: None,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn clutch(&self) -> &ClutchState {
        &self.clutch
    }

    pub fn filter_state(&self) -> &FilterState {
        &self.filter
    }

    pub fn total_rejects(&self) -> u64 {
        self.monitor.total_rejects()
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    /// Validates and applies one sample. Intervals are measured on the
    /// server receive clock against the last accepted sample. Rejected
    /// samples leave the clutch state untouched.
    pub fn on_sample(&mut self, s: &PhoneSample, received: Timestamp, robot_pose: Pose) -> SampleOutcome {
        if let Some(reason) = self.aborted {
            return SampleOutcome::Abort(reason);
        }
        let moving = s.clutch && self.clutch.is_engaged();
        let reason = match &self.last_accepted {
            None => (!s.delta_pos.is_finite()).then_some(RejectReason::Malformed),
            Some((prev, prev_rx)) => {
                let dt = received.secs_since(*prev_rx);
                if moving {
                    let preview = self.clutch.preview(s, self.cfg.teleop.gain);
                    validate_with_dt(s, prev, dt, &self.cfg.safety, preview.as_ref())
                } else {
                    let unbounded = SafetyConfig {
                        v_max: f64::INFINITY,
                        omega_max: f64::INFINITY,
                        ..self.cfg.safety
                    };
                    validate_with_dt(s, prev, dt, &unbounded, None)
                }
            }
        };
        match self.monitor.record(reason, &self.cfg.safety) {
            SafetyVerdict::Accept => {}
            SafetyVerdict::Reject(r) => return SampleOutcome::Rejected(r),
            SafetyVerdict::AbortSession(r) => {
                self.aborted = Some(r);
                return SampleOutcome::Abort(r);
            }
        }
        self.last_accepted = Some((*s, received));
        let target = if !s.clutch {
            self.clutch.disengage();
            self.clutch.last_target()
        } else if !self.clutch.is_engaged() {
            let anchor = self.clutch.last_target().unwrap_or(robot_pose);
            self.clutch.re_engage(s.orientation, anchor);
            Some(anchor)
        } else {
            self.clutch.compose_target(s, self.cfg.teleop.gain)
        };
        SampleOutcome::Accepted(target)
    }

    /// Advances the filter toward the current target and returns its output.
    /// Without a target yet, the filter holds its state.
    pub fn tick(&mut self, now: Timestamp) -> Pose {
        if now > self.filter.last_t {
            let target = self.clutch.last_target().unwrap_or_else(|| self.filter.pose());
            self.filter = lowpass_step(&self.filter, &target, now, &self.cfg.filter).expect("time advances");
        }
        self.filter.pose()
    }
}
