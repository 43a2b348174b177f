//! The running platform: one coordinator, one simulated arm per registered
//! robot, and a command pipeline plus session log for every active session.
//!
//! [`Fleet`] is clock-agnostic. Callers pass the current time into every
//! operation; the live server feeds wall time, the scenario runner feeds
//! simulated time. Between calls, [`Fleet::advance`] replays the control and
//! physics ticks of every active session in time order.

mod log_sink;

pub use log_sink::{LogSink, SessionLog};

use crate::coordination::channel::{ErrorCode, ServerMsg};
use crate::coordination::{CoordError, Coordinator, CoordinatorConfig, EndReason, JoinOutcome, Notice, Session, Task, TaskRequest};
use crate::protocol::{topics, Decode, MsgKind, PhoneSample, Pose, Timestamp, TopicDescriptor};
use crate::recorder::{LogHeader, LogWriter, RecorderError};
use crate::sim::{DelayModel, IkParams, KinematicChain, SimRobot, StreamEmitter, StreamSet};
use crate::teleop::{FilterParams, PipelineConfig, SafetyConfig, SampleOutcome, TeleopParams, TeleopPipeline};
use base64::Engine;
use log_sink::SinkWriter;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum FleetError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error("user `{0}` has no active session")]
    NoSession(String),
    #[error("bad control payload: {0}")]
    BadSample(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FleetError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: String,
    pub task: Task,
    /// Seeds the robot's latency sampler; replaces `delay.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default)]
    pub streams: StreamSet,
    #[serde(default)]
    pub chain: Option<KinematicChain>,
    #[serde(default)]
    pub ik: IkParams,
}

impl RobotSpec {
    pub fn new(id: impl Into<String>, task: Task) -> Self {
        RobotSpec {
            id: id.into(),
            task,
            seed: 0,
            delay: DelayModel::default(),
            streams: StreamSet::default(),
            chain: None,
            ik: IkParams::default(),
        }
    }
}

/// The robot fleet file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub time_limit_secs: f64,
    pub heartbeat_timeout_secs: f64,
    pub task_time_limits: BTreeMap<Task, f64>,
    /// Forward every robot-state frame to the session's user.
    pub publish_state: bool,
    pub filter: FilterParams,
    pub safety: SafetyConfig,
    pub teleop: TeleopParams,
    pub robots: Vec<RobotSpec>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        let coord = CoordinatorConfig::default();
        FleetConfig {
            time_limit_secs: coord.time_limit_secs,
            heartbeat_timeout_secs: coord.heartbeat_timeout_secs,
            task_time_limits: BTreeMap::new(),
            publish_state: true,
            filter: FilterParams::default(),
            safety: SafetyConfig::default(),
            teleop: TeleopParams::default(),
            robots: Vec::new(),
        }
    }
}

impl FleetConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FleetError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FleetError::Config(format!("{}: {e}", path.display())))?;
        FleetConfig::from_toml(&text)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig { filter: self.filter, safety: self.safety, teleop: self.teleop }
    }

    pub fn coordinator(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            heartbeat_timeout_secs: self.heartbeat_timeout_secs,
            time_limit_secs: self.time_limit_secs,
            task_time_limits: self.task_time_limits.clone(),
        }
    }
}

/// Topic table shared by every session log.
pub fn session_topics(streams: &StreamSet, control_rate_hz: f64) -> Vec<TopicDescriptor> {
    let mut v = vec![
        TopicDescriptor::new(topics::PHONE, "phone", MsgKind::Phone, control_rate_hz),
        TopicDescriptor::new(topics::ROBOT_STATE, "robot_state", MsgKind::RobotState, streams.robot_state_hz),
    ];
    if streams.images {
        v.extend([
            TopicDescriptor::new(topics::RGB_FRONT, "rgb_front", MsgKind::RgbFrame, streams.rgb_front_hz),
            TopicDescriptor::new(topics::RGB_TOP, "rgb_top", MsgKind::RgbFrame, streams.rgb_top_hz),
            TopicDescriptor::new(topics::DEPTH_TOP, "depth_top", MsgKind::DepthFrame, streams.depth_top_hz),
        ]);
    }
    v.push(TopicDescriptor::new(topics::EVENTS, "events", MsgKind::Event, 1.0));
    v.into_iter().map(|t| t.expect("rates validated")).collect()
}

/// Payload of an `events` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStart {
        session_id: String,
        user_id: String,
        robot_id: String,
        task: Task,
        /// Fleet clock at session start, ns.
        started_at_ns: u64,
        time_limit_s: f64,
    },
    SessionEnd {
        reason: EndReason,
        ended_at_ns: u64,
    },
}

struct LiveSession {
    session: Session,
    pipeline: TeleopPipeline,
    writer: LogWriter<SinkWriter>,
    emitter: StreamEmitter,
    control_rate: f64,
    physics_rate: f64,
    next_control: u64,
    next_physics: u64,
    rejects: u64,
}

impl LiveSession {
    fn tick_time(&self, rate: f64, k: u64) -> Timestamp {
        self.session.started_at + (k as f64 * 1e9 / rate).round() as u64
    }

    fn rel(&self, t: Timestamp) -> Timestamp {
        Timestamp(t.saturating_since(self.session.started_at))
    }
}

struct Robot {
    spec: RobotSpec,
    sim: SimRobot,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FleetStats {
    pub records_per_topic: BTreeMap<String, u64>,
    pub safety_rejects: u64,
    pub samples_received: u64,
}

pub struct Fleet {
    cfg: FleetConfig,
    pipeline_cfg: PipelineConfig,
    coord: Coordinator,
    robots: BTreeMap<String, Robot>,
    live: BTreeMap<String, LiveSession>,
    sink: LogSink,
    logs: Vec<SessionLog>,
    outbox: Vec<(String, ServerMsg)>,
    stats: FleetStats,
    now: Timestamp,
}

impl Fleet {
    /// Validates everything and registers the robots. Fails before any
    /// session can start.
    pub fn new(cfg: FleetConfig, sink: LogSink) -> Result<Self> {
        let pipeline_cfg = cfg.pipeline();
        pipeline_cfg.validate().map_err(|e| FleetError::Config(e.to_string()))?;
        let mut coord = Coordinator::new(cfg.coordinator())?;
        let mut robots = BTreeMap::new();
        for spec in &cfg.robots {
            if robots.contains_key(&spec.id) {
                return Err(FleetError::Config(format!("duplicate robot id `{}`", spec.id)));
            }
            spec.streams.validate().map_err(|e| FleetError::Config(format!("robot `{}`: {e}", spec.id)))?;
            let delay = DelayModel { seed: spec.seed, ..spec.delay };
            let chain = spec.chain.clone().unwrap_or_default();
            let sim = SimRobot::new(chain, spec.ik, &delay).map_err(|e| FleetError::Config(format!("robot `{}`: {e}", spec.id)))?;
            coord.register_robot(&spec.id, spec.task, Timestamp::ZERO)?;
            robots.insert(spec.id.clone(), Robot { spec: spec.clone(), sim });
        }
        sink.prepare().map_err(|e| FleetError::Config(format!("log sink: {e}")))?;
        Ok(Fleet {
            cfg,
            pipeline_cfg,
            coord,
            robots,
            live: BTreeMap::new(),
            sink,
            logs: Vec::new(),
            outbox: Vec::new(),
            stats: FleetStats::default(),
            now: Timestamp::ZERO,
        })
    }

    pub fn config(&self) -> &FleetConfig {
        &self.cfg
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coord
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn stats(&self) -> &FleetStats {
        &self.stats
    }

    pub fn robot(&self, robot_id: &str) -> Option<&SimRobot> {
        self.robots.get(robot_id).map(|r| &r.sim)
    }

    /// The pipeline of the user's active session.
    pub fn pipeline_of(&self, user_id: &str) -> Option<&TeleopPipeline> {
        let s = self.coord.session_of(user_id)?;
        self.live.get(&s.session_id).map(|l| &l.pipeline)
    }

    /// Logs of every session that has ended, in end order.
    pub fn finished_logs(&self) -> &[SessionLog] {
        &self.logs
    }

    pub fn drain_outbox(&mut self) -> Vec<(String, ServerMsg)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn join(&mut self, user_id: &str, task: TaskRequest, now: Timestamp) -> Result<JoinOutcome> {
        self.advance(now);
        let out = self.coord.join(user_id, task, self.now)?;
        self.process_notices()?;
        Ok(out)
    }

    pub fn heartbeat(&mut self, user_id: &str, now: Timestamp) {
        self.advance(now);
        self.coord.heartbeat(user_id, self.now);
    }

    /// Ends the user's session with `user_quit`, or takes them off the queue.
    pub fn quit(&mut self, user_id: &str, now: Timestamp) -> Result<Option<Session>> {
        self.advance(now);
        let s = self.coord.leave(user_id, self.now)?;
        self.process_notices()?;
        Ok(s)
    }

    /// Connection lost: like `quit`, with reason `disconnect`.
    pub fn disconnect(&mut self, user_id: &str, now: Timestamp) -> Result<Option<Session>> {
        self.advance(now);
        let s = match self.coord.session_of(user_id).map(|s| s.session_id.clone()) {
            Some(sid) => Some(self.coord.end_session(&sid, EndReason::Disconnect, self.now)?),
            None => {
                self.coord.leave(user_id, self.now)?;
                None
            }
        };
        self.process_notices()?;
        Ok(s)
    }

    /// Feeds one encoded phone sample into the user's session.
    pub fn control(&mut self, user_id: &str, payload: &[u8], now: Timestamp) -> Result<SampleOutcome> {
        self.advance(now);
        let now = self.now;
        self.coord.heartbeat(user_id, now);
        let sid = match self.coord.session_of(user_id) {
            Some(s) => s.session_id.clone(),
            None => return Err(FleetError::NoSession(user_id.to_owned())),
        };
        let sample = PhoneSample::decode(payload)?;
        self.stats.samples_received += 1;
        let live = self.live.get_mut(&sid).expect("active sessions are live");
        let rel = live.rel(now);
        live.writer.append(topics::PHONE, rel, payload)?;
        *self.stats.records_per_topic.entry("phone".into()).or_default() += 1;
        let robot_pose = self.robots[&live.session.robot_id].sim.ee_pose();
        let outcome = live.pipeline.on_sample(&sample, now, robot_pose);
        match outcome {
            SampleOutcome::Accepted(_) => {}
            SampleOutcome::Rejected(_) => {
                live.rejects += 1;
                self.stats.safety_rejects += 1;
            }
            SampleOutcome::Abort(_) => {
                live.rejects += 1;
                self.stats.safety_rejects += 1;
                self.coord.end_session(&sid, EndReason::SafetyAbort, now)?;
                self.process_notices()?;
            }
        }
        Ok(outcome)
    }

    /// Runs every session forward to `now`, enforcing time limits at their
    /// exact deadlines and evicting silent clients. Earlier times are ignored.
    pub fn advance(&mut self, now: Timestamp) {
        if now < self.now {
            return;
        }
        while let Some(deadline) = self.coord.next_deadline().filter(|&d| d <= now) {
            self.run_sessions_until(deadline);
            self.now = deadline;
            self.coord.enforce_time_limits(deadline);
            self.process_notices().expect("session log I/O");
        }
        self.run_sessions_until(now);
        self.now = now;
        self.coord.expire(now);
        self.process_notices().expect("session log I/O");
    }

    /// Ends every active session with `disconnect`; used at shutdown.
    pub fn shutdown(&mut self, now: Timestamp) -> Result<()> {
        self.advance(now);
        let ids: Vec<String> = self.coord.active_sessions().map(|s| s.session_id.clone()).collect();
        for sid in ids {
            self.coord.end_session(&sid, EndReason::Disconnect, self.now)?;
        }
        self.process_notices()
    }

    fn run_sessions_until(&mut self, until: Timestamp) {
        for live in self.live.values_mut() {
            let robot = self.robots.get_mut(&live.session.robot_id).expect("registered");
            run_session(live, robot, until, self.cfg.publish_state, &mut self.outbox, &mut self.stats);
        }
    }

    fn process_notices(&mut self) -> Result<()> {
        for notice in self.coord.drain_notices() {
            match &notice {
                Notice::Assigned(s) => self.start_session(s)?,
                Notice::Ended(s) => self.finish_session(s)?,
                Notice::QueuePosition { .. } => {}
            }
            self.outbox.push(ServerMsg::from_notice(&notice));
        }
        Ok(())
    }

    fn start_session(&mut self, s: &Session) -> Result<()> {
        let robot = self.robots.get_mut(&s.robot_id).expect("registered");
        robot.sim.reset(s.started_at);
        let streams = robot.spec.streams;
        let header = LogHeader::new(s.session_id.clone(), session_topics(&streams, self.pipeline_cfg.teleop.rate_hz))?;
        let mut writer = LogWriter::new(self.sink.open(&s.session_id)?, header)?;
        let start = SessionEvent::SessionStart {
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            robot_id: s.robot_id.clone(),
            task: s.task,
            started_at_ns: s.started_at.0,
            time_limit_s: s.max_duration_ns as f64 / 1e9,
        };
        writer.append(topics::EVENTS, Timestamp::ZERO, &serde_json::to_vec(&start).expect("serializable"))?;
        *self.stats.records_per_topic.entry("events".into()).or_default() += 1;
        let live = LiveSession {
            session: s.clone(),
            pipeline: TeleopPipeline::new(self.pipeline_cfg, robot.sim.ee_pose(), s.started_at),
            writer,
            emitter: StreamEmitter::new(&streams),
            control_rate: self.pipeline_cfg.teleop.rate_hz,
            physics_rate: streams.robot_state_hz,
            next_control: 0,
            next_physics: 0,
            rejects: 0,
        };
        self.live.insert(s.session_id.clone(), live);
        Ok(())
    }

    fn finish_session(&mut self, s: &Session) -> Result<()> {
        let Some(mut live) = self.live.remove(&s.session_id) else { return Ok(()) };
        let end = s.ended_at.expect("ended");
        let robot = self.robots.get_mut(&s.robot_id).expect("registered");
        run_session(&mut live, robot, end, self.cfg.publish_state, &mut self.outbox, &mut self.stats);
        let rel = live.rel(end);
        let snapshot = robot.sim.snapshot();
        for r in live.emitter.emit_until(rel, &snapshot) {
            write_stream_record(&mut live, &r, &mut self.stats)?;
        }
        let ev = SessionEvent::SessionEnd { reason: s.end_reason.expect("ended"), ended_at_ns: end.0 };
        live.writer.append(topics::EVENTS, rel, &serde_json::to_vec(&ev).expect("serializable"))?;
        *self.stats.records_per_topic.entry("events".into()).or_default() += 1;
        let bytes_written = live.writer.bytes_written();
        let records = live.writer.records_written();
        let sink = live.writer.finish()?;
        self.logs.push(self.sink.close(s.clone(), sink, bytes_written, records, live.rejects)?);
        Ok(())
    }
}

fn write_stream_record(live: &mut LiveSession, r: &crate::sim::StreamRecord, stats: &mut FleetStats) -> Result<()> {
    live.writer.append(r.topic_id, r.t, &r.payload)?;
    let name = live.writer.header().topic(r.topic_id).map(|t| t.name.clone()).unwrap_or_default();
    *stats.records_per_topic.entry(name).or_default() += 1;
    Ok(())
}

/// Replays control ticks and physics ticks stamped before `until`. On a tie
/// the control tick goes first, so a zero-latency command is seen by the
/// physics step at the same instant.
fn run_session(
    live: &mut LiveSession,
    robot: &mut Robot,
    until: Timestamp,
    publish: bool,
    outbox: &mut Vec<(String, ServerMsg)>,
    stats: &mut FleetStats,
) {
    loop {
        let tc = live.tick_time(live.control_rate, live.next_control);
        let tp = live.tick_time(live.physics_rate, live.next_physics);
        if tc.min(tp) >= until {
            break;
        }
        if tc <= tp {
            let target: Pose = live.pipeline.tick(tc);
            robot.sim.command(target, tc);
            live.next_control += 1;
        } else {
            let rel = live.rel(tp);
            let snapshot = robot.sim.snapshot();
            for r in live.emitter.emit_until(rel, &snapshot) {
                write_stream_record(live, &r, stats).expect("session log I/O");
                if publish && r.topic_id == topics::ROBOT_STATE {
                    let payload = base64::engine::general_purpose::STANDARD.encode(&r.payload);
                    outbox.push((live.session.user_id.clone(), ServerMsg::State { payload }));
                }
            }
            robot.sim.step(tp, 1.0 / live.physics_rate);
            live.next_physics += 1;
        }
    }
}

/// Outbox error helper for transports.
pub fn error_msg(e: &FleetError) -> ServerMsg {
    let code = match e {
        FleetError::Coord(CoordError::AlreadyPresent(_)) => ErrorCode::AlreadyJoined,
        FleetError::Coord(CoordError::NotFound(_)) => ErrorCode::NotJoined,
        FleetError::NoSession(_) => ErrorCode::NoSession,
        FleetError::BadSample(_) => ErrorCode::BadSample,
        _ => ErrorCode::BadMessage,
    };
    ServerMsg::error(code, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Encode, UnitQuat, Vec3};
    use crate::recorder::LogReader;

    fn cfg(robots: usize) -> FleetConfig {
        let mut cfg = FleetConfig { time_limit_secs: 10.0, publish_state: false, ..Default::default() };
        for i in 0..robots {
            let mut r = RobotSpec::new(format!("arm-{i}"), Task::ObjectSearch);
            r.delay = DelayModel::none();
            cfg.robots.push(r);
        }
        cfg
    }

    fn sample(seq: u32, dx: f64, clutch: bool) -> Vec<u8> {
        PhoneSample {
            seq,
            t_client: Timestamp(seq as u64 * 20_000_000),
            delta_pos: Vec3::new(dx, 0.0, 0.0),
            orientation: UnitQuat::IDENTITY,
            clutch,
        }
        .encode()
    }

    #[test]
    fn duplicate_robot_ids_are_rejected() {
        let mut c = cfg(1);
        c.robots.push(c.robots[0].clone());
        assert!(matches!(Fleet::new(c, LogSink::Memory), Err(FleetError::Config(_))));
    }

    #[test]
    fn fleet_config_from_toml() {
        let text = r#"
            time_limit_secs = 120
            [safety]
            violation_limit = 3
            [[robots]]
            id = "left"
            task = "tower_creation"
            seed = 4
            [robots.delay]
            base_ms = 100
            [robots.streams]
            images = false
        "#;
        let c = FleetConfig::from_toml(text).unwrap();
        assert_eq!(c.robots[0].task, Task::TowerCreation);
        assert_eq!(c.robots[0].delay.base_ms, 100.0);
        assert!(!c.robots[0].streams.images);
        assert_eq!(c.safety.violation_limit, 3);
        assert!(FleetConfig::from_toml("colour = 1").is_err());
    }

    #[test]
    fn time_limited_session_log_has_rate_counts() {
        let mut fleet = Fleet::new(cfg(1), LogSink::Memory).unwrap();
        let t0 = Timestamp::from_millis(500);
        assert!(matches!(fleet.join("u", TaskRequest::Any, t0).unwrap(), JoinOutcome::Assigned(_)));
        let mut now = t0;
        for k in 0..500u32 {
            now = t0 + k as u64 * 20_000_000;
            fleet.control("u", &sample(k, 0.0005, true), now).unwrap();
        }
        fleet.advance(now + 1_000_000_000);
        let logs = fleet.finished_logs();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].session.end_reason, Some(EndReason::TimeLimit));
        let r = LogReader::from_bytes(logs[0].data.as_ref().unwrap()).unwrap();
        assert_eq!(r.count(topics::ROBOT_STATE), 1000);
        assert_eq!(r.count(topics::RGB_FRONT), 300);
        assert_eq!(r.count(topics::DEPTH_TOP), 300);
        assert_eq!(r.count(topics::PHONE), 500);
        assert_eq!(r.count(topics::EVENTS), 2);
        let moved = fleet.robot("arm-0").unwrap().state().q != fleet.robot("arm-0").unwrap().chain().ready;
        assert!(moved);
    }

    #[test]
    fn robot_follows_engaged_motion_only() {
        let mut fleet = Fleet::new(cfg(1), LogSink::Discard).unwrap();
        fleet.join("u", TaskRequest::Any, Timestamp::ZERO).unwrap();
        let ready = fleet.robot("arm-0").unwrap().ee_pose().position;
        let mut seq = 0;
        for k in 0..150u64 {
            // disengaged: phone moves, robot must not
            fleet.control("u", &sample(seq, 0.002, false), Timestamp(k * 20_000_000)).unwrap();
            seq += 1;
        }
        let still = fleet.robot("arm-0").unwrap().ee_pose().position;
        assert!((still - ready).norm() < 1e-12);
        for k in 150..400u64 {
            fleet.control("u", &sample(seq, 0.0004, true), Timestamp(k * 20_000_000)).unwrap();
            seq += 1;
        }
        let moved = fleet.robot("arm-0").unwrap().ee_pose().position;
        assert!((moved.x - ready.x - 0.0004 * 249.0).abs() < 0.01, "{moved:?}");
    }

    #[test]
    fn safety_abort_ends_session_and_hands_off() {
        let mut fleet = Fleet::new(cfg(1), LogSink::Memory).unwrap();
        fleet.join("bad", TaskRequest::Any, Timestamp::ZERO).unwrap();
        fleet.join("next", TaskRequest::Any, Timestamp(1)).unwrap();
        fleet.control("bad", &sample(0, 0.0, true), Timestamp::from_millis(20)).unwrap();
        let limit = fleet.config().safety.violation_limit;
        for k in 1..=limit {
            let out = fleet.control("bad", &sample(k, 0.5, true), Timestamp::from_millis(20 + 20 * k as u64)).unwrap();
            if k < limit {
                assert!(matches!(out, SampleOutcome::Rejected(_)));
            } else {
                assert!(matches!(out, SampleOutcome::Abort(_)));
            }
        }
        assert_eq!(fleet.finished_logs()[0].session.end_reason, Some(EndReason::SafetyAbort));
        assert_eq!(fleet.coordinator().session_of("next").unwrap().robot_id, "arm-0");
        let msgs = fleet.drain_outbox();
        assert!(msgs.contains(&("bad".into(), ServerMsg::SessionEnd { reason: EndReason::SafetyAbort })));
        assert!(matches!(fleet.control("bad", &sample(9, 0.0, true), Timestamp::from_millis(500)), Err(FleetError::NoSession(_))));
    }
}
