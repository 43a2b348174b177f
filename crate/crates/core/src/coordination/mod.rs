//! Coordination service: robot registry, per-robot locks, the waiting queue
//! and session lifecycle.
//!
//! All mutations go through [`Coordinator`], a single state machine. Callers
//! that serve several connections wrap it in one lock, which gives the total
//! order over events. Every mutation is appended to an event log that the
//! independent checker in [`audit`] replays.

pub mod audit;
pub mod channel;

use crate::protocol::Timestamp;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CoordError {
    #[error("{0} is already present")]
    AlreadyPresent(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, CoordError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ObjectSearch,
    TowerCreation,
    LaundryLayout,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::ObjectSearch, Task::TowerCreation, Task::LaundryLayout];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::ObjectSearch => "object_search",
            Task::TowerCreation => "tower_creation",
            Task::LaundryLayout => "laundry_layout",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = CoordError;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CoordError::InvalidArgument(format!("unknown task `{s}`")))
    }
}

/// A user's requested task; `Any` accepts the first free robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskRequest {
    Any,
    Only(Task),
}

impl TaskRequest {
    pub fn accepts(self, task: Task) -> bool {
        match self {
            TaskRequest::Any => true,
            TaskRequest::Only(t) => t == task,
        }
    }

    /// Whether two requests can compete for the same robot.
    pub fn overlaps(self, other: TaskRequest) -> bool {
        match (self, other) {
            (TaskRequest::Only(a), TaskRequest::Only(b)) => a == b,
            _ => true,
        }
    }
}

impl FromStr for TaskRequest {
    type Err = CoordError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "any" {
            Ok(TaskRequest::Any)
        } else {
            s.parse().map(TaskRequest::Only)
        }
    }
}

impl TryFrom<String> for TaskRequest {
    type Error = CoordError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskRequest> for String {
    fn from(r: TaskRequest) -> String {
        r.to_string()
    }
}

impl fmt::Display for TaskRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskRequest::Any => f.write_str("any"),
            TaskRequest::Only(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RobotStatus {
    Free,
    Locked(String),
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobotSlot {
    pub robot_id: String,
    pub task: Task,
    pub status: RobotStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub user_id: String,
    pub joined_at: Timestamp,
    pub requested_task: TaskRequest,
}

impl QueueEntry {
    fn key(&self) -> (Timestamp, &str) {
        (self.joined_at, &self.user_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    UserQuit,
    TimeLimit,
    SafetyAbort,
    Disconnect,
}

impl fmt::Display for EndReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndReason::UserQuit => "user_quit",
            EndReason::TimeLimit => "time_limit",
            EndReason::SafetyAbort => "safety_abort",
            EndReason::Disconnect => "disconnect",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub robot_id: String,
    pub task: Task,
    pub started_at: Timestamp,
    pub ended_at: Option<Timestamp>,
    pub end_reason: Option<EndReason>,
    pub max_duration_ns: u64,
}

impl Session {
    pub fn is_active(&self) -> bool {
        self.ended_at.is_none()
    }

    pub fn deadline(&self) -> Timestamp {
        self.started_at + self.max_duration_ns
    }

    pub fn duration_ns(&self) -> Option<u64> {
        self.ended_at.map(|e| e - self.started_at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinOutcome {
    Assigned(Session),
    Queued { position: usize },
}

/// A message the service owes one of its clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notice {
    Assigned(Session),
    QueuePosition { user_id: String, position: usize },
    Ended(Session),
}

/// Everything that changes who holds what, in application order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CoordEvent {
    RobotRegistered { t: Timestamp, robot_id: String, task: Task },
    RobotOffline { t: Timestamp, robot_id: String },
    RobotOnline { t: Timestamp, robot_id: String },
    Joined { t: Timestamp, user_id: String, task: TaskRequest },
    Left { t: Timestamp, user_id: String },
    Evicted { t: Timestamp, user_id: String },
    Assigned { t: Timestamp, user_id: String, robot_id: String, session_id: String },
    Ended { t: Timestamp, session_id: String, user_id: String, robot_id: String, reason: EndReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorConfig {
    pub heartbeat_timeout_secs: f64,
    pub time_limit_secs: f64,
    /// Overrides of `time_limit_secs` per task.
    pub task_time_limits: BTreeMap<Task, f64>,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig { heartbeat_timeout_secs: 10.0, time_limit_secs: 300.0, task_time_limits: BTreeMap::new() }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<()> {
        let limits = std::iter::once(self.time_limit_secs).chain(self.task_time_limits.values().copied());
        if !(self.heartbeat_timeout_secs > 0.0) || limits.into_iter().any(|l| !(l > 0.0 && l.is_finite())) {
            return Err(CoordError::InvalidArgument("timeouts and time limits must be positive".into()));
        }
        Ok(())
    }

    pub fn time_limit_ns(&self, task: Task) -> u64 {
        let secs = self.task_time_limits.get(&task).copied().unwrap_or(self.time_limit_secs);
        (secs * 1e9).round() as u64
    }

    fn heartbeat_ns(&self) -> u64 {
        (self.heartbeat_timeout_secs * 1e9).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Eviction {
    pub user_id: String,
    /// The aborted session, for users evicted mid-session.
    pub session: Option<Session>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FleetCounts {
    pub locked: usize,
    pub free: usize,
    pub offline: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Coordinator {
    config: CoordinatorConfig,
    robots: Vec<RobotSlot>,
    queue: Vec<QueueEntry>,
    active: BTreeMap<String, Session>,
    finished: Vec<Session>,
    session_of_user: HashMap<String, String>,
    last_seen: HashMap<String, Timestamp>,
    announced_position: HashMap<String, usize>,
    events: Vec<CoordEvent>,
    notices: Vec<Notice>,
    next_session: u64,
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Coordinator { config, ..Default::default() })
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn register_robot(&mut self, robot_id: &str, task: Task, now: Timestamp) -> Result<()> {
        if self.robots.iter().any(|r| r.robot_id == robot_id) {
            return Err(CoordError::AlreadyPresent(format!("robot `{robot_id}`")));
        }
        self.robots.push(RobotSlot { robot_id: robot_id.to_owned(), task, status: RobotStatus::Free });
        self.events.push(CoordEvent::RobotRegistered { t: now, robot_id: robot_id.to_owned(), task });
        self.dispatch(now);
        Ok(())
    }

    /// Takes a robot out of service, ending its session with `disconnect`.
    pub fn set_robot_offline(&mut self, robot_id: &str, now: Timestamp) -> Result<Option<Session>> {
        let idx = self.robot_index(robot_id)?;
        let ended = match self.robots[idx].status.clone() {
            RobotStatus::Locked(sid) => Some(self.finish_session(&sid, EndReason::Disconnect, now)),
            _ => None,
        };
        self.robots[idx].status = RobotStatus::Offline;
        self.events.push(CoordEvent::RobotOffline { t: now, robot_id: robot_id.to_owned() });
        self.dispatch(now);
        Ok(ended)
    }

    pub fn set_robot_online(&mut self, robot_id: &str, now: Timestamp) -> Result<()> {
        let idx = self.robot_index(robot_id)?;
        if self.robots[idx].status == RobotStatus::Offline {
            self.robots[idx].status = RobotStatus::Free;
            self.events.push(CoordEvent::RobotOnline { t: now, robot_id: robot_id.to_owned() });
            self.dispatch(now);
        }
        Ok(())
    }

    fn robot_index(&self, robot_id: &str) -> Result<usize> {
        self.robots
            .iter()
            .position(|r| r.robot_id == robot_id)
            .ok_or_else(|| CoordError::NotFound(format!("robot `{robot_id}`")))
    }

    /// Enqueues `user_id` and immediately assigns a robot if one is free and
    /// no earlier compatible user is waiting.
    pub fn join(&mut self, user_id: &str, requested: TaskRequest, now: Timestamp) -> Result<JoinOutcome> {
        if user_id.is_empty() {
            return Err(CoordError::InvalidArgument("empty user id".into()));
        }
        if self.session_of_user.contains_key(user_id) || self.queue.iter().any(|e| e.user_id == user_id) {
            return Err(CoordError::AlreadyPresent(format!("user `{user_id}`")));
        }
        let entry = QueueEntry { user_id: user_id.to_owned(), joined_at: now, requested_task: requested };
        let at = self.queue.partition_point(|e| e.key() < entry.key());
        self.queue.insert(at, entry);
        self.last_seen.insert(user_id.to_owned(), now);
        self.events.push(CoordEvent::Joined { t: now, user_id: user_id.to_owned(), task: requested });
        self.dispatch(now);
        match self.session_of_user.get(user_id) {
            Some(sid) => Ok(JoinOutcome::Assigned(self.active[sid].clone())),
            None => Ok(JoinOutcome::Queued { position: self.queue_position(user_id).expect("still queued") }),
        }
    }

    /// Removes a queued user, or ends their session with `user_quit`.
    pub fn leave(&mut self, user_id: &str, now: Timestamp) -> Result<Option<Session>> {
        if let Some(sid) = self.session_of_user.get(user_id).cloned() {
            return self.end_session(&sid, EndReason::UserQuit, now).map(Some);
        }
        let idx = self
            .queue
            .iter()
            .position(|e| e.user_id == user_id)
            .ok_or_else(|| CoordError::NotFound(format!("user `{user_id}`")))?;
        self.queue.remove(idx);
        self.forget_user(user_id);
        self.events.push(CoordEvent::Left { t: now, user_id: user_id.to_owned() });
        self.dispatch(now);
        Ok(None)
    }

    /// Ends an active session, frees its robot and hands it to the next
    /// compatible waiter within the same call.
    pub fn end_session(&mut self, session_id: &str, reason: EndReason, now: Timestamp) -> Result<Session> {
        if !self.active.contains_key(session_id) {
            return Err(CoordError::NotFound(format!("active session `{session_id}`")));
        }
        let s = self.finish_session(session_id, reason, now);
        self.dispatch(now);
        Ok(s)
    }

    fn finish_session(&mut self, session_id: &str, reason: EndReason, now: Timestamp) -> Session {
        let mut s = self.active.remove(session_id).expect("caller checked");
        let ended_at = now.max(s.started_at);
        s.ended_at = Some(ended_at);
        s.end_reason = Some(reason);
        if let Some(r) = self.robots.iter_mut().find(|r| r.robot_id == s.robot_id) {
            if r.status == RobotStatus::Locked(s.session_id.clone()) {
                r.status = RobotStatus::Free;
            }
        }
        self.session_of_user.remove(&s.user_id);
        self.forget_user(&s.user_id.clone());
        self.events.push(CoordEvent::Ended {
            t: ended_at,
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            robot_id: s.robot_id.clone(),
            reason,
        });
        self.notices.push(Notice::Ended(s.clone()));
        self.finished.push(s.clone());
        s
    }

    fn forget_user(&mut self, user_id: &str) {
        self.last_seen.remove(user_id);
        self.announced_position.remove(user_id);
    }

    /// Records liveness. Unknown users are ignored.
    pub fn heartbeat(&mut self, user_id: &str, now: Timestamp) {
        if let Some(t) = self.last_seen.get_mut(user_id) {
            *t = (*t).max(now);
        }
    }

    /// Evicts every client silent for longer than the heartbeat timeout.
    /// Queued users leave the queue; active users have their session aborted
    /// with `disconnect`. Idempotent.
    pub fn expire(&mut self, now: Timestamp) -> Vec<Eviction> {
        let limit = self.config.heartbeat_ns();
        let mut stale: Vec<(Timestamp, String)> = self
            .last_seen
            .iter()
            .filter(|(_, &t)| now.saturating_since(t) > limit)
            .map(|(u, &t)| (t, u.clone()))
            .collect();
        stale.sort();
        let mut out = Vec::new();
        for (_, user_id) in stale {
            if let Some(sid) = self.session_of_user.get(&user_id).cloned() {
                let s = self.finish_session(&sid, EndReason::Disconnect, now);
                out.push(Eviction { user_id, session: Some(s) });
            } else if let Some(idx) = self.queue.iter().position(|e| e.user_id == user_id) {
                self.queue.remove(idx);
                self.forget_user(&user_id);
                self.events.push(CoordEvent::Evicted { t: now, user_id: user_id.clone() });
                out.push(Eviction { user_id, session: None });
            }
        }
        if !out.is_empty() {
            self.dispatch(now);
        }
        out
    }

    /// Ends, at exactly `started_at + max_duration`, every session whose
    /// deadline is at or before `now`.
    pub fn enforce_time_limits(&mut self, now: Timestamp) -> Vec<Session> {
        let mut due: Vec<(Timestamp, String)> = self
            .active
            .values()
            .filter(|s| s.deadline() <= now)
            .map(|s| (s.deadline(), s.session_id.clone()))
            .collect();
        due.sort();
        let out: Vec<Session> =
            due.into_iter().map(|(deadline, sid)| self.finish_session(&sid, EndReason::TimeLimit, deadline)).collect();
        if !out.is_empty() {
            // handoff happens now: a waiter may have joined after the deadline
            self.dispatch(now);
        }
        out
    }

    /// Earliest pending time-limit deadline.
    pub fn next_deadline(&self) -> Option<Timestamp> {
        self.active.values().map(Session::deadline).min()
    }

    /// Assigns free robots to waiters in queue order.
    fn dispatch(&mut self, now: Timestamp) {
        let mut i = 0;
        while i < self.queue.len() {
            let req = self.queue[i].requested_task;
            let free = self.robots.iter().position(|r| r.status == RobotStatus::Free && req.accepts(r.task));
            match free {
                Some(ri) => {
                    let entry = self.queue.remove(i);
                    self.assign(entry, ri, now);
                }
                None => i += 1,
            }
        }
        self.announce_positions();
    }

    fn assign(&mut self, entry: QueueEntry, robot_idx: usize, now: Timestamp) {
        self.next_session += 1;
        let session_id = format!("s{:05}", self.next_session);
        let robot = &mut self.robots[robot_idx];
        robot.status = RobotStatus::Locked(session_id.clone());
        let session = Session {
            session_id: session_id.clone(),
            user_id: entry.user_id.clone(),
            robot_id: robot.robot_id.clone(),
            task: robot.task,
            started_at: now,
            ended_at: None,
            end_reason: None,
            max_duration_ns: self.config.time_limit_ns(robot.task),
        };
        self.events.push(CoordEvent::Assigned {
            t: now,
            user_id: entry.user_id.clone(),
            robot_id: session.robot_id.clone(),
            session_id: session_id.clone(),
        });
        self.announced_position.remove(&entry.user_id);
        self.session_of_user.insert(entry.user_id, session_id.clone());
        self.notices.push(Notice::Assigned(session.clone()));
        self.active.insert(session_id, session);
    }

    fn announce_positions(&mut self) {
        let positions: Vec<(String, usize)> = self
            .queue
            .iter()
            .map(|e| (e.user_id.clone(), self.queue_position(&e.user_id).expect("queued")))
            .collect();
        for (user_id, position) in positions {
            if self.announced_position.get(&user_id) != Some(&position) {
                self.announced_position.insert(user_id.clone(), position);
                self.notices.push(Notice::QueuePosition { user_id, position });
            }
        }
    }

    /// Zero-based count of earlier waiters that compete for the same robots.
    pub fn queue_position(&self, user_id: &str) -> Option<usize> {
        let idx = self.queue.iter().position(|e| e.user_id == user_id)?;
        let req = self.queue[idx].requested_task;
        Some(self.queue[..idx].iter().filter(|e| e.requested_task.overlaps(req)).count())
    }

    pub fn drain_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    pub fn robots(&self) -> &[RobotSlot] {
        &self.robots
    }

    pub fn queue(&self) -> &[QueueEntry] {
        &self.queue
    }

    pub fn active_sessions(&self) -> impl Iterator<Item = &Session> {
        self.active.values()
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.active.get(session_id).or_else(|| self.finished.iter().find(|s| s.session_id == session_id))
    }

    pub fn session_of(&self, user_id: &str) -> Option<&Session> {
        self.session_of_user.get(user_id).map(|sid| &self.active[sid])
    }

    pub fn finished_sessions(&self) -> &[Session] {
        &self.finished
    }

    pub fn events(&self) -> &[CoordEvent] {
        &self.events
    }

    pub fn counts(&self) -> FleetCounts {
        let mut c = FleetCounts::default();
        for r in &self.robots {
            match r.status {
                RobotStatus::Free => c.free += 1,
                RobotStatus::Locked(_) => c.locked += 1,
                RobotStatus::Offline => c.offline += 1,
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: u64) -> Timestamp {
        Timestamp(s * 1_000_000_000)
    }

    fn fleet(n: usize, task: Task) -> Coordinator {
        let mut c = Coordinator::new(CoordinatorConfig::default()).unwrap();
        for i in 0..n {
            c.register_robot(&format!("arm-{i}"), task, Timestamp::ZERO).unwrap();
        }
        c
    }

    const OS: TaskRequest = TaskRequest::Only(Task::ObjectSearch);

    #[test]
    fn join_on_empty_system_assigns() {
        let mut c = fleet(1, Task::ObjectSearch);
        let JoinOutcome::Assigned(s) = c.join("u1", OS, secs(1)).unwrap() else { panic!() };
        assert_eq!(c.robots()[0].status, RobotStatus::Locked(s.session_id.clone()));
        assert_eq!(c.counts(), FleetCounts { locked: 1, free: 0, offline: 0 });
    }

    #[test]
    fn queue_position_counts_compatible_waiters() {
        let mut c = fleet(3, Task::ObjectSearch);
        for u in ["a", "b", "c"] {
            assert!(matches!(c.join(u, OS, secs(1)).unwrap(), JoinOutcome::Assigned(_)));
        }
        assert_eq!(c.join("w1", OS, secs(2)).unwrap(), JoinOutcome::Queued { position: 0 });
        assert_eq!(c.join("w2", TaskRequest::Any, secs(3)).unwrap(), JoinOutcome::Queued { position: 1 });
        assert_eq!(c.join("w3", OS, secs(4)).unwrap(), JoinOutcome::Queued { position: 2 });
        // a different task does not count the object-search waiters
        assert_eq!(
            c.join("w4", TaskRequest::Only(Task::LaundryLayout), secs(5)).unwrap(),
            JoinOutcome::Queued { position: 1 }
        );
    }

    #[test]
    fn fifo_handoff_on_end() {
        let mut c = fleet(1, Task::ObjectSearch);
        let JoinOutcome::Assigned(s0) = c.join("u0", OS, secs(0)).unwrap() else { panic!() };
        c.join("u1", OS, secs(1)).unwrap();
        c.join("u2", OS, secs(2)).unwrap();
        assert_eq!(c.queue_position("u2"), Some(1));
        c.drain_notices();
        c.end_session(&s0.session_id, EndReason::UserQuit, secs(3)).unwrap();
        assert_eq!(c.session_of("u1").map(|s| s.robot_id.as_str()), Some("arm-0"));
        assert_eq!(c.queue_position("u2"), Some(0));
        let notices = c.drain_notices();
        assert!(notices.iter().any(|n| matches!(n, Notice::Assigned(s) if s.user_id == "u1")));
        assert!(notices.contains(&Notice::QueuePosition { user_id: "u2".into(), position: 0 }));
    }

    #[test]
    fn identical_join_times_break_ties_by_user_id() {
        let mut c = fleet(1, Task::ObjectSearch);
        let JoinOutcome::Assigned(s) = c.join("z", OS, secs(0)).unwrap() else { panic!() };
        c.join("m", OS, secs(5)).unwrap();
        c.join("b", OS, secs(5)).unwrap();
        assert_eq!(c.queue_position("b"), Some(0));
        c.end_session(&s.session_id, EndReason::UserQuit, secs(6)).unwrap();
        assert!(c.session_of("b").is_some());
    }

    #[test]
    fn end_with_empty_queue_frees_robot() {
        let mut c = fleet(1, Task::TowerCreation);
        let JoinOutcome::Assigned(s) = c.join("u", TaskRequest::Any, secs(0)).unwrap() else { panic!() };
        let done = c.end_session(&s.session_id, EndReason::UserQuit, secs(9)).unwrap();
        assert_eq!(done.end_reason, Some(EndReason::UserQuit));
        assert_eq!(c.robots()[0].status, RobotStatus::Free);
        assert!(matches!(
            c.end_session(&s.session_id, EndReason::UserQuit, secs(10)),
            Err(CoordError::NotFound(_))
        ));
    }

    #[test]
    fn time_limit_ends_at_exact_deadline() {
        let mut c = fleet(1, Task::ObjectSearch);
        let JoinOutcome::Assigned(s) = c.join("u", OS, secs(7)).unwrap() else { panic!() };
        assert!(c.enforce_time_limits(secs(306)).is_empty());
        let ended = c.enforce_time_limits(secs(400));
        assert_eq!(ended.len(), 1);
        assert_eq!(ended[0].session_id, s.session_id);
        assert_eq!(ended[0].end_reason, Some(EndReason::TimeLimit));
        assert_eq!(ended[0].duration_ns(), Some(300_000_000_000));
    }

    #[test]
    fn per_task_time_limit() {
        let mut cfg = CoordinatorConfig::default();
        cfg.task_time_limits.insert(Task::LaundryLayout, 60.0);
        let mut c = Coordinator::new(cfg).unwrap();
        c.register_robot("arm", Task::LaundryLayout, Timestamp::ZERO).unwrap();
        let JoinOutcome::Assigned(s) = c.join("u", TaskRequest::Any, secs(0)).unwrap() else { panic!() };
        assert_eq!(s.max_duration_ns, 60_000_000_000);
    }

    #[test]
    fn duplicate_and_invalid_input() {
        let mut c = fleet(1, Task::ObjectSearch);
        c.join("u", OS, secs(0)).unwrap();
        assert!(matches!(c.join("u", OS, secs(1)), Err(CoordError::AlreadyPresent(_))));
        c.join("v", OS, secs(1)).unwrap();
        assert!(matches!(c.join("v", OS, secs(2)), Err(CoordError::AlreadyPresent(_))));
        assert!(matches!("juggling".parse::<TaskRequest>(), Err(CoordError::InvalidArgument(_))));
        assert!(matches!(c.register_robot("arm-0", Task::ObjectSearch, secs(0)), Err(CoordError::AlreadyPresent(_))));
    }

    #[test]
    fn expire_evicts_silent_clients() {
        let mut c = fleet(1, Task::ObjectSearch);
        c.join("active", OS, secs(0)).unwrap();
        c.join("q1", OS, secs(1)).unwrap();
        c.join("q2", OS, secs(2)).unwrap();
        for t in 3..=12 {
            c.heartbeat("active", secs(t));
            c.heartbeat("q2", secs(t));
        }
        assert!(c.expire(secs(11)).is_empty());
        // q1 last seen at 1 s; silent for 10 s + ε
        let ev = c.expire(Timestamp(secs(11).0 + 1));
        assert_eq!(ev, vec![Eviction { user_id: "q1".into(), session: None }]);
        assert_eq!(c.queue_position("q2"), Some(0));
        assert!(c.expire(Timestamp(secs(11).0 + 1)).is_empty());
    }

    #[test]
    fn silent_active_user_is_aborted_and_robot_reassigned() {
        let mut c = fleet(1, Task::ObjectSearch);
        c.join("a", OS, secs(0)).unwrap();
        c.join("b", OS, secs(1)).unwrap();
        for t in 2..=20 {
            c.heartbeat("b", secs(t));
        }
        let ev = c.expire(secs(20));
        assert_eq!(ev.len(), 1);
        let s = ev[0].session.as_ref().unwrap();
        assert_eq!(s.end_reason, Some(EndReason::Disconnect));
        assert_eq!(c.session_of("b").unwrap().robot_id, "arm-0");
    }

    #[test]
    fn offline_robot_is_skipped() {
        let mut c = fleet(2, Task::ObjectSearch);
        c.set_robot_offline("arm-0", secs(0)).unwrap();
        let JoinOutcome::Assigned(s) = c.join("u", OS, secs(1)).unwrap() else { panic!() };
        assert_eq!(s.robot_id, "arm-1");
        assert_eq!(c.counts(), FleetCounts { locked: 1, free: 0, offline: 1 });
        c.join("v", OS, secs(2)).unwrap();
        c.set_robot_online("arm-0", secs(3)).unwrap();
        assert_eq!(c.session_of("v").unwrap().robot_id, "arm-0");
    }

    #[test]
    fn any_task_user_takes_first_free_robot_and_specific_user_waits() {
        let mut c = Coordinator::new(CoordinatorConfig::default()).unwrap();
        c.register_robot("search", Task::ObjectSearch, secs(0)).unwrap();
        c.register_robot("tower", Task::TowerCreation, secs(0)).unwrap();
        c.join("a", TaskRequest::Only(Task::TowerCreation), secs(1)).unwrap();
        assert_eq!(c.session_of("a").unwrap().robot_id, "tower");
        c.join("b", TaskRequest::Only(Task::TowerCreation), secs(2)).unwrap();
        let JoinOutcome::Assigned(s) = c.join("c", TaskRequest::Any, secs(3)).unwrap() else { panic!() };
        assert_eq!(s.robot_id, "search");
    }

    #[test]
    fn leave_queue_and_session() {
        let mut c = fleet(1, Task::ObjectSearch);
        c.join("a", OS, secs(0)).unwrap();
        c.join("b", OS, secs(1)).unwrap();
        assert_eq!(c.leave("b", secs(2)).unwrap(), None);
        let s = c.leave("a", secs(3)).unwrap().unwrap();
        assert_eq!(s.end_reason, Some(EndReason::UserQuit));
        assert!(matches!(c.leave("a", secs(4)), Err(CoordError::NotFound(_))));
        // leave + rejoin puts the user at the back
        c.join("x", OS, secs(5)).unwrap();
        c.join("y", OS, secs(6)).unwrap();
        c.join("z", OS, secs(7)).unwrap();
        c.leave("y", secs(8)).unwrap();
        assert_eq!(c.join("y", OS, secs(9)).unwrap(), JoinOutcome::Queued { position: 1 });
    }

    #[test]
    fn task_request_serde() {
        let r: TaskRequest = serde_json::from_str("\"laundry_layout\"").unwrap();
        assert_eq!(r, TaskRequest::Only(Task::LaundryLayout));
        assert_eq!(serde_json::to_string(&TaskRequest::Any).unwrap(), "\"any\"");
        assert!(serde_json::from_str::<TaskRequest>("\"nope\"").is_err());
    }
}
