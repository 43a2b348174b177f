//! Scripted multi-user load against a fleet, on a simulated clock or over
//! real sockets.

mod script;
mod simulated;
mod wall_clock;

pub use script::{Behavior, RandomUsers, SampleScript, ScriptedUser, Trajectory, STEP_RAMP_SPEED, VIOLATION_DELTA, WALK_BOUND};
pub use simulated::run_simulated;
pub use wall_clock::run_wall_clock;

use crate::coordination::audit::{audit, AuditReport};
use crate::coordination::{CoordEvent, EndReason, Task};
use crate::fleet::{Fleet, FleetConfig, FleetError, SessionLog};
use crate::protocol::Timestamp;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

pub const SEED_ENV: &str = "TELEFLEET_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// One reproducible run: the fleet plus every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub users: Vec<ScriptedUser>,
    /// Appended to `users`, generated from `seed`.
    #[serde(default)]
    pub random_users: Option<RandomUsers>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    /// Replaces every seed in the scenario with one derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        for (i, r) in self.fleet.robots.iter_mut().enumerate() {
            r.seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
        }
        for (i, u) in self.users.iter_mut().enumerate() {
            if let Trajectory::RandomWalk { seed: s, .. } = &mut u.trajectory {
                *s = seed.wrapping_mul(7_919).wrapping_add(i as u64 + 1);
            }
        }
    }

    /// Applies `TELEFLEET_SEED` when set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| ScenarioError::Config(format!("{SEED_ENV}={v} is not an integer")))?;
            self.override_seed(seed);
        }
        Ok(())
    }

    /// Explicit users followed by generated ones.
    pub fn all_users(&self) -> Result<Vec<ScriptedUser>> {
        let mut users = self.users.clone();
        if let Some(gen) = &self.random_users {
            let tasks: BTreeSet<Task> = self.fleet.robots.iter().map(|r| r.task).collect();
            users.extend(gen.generate(self.seed, &tasks.into_iter().collect::<Vec<_>>()));
        }
        let mut seen = BTreeSet::new();
        for u in &users {
            u.validate().map_err(ScenarioError::Config)?;
            if !seen.insert(u.user_id.as_str()) {
                return Err(ScenarioError::Config(format!("duplicate user id `{}`", u.user_id)));
            }
        }
        Ok(users)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserOutcome {
    Ended(EndReason),
    /// Went silent while queued and was evicted.
    AbandonedQueue,
    /// Still queued or active when the run stopped.
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub arrival_s: f64,
    pub session_id: Option<String>,
    pub robot_id: Option<String>,
    pub queue_wait_s: Option<f64>,
    pub session_duration_s: Option<f64>,
    pub outcome: UserOutcome,
    pub safety_rejects: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub robots: usize,
    pub sessions_started: usize,
    pub logs_finalized: usize,
    pub mutual_exclusion_violations: usize,
    pub fifo_violations: usize,
    pub orphaned_locks: usize,
    pub idle_robot_violations: usize,
    pub records_per_topic: BTreeMap<String, u64>,
    pub safety_rejects: u64,
    pub end_time_s: f64,
    pub users: BTreeMap<String, UserReport>,
}

impl ScenarioReport {
    pub fn violations(&self) -> usize {
        self.mutual_exclusion_violations + self.fifo_violations + self.orphaned_locks + self.idle_robot_violations
    }

    pub(crate) fn apply_audit(&mut self, a: &AuditReport) {
        self.mutual_exclusion_violations = a.mutual_exclusion;
        self.fifo_violations = a.fifo;
        self.orphaned_locks = a.orphaned_locks;
        self.idle_robot_violations = a.idle_robot;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Builds the report from a fleet that has run to quiescence.
pub(crate) fn assemble(seed: u64, fleet: &Fleet, users: &[ScriptedUser], abandoned: &BTreeSet<&str>, end: Timestamp) -> ScenarioRun {
    let events = fleet.coordinator().events().to_vec();
    let audit = audit(&events);
    let logs = fleet.finished_logs().to_vec();
    let by_user: BTreeMap<&str, _> = logs.iter().map(|l| (l.session.user_id.as_str(), l)).collect();
    let mut per_user = BTreeMap::new();
    for u in users {
        let arrival = Timestamp::from_secs_f64(u.arrival_s);
        let log = by_user.get(u.user_id.as_str());
        let outcome = match log {
            Some(l) => UserOutcome::Ended(l.session.end_reason.expect("finished")),
            None if abandoned.contains(u.user_id.as_str()) => UserOutcome::AbandonedQueue,
            None => UserOutcome::Unfinished,
        };
        let started = log.map(|l| l.session.started_at).or_else(|| fleet.coordinator().session_of(&u.user_id).map(|s| s.started_at));
        per_user.insert(
            u.user_id.clone(),
            UserReport {
                arrival_s: u.arrival_s,
                session_id: log.map(|l| l.session.session_id.clone()),
                robot_id: log.map(|l| l.session.robot_id.clone()),
                queue_wait_s: started.map(|s| s.secs_since(arrival)),
                session_duration_s: log.and_then(|l| l.session.duration_ns()).map(|d| d as f64 / 1e9),
                outcome,
                safety_rejects: log.map_or(0, |l| l.safety_rejects),
            },
        );
    }
    let coord = fleet.coordinator();
    let mut report = ScenarioReport {
        seed,
        robots: coord.robots().len(),
        sessions_started: coord.finished_sessions().len() + coord.active_sessions().count(),
        logs_finalized: logs.len(),
        mutual_exclusion_violations: 0,
        fifo_violations: 0,
        orphaned_locks: 0,
        idle_robot_violations: 0,
        records_per_topic: fleet.stats().records_per_topic.clone(),
        safety_rejects: fleet.stats().safety_rejects,
        end_time_s: end.as_secs_f64(),
        users: per_user,
    };
    report.apply_audit(&audit);
    ScenarioRun { report, events, logs, audit }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub events: Vec<CoordEvent>,
    pub logs: Vec<SessionLog>,
    pub audit: AuditReport,
}

impl ScenarioRun {
    /// Writes `report.json` and `events.jsonl` into `dir`. Session logs
    /// written through a directory sink already live in `dir/logs`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json())?;
        let mut ev = std::io::BufWriter::new(std::fs::File::create(dir.join("events.jsonl"))?);
        for e in &self.events {
            serde_json::to_writer(&mut ev, e).expect("events serialize");
            ev.write_all(b"\n")?;
        }
        ev.flush()?;
        Ok(())
    }
}
