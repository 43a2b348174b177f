//! Replays a coordination event log against a fresh model of robots and
//! waiters and counts every place the log breaks the scheduling rules.
//! Shares no state or code paths with the coordinator itself.

use super::{CoordEvent, Task, TaskRequest};
use crate::protocol::Timestamp;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    /// A robot handed to a second user, or a user holding two robots.
    pub mutual_exclusion: usize,
    /// An assignment while an earlier compatible waiter was still queued.
    pub fifo: usize,
    /// A lock released that was never taken, or a robot leaving service while locked.
    pub orphaned_locks: usize,
    /// A free robot left idle at a quiescent point while a compatible user waited.
    pub idle_robot: usize,
    pub details: Vec<String>,
}

impl AuditReport {
    pub fn violations(&self) -> usize {
        self.mutual_exclusion + self.fifo + self.orphaned_locks + self.idle_robot
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }
}

#[derive(Debug)]
struct Robot {
    task: Task,
    holder: Option<String>,
    online: bool,
}

/// Checks an event log. Quiescence is assumed wherever the event time
/// strictly increases, and at the end of the log.
pub fn audit(events: &[CoordEvent]) -> AuditReport {
    let mut rep = AuditReport::default();
    let mut robots: BTreeMap<&str, Robot> = BTreeMap::new();
    let mut waiting: BTreeMap<(Timestamp, &str), TaskRequest> = BTreeMap::new();
    let mut holding: HashMap<&str, &str> = HashMap::new();
    let mut sessions: HashMap<&str, &str> = HashMap::new();
    let mut clock = Timestamp::ZERO;

    let idle_check = |robots: &BTreeMap<&str, Robot>, waiting: &BTreeMap<(Timestamp, &str), TaskRequest>, rep: &mut AuditReport, t: Timestamp| {
        for (id, r) in robots.iter().filter(|(_, r)| r.online && r.holder.is_none()) {
            if let Some(((_, u), _)) = waiting.iter().find(|(_, req)| req.accepts(r.task)) {
                rep.idle_robot += 1;
                rep.details.push(format!("{t}: {id} idle while {u} waits"));
            }
        }
    };

    for ev in events {
        let t = event_time(ev);
        if t > clock {
            idle_check(&robots, &waiting, &mut rep, clock);
            clock = t;
        }
        match ev {
            CoordEvent::RobotRegistered { robot_id, task, .. } => {
                robots.insert(robot_id, Robot { task: *task, holder: None, online: true });
            }
            CoordEvent::RobotOffline { robot_id, .. } => {
                if let Some(r) = robots.get_mut(robot_id.as_str()) {
                    if let Some(u) = r.holder.take() {
                        rep.orphaned_locks += 1;
                        rep.details.push(format!("{t}: {robot_id} went offline still held by {u}"));
                    }
                    r.online = false;
                }
            }
            CoordEvent::RobotOnline { robot_id, .. } => {
                if let Some(r) = robots.get_mut(robot_id.as_str()) {
                    r.online = true;
                }
            }
            CoordEvent::Joined { t, user_id, task } => {
                waiting.insert((*t, user_id), *task);
            }
            CoordEvent::Left { user_id, .. } | CoordEvent::Evicted { user_id, .. } => {
                waiting.retain(|(_, u), _| u != user_id);
            }
            CoordEvent::Assigned { user_id, robot_id, session_id, .. } => {
                let Some(robot) = robots.get_mut(robot_id.as_str()) else {
                    rep.mutual_exclusion += 1;
                    rep.details.push(format!("{t}: {user_id} assigned unknown robot {robot_id}"));
                    continue;
                };
                if robot.holder.is_some() || !robot.online {
                    rep.mutual_exclusion += 1;
                    rep.details.push(format!("{t}: {robot_id} assigned to {user_id} while unavailable"));
                }
                if holding.contains_key(user_id.as_str()) {
                    rep.mutual_exclusion += 1;
                    rep.details.push(format!("{t}: {user_id} assigned a second robot"));
                }
                let own = waiting.iter().find(|((_, u), _)| u == user_id).map(|(k, _)| *k);
                match own {
                    None => {
                        rep.fifo += 1;
                        rep.details.push(format!("{t}: {user_id} assigned without waiting"));
                    }
                    Some(key) => {
                        if let Some(((_, earlier), _)) =
                            waiting.range(..key).find(|(_, req)| req.accepts(robot.task))
                        {
                            rep.fifo += 1;
                            rep.details.push(format!("{t}: {user_id} overtook {earlier} for {robot_id}"));
                        }
                        waiting.remove(&key);
                    }
                }
                robot.holder = Some(user_id.clone());
                holding.insert(user_id, robot_id);
                sessions.insert(session_id, robot_id);
            }
            CoordEvent::Ended { session_id, user_id, robot_id, .. } => {
                if sessions.remove(session_id.as_str()) != Some(robot_id.as_str()) {
                    rep.orphaned_locks += 1;
                    rep.details.push(format!("{t}: end of unknown session {session_id}"));
                    continue;
                }
                holding.remove(user_id.as_str());
                if let Some(r) = robots.get_mut(robot_id.as_str()) {
                    if r.holder.as_deref() == Some(user_id) {
                        r.holder = None;
                    }
                }
            }
        }
    }
    idle_check(&robots, &waiting, &mut rep, clock);
    rep
}

fn event_time(ev: &CoordEvent) -> Timestamp {
    match ev {
        CoordEvent::RobotRegistered { t, .. }
        | CoordEvent::RobotOffline { t, .. }
        | CoordEvent::RobotOnline { t, .. }
        | CoordEvent::Joined { t, .. }
        | CoordEvent::Left { t, .. }
        | CoordEvent::Evicted { t, .. }
        | CoordEvent::Assigned { t, .. }
        | CoordEvent::Ended { t, .. } => *t,
    }
}
