//! Discrete-event runner: one logical scheduler interleaves every scripted
//! user by event time, with ties broken by scheduling order.

use super::{assemble, Behavior, Result, SampleScript, Scenario, ScenarioRun, ScriptedUser};
use crate::coordination::channel::ServerMsg;
use crate::fleet::{Fleet, FleetError, LogSink};
use crate::protocol::{Encode, Timestamp};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

const QUEUE_HEARTBEAT_NS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Arrive,
    Heartbeat,
    Sample,
    Quit,
    Abandon,
    GoSilent,
    Wake,
}

enum Phase {
    Waiting,
    Queued,
    Active { started: Timestamp, script: Box<SampleScript> },
    Done,
}

struct Agent {
    user: ScriptedUser,
    phase: Phase,
    silent: bool,
    abandoned: bool,
}

struct Scheduler {
    heap: BinaryHeap<Reverse<(Timestamp, u64, usize, Action)>>,
    order: u64,
}

impl Scheduler {
    fn at(&mut self, t: Timestamp, agent: usize, action: Action) {
        self.heap.push(Reverse((t, self.order, agent, action)));
        self.order += 1;
    }
}

/// Runs the scenario to quiescence on a simulated clock. Output is a pure
/// function of the scenario.
pub fn run_simulated(scenario: &Scenario, sink: LogSink) -> Result<ScenarioRun> {
    let users = scenario.all_users()?;
    let mut cfg = scenario.fleet.clone();
    cfg.publish_state = false;
    let hb_ns = (cfg.heartbeat_timeout_secs * 1e9).round() as u64;
    let mut fleet = Fleet::new(cfg, sink)?;

    let mut agents: Vec<Agent> =
        users.into_iter().map(|user| Agent { user, phase: Phase::Waiting, silent: false, abandoned: false }).collect();
    let index: BTreeMap<String, usize> = agents.iter().enumerate().map(|(i, a)| (a.user.user_id.clone(), i)).collect();
    let mut sched = Scheduler { heap: BinaryHeap::new(), order: 0 };
    for (i, a) in agents.iter().enumerate() {
        sched.at(Timestamp::from_secs_f64(a.user.arrival_s), i, Action::Arrive);
    }

    let mut clock = Timestamp::ZERO;
    while let Some(Reverse((t, _, i, action))) = sched.heap.pop() {
        clock = t;
        let agent = &mut agents[i];
        let uid = agent.user.user_id.clone();
        match action {
            Action::Arrive => {
                let compatible = fleet.config().robots.iter().any(|r| agent.user.task.accepts(r.task));
                fleet.join(&uid, agent.user.task, t)?;
                if matches!(agent.phase, Phase::Waiting) {
                    agent.phase = Phase::Queued;
                }
                if !compatible {
                    agent.silent = true;
                    agent.abandoned = true;
                    sched.at(t + hb_ns + 1, i, Action::Wake);
                } else {
                    sched.at(t + QUEUE_HEARTBEAT_NS, i, Action::Heartbeat);
                    if let Some(p) = agent.user.queue_patience_s {
                        sched.at(t + Timestamp::from_secs_f64(p).0, i, Action::Abandon);
                    }
                }
            }
            Action::Heartbeat => {
                if matches!(agent.phase, Phase::Queued) && !agent.silent {
                    fleet.heartbeat(&uid, t);
                    sched.at(t + QUEUE_HEARTBEAT_NS, i, Action::Heartbeat);
                }
            }
            Action::Abandon => {
                if matches!(agent.phase, Phase::Queued) && !agent.silent {
                    agent.silent = true;
                    agent.abandoned = true;
                    sched.at(t + hb_ns + 1, i, Action::Wake);
                }
            }
            Action::GoSilent => {
                if matches!(agent.phase, Phase::Active { .. }) && !agent.silent {
                    agent.silent = true;
                    sched.at(t + hb_ns + 1, i, Action::Wake);
                }
            }
            Action::Sample => {
                if let Phase::Active { started, script } = &mut agent.phase {
                    if !agent.silent {
                        let payload = script.next(t).encode();
                        let next = *started + Timestamp::from_secs_f64(script.due_after(script.seq())).0;
                        match fleet.control(&uid, &payload, t) {
                            Ok(_) | Err(FleetError::NoSession(_)) => {}
                            Err(e) => return Err(e.into()),
                        }
                        sched.at(next, i, Action::Sample);
                    }
                }
            }
            Action::Quit => {
                if matches!(agent.phase, Phase::Active { .. }) && !agent.silent {
                    fleet.quit(&uid, t)?;
                }
            }
            Action::Wake => fleet.advance(t),
        }
        route(&mut fleet, &mut agents, &index, &mut sched);
    }
    fleet.advance(clock);

    let abandoned: BTreeSet<&str> = agents.iter().filter(|a| a.abandoned).map(|a| a.user.user_id.as_str()).collect();
    let users: Vec<ScriptedUser> = agents.iter().map(|a| a.user.clone()).collect();
    Ok(assemble(scenario.seed, &fleet, &users, &abandoned, clock))
}

/// Delivers the fleet's outgoing messages to the scripted users.
fn route(fleet: &mut Fleet, agents: &mut [Agent], index: &BTreeMap<String, usize>, sched: &mut Scheduler) {
    for (uid, msg) in fleet.drain_outbox() {
        let Some(&i) = index.get(&uid) else { continue };
        let agent = &mut agents[i];
        match msg {
            ServerMsg::SessionStart { .. } => {
                let session = fleet.coordinator().session_of(&uid).expect("just assigned");
                let started = session.started_at;
                let deadline = session.deadline();
                let script = SampleScript::new(&agent.user, fleet.config().teleop.rate_hz);
                agent.phase = Phase::Active { started, script: Box::new(script) };
                sched.at(started, i, Action::Sample);
                sched.at(deadline, i, Action::Wake);
                let after = started + Timestamp::from_secs_f64(agent.user.behavior.secs()).0;
                match agent.user.behavior {
                    Behavior::CompleteAfter { .. } => sched.at(after, i, Action::Quit),
                    Behavior::DisconnectAfter { .. } => sched.at(after, i, Action::GoSilent),
                    Behavior::ViolateSafetyAfter { .. } => {}
                }
            }
            ServerMsg::SessionEnd { .. } => agent.phase = Phase::Done,
            _ => {}
        }
    }
}
