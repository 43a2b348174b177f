use super::{assemble, Result, Scenario, ScenarioRun};
use crate::fleet::{Fleet, LogSink};
use crate::server::{self, run_client, ClientReport};
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

/// Runs the scenario in real time: a live server on a loopback port and one
/// socket client thread per user. Timing depends on the host, so only the
/// simulated runner is reproducible byte for byte.
pub fn run_wall_clock(scenario: &Scenario, sink: LogSink) -> Result<(ScenarioRun, Vec<ClientReport>)> {
    let users = scenario.all_users()?;
    let fleet = Fleet::new(scenario.fleet.clone(), sink)?;
    let rate = fleet.config().teleop.rate_hz;
    let srv = server::spawn(fleet, "127.0.0.1:0", None)?;
    let addr = srv.local_addr();
    let start = Instant::now();
    let threads: Vec<_> = users
        .iter()
        .cloned()
        .map(|u| {
            std::thread::spawn(move || {
                std::thread::sleep((start + Duration::from_secs_f64(u.arrival_s)).saturating_duration_since(Instant::now()));
                run_client(addr, &u, rate).unwrap_or_else(|e| ClientReport {
                    user_id: u.user_id.clone(),
                    errors: vec![e.to_string()],
                    ..Default::default()
                })
            })
        })
        .collect();
    let clients: Vec<ClientReport> = threads.into_iter().map(|t| t.join().expect("client thread panicked")).collect();
    // give the server a moment to notice the last hang-ups
    std::thread::sleep(Duration::from_millis(50));
    let end = srv.now();
    let fleet = srv.shutdown();
    let abandoned: BTreeSet<&str> =
        clients.iter().filter(|c| c.hung_up && c.session_id.is_none()).map(|c| c.user_id.as_str()).collect();
    let run = assemble(scenario.seed, &fleet, &users, &abandoned, end);
    Ok((run, clients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordination::{EndReason, Task, TaskRequest};
    use crate::fleet::RobotSpec;
    use crate::scenario::{Behavior, ScriptedUser, Trajectory, UserOutcome};
    use crate::sim::DelayModel;

    #[test]
    fn two_robots_three_users() {
        let mut sc = Scenario { seed: 1, fleet: Default::default(), users: vec![], random_users: None };
        sc.fleet.publish_state = false;
        for i in 0..2 {
            let mut r = RobotSpec::new(format!("arm-{i}"), Task::TowerCreation);
            r.delay = DelayModel::none();
            sc.fleet.robots.push(r);
        }
        for (i, arrival) in [0.0, 0.05, 0.1].into_iter().enumerate() {
            sc.users.push(ScriptedUser {
                user_id: format!("u{i}"),
                arrival_s: arrival,
                task: TaskRequest::Any,
                trajectory: Trajectory::Lissajous { amplitude_m: 0.02, freq_hz: 0.5 },
                behavior: Behavior::CompleteAfter { secs: 0.4 },
                queue_patience_s: None,
            });
        }
        let (run, clients) = run_wall_clock(&sc, LogSink::Memory).unwrap();
        assert_eq!(run.report.violations(), 0, "{:?}", run.audit.details);
        assert_eq!(run.report.logs_finalized, 3);
        for u in run.report.users.values() {
            assert_eq!(u.outcome, UserOutcome::Ended(EndReason::UserQuit));
        }
        assert!(run.report.users["u2"].queue_wait_s.unwrap() > 0.25);
        assert!(clients.iter().all(|c| c.errors.is_empty()), "{clients:?}");
    }
}
