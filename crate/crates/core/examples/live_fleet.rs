//! Starts the live service on an ephemeral port and drives two scripted
//! phone clients against one arm over TCP.

use std::thread;
use telefleet::coordination::{Task, TaskRequest};
use telefleet::fleet::{Fleet, FleetConfig, LogSink, RobotSpec};
use telefleet::scenario::{Behavior, ScriptedUser, Trajectory};
use telefleet::server::{self, run_client};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut cfg = FleetConfig { time_limit_secs: 30.0, ..Default::default() };
    cfg.robots.push(RobotSpec::new("arm-0", Task::LaundryLayout));
    let srv = server::spawn(Fleet::new(cfg, LogSink::Memory)?, "127.0.0.1:0", None)?;
    let addr = srv.local_addr();
    println!("listening on {addr}");

    let user = |id: &str, secs| ScriptedUser {
        user_id: id.into(),
        arrival_s: 0.0,
        task: TaskRequest::Any,
        trajectory: Trajectory::Lissajous { amplitude_m: 0.03, freq_hz: 0.5 },
        behavior: Behavior::CompleteAfter { secs },
        queue_patience_s: None,
    };
    let (a, b) = (user("first", 1.0), user("second", 0.5));
    let ta = thread::spawn(move || run_client(addr, &a, 50.0));
    thread::sleep(std::time::Duration::from_millis(100));
    let tb = thread::spawn(move || run_client(addr, &b, 50.0));
    for r in [ta.join().unwrap()?, tb.join().unwrap()?] {
        println!(
            "{}: positions {:?}, waited {:.2}s, sent {}, {} state updates, ended {:?}",
            r.user_id,
            r.positions,
            r.queue_wait_s.unwrap_or(0.0),
            r.samples_sent,
            r.states_received,
            r.end_reason
        );
    }
    let fleet = srv.shutdown();
    for log in fleet.finished_logs() {
        println!("{} {}: {:?}", log.session.session_id, log.session.user_id, log.session.end_reason);
    }
    Ok(())
}
