//! Three users and one arm: FIFO hand-off, a heartbeat eviction and the
//! independent audit of the event stream.

use telefleet::coordination::audit::audit;
use telefleet::coordination::{Coordinator, CoordinatorConfig, EndReason, Notice, Task, TaskRequest};
use telefleet::protocol::Timestamp;

fn main() {
    let mut c = Coordinator::new(CoordinatorConfig { heartbeat_timeout_secs: 2.0, ..Default::default() }).unwrap();
    c.register_robot("arm-0", Task::TowerCreation, Timestamp::ZERO).unwrap();
    let t = Timestamp::from_secs_f64;

    for (i, user) in ["ada", "ben", "cy"].iter().enumerate() {
        let outcome = c.join(user, TaskRequest::Any, t(i as f64 * 0.1)).unwrap();
        println!("{user}: {outcome:?}");
    }

    // cy goes quiet while queued
    c.heartbeat("ada", t(1.5));
    c.heartbeat("ben", t(1.5));
    for e in c.expire(t(2.5)) {
        println!("evicted {e:?}");
    }

    let s = c.active_sessions().next().unwrap().session_id.clone();
    c.end_session(&s, EndReason::UserQuit, t(3.0)).unwrap();
    for n in c.drain_notices() {
        match n {
            Notice::Assigned(s) => println!("{} -> {}", s.user_id, s.robot_id),
            Notice::QueuePosition { user_id, position } => println!("{user_id} queued at {position}"),
            Notice::Ended(s) => println!("{} ended: {:?}", s.user_id, s.end_reason),
        }
    }
    let holder = c.active_sessions().next().map(|s| s.user_id.clone());
    println!("arm-0 now held by {holder:?}");

    let report = audit(c.events());
    println!("audit clean: {} ({} events)", report.is_clean(), c.events().len());
}
