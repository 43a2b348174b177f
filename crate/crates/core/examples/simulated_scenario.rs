//! Plays the queue scenario on the simulated clock and prints what each user
//! experienced. Pass a scenario file to run a different one.

use telefleet::fleet::LogSink;
use telefleet::scenario::{run_simulated, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/queue.toml").into());
    let mut scenario = Scenario::load(&path)?;
    scenario.apply_seed_env()?;
    let started = std::time::Instant::now();
    let run = run_simulated(&scenario, LogSink::Discard)?;
    let r = &run.report;
    println!("{} sessions on {} robots, {:.0} s simulated in {:.2} s", r.sessions_started, r.robots, r.end_time_s, started.elapsed().as_secs_f64());
    for (id, u) in r.users.iter().take(12) {
        println!(
            "  {id:<6} arrived {:>6.1}s waited {:>6} on {:<6} -> {:?}",
            u.arrival_s,
            u.queue_wait_s.map_or("-".into(), |w| format!("{w:.1}s")),
            u.robot_id.as_deref().unwrap_or("-"),
            u.outcome
        );
    }
    println!("violations: {} ({:?})", r.violations(), run.audit.details);
    Ok(())
}
