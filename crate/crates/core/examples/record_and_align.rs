//! Records the arm's sensor streams to a session log, reads it back and
//! aligns every topic to one query time.

use telefleet::fleet::session_topics;
use telefleet::protocol::{topics, Timestamp};
use telefleet::recorder::{LogHeader, LogReader, LogWriter};
use telefleet::sim::{DelayModel, IkParams, KinematicChain, SimRobot, StreamEmitter, StreamSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let streams = StreamSet::default();
    let header = LogHeader::new("demo", session_topics(&streams, 50.0))?;
    let robot = SimRobot::new(KinematicChain::default(), IkParams::default(), &DelayModel::none())?;
    let mut emitter = StreamEmitter::new(&streams);
    let mut w = LogWriter::new(Vec::new(), header)?;
    for step in 1..=20u64 {
        for r in emitter.emit_until(Timestamp::from_millis(step * 100), &robot.snapshot()) {
            w.append(r.topic_id, r.t, &r.payload)?;
        }
    }
    let bytes = w.finish()?;
    println!("2 s of streams: {} bytes", bytes.len());

    let log = LogReader::from_bytes(&bytes)?;
    for t in &log.header().topics {
        println!("  {:<12} {:>6.1} Hz {:>4} records", t.name, t.declared_rate_hz, log.count(t.topic_id));
    }
    let ids = [topics::ROBOT_STATE, topics::RGB_FRONT, topics::DEPTH_TOP];
    let aligned = log.align(Timestamp::from_millis(1234), &ids)?;
    for id in ids {
        if let Some(a) = aligned.get(id) {
            println!("topic {id} at 1.234 s: seq {} from {:.3} s, {:.1} ms stale", a.seq, a.t.as_secs_f64(), a.staleness_ns as f64 / 1e6);
        }
    }

    // a torn tail is dropped, earlier records survive
    let torn = &bytes[..bytes.len() - 10];
    let partial = LogReader::from_bytes(torn)?;
    println!("torn copy keeps {} of {} records: {:?}", partial.len(), log.len(), partial.truncation());
    Ok(())
}
