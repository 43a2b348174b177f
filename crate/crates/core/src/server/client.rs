use crate::coordination::channel::{encode_line, ClientMsg, ServerMsg};
use crate::coordination::EndReason;
use crate::protocol::{Encode, Timestamp};
use crate::scenario::{Behavior, SampleScript, ScriptedUser};
use base64::Engine;
use serde::Serialize;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

const HEARTBEAT: Duration = Duration::from_secs(1);
const END_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClientReport {
    pub user_id: String,
    /// Every queue position the server announced, in order.
    pub positions: Vec<usize>,
    pub session_id: Option<String>,
    pub robot_id: Option<String>,
    pub queue_wait_s: Option<f64>,
    pub end_reason: Option<EndReason>,
    /// Set when the script dropped the connection itself.
    pub hung_up: bool,
    pub samples_sent: u64,
    pub safety_rejects: u64,
    pub states_received: u64,
    pub errors: Vec<String>,
}

struct Link {
    out: TcpStream,
    rx: Receiver<ServerMsg>,
}

impl Link {
    fn send(&mut self, msg: &ClientMsg) -> io::Result<()> {
        self.out.write_all(encode_line(msg).as_bytes())
    }

    fn hang_up(self) {
        let _ = self.out.shutdown(std::net::Shutdown::Both);
    }
}

fn connect(addr: impl ToSocketAddrs) -> io::Result<Link> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let out = stream.try_clone()?;
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            match serde_json::from_str::<ServerMsg>(&line) {
                Ok(m) => {
                    if tx.send(m).is_err() {
                        break;
                    }
                }
                Err(e) => log::warn!("unparseable server line {line:?}: {e}"),
            }
        }
    });
    Ok(Link { out, rx })
}

/// Plays one scripted user against a live server over the line transport,
/// in real time.
pub fn run_client(addr: impl ToSocketAddrs, user: &ScriptedUser, rate_hz: f64) -> io::Result<ClientReport> {
    let mut link = connect(addr)?;
    let clock = Instant::now();
    let mut report = ClientReport { user_id: user.user_id.clone(), ..Default::default() };
    link.send(&ClientMsg::Join { user_id: user.user_id.clone(), task: user.task })?;

    // queued until assigned
    let mut next_beat = clock + HEARTBEAT;
    let patience = user.queue_patience_s.map(|p| clock + Duration::from_secs_f64(p));
    loop {
        let wake = patience.map_or(next_beat, |p| p.min(next_beat));
        match link.rx.recv_timeout(wake.saturating_duration_since(Instant::now())) {
            Ok(ServerMsg::Queued { position }) => report.positions.push(position),
            Ok(ServerMsg::SessionStart { session_id, robot_id, .. }) => {
                report.session_id = Some(session_id);
                report.robot_id = Some(robot_id);
                report.queue_wait_s = Some(clock.elapsed().as_secs_f64());
                break;
            }
            Ok(ServerMsg::Error { code, detail }) => {
                report.errors.push(format!("{code:?}: {detail}"));
                return Ok(report);
            }
            Ok(_) => {}
            Err(RecvTimeoutError::Timeout) => {
                if patience.is_some_and(|p| Instant::now() >= p) {
                    report.hung_up = true;
                    link.hang_up();
                    return Ok(report);
                }
                link.send(&ClientMsg::Heartbeat {})?;
                next_beat += HEARTBEAT;
            }
            Err(RecvTimeoutError::Disconnected) => return Ok(report),
        }
    }

    let start = Instant::now();
    let mut script = SampleScript::new(user, rate_hz);
    let stop_after = match user.behavior {
        Behavior::CompleteAfter { secs } | Behavior::DisconnectAfter { secs } => Some(Duration::from_secs_f64(secs)),
        Behavior::ViolateSafetyAfter { .. } => None,
    };
    loop {
        let due = start + Duration::from_secs_f64(script.due_after(script.seq()));
        if stop_after.is_some_and(|s| due >= start + s) {
            break;
        }
        loop {
            match link.rx.recv_timeout(due.saturating_duration_since(Instant::now())) {
                Ok(m) => {
                    if absorb(&mut report, m) {
                        return Ok(report);
                    }
                }
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Ok(report),
            }
        }
        let sample = script.next(Timestamp(clock.elapsed().as_nanos() as u64));
        let payload = base64::engine::general_purpose::STANDARD.encode(sample.encode());
        if link.send(&ClientMsg::Control { payload }).is_err() {
            return Ok(report);
        }
        report.samples_sent += 1;
    }

    if let Some(s) = stop_after {
        std::thread::sleep((start + s).saturating_duration_since(Instant::now()));
    }
    if matches!(user.behavior, Behavior::DisconnectAfter { .. }) {
        report.hung_up = true;
        link.hang_up();
        return Ok(report);
    }
    link.send(&ClientMsg::Quit {})?;
    let deadline = Instant::now() + END_GRACE;
    while let Ok(m) = link.rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
        if absorb(&mut report, m) {
            break;
        }
    }
    Ok(report)
}

/// Folds one in-session message into the report; true once the session ended.
fn absorb(report: &mut ClientReport, msg: ServerMsg) -> bool {
    match msg {
        ServerMsg::SessionEnd { reason } => {
            report.end_reason = Some(reason);
            true
        }
        ServerMsg::State { .. } => {
            report.states_received += 1;
            false
        }
        ServerMsg::Error { code, detail } => {
            if code == crate::coordination::channel::ErrorCode::SafetyReject {
                report.safety_rejects += 1;
            } else {
                report.errors.push(format!("{code:?}: {detail}"));
            }
            false
        }
        _ => false,
    }
}
