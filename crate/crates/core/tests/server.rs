use base64::Engine;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;
use telefleet::coordination::channel::{ClientMsg, ErrorCode, ServerMsg};
use telefleet::coordination::{EndReason, Task, TaskRequest};
use telefleet::fleet::{Fleet, FleetConfig, LogSink, RobotSpec};
use telefleet::protocol::{Decode, Encode, PhoneSample, RobotStateMsg, Timestamp, UnitQuat, Vec3};
use telefleet::scenario::{Behavior, ScriptedUser, Trajectory};
use telefleet::server::{self, run_client};
use telefleet::sim::DelayModel;

fn fleet(robots: usize, publish_state: bool) -> Fleet {
    let mut cfg = FleetConfig { time_limit_secs: 30.0, publish_state, ..Default::default() };
    for i in 0..robots {
        let mut r = RobotSpec::new(format!("arm-{i}"), Task::ObjectSearch);
        r.delay = DelayModel::none();
        cfg.robots.push(r);
    }
    Fleet::new(cfg, LogSink::Memory).unwrap()
}

struct LineClient {
    out: TcpStream,
    inp: BufReader<TcpStream>,
}

impl LineClient {
    fn connect(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        LineClient { out: s.try_clone().unwrap(), inp: BufReader::new(s) }
    }

    fn send(&mut self, msg: &ClientMsg) {
        let mut line = serde_json::to_string(msg).unwrap();
        line.push('\n');
        self.out.write_all(line.as_bytes()).unwrap();
    }

    fn recv(&mut self) -> ServerMsg {
        let mut line = String::new();
        self.inp.read_line(&mut line).expect("server reply");
        serde_json::from_str(&line).unwrap_or_else(|e| panic!("{line:?}: {e}"))
    }

    /// Next message that is not a state update.
    fn recv_skip_state(&mut self) -> ServerMsg {
        loop {
            match self.recv() {
                ServerMsg::State { .. } => continue,
                m => return m,
            }
        }
    }
}

fn join(user: &str) -> ClientMsg {
    ClientMsg::Join { user_id: user.into(), task: TaskRequest::Any }
}

fn control(seq: u32, dx: f64) -> ClientMsg {
    let s = PhoneSample {
        seq,
        t_client: Timestamp(seq as u64 * 20_000_000),
        delta_pos: Vec3::new(dx, 0.0, 0.0),
        orientation: UnitQuat::IDENTITY,
        clutch: true,
    };
    ClientMsg::Control { payload: base64::engine::general_purpose::STANDARD.encode(s.encode()) }
}

#[test]
fn line_channel_queue_handoff_and_state() {
    let srv = server::spawn(fleet(1, true), "127.0.0.1:0", None).unwrap();
    let mut a = LineClient::connect(srv.local_addr());
    let mut b = LineClient::connect(srv.local_addr());

    a.send(&join("alice"));
    assert!(matches!(a.recv(), ServerMsg::SessionStart { ref robot_id, .. } if robot_id == "arm-0"));
    b.send(&join("bob"));
    assert_eq!(b.recv(), ServerMsg::Queued { position: 0 });

    // the same user id on a second connection is refused
    let mut dup = LineClient::connect(srv.local_addr());
    dup.send(&join("bob"));
    assert!(matches!(dup.recv(), ServerMsg::Error { code: ErrorCode::AlreadyJoined, .. }));
    dup.send(&ClientMsg::Heartbeat {});
    assert!(matches!(dup.recv(), ServerMsg::Error { code: ErrorCode::NotJoined, .. }));
    b.send(&ClientMsg::Control { payload: "!!".into() });
    assert!(matches!(b.recv(), ServerMsg::Error { code: ErrorCode::NoSession, .. } | ServerMsg::Error { code: ErrorCode::BadSample, .. }));

    for seq in 0..10 {
        a.send(&control(seq, 0.001 * seq as f64));
        std::thread::sleep(Duration::from_millis(20));
    }
    match a.recv() {
        ServerMsg::State { payload } => {
            let bytes = base64::engine::general_purpose::STANDARD.decode(payload).unwrap();
            RobotStateMsg::decode(&bytes).unwrap();
        }
        other => panic!("expected state, got {other:?}"),
    }
    a.send(&ClientMsg::Quit {});
    assert_eq!(a.recv_skip_state(), ServerMsg::SessionEnd { reason: EndReason::UserQuit });
    assert!(matches!(b.recv(), ServerMsg::SessionStart { ref robot_id, .. } if robot_id == "arm-0"));

    // dropping the socket ends bob's session
    drop(b);
    let mut ended = false;
    for _ in 0..200 {
        if srv.with_fleet(|f| f.coordinator().active_sessions().count()) == 0 {
            ended = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    assert!(ended, "disconnect did not end the session");
    let fleet = srv.shutdown();
    let reasons: Vec<_> = fleet.finished_logs().iter().map(|l| l.session.end_reason.unwrap()).collect();
    assert_eq!(reasons, vec![EndReason::UserQuit, EndReason::Disconnect]);
    assert_eq!(fleet.finished_logs()[0].session.user_id, "alice");
}

#[test]
fn websocket_channel_on_the_same_port() {
    let srv = server::spawn(fleet(1, false), "127.0.0.1:0", None).unwrap();
    let stream = TcpStream::connect(srv.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let url = format!("ws://{}/ws", srv.local_addr());
    let (mut ws, _) = tungstenite::client(url.as_str(), stream).unwrap();
    let recv = |ws: &mut tungstenite::WebSocket<TcpStream>| loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            return serde_json::from_str::<ServerMsg>(&t).unwrap();
        }
    };
    ws.send(tungstenite::Message::Text(serde_json::to_string(&join("carol")).unwrap())).unwrap();
    assert!(matches!(recv(&mut ws), ServerMsg::SessionStart { ref robot_id, task: Task::ObjectSearch, .. } if robot_id == "arm-0"));
    ws.send(tungstenite::Message::Text("{not json".into())).unwrap();
    assert!(matches!(recv(&mut ws), ServerMsg::Error { code: ErrorCode::BadMessage, .. }));
    ws.send(tungstenite::Message::Text(serde_json::to_string(&ClientMsg::Quit {}).unwrap())).unwrap();
    assert_eq!(recv(&mut ws), ServerMsg::SessionEnd { reason: EndReason::UserQuit });
    let fleet = srv.shutdown();
    assert_eq!(fleet.finished_logs().len(), 1);
}

fn http_get(addr: SocketAddr, path: &str) -> (String, Vec<u8>) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut resp = Vec::new();
    s.read_to_end(&mut resp).unwrap();
    let split = resp.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8(resp[..split].to_vec()).unwrap();
    (head, resp[split + 4..].to_vec())
}

#[test]
fn serves_static_ui_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>fleet</h1>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let srv = server::spawn(fleet(1, false), "127.0.0.1:0", Some(dir.path().to_path_buf())).unwrap();
    let (head, body) = http_get(srv.local_addr(), "/");
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    assert!(head.contains("text/html"));
    assert_eq!(body, b"<h1>fleet</h1>");
    let (head, body) = http_get(srv.local_addr(), "/app.js");
    assert!(head.contains("text/javascript"));
    assert_eq!(body, b"console.log(1)");
    assert!(http_get(srv.local_addr(), "/missing.css").0.starts_with("HTTP/1.1 404"));
    assert!(http_get(srv.local_addr(), "/../Cargo.toml").0.starts_with("HTTP/1.1 404"));
    srv.shutdown();

    let bare = server::spawn(fleet(1, false), "127.0.0.1:0", None).unwrap();
    assert!(http_get(bare.local_addr(), "/").0.starts_with("HTTP/1.1 404"));
    bare.shutdown();
}

#[test]
fn scripted_clients_share_one_robot_in_order() {
    let srv = server::spawn(fleet(1, false), "127.0.0.1:0", None).unwrap();
    let addr = srv.local_addr();
    let user = |id: &str, behavior| ScriptedUser {
        user_id: id.into(),
        arrival_s: 0.0,
        task: TaskRequest::Any,
        trajectory: Trajectory::Lissajous { amplitude_m: 0.02, freq_hz: 0.5 },
        behavior,
        queue_patience_s: None,
    };
    let first = user("u0", Behavior::CompleteAfter { secs: 0.6 });
    let second = user("u1", Behavior::DisconnectAfter { secs: 0.3 });
    let t0 = std::thread::spawn(move || run_client(addr, &first, 50.0).unwrap());
    std::thread::sleep(Duration::from_millis(100));
    let t1 = std::thread::spawn(move || run_client(addr, &second, 50.0).unwrap());
    let r0 = t0.join().unwrap();
    let r1 = t1.join().unwrap();
    assert_eq!(r0.end_reason, Some(EndReason::UserQuit));
    assert!(r0.samples_sent >= 25, "{r0:?}");
    assert_eq!(r1.positions, vec![0]);
    assert!(r1.queue_wait_s.unwrap() >= 0.4, "{r1:?}");
    assert!(r1.hung_up);
    let mut fleet = srv.shutdown();
    let logs = fleet.finished_logs();
    assert_eq!(logs.len(), 2);
    assert_eq!(logs[1].session.end_reason, Some(EndReason::Disconnect));
    assert!(fleet.drain_outbox().is_empty());
}
