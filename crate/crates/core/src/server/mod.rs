//! Live service on a single TCP port. A connection that opens with an HTTP
//! `GET` is either upgraded to a WebSocket control channel or answered with
//! a static file; anything else is a line-delimited JSON control channel.
//!
//! All connections share one [`Fleet`] behind one mutex, which is the total
//! order over coordination events. A ticker thread advances the fleet on
//! the wall clock.

mod client;
mod http;

pub use client::{run_client, ClientReport};

use crate::coordination::channel::{encode_line, ClientMsg, ErrorCode, ServerMsg};
use crate::fleet::{error_msg, Fleet, FleetError};
use crate::protocol::Timestamp;
use crate::teleop::SampleOutcome;
use base64::Engine;
use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

const TICK: Duration = Duration::from_millis(5);
const POLL: Duration = Duration::from_millis(10);

struct Shared {
    fleet: Mutex<Fleet>,
    clients: Mutex<HashMap<String, Sender<ServerMsg>>>,
    epoch: Instant,
    stop: AtomicBool,
    ui_dir: Option<PathBuf>,
}

impl Shared {
    fn now(&self) -> Timestamp {
        Timestamp(self.epoch.elapsed().as_nanos() as u64)
    }

    /// Runs `f` on the fleet at the current time, then delivers whatever it queued.
    fn with_fleet<R>(&self, f: impl FnOnce(&mut Fleet, Timestamp) -> R) -> R {
        let mut fleet = self.fleet.lock().expect("fleet lock poisoned");
        let out = f(&mut fleet, self.now());
        let msgs = fleet.drain_outbox();
        let clients = self.clients.lock().expect("client lock poisoned");
        for (user, msg) in msgs {
            if let Some(tx) = clients.get(&user) {
                let _ = tx.send(msg);
            }
        }
        out
    }
}

/// A running service. Dropping it without [`ServerHandle::shutdown`] leaves
/// the threads running until the process exits.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Server clock, nanoseconds since start.
    pub fn now(&self) -> Timestamp {
        self.shared.now()
    }

    pub fn with_fleet<R>(&self, f: impl FnOnce(&mut Fleet) -> R) -> R {
        self.shared.with_fleet(|fleet, _| f(fleet))
    }

    /// Blocks until the accept loop stops (it only stops on shutdown).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Ends every session, stops the threads and returns the fleet.
    pub fn shutdown(mut self) -> Fleet {
        self.shared.with_fleet(|fleet, now| {
            if let Err(e) = fleet.shutdown(now) {
                log::error!("shutdown: {e}");
            }
        });
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let shared = self.shared;
        // connection threads notice the stop flag within one poll interval
        let mut shared = shared;
        loop {
            match Arc::try_unwrap(shared) {
                Ok(s) => return s.fleet.into_inner().expect("fleet lock poisoned"),
                Err(back) => {
                    shared = back;
                    std::thread::sleep(POLL);
                }
            }
        }
    }
}

/// Binds `bind` and starts serving `fleet`.
pub fn spawn(fleet: Fleet, bind: &str, ui_dir: Option<PathBuf>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        fleet: Mutex::new(fleet),
        clients: Mutex::new(HashMap::new()),
        epoch: Instant::now(),
        stop: AtomicBool::new(false),
        ui_dir,
    });
    let ticker = {
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            while !shared.stop.load(Ordering::SeqCst) {
                shared.with_fleet(|fleet, now| fleet.advance(now));
                std::thread::sleep(TICK);
            }
        })
    };
    let acceptor = {
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            while !shared.stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let shared = Arc::clone(&shared);
                        std::thread::spawn(move || {
                            if let Err(e) = serve_connection(&shared, stream) {
                                log::debug!("{peer}: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                    Err(e) => log::warn!("accept: {e}"),
                }
            }
        })
    };
    log::info!("listening on {addr}");
    Ok(ServerHandle { addr, shared, threads: vec![ticker, acceptor] })
}

fn serve_connection(shared: &Arc<Shared>, stream: TcpStream) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut first = [0u8; 4];
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let n = stream.peek(&mut first)?;
    if n == 0 {
        return Ok(());
    }
    if &first[..n] == b"GET " || (n < 4 && b"GET ".starts_with(&first[..n])) {
        let head = http::peek_head(&stream)?;
        if http::is_websocket_upgrade(&head) {
            serve_websocket(shared, stream)
        } else {
            http::serve_static(stream, &head, shared.ui_dir.as_deref())
        }
    } else {
        serve_lines(shared, stream)
    }
}

/// Per-connection state shared by both transports.
struct Conn {
    user: Option<String>,
    tx: Sender<ServerMsg>,
}

impl Conn {
    fn reply(&self, msg: ServerMsg) {
        let _ = self.tx.send(msg);
    }

    fn handle(&mut self, shared: &Shared, text: &str) {
        let msg: ClientMsg = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return self.reply(ServerMsg::error(ErrorCode::BadMessage, e.to_string())),
        };
        match msg {
            ClientMsg::Join { user_id, task } => {
                if self.user.is_some() {
                    return self.reply(ServerMsg::error(ErrorCode::AlreadyJoined, "connection already joined"));
                }
                {
                    let mut clients = shared.clients.lock().expect("client lock poisoned");
                    if clients.contains_key(&user_id) {
                        drop(clients);
                        return self.reply(ServerMsg::error(ErrorCode::AlreadyJoined, format!("user `{user_id}` is connected")));
                    }
                    clients.insert(user_id.clone(), self.tx.clone());
                }
                match shared.with_fleet(|f, now| f.join(&user_id, task, now)) {
                    Ok(_) => self.user = Some(user_id),
                    Err(e) => {
                        shared.clients.lock().expect("client lock poisoned").remove(&user_id);
                        self.reply(error_msg(&e));
                    }
                }
            }
            ClientMsg::Heartbeat {} => match &self.user {
                Some(u) => shared.with_fleet(|f, now| f.heartbeat(u, now)),
                None => self.reply(ServerMsg::error(ErrorCode::NotJoined, "join first")),
            },
            ClientMsg::Control { payload } => {
                let Some(u) = &self.user else {
                    return self.reply(ServerMsg::error(ErrorCode::NotJoined, "join first"));
                };
                let bytes = match base64::engine::general_purpose::STANDARD.decode(payload.as_bytes()) {
                    Ok(b) => b,
                    Err(e) => return self.reply(ServerMsg::error(ErrorCode::BadSample, e.to_string())),
                };
                match shared.with_fleet(|f, now| f.control(u, &bytes, now)) {
                    Ok(SampleOutcome::Rejected(r)) => self.reply(ServerMsg::error(ErrorCode::SafetyReject, format!("{r:?}"))),
                    Ok(_) => {}
                    Err(e) => self.reply(error_msg(&e)),
                }
            }
            ClientMsg::Quit {} => {
                let Some(u) = &self.user else {
                    return self.reply(ServerMsg::error(ErrorCode::NotJoined, "join first"));
                };
                if let Err(e) = shared.with_fleet(|f, now| f.quit(u, now)) {
                    self.reply(error_msg(&e));
                }
            }
        }
    }

    /// Connection gone: the user's session or queue slot goes with it.
    fn close(&mut self, shared: &Shared) {
        if let Some(u) = self.user.take() {
            match shared.with_fleet(|f, now| f.disconnect(&u, now)) {
                Ok(_) | Err(FleetError::Coord(_)) => {}
                Err(e) => log::warn!("disconnect {u}: {e}"),
            }
            shared.clients.lock().expect("client lock poisoned").remove(&u);
        }
    }
}

fn new_conn() -> (Conn, Receiver<ServerMsg>) {
    let (tx, rx) = mpsc::channel();
    (Conn { user: None, tx }, rx)
}

fn serve_lines(shared: &Arc<Shared>, stream: TcpStream) -> io::Result<()> {
    stream.set_read_timeout(None)?;
    let (mut conn, rx) = new_conn();
    let mut out = stream.try_clone()?;
    let writer = std::thread::spawn(move || {
        for msg in rx {
            if out.write_all(encode_line(&msg).as_bytes()).is_err() {
                break;
            }
        }
    });
    stream.set_read_timeout(Some(POLL))?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                if line.ends_with('\n') {
                    let text = line.trim();
                    if !text.is_empty() {
                        conn.handle(shared, text);
                    }
                    line.clear();
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    conn.close(shared);
    let _ = reader.get_ref().shutdown(std::net::Shutdown::Both);
    drop(conn);
    let _ = writer.join();
    Ok(())
}

fn serve_websocket(shared: &Arc<Shared>, stream: TcpStream) -> io::Result<()> {
    use tungstenite::{Error, Message};
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let (mut conn, rx) = new_conn();
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        match ws.read() {
            Ok(Message::Text(text)) => conn.handle(shared, &text),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        let mut sent = false;
        while let Ok(msg) = rx.try_recv() {
            let text = serde_json::to_string(&msg).expect("messages serialize");
            if ws.write(Message::Text(text)).is_err() {
                break;
            }
            sent = true;
        }
        if sent && ws.flush().is_err() {
            break;
        }
    }
    conn.close(shared);
    let _ = ws.close(None);
    Ok(())
}
