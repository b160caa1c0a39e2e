//! Streaming inference over newline-delimited JSON on TCP.
//!
//! Requests:
//!
//! ```text
//! {"type":"frame","session":"s","seq":0,"png_b64":"..."}
//! {"type":"reset","session":"s"}
//! ```
//!
//! Replies carry `value` with six decimals plus `exact`, the same value in
//! shortest round-trip form:
//!
//! ```text
//! {"type":"warmup","session":"s","seq":0,"frames":1}
//! {"type":"affect","session":"s","seq":3,"value":0.512345,"exact":0.5123451234}
//! {"type":"ack","session":"s"}
//! {"type":"error","code":"stale_frame","detail":"stale frame","session":"s","seq":2}
//! ```

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::Deserialize;

use crate::ingest::decode_frame;
use crate::model::Predictor;
use crate::{Result, STACK_DEPTH};

pub const MAX_MESSAGE_BYTES: usize = 8 << 20;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(300);
pub const DEFAULT_MAX_SESSIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Frame { session: String, seq: u64, png_b64: String },
    Reset { session: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Warmup { session: String, seq: u64, frames: usize },
    Affect { session: String, seq: u64, value: f64 },
    Ack { session: String },
    Error { code: &'static str, detail: String, session: Option<String>, seq: Option<u64> },
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

impl Reply {
    fn error(code: &'static str, detail: impl Into<String>) -> Self {
        Reply::Error {
            code,
            detail: detail.into(),
            session: None,
            seq: None,
        }
    }

    /// One JSON line, without the trailing newline.
    pub fn to_line(&self) -> String {
        match self {
            Reply::Warmup { session, seq, frames } => {
                format!(r#"{{"type":"warmup","session":{},"seq":{seq},"frames":{frames}}}"#, json_str(session))
            }
            Reply::Affect { session, seq, value } => format!(
                r#"{{"type":"affect","session":{},"seq":{seq},"value":{value:.6},"exact":{}}}"#,
                json_str(session),
                serde_json::to_string(value).expect("finite value")
            ),
            Reply::Ack { session } => format!(r#"{{"type":"ack","session":{}}}"#, json_str(session)),
            Reply::Error { code, detail, session, seq } => {
                let mut s = format!(r#"{{"type":"error","code":"{code}","detail":{}"#, json_str(detail));
                if let Some(id) = session {
                    s.push_str(&format!(r#","session":{}"#, json_str(id)));
                }
                if let Some(n) = seq {
                    s.push_str(&format!(r#","seq":{n}"#));
                }
                s.push('}');
                s
            }
        }
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    ring: VecDeque<Arc<[f32]>>,
    /// Last accepted sequence number; `None` after creation or reset.
    seq: Option<u64>,
    last_seen: Instant,
}

impl Session {
    fn new(id: String) -> Self {
        Self {
            id,
            ring: VecDeque::with_capacity(STACK_DEPTH),
            seq: None,
            last_seen: Instant::now(),
        }
    }

    pub fn frames(&self) -> usize {
        self.ring.len()
    }

    pub fn seq(&self) -> Option<u64> {
        self.seq
    }
}

/// Session table plus the shared, immutable model.
pub struct SessionManager {
    predictor: Predictor,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    max_sessions: usize,
    idle_timeout: Duration,
}

impl SessionManager {
    pub fn new(predictor: Predictor, max_sessions: usize, idle_timeout: Duration) -> Self {
        Self {
            predictor,
            sessions: Mutex::new(HashMap::new()),
            max_sessions: max_sessions.max(1),
            idle_timeout,
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle longer than the timeout; returns how many.
    pub fn evict_idle(&self) -> usize {
        let now = Instant::now();
        let mut map = self.sessions.lock().unwrap();
        let before = map.len();
        map.retain(|_, s| now.duration_since(s.lock().unwrap().last_seen) < self.idle_timeout);
        before - map.len()
    }

    fn session(&self, id: &str, create: bool) -> std::result::Result<Arc<Mutex<Session>>, Reply> {
        let mut map = self.sessions.lock().unwrap();
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        if !create {
            return Err(Reply::Error {
                code: "unknown_session",
                detail: format!("unknown session {id}"),
                session: Some(id.to_string()),
                seq: None,
            });
        }
        if map.len() >= self.max_sessions {
            let now = Instant::now();
            map.retain(|_, s| now.duration_since(s.lock().unwrap().last_seen) < self.idle_timeout);
            if map.len() >= self.max_sessions {
                return Err(Reply::Error {
                    code: "too_many_sessions",
                    detail: format!("session limit {} reached", self.max_sessions),
                    session: Some(id.to_string()),
                    seq: None,
                });
            }
        }
        let s = Arc::new(Mutex::new(Session::new(id.to_string())));
        map.insert(id.to_string(), s.clone());
        Ok(s)
    }

    pub fn handle_line(&self, line: &str) -> Reply {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => Reply::error("malformed_json", e.to_string()),
        }
    }

    pub fn handle(&self, req: Request) -> Reply {
        match req {
            Request::Frame { session, seq, png_b64 } => self.handle_frame(&session, seq, &png_b64),
            Request::Reset { session } => self.handle_reset(&session),
        }
    }

    pub fn handle_frame(&self, id: &str, seq: u64, png_b64: &str) -> Reply {
        let err = |code: &'static str, detail: String| Reply::Error {
            code,
            detail,
            session: Some(id.to_string()),
            seq: Some(seq),
        };
        let pixels = match base64::engine::general_purpose::STANDARD
            .decode(png_b64.trim())
            .map_err(|e| e.to_string())
            .and_then(|bytes| decode_frame(&bytes, self.predictor.side()).map_err(|e| e.to_string()))
        {
            Ok(p) => Arc::<[f32]>::from(p),
            Err(e) => return err("bad_image", e),
        };
        let session = match self.session(id, true) {
            Ok(s) => s,
            Err(reply) => return reply,
        };
        let mut s = session.lock().unwrap();
        s.last_seen = Instant::now();
        if s.seq.is_some_and(|last| seq <= last) {
            return err("stale_frame", "stale frame".into());
        }
        s.seq = Some(seq);
        if s.ring.len() == STACK_DEPTH {
            s.ring.pop_front();
        }
        s.ring.push_back(pixels);
        if s.ring.len() < STACK_DEPTH {
            return Reply::Warmup {
                session: id.to_string(),
                seq,
                frames: s.ring.len(),
            };
        }
        let planes: Vec<&[f32]> = s.ring.iter().map(|f| &f[..]).collect();
        match self.predictor.predict_frames(&planes) {
            Ok(value) => Reply::Affect {
                session: id.to_string(),
                seq,
                value,
            },
            Err(e) => err("inference", e.to_string()),
        }
    }

    pub fn handle_reset(&self, id: &str) -> Reply {
        match self.session(id, false) {
            Ok(session) => {
                let mut s = session.lock().unwrap();
                s.ring.clear();
                s.seq = None;
                s.last_seen = Instant::now();
                Reply::Ack { session: id.to_string() }
            }
            Err(reply) => reply,
        }
    }
}

/// Reads one LF-terminated line of at most `MAX_MESSAGE_BYTES`. Returns
/// `Ok(None)` at EOF and `Err(len)` for an oversized line, which is
/// consumed up to its newline.
fn read_message<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>) -> std::io::Result<Option<std::result::Result<(), usize>>> {
    buf.clear();
    let n = reader.by_ref().take(MAX_MESSAGE_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        if buf.len() <= MAX_MESSAGE_BYTES {
            return Ok(Some(Ok(())));
        }
    } else if buf.len() <= MAX_MESSAGE_BYTES {
        // Final line without a newline.
        return Ok(Some(Ok(())));
    }
    let mut skipped = buf.len();
    let mut sink = Vec::new();
    loop {
        sink.clear();
        let n = reader.by_ref().take(1 << 16).read_until(b'\n', &mut sink)?;
        skipped += n;
        if n == 0 || sink.last() == Some(&b'\n') {
            break;
        }
    }
    Ok(Some(Err(skipped)))
}

fn serve_connection(stream: TcpStream, manager: &SessionManager) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    while let Some(msg) = read_message(&mut reader, &mut buf)? {
        let reply = match msg {
            Err(len) => Reply::error("message_too_large", format!("message of {len} bytes exceeds {MAX_MESSAGE_BYTES}")),
            Ok(()) if buf.iter().all(u8::is_ascii_whitespace) => continue,
            Ok(()) => match std::str::from_utf8(&buf) {
                Ok(line) => manager.handle_line(line),
                Err(e) => Reply::error("malformed_json", format!("invalid UTF-8: {e}")),
            },
        };
        let mut line = reply.to_line();
        line.push('\n');
        writer.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub struct Server {
    listener: TcpListener,
    manager: Arc<SessionManager>,
}

/// Background server; stops accepting on [`shutdown`](Self::shutdown) or drop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, manager: SessionManager) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            manager: Arc::new(manager),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections forever, one thread each.
    pub fn run(self) -> Result<()> {
        self.run_until(&AtomicBool::new(false))
    }

    fn run_until(self, stop: &AtomicBool) -> Result<()> {
        let sweeper_stop = Arc::new(AtomicBool::new(false));
        let sweeper = {
            let manager = self.manager.clone();
            let stop = sweeper_stop.clone();
            std::thread::spawn(move || {
                let tick = (manager.idle_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(30));
                while !stop.load(Ordering::Relaxed) {
                    std::thread::park_timeout(tick);
                    let n = manager.evict_idle();
                    if n > 0 {
                        log::info!("evicted {n} idle sessions");
                    }
                }
            })
        };
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let manager = self.manager.clone();
                    std::thread::spawn(move || {
                        let peer = stream.peer_addr().ok();
                        if let Err(e) = serve_connection(stream, &manager) {
                            log::debug!("connection {peer:?}: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        sweeper_stop.store(true, Ordering::Relaxed);
        sweeper.thread().unpark();
        let _ = sweeper.join();
        Ok(())
    }

    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            if let Err(e) = self.run_until(&flag) {
                log::error!("server stopped: {e}");
            }
        });
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Blocking line-oriented client, used by tests and tooling.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    pub fn send_line(&mut self, line: &str) -> Result<serde_json::Value> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let mut reply = String::new();
        self.reader.read_line(&mut reply)?;
        Ok(serde_json::from_str(&reply)?)
    }

    pub fn send_frame(&mut self, session: &str, seq: u64, png: &[u8]) -> Result<serde_json::Value> {
        let msg = serde_json::json!({
            "type": "frame",
            "session": session,
            "seq": seq,
            "png_b64": base64::engine::general_purpose::STANDARD.encode(png),
        });
        self.send_line(&msg.to_string())
    }

    pub fn reset(&mut self, session: &str) -> Result<serde_json::Value> {
        self.send_line(&serde_json::json!({"type": "reset", "session": session}).to_string())
    }
}
