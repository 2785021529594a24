//! Live sessions over WebSocket.
//!
//! Every connection gets its own session: a control thread that owns the
//! trial engine and ticks it on a fixed clock, a reader thread that parses
//! operator messages into a latest-wins input slot, and a writer thread that
//! pushes outbound messages as soon as they exist. Frames carry
//! newline-terminated JSON objects.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tungstenite::protocol::frame::coding::{Data, OpCode};
use tungstenite::protocol::frame::Frame;
use tungstenite::{Message, WebSocket};

use sharedctl_core::filter::CriterionKind;
use sharedctl_core::metrics::TrialMetrics;
use sharedctl_core::trial::{TrialEngine, TrialLog, TrialRow, TrialSetup};

use crate::csvio::write_trial_log;
use crate::error::{Error, Result};

/// Service settings shared by all sessions.
#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub setup: TrialSetup,
    pub config_hash: String,
    pub tick_interval: Duration,
    pub lockstep: bool,
    pub stale_ticks: u64,
    pub disconnect_timeout: Duration,
    /// Where finished and aborted trial logs are written.
    pub out_dir: Option<PathBuf>,
    /// Assistance when a start message does not say.
    pub default_assist: bool,
}

impl LiveConfig {
    pub fn new(setup: TrialSetup, config_hash: String) -> Self {
        LiveConfig {
            setup,
            config_hash,
            tick_interval: Duration::from_secs_f64(1.0 / 60.0),
            lockstep: false,
            stale_ticks: 2,
            disconnect_timeout: Duration::from_secs(10),
            out_dir: None,
            default_assist: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Start,
    Pause,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Mig,
    Ocip,
    Free,
}

/// Operator-to-server messages.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMsg {
    Input {
        u: f64,
    },
    Session {
        action: Action,
        #[serde(default)]
        protocol: Option<Protocol>,
        #[serde(default)]
        assist: Option<bool>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateMsg {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub t: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub x_c: f64,
    pub x_c_dot: f64,
    pub accepted: bool,
    pub criterion_value: f64,
    pub trial: u32,
    pub remaining_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsMsg {
    pub success: bool,
    pub balance_time: f64,
    pub time_to_success: f64,
    pub rms_error: f64,
    pub ergodicity: f64,
    pub pra: Option<f64>,
}

impl From<TrialMetrics> for MetricsMsg {
    fn from(m: TrialMetrics) -> Self {
        MetricsMsg {
            success: m.success,
            balance_time: m.balance_time,
            time_to_success: m.time_to_success,
            rms_error: m.rms_error,
            ergodicity: m.ergodicity,
            pra: m.pra,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialEndMsg {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub metrics: Option<MetricsMsg>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub aborted: bool,
}

/// Server-to-operator messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerMsg {
    State(StateMsg),
    TrialEnd(TrialEndMsg),
}

impl ServerMsg {
    /// One JSON object followed by a newline.
    pub fn to_line(&self) -> String {
        let mut s = match self {
            ServerMsg::State(m) => serde_json::to_string(m),
            ServerMsg::TrialEnd(m) => serde_json::to_string(m),
        }
        .unwrap_or_default();
        s.push('\n');
        s
    }
}

/// Parse every non-empty line of a frame.
pub fn parse_client_frame(text: &str) -> Vec<std::result::Result<ClientMsg, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ClientMsg>(l).map_err(|e| e.to_string()))
        .collect()
}

/// Latest-wins operator input, stamped with the session clock at receipt.
#[derive(Debug, Default)]
pub struct InputSlot {
    latest: Mutex<Option<(f64, u64)>>,
    clock: AtomicU64,
}

impl InputSlot {
    pub fn store(&self, u: f64) {
        let stamp = self.clock.load(Ordering::SeqCst);
        if let Ok(mut g) = self.latest.lock() {
            *g = Some((u, stamp));
        }
    }

    /// Input for the tick about to run; zero when absent or stale.
    pub fn sample(&self, stale_ticks: u64) -> f64 {
        let now = self.clock.load(Ordering::SeqCst);
        match self.latest.lock().ok().and_then(|g| *g) {
            Some((u, stamp)) if now - stamp <= stale_ticks => u,
            _ => 0.0,
        }
    }

    fn advance(&self) {
        self.clock.fetch_add(1, Ordering::SeqCst);
    }

    pub fn clock(&self) -> u64 {
        self.clock.load(Ordering::SeqCst)
    }
}

/// Deterministic session state machine. The threaded service drives it; tests
/// can drive it directly.
pub struct Session {
    pub id: u64,
    cfg: Arc<LiveConfig>,
    slot: Arc<InputSlot>,
    engine: Option<TrialEngine>,
    trial: u32,
    paused: bool,
    /// Logs of trials that ended in this session (finished or aborted).
    pub finished: Vec<(TrialLog, Option<TrialMetrics>)>,
}

impl Session {
    pub fn new(id: u64, cfg: Arc<LiveConfig>) -> Self {
        Session {
            id,
            cfg,
            slot: Arc::new(InputSlot::default()),
            engine: None,
            trial: 0,
            paused: false,
            finished: Vec::new(),
        }
    }

    pub fn slot(&self) -> Arc<InputSlot> {
        self.slot.clone()
    }

    pub fn is_running(&self) -> bool {
        self.engine.is_some() && !self.paused
    }

    pub fn has_trial(&self) -> bool {
        self.engine.is_some()
    }

    /// Start (or resume) a trial, pause, or abort.
    pub fn control(
        &mut self,
        action: Action,
        protocol: Option<Protocol>,
        assist: Option<bool>,
    ) -> Result<Vec<ServerMsg>> {
        match action {
            Action::Start => {
                if self.engine.is_some() {
                    self.paused = false;
                    return Ok(Vec::new());
                }
                let mut setup = self.cfg.setup.clone();
                match protocol.unwrap_or(Protocol::Free) {
                    Protocol::Mig => setup.criterion.kind = CriterionKind::Mig,
                    Protocol::Ocip => setup.criterion.kind = CriterionKind::Ocip,
                    Protocol::Free => {}
                }
                let assisted = assist.unwrap_or(self.cfg.default_assist);
                self.engine = Some(TrialEngine::new(&setup, assisted)?);
                self.trial += 1;
                self.paused = false;
                Ok(Vec::new())
            }
            Action::Pause => {
                self.paused = self.engine.is_some();
                Ok(Vec::new())
            }
            Action::Abort => self.abort(),
        }
    }

    /// End the current trial without metrics, keeping its partial log.
    pub fn abort(&mut self) -> Result<Vec<ServerMsg>> {
        let Some(engine) = self.engine.take() else {
            return Ok(Vec::new());
        };
        self.paused = false;
        let log = engine.partial_log(self.cfg.config_hash.clone(), 0);
        if !log.rows.is_empty() {
            self.persist(&log, true)?;
        }
        self.finished.push((log, None));
        Ok(vec![ServerMsg::TrialEnd(TrialEndMsg { kind: "trial_end", metrics: None, aborted: true })])
    }

    fn persist(&self, log: &TrialLog, aborted: bool) -> Result<()> {
        if let Some(dir) = &self.cfg.out_dir {
            let suffix = if aborted { "_aborted" } else { "" };
            write_trial_log(&dir.join(format!("session{}_trial{:02}{suffix}.csv", self.id, self.trial)), log)?;
        }
        Ok(())
    }

    /// Run one tick if a trial is active and not paused.
    pub fn tick(&mut self) -> Result<Vec<ServerMsg>> {
        if !self.is_running() {
            return Ok(Vec::new());
        }
        let u_sat = self.cfg.setup.params.u_sat;
        let u = self.slot.sample(self.cfg.stale_ticks);
        let u = if u.is_finite() { u.clamp(-u_sat, u_sat) } else { 0.0 };
        let Some(engine) = self.engine.as_mut() else {
            return Ok(Vec::new());
        };
        let row: TrialRow = engine.tick(|_, _, _| Ok(u))?;
        self.slot.advance();
        let mut out = vec![ServerMsg::State(StateMsg {
            kind: "state",
            t: row.t,
            theta: row.state.theta,
            theta_dot: row.state.theta_dot,
            x_c: row.state.x_c,
            x_c_dot: row.state.x_c_dot,
            accepted: row.accepted,
            criterion_value: row.criterion_value,
            trial: self.trial,
            remaining_s: sharedctl_core::trial::quantize(engine.remaining()),
        })];
        if engine.is_finished() {
            if let Some(engine) = self.engine.take() {
                let (log, metrics) = engine.finish(self.cfg.config_hash.clone(), 0)?;
                self.persist(&log, false)?;
                self.finished.push((log, Some(metrics)));
                out.push(ServerMsg::TrialEnd(TrialEndMsg {
                    kind: "trial_end",
                    metrics: Some(metrics.into()),
                    aborted: false,
                }));
            }
        }
        Ok(out)
    }
}

enum Event {
    Control(Action, Option<Protocol>, Option<bool>),
    /// Lockstep: one tick per received input.
    Step,
    Disconnected,
}

fn control_loop(mut session: Session, cfg: Arc<LiveConfig>, rx: Receiver<Event>, out: Sender<String>) {
    let send = |msgs: Vec<ServerMsg>| {
        for m in msgs {
            let _ = out.send(m.to_line());
        }
    };
    let id = session.id;
    let report = |e: Error| eprintln!("session {id}: {e}");
    let mut next = Instant::now();
    loop {
        let event = if cfg.lockstep || !session.is_running() {
            match rx.recv() {
                Ok(e) => Some(e),
                Err(_) => return,
            }
        } else {
            let now = Instant::now();
            if now >= next {
                None
            } else {
                match rx.recv_timeout(next - now) {
                    Ok(e) => Some(e),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            }
        };
        match event {
            Some(Event::Control(a, p, assist)) => {
                let was_running = session.is_running();
                match session.control(a, p, assist) {
                    Ok(m) => send(m),
                    Err(e) => report(e),
                }
                if !was_running && session.is_running() {
                    next = Instant::now();
                }
            }
            Some(Event::Step) => match session.tick() {
                Ok(m) => send(m),
                Err(e) => report(e),
            },
            Some(Event::Disconnected) => {
                if session.has_trial() {
                    session.paused = true;
                    std::thread::sleep(cfg.disconnect_timeout);
                    if let Err(e) = session.abort() {
                        report(e);
                    }
                }
                return;
            }
            None => {
                match session.tick() {
                    Ok(m) => send(m),
                    Err(e) => report(e),
                }
                next += cfg.tick_interval;
                let now = Instant::now();
                if now > next + 4 * cfg.tick_interval {
                    // fell far behind; resynchronize instead of bursting
                    next = now;
                }
            }
        }
    }
}

/// A socket whose writes are serialized through a shared lock, so the reader's
/// protocol replies and the writer thread's frames never interleave.
struct SharedStream {
    read: TcpStream,
    write: Arc<Mutex<TcpStream>>,
}

impl Read for SharedStream {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.read.read(buf)
    }
}

impl Write for SharedStream {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let mut w = self.write.lock().map_err(|_| std::io::Error::other("poisoned"))?;
        w.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn read_loop(mut ws: WebSocket<SharedStream>, slot: Arc<InputSlot>, lockstep: bool, events: Sender<Event>) {
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                for msg in parse_client_frame(text.as_str()) {
                    match msg {
                        Ok(ClientMsg::Input { u }) => {
                            slot.store(u);
                            if lockstep {
                                let _ = events.send(Event::Step);
                            }
                        }
                        Ok(ClientMsg::Session { action, protocol, assist }) => {
                            let _ = events.send(Event::Control(action, protocol, assist));
                        }
                        Err(e) => eprintln!("ignoring malformed message: {e}"),
                    }
                }
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                break;
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    let _ = events.send(Event::Disconnected);
}

/// Send outbound lines as soon as they are produced; lines queued together go
/// out in one frame.
fn write_loop(stream: Arc<Mutex<TcpStream>>, out: Receiver<String>) {
    while let Ok(first) = out.recv() {
        let mut text = first;
        while let Ok(line) = out.try_recv() {
            text.push_str(&line);
        }
        let mut bytes = Vec::with_capacity(text.len() + 10);
        if Frame::message(text.into_bytes(), OpCode::Data(Data::Text), true).format(&mut bytes).is_err() {
            break;
        }
        let ok = stream.lock().map(|mut s| s.write_all(&bytes).is_ok()).unwrap_or(false);
        if !ok {
            break;
        }
    }
}

static SESSION_IDS: AtomicU64 = AtomicU64::new(1);

fn handle_connection(stream: TcpStream, cfg: Arc<LiveConfig>) -> Result<()> {
    let _ = stream.set_nodelay(true);
    let runtime = |e: std::io::Error| Error::Runtime(e.to_string());
    let write = Arc::new(Mutex::new(stream.try_clone().map_err(runtime)?));
    let shared = SharedStream { read: stream, write: write.clone() };
    let ws = tungstenite::accept(shared).map_err(|e| Error::Runtime(format!("handshake: {e}")))?;
    let session = Session::new(SESSION_IDS.fetch_add(1, Ordering::SeqCst), cfg.clone());
    let slot = session.slot();
    let (ev_tx, ev_rx) = mpsc::channel();
    let (out_tx, out_rx) = mpsc::channel();
    let control = {
        let cfg = cfg.clone();
        std::thread::spawn(move || control_loop(session, cfg, ev_rx, out_tx))
    };
    let writer = std::thread::spawn(move || write_loop(write, out_rx));
    read_loop(ws, slot, cfg.lockstep, ev_tx);
    let _ = control.join();
    let _ = writer.join();
    Ok(())
}

/// Accept connections on `listener` forever, one session per connection.
pub fn spawn_server(listener: TcpListener, cfg: Arc<LiveConfig>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let cfg = cfg.clone();
            std::thread::spawn(move || {
                if let Err(e) = handle_connection(stream, cfg) {
                    eprintln!("connection: {e}");
                }
            });
        }
    })
}

/// Bind `127.0.0.1:port` and serve until the process exits.
pub fn serve(port: u16, cfg: LiveConfig) -> Result<()> {
    let listener =
        TcpListener::bind(("127.0.0.1", port)).map_err(|e| Error::Runtime(format!("bind port {port}: {e}")))?;
    eprintln!("listening on ws://{}", listener.local_addr().map_err(|e| Error::Runtime(e.to_string()))?);
    spawn_server(listener, Arc::new(cfg)).join().map_err(|_| Error::Runtime("server thread panicked".into()))
}
