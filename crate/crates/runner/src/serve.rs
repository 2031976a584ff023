//! Live session service: one simulation shared by every connected client,
//! streamed as JSON frames over a WebSocket at `/ws`, with the console's
//! static files served from the root.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use base64::Engine;
use futures::{SinkExt, StreamExt};
use lunarsim::autonomy::{Operator, Pending, ScriptedOperator, Session, SessionEvent};
use lunarsim::scenario::{Mode, Scenario, ScenarioError};
use lunarsim::world::World;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::record::RoverSnapshot;
use crate::run::{load_policy, rover_world, session_config, transport, vlm_choice, RunError, VlmChoice};

/// Shortest wall-clock gap between state frames.
pub const STATE_INTERVAL: Duration = Duration::from_millis(100);
/// Shortest wall-clock gap between camera images.
pub const CAMERA_INTERVAL: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    State,
    Chat,
    Skill,
    Task,
    Control,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: FrameKind,
    pub seq: u64,
    pub time_s: f64,
    pub payload: Value,
}

/// Messages accepted from clients. Answers to MoreInformation questions
/// travel as task text; `answer` is accepted as a synonym.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "lowercase")]
pub enum ClientMessage {
    #[serde(alias = "answer")]
    Task { text: String },
    Control { action: ControlAction },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlAction {
    Pause,
    Resume,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub seed: Option<u64>,
    pub vlm: Option<VlmChoice>,
    pub policy: Option<PathBuf>,
    /// Simulation seconds per wall-clock second; `0` runs unpaced.
    pub speed: f64,
    pub static_dir: Option<PathBuf>,
    pub images: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { seed: None, vlm: None, policy: None, speed: 1.0, static_dir: None, images: true }
    }
}

/// Shared between the simulation thread and the connection handlers.
pub struct Hub {
    frames: broadcast::Sender<String>,
    /// Serialises sequence assignment and fan-out so frames never reorder.
    publish_lock: Mutex<()>,
    seq: AtomicU64,
    latest_state: Mutex<Option<String>>,
    sim_time: Mutex<f64>,
    paused: AtomicBool,
    busy: AtomicBool,
    tasks: Mutex<mpsc::Sender<String>>,
}

impl Hub {
    fn encode(&self, kind: FrameKind, time_s: f64, payload: Value) -> String {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        serde_json::to_string(&Frame { kind, seq, time_s, payload }).expect("frame serialises")
    }

    /// Sends a frame to every client.
    pub fn publish(&self, kind: FrameKind, time_s: f64, payload: Value) {
        let _order = self.publish_lock.lock().expect("publish lock");
        let text = self.encode(kind, time_s, payload);
        if kind == FrameKind::State {
            *self.latest_state.lock().expect("state lock") = Some(text.clone());
        }
        // No receivers is fine.
        let _ = self.frames.send(text);
    }

    fn now(&self) -> f64 {
        *self.sim_time.lock().expect("time lock")
    }

    fn error_frame(&self, code: &str, message: impl Into<String>) -> String {
        let _order = self.publish_lock.lock().expect("publish lock");
        self.encode(FrameKind::Error, self.now(), json!({ "code": code, "message": message.into() }))
    }
}

fn event_frame(e: &SessionEvent) -> (FrameKind, f64, Value) {
    let v = serde_json::to_value(e).expect("event serialises");
    match e {
        SessionEvent::Chat { time_s, .. } => (FrameKind::Chat, *time_s, v),
        SessionEvent::SkillStarted { time_s, .. } | SessionEvent::SkillFinished { time_s, .. } => (FrameKind::Skill, *time_s, v),
        SessionEvent::TaskFinished { time_s, .. } => (FrameKind::Task, *time_s, v),
        SessionEvent::Violation { time_s, .. } => (FrameKind::Error, *time_s, json!({ "code": "protocol_violation", "event": v })),
        SessionEvent::Ended { time_s, .. } => (FrameKind::Control, *time_s, v),
    }
}

fn state_payload(world: &World, camera: bool) -> Value {
    let mut v = serde_json::to_value(RoverSnapshot::of(world)).expect("snapshot serialises");
    if camera {
        let png = world.camera().to_png();
        v["camera_png"] = Value::String(base64::engine::general_purpose::STANDARD.encode(png));
    }
    v
}

/// Paces simulation time against the wall clock and throttles frames.
struct Pacer {
    speed: f64,
    anchor: Option<(Instant, f64)>,
    last_state: Option<Instant>,
    last_camera: Option<Instant>,
}

impl Pacer {
    fn tick(&mut self, hub: &Hub, world: &World) {
        let t = world.state.time;
        *hub.sim_time.lock().expect("time lock") = t;
        if hub.paused.load(Ordering::SeqCst) {
            while hub.paused.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(20));
            }
            self.anchor = None;
        }
        if self.speed > 0.0 {
            let (wall, sim) = *self.anchor.get_or_insert((Instant::now(), t));
            let due = Duration::from_secs_f64(((t - sim) / self.speed).max(0.0));
            if let Some(wait) = due.checked_sub(wall.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let now = Instant::now();
        if self.last_state.is_none_or(|l| now - l >= STATE_INTERVAL) {
            let camera = self.last_camera.is_none_or(|l| now - l >= CAMERA_INTERVAL);
            if camera {
                self.last_camera = Some(now);
            }
            self.last_state = Some(now);
            hub.publish(FrameKind::State, t, state_payload(world, camera));
        }
    }
}

/// Runs operator messages against the session. Multi-target tasks continue
/// after each finish with the same progress note headless runs use.
fn simulation(mut session: Session, hub: Arc<Hub>, tasks: mpsc::Receiver<String>, speed: f64) {
    let mut pacer = Pacer { speed, anchor: None, last_state: None, last_camera: None };
    let mut pending = Pending::Task;
    let mut operator: Option<ScriptedOperator> = None;
    while let Ok(text) = tasks.recv() {
        if pending == Pending::Ended {
            hub.publish(FrameKind::Error, session.world.state.time, json!({ "code": "ended", "message": "session has ended" }));
            continue;
        }
        hub.busy.store(true, Ordering::SeqCst);
        pacer.anchor = None;
        let (op, mut message) = match (pending, operator.take()) {
            (Pending::Information, Some(op)) => {
                let mut op = op.with_answers([text.clone()]);
                let answer = op.respond(Pending::Information, "").unwrap_or(text);
                (op, answer)
            }
            _ => {
                let mut op = ScriptedOperator::new(text.clone());
                let task = op.respond(Pending::Task, "").unwrap_or(text);
                (op, task)
            }
        };
        let mut op = op;
        loop {
            let result = session.send(&message, &mut |w: &World| pacer.tick(&hub, w));
            let t = session.world.state.time;
            match result {
                Ok(p) => {
                    pending = p;
                    if let Pending::TaskFinished(_) = p {
                        if let Some(next) = op.respond(p, "") {
                            message = next;
                            continue;
                        }
                    }
                }
                Err(e) => {
                    pending = Pending::Task;
                    hub.publish(FrameKind::Error, t, json!({ "code": "orchestrator", "message": e.to_string() }));
                }
            }
            break;
        }
        operator = Some(op);
        let t = session.world.state.time;
        hub.publish(FrameKind::State, t, state_payload(&session.world, true));
        // Idle before the reply so a prompt answer is not turned away.
        hub.busy.store(false, Ordering::SeqCst);
        hub.publish(FrameKind::Task, t, json!({ "pending": pending }));
    }
}

/// Builds the session, starts its simulation thread and returns the hub.
pub fn start_session(scenario: &Scenario, opts: &ServeOptions) -> Result<Arc<Hub>, RunError> {
    if scenario.mode != Mode::RoverNav {
        return Err(ScenarioError::Invalid("the live service runs rover_nav scenarios".into()).into());
    }
    let world = rover_world(scenario)?;
    let (policy, _) = load_policy(opts.policy.as_deref())?;
    let transport = transport(vlm_choice(scenario, opts.vlm)?)?;
    let (task_tx, task_rx) = mpsc::channel();
    let (frames, _) = broadcast::channel(1024);
    let hub = Arc::new(Hub {
        frames,
        publish_lock: Mutex::new(()),
        seq: AtomicU64::new(0),
        latest_state: Mutex::new(None),
        sim_time: Mutex::new(0.0),
        paused: AtomicBool::new(false),
        busy: AtomicBool::new(false),
        tasks: Mutex::new(task_tx),
    });
    let sink = {
        let hub = hub.clone();
        Box::new(move |e: &SessionEvent| {
            let (kind, t, payload) = event_frame(e);
            hub.publish(kind, t, payload);
        })
    };
    let mut session = Session::new(world, transport, policy, session_config(scenario, opts.images)).with_event_sink(sink);
    session.startup()?;
    hub.publish(FrameKind::State, session.world.state.time, state_payload(&session.world, true));
    let speed = opts.speed;
    let sim_hub = hub.clone();
    std::thread::Builder::new().name("simulation".into()).spawn(move || simulation(session, sim_hub, task_rx, speed))?;
    Ok(hub)
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io { path: "thread".into(), message: e.to_string() }
    }
}

/// Handles one client message; returns a frame for that client only.
fn handle(hub: &Hub, text: &str) -> Option<String> {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return Some(hub.error_frame("malformed", e.to_string())),
    };
    match msg {
        ClientMessage::Task { text } => {
            if text.trim().is_empty() {
                return Some(hub.error_frame("empty_task", "task text is empty"));
            }
            if hub.busy.load(Ordering::SeqCst) {
                return Some(hub.error_frame("busy", "a skill is executing"));
            }
            hub.publish(FrameKind::Task, hub.now(), json!({ "text": text, "accepted": true }));
            if hub.tasks.lock().expect("task lock").send(text).is_err() {
                return Some(hub.error_frame("ended", "simulation is not running"));
            }
            None
        }
        ClientMessage::Control { action } => {
            hub.paused.store(action == ControlAction::Pause, Ordering::SeqCst);
            hub.publish(FrameKind::Control, hub.now(), json!({ "action": action }));
            None
        }
    }
}

async fn client(socket: WebSocket, hub: Arc<Hub>) {
    let (mut tx, mut rx) = socket.split();
    // Subscribing and reading the latest state under the publish lock keeps
    // the first frame older than everything queued after it.
    let (mut frames, latest) = {
        let _order = hub.publish_lock.lock().expect("publish lock");
        (hub.frames.subscribe(), hub.latest_state.lock().expect("state lock").clone())
    };
    if let Some(state) = latest {
        if tx.send(WsMessage::Text(state)).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = rx.next() => match incoming {
                Some(Ok(WsMessage::Text(text))) => {
                    if let Some(reply) = handle(&hub, &text) {
                        if tx.send(WsMessage::Text(reply)).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(WsMessage::Binary(_))) => {
                    let reply = hub.error_frame("malformed", "binary frames are not accepted");
                    if tx.send(WsMessage::Text(reply)).await.is_err() {
                        break;
                    }
                }
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if tx.send(WsMessage::Text(text)).await.is_err() {
                        break;
                    }
                }
                // A slow client loses frames rather than holding up the rest.
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("client lagged, dropped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

async fn ws(upgrade: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> impl IntoResponse {
    upgrade.on_upgrade(move |socket| client(socket, hub))
}

pub fn router(hub: Arc<Hub>, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().route("/ws", get(ws)).with_state(hub);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

pub async fn bind(port: u16) -> Result<tokio::net::TcpListener, ServeError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(port),
        _ => ServeError::Io(e),
    })
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, scenario: &Scenario, opts: &ServeOptions) -> Result<(), ServeError> {
    let hub = start_session(scenario, opts)?;
    let app = router(hub, opts.static_dir.clone());
    axum::serve(listener, app).await?;
    Ok(())
}
