use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use lunarsim::scenario::Scenario;
use runner::serve::{bind, serve, Frame, FrameKind, ServeError, ServeOptions};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const TASK: &str = "Drive to the parabolic antenna, the rover, and finally to the astronaut";

async fn start() -> u16 {
    let listener = bind(0).await.unwrap();
    let port = listener.local_addr().unwrap().port();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/lunar_base.plx");
    let scenario = Scenario::load(path, None).unwrap();
    let opts = ServeOptions { speed: 0.0, ..ServeOptions::default() };
    tokio::spawn(async move { serve(listener, &scenario, &opts).await.unwrap() });
    port
}

async fn connect(port: u16) -> Ws {
    let (ws, _) = connect_async(format!("ws://127.0.0.1:{port}/ws")).await.unwrap();
    ws
}

async fn next_frame(ws: &mut Ws) -> Frame {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(60), ws.next()).await.expect("frame within a minute").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Reads frames until `done` holds for one, returning all of them.
async fn until(ws: &mut Ws, done: impl Fn(&Frame) -> bool) -> Vec<Frame> {
    let mut out = Vec::new();
    loop {
        let f = next_frame(ws).await;
        let stop = done(&f);
        out.push(f);
        if stop {
            return out;
        }
    }
}

fn task_reply(f: &Frame) -> Option<&Value> {
    (f.kind == FrameKind::Task).then(|| f.payload.get("pending")).flatten()
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn task_streams_ordered_skill_events_to_every_viewer() {
    let port = start().await;
    let mut operator = connect(port).await;
    let mut viewer = connect(port).await;
    // Both start from the latest state.
    let (a0, b0) = (next_frame(&mut operator).await, next_frame(&mut viewer).await);
    assert_eq!(a0.kind, FrameKind::State);
    assert_eq!(a0, b0);
    assert!(a0.payload["camera_png"].as_str().is_some_and(|s| !s.is_empty()));

    send(&mut operator, json!({ "type": "task", "payload": { "text": TASK } })).await;
    let a = until(&mut operator, |f| task_reply(f).is_some()).await;
    let b = until(&mut viewer, |f| task_reply(f).is_some()).await;
    assert_eq!(a, b);
    assert!(a.windows(2).all(|w| w[0].seq < w[1].seq));

    let skills: Vec<&Frame> = a.iter().filter(|f| f.kind == FrameKind::Skill).collect();
    assert!(skills.len() >= 6);
    for pair in skills.chunks(2) {
        assert_eq!(pair[0].payload["type"], "skill_started");
        assert_eq!(pair[1].payload["type"], "skill_finished");
        assert_eq!(pair[0].payload["command"], pair[1].payload["command"]);
    }
    let finishes = a.iter().filter(|f| f.kind == FrameKind::Task && f.payload["type"] == "task_finished").count();
    assert_eq!(finishes, 3);
    assert!(a.iter().any(|f| f.kind == FrameKind::Chat));
    assert!(a.iter().filter(|f| f.kind == FrameKind::State).all(|f| f.payload["pose"].is_object()));
    assert!(!a.iter().any(|f| f.kind == FrameKind::Error));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_get_error_frames_and_the_socket_stays_open() {
    let port = start().await;
    let mut ws = connect(port).await;
    next_frame(&mut ws).await;
    for bad in ["not json", r#"{"type":"launch"}"#, r#"{"type":"task","payload":{"text":"   "}}"#] {
        ws.send(Message::Text(bad.into())).await.unwrap();
        let f = next_frame(&mut ws).await;
        assert_eq!(f.kind, FrameKind::Error, "{bad}");
        assert!(f.payload["code"].is_string());
    }
    ws.send(Message::Binary(vec![1, 2, 3])).await.unwrap();
    assert_eq!(next_frame(&mut ws).await.payload["code"], "malformed");

    send(&mut ws, json!({ "type": "control", "payload": { "action": "pause" } })).await;
    let f = next_frame(&mut ws).await;
    assert_eq!((f.kind, &f.payload["action"]), (FrameKind::Control, &json!("pause")));
    send(&mut ws, json!({ "type": "control", "payload": { "action": "resume" } })).await;
    assert_eq!(next_frame(&mut ws).await.payload["action"], "resume");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ambiguous_task_asks_for_more_information() {
    let port = start().await;
    let mut ws = connect(port).await;
    next_frame(&mut ws).await;
    send(&mut ws, json!({ "type": "task", "payload": { "text": "Drive to a target" } })).await;
    let frames = until(&mut ws, |f| task_reply(f).is_some()).await;
    assert_eq!(task_reply(frames.last().unwrap()).unwrap(), "Information");
    assert!(frames.iter().any(|f| f.kind == FrameKind::Chat && f.payload["text"].as_str().is_some_and(|t| t.contains("MoreInformation"))));

    send(&mut ws, json!({ "type": "answer", "payload": { "text": "The astronaut" } })).await;
    let frames = until(&mut ws, |f| task_reply(f).is_some()).await;
    assert!(frames.iter().any(|f| f.kind == FrameKind::Task && f.payload["type"] == "task_finished"));
}

#[tokio::test]
async fn occupied_port_is_reported() {
    let held = bind(0).await.unwrap();
    let port = held.local_addr().unwrap().port();
    assert!(matches!(bind(port).await, Err(ServeError::PortInUse(p)) if p == port));
}

#[test]
fn documented_client_messages_parse() {
    use runner::serve::{ClientMessage, ControlAction};
    let text = |s: &str| ClientMessage::Task { text: s.into() };
    let cases = [
        (r#"{"type": "task", "payload": {"text": "Drive to the rover"}}"#, text("Drive to the rover")),
        (r#"{"type": "answer", "payload": {"text": "The astronaut"}}"#, text("The astronaut")),
        (r#"{"type": "control", "payload": {"action": "pause"}}"#, ClientMessage::Control { action: ControlAction::Pause }),
        (r#"{"type": "control", "payload": {"action": "resume"}}"#, ClientMessage::Control { action: ControlAction::Resume }),
    ];
    for (json, want) in cases {
        assert_eq!(serde_json::from_str::<ClientMessage>(json).unwrap(), want, "{json}");
    }
}

#[test]
fn frame_envelope_field_order_is_fixed() {
    let f = Frame { kind: FrameKind::State, seq: 17, time_s: 12.5, payload: json!({}) };
    assert_eq!(serde_json::to_string(&f).unwrap(), r#"{"type":"state","seq":17,"time_s":12.5,"payload":{}}"#);
}
