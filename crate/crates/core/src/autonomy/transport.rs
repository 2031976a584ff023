use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{Message, Role, Target};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport is not configured: {0}")]
    NotConfigured(String),
    #[error("request failed: {0}")]
    Request(String),
    #[error("malformed response: {0}")]
    Response(String),
}

/// World facts available to a simulated VLM. Remote models ignore them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub visible: Vec<Target>,
    pub distances: Vec<(Target, f64)>,
    pub stopped: bool,
}

impl GroundTruth {
    pub fn distance(&self, t: Target) -> Option<f64> {
        self.distances.iter().find(|(k, _)| *k == t).map(|(_, d)| *d)
    }
}

pub struct VlmRequest<'a> {
    pub messages: &'a [Message],
    pub truth: Option<&'a GroundTruth>,
}

/// A chat model that answers an ordered message list with text.
pub trait VlmTransport: Send {
    fn complete(&mut self, request: &VlmRequest<'_>) -> Result<String, TransportError>;
}

impl<T: VlmTransport + ?Sized> VlmTransport for Box<T> {
    fn complete(&mut self, request: &VlmRequest<'_>) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

/// Deterministic stand-in for the VLM, driven by ground truth.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    pub finish_radius: f64,
}

impl Default for ScriptedOracle {
    fn default() -> Self {
        ScriptedOracle { finish_radius: 4.0 }
    }
}

/// Marker the scripted operator uses to report already reached targets.
pub const PROGRESS_MARKER: &str = "Progress so far:";

const KEYWORDS: [(&str, Target); 7] = [
    ("astronaut", Target::Astronaut),
    ("antenna", Target::Antenna),
    ("dish", Target::Antenna),
    ("rover", Target::Rover),
    ("rock", Target::Rock),
    ("boulder", Target::Rock),
    ("stone", Target::Rock),
];

/// Targets named in `text`, in order of first mention.
pub fn mentioned_targets(text: &str) -> Vec<Target> {
    let lower = text.to_lowercase();
    let mut hits: Vec<(usize, Target)> = KEYWORDS.iter().filter_map(|(k, t)| lower.find(k).map(|p| (p, *t))).collect();
    hits.sort_by_key(|(p, _)| *p);
    let mut out = Vec::new();
    for (_, t) in hits {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

fn is_control_text(text: &str) -> bool {
    matches!(text, "Startup!" | "Continuation!" | "Success" | "Fail")
}

impl ScriptedOracle {
    /// The next target of the current task, or `None` when the task names
    /// no target that is still pending.
    fn pending_target(messages: &[Message]) -> Option<Target> {
        let task: Vec<&str> = messages
            .iter()
            .filter(|m| m.role == Role::User && !is_control_text(&m.text))
            .map(|m| m.text.as_str())
            .collect();
        let task = task.join(" ");
        let (wanted, reached) = match task.find(PROGRESS_MARKER) {
            Some(p) => (&task[..p], mentioned_targets(&task[p..])),
            None => (task.as_str(), Vec::new()),
        };
        mentioned_targets(wanted).into_iter().find(|t| !reached.contains(t))
    }

    pub fn reply(&self, messages: &[Message], truth: &GroundTruth) -> String {
        let last = messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.text.as_str()).unwrap_or("");
        if last == "Startup!" || last == "Continuation!" {
            return "Hello, I am the high-level controller of the lunar rover. I am awaiting further instructions.".into();
        }
        let Some(target) = Self::pending_target(messages) else {
            return "The instruction does not say which target I should drive to. Which target do you mean? \
                    <skill>MoreInformation()</skill>"
                .into();
        };
        let name = target.name();
        if truth.distance(target).is_some_and(|d| d <= self.finish_radius) {
            return format!("The {name} is right in front of me and I am close enough. The task is complete. <skill>Finish()</skill>");
        }
        if truth.visible.contains(&target) {
            format!("The {name} is visible in the camera view. I will drive towards it. <skill>Drive({name})</skill>")
        } else {
            format!("I cannot see the {name} in the current view. I will rotate to look for it. <skill>Rotate({name})</skill>")
        }
    }
}

impl VlmTransport for ScriptedOracle {
    fn complete(&mut self, request: &VlmRequest<'_>) -> Result<String, TransportError> {
        let truth = request.truth.cloned().unwrap_or_default();
        Ok(self.reply(request.messages, &truth))
    }
}

/// Generic chat-completions client. Configured from `LUNARSIM_VLM_URL`,
/// `LUNARSIM_VLM_MODEL` and `LUNARSIM_VLM_API_KEY`.
#[derive(Debug, Clone)]
pub struct ChatClient {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub reasoning_effort: Option<String>,
}

impl ChatClient {
    pub fn from_env() -> Result<Self, TransportError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Ok(ChatClient {
            url: var("LUNARSIM_VLM_URL").ok_or_else(|| TransportError::NotConfigured("LUNARSIM_VLM_URL is not set".into()))?,
            model: var("LUNARSIM_VLM_MODEL").ok_or_else(|| TransportError::NotConfigured("LUNARSIM_VLM_MODEL is not set".into()))?,
            api_key: var("LUNARSIM_VLM_API_KEY"),
            timeout: Duration::from_secs(60),
            reasoning_effort: Some(var("LUNARSIM_VLM_REASONING_EFFORT").unwrap_or_else(|| "low".into())),
        })
    }

    /// Request body. Only the newest image is attached, earlier turns keep
    /// their text.
    pub fn request_body(&self, messages: &[Message]) -> serde_json::Value {
        let last_image = messages.iter().rposition(|m| m.image.is_some());
        let msgs: Vec<_> = messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                match (&m.image, Some(i) == last_image) {
                    (Some(png), true) => {
                        let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png.as_slice()));
                        json!({"role": role, "content": [
                            {"type": "text", "text": m.text},
                            {"type": "image_url", "image_url": {"url": url}},
                        ]})
                    }
                    _ => json!({"role": role, "content": m.text}),
                }
            })
            .collect();
        let mut body = json!({"model": self.model, "messages": msgs});
        if let Some(effort) = &self.reasoning_effort {
            body["reasoning_effort"] = json!(effort);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl VlmTransport for ChatClient {
    fn complete(&mut self, request: &VlmRequest<'_>) -> Result<String, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(self.request_body(request.messages)).map_err(|e| TransportError::Request(e.to_string()))?;
        let parsed: ChatResponse = resp.into_json().map_err(|e| TransportError::Response(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Response("no choices in reply".into()))
    }
}
