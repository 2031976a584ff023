use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::transport::{mentioned_targets, GroundTruth, VlmTransport, PROGRESS_MARKER};
use super::{
    drive_skill, rotate_skill, Action, DriveConfig, Message, Orchestrator, OrchestratorError, Phase, Role, RotateConfig,
    SkillCommand, SkillKind, SkillResult, SkillStatus, Target,
};
use crate::learn::Policy;
use crate::vehicle::ObjectKind;
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub drive: DriveConfig,
    pub rotate: RotateConfig,
    /// Attach a PNG camera frame to task and skill-result messages.
    pub attach_images: bool,
    /// Hard cap on skill executions per session.
    pub max_skill_calls: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { drive: DriveConfig::default(), rotate: RotateConfig::default(), attach_images: true, max_skill_calls: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Chat { time_s: f64, role: Role, text: String, phase: Phase, has_image: bool },
    SkillStarted { time_s: f64, command: String },
    SkillFinished { time_s: f64, command: String, status: SkillStatus, detail: String },
    Violation { time_s: f64, reason: String },
    TaskFinished { time_s: f64, target: Option<Target> },
    Ended { time_s: f64, reason: String },
}

/// What the session is waiting for after a call returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pending {
    /// A new task.
    Task,
    /// An answer to a MoreInformation question.
    Information,
    /// A task just finished; the last driven-to target is attached.
    TaskFinished(Option<Target>),
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub finishes: usize,
    pub finished_targets: Vec<Option<Target>>,
    pub skill_calls: usize,
    pub violations: usize,
    pub sim_time: f64,
    pub end_reason: String,
}

/// Source of operator text.
pub trait Operator: Send {
    /// The next message for the given request, or `None` to end.
    fn respond(&mut self, pending: Pending, last_reply: &str) -> Option<String>;
}

/// Sends a fixed task, answers questions from a list, and after each
/// finished leg re-sends the task with a progress note until every target
/// it mentions has been reached.
#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    pub task: String,
    pub answers: Vec<String>,
    given: Vec<String>,
    reached: Vec<Target>,
    sent: bool,
}

impl ScriptedOperator {
    pub fn new(task: impl Into<String>) -> Self {
        ScriptedOperator { task: task.into(), answers: Vec::new(), given: Vec::new(), reached: Vec::new(), sent: false }
    }

    pub fn with_answers(mut self, answers: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.answers = answers.into_iter().map(Into::into).collect();
        self
    }

    fn request(&self) -> String {
        std::iter::once(self.task.as_str()).chain(self.given.iter().map(String::as_str)).collect::<Vec<_>>().join(" ")
    }
}

impl Operator for ScriptedOperator {
    fn respond(&mut self, pending: Pending, _last_reply: &str) -> Option<String> {
        match pending {
            Pending::Task if !self.sent => {
                self.sent = true;
                Some(self.task.clone())
            }
            Pending::Information => {
                if self.answers.is_empty() {
                    return None;
                }
                let a = self.answers.remove(0);
                self.given.push(a.clone());
                Some(a)
            }
            Pending::TaskFinished(target) => {
                if let Some(t) = target {
                    if !self.reached.contains(&t) {
                        self.reached.push(t);
                    }
                }
                let request = self.request();
                if mentioned_targets(&request).iter().all(|t| self.reached.contains(t)) {
                    return None;
                }
                let names: Vec<String> = self.reached.iter().map(|t| format!("the {}", t.name().to_lowercase())).collect();
                Some(format!("{request} {PROGRESS_MARKER} reached {}.", names.join(", ")))
            }
            Pending::Task | Pending::Ended => None,
        }
    }
}

/// One rover, one orchestrator, one transport.
pub struct Session {
    pub world: World,
    pub orchestrator: Orchestrator,
    pub transport: Box<dyn VlmTransport>,
    pub policy: Box<dyn Policy>,
    pub cfg: SessionConfig,
    events: Vec<SessionEvent>,
    log_seen: usize,
    violations_seen: usize,
    skill_calls: usize,
    last_target: Option<Target>,
    finished_targets: Vec<Option<Target>>,
    end_reason: Option<String>,
    sink: Option<EventSink>,
}

/// Receives every session event as it happens.
pub type EventSink = Box<dyn FnMut(&SessionEvent) + Send>;

impl Session {
    pub fn new(world: World, transport: Box<dyn VlmTransport>, policy: Box<dyn Policy>, cfg: SessionConfig) -> Self {
        Session {
            world,
            orchestrator: Orchestrator::new(),
            transport,
            policy,
            cfg,
            events: Vec::new(),
            log_seen: 0,
            violations_seen: 0,
            skill_calls: 0,
            last_target: None,
            finished_targets: Vec::new(),
            end_reason: None,
            sink: None,
        }
    }

    /// Streams events to `sink` as they occur, in addition to buffering
    /// them for [`Session::drain_events`].
    pub fn with_event_sink(mut self, sink: EventSink) -> Self {
        self.sink = Some(sink);
        self
    }

    fn emit(&mut self, e: SessionEvent) {
        if let Some(sink) = self.sink.as_mut() {
            sink(&e);
        }
        self.events.push(e);
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let mut truth = GroundTruth { stopped: self.world.is_stopped(), ..GroundTruth::default() };
        for kind in ObjectKind::ALL {
            if let Some((d, _)) = self.world.range_and_bearing(kind) {
                truth.distances.push((kind, d));
                if self.world.visible(kind) {
                    truth.visible.push(kind);
                }
            }
        }
        truth
    }

    fn image(&self) -> Option<Arc<Vec<u8>>> {
        self.cfg.attach_images.then(|| Arc::new(self.world.camera().to_png()))
    }

    /// Events produced since the last call.
    pub fn drain_events(&mut self) -> Vec<SessionEvent> {
        self.flush();
        std::mem::take(&mut self.events)
    }

    /// The full message history, one JSON object per line.
    pub fn write_transcript(&self, mut out: impl Write) -> std::io::Result<()> {
        for m in &self.orchestrator.log {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn transcript(&self) -> &[Message] {
        &self.orchestrator.log
    }

    fn flush(&mut self) {
        let chats: Vec<SessionEvent> = self.orchestrator.log[self.log_seen..]
            .iter()
            .map(|m| SessionEvent::Chat { time_s: m.time_s, role: m.role, text: m.text.clone(), phase: m.phase, has_image: m.has_image })
            .collect();
        self.log_seen = self.orchestrator.log.len();
        let violations: Vec<SessionEvent> = self.orchestrator.violations[self.violations_seen..]
            .iter()
            .map(|v| SessionEvent::Violation { time_s: v.time_s, reason: v.reason.clone() })
            .collect();
        self.violations_seen = self.orchestrator.violations.len();
        for e in chats.into_iter().chain(violations) {
            self.emit(e);
        }
    }

    fn end(&mut self, reason: impl Into<String>) -> Pending {
        let reason = reason.into();
        self.flush();
        self.emit(SessionEvent::Ended { time_s: self.world.state.time, reason: reason.clone() });
        self.end_reason = Some(reason);
        Pending::Ended
    }

    pub fn startup(&mut self) -> Result<Pending, OrchestratorError> {
        self.orchestrator.time_s = self.world.state.time;
        let truth = self.ground_truth();
        self.orchestrator.startup(&mut self.transport, &truth)?;
        self.flush();
        Ok(Pending::Task)
    }

    /// Sends operator text and runs skills until the VLM needs the operator
    /// again. `tick` sees the world after every simulation step.
    pub fn send(&mut self, text: &str, tick: &mut dyn FnMut(&World)) -> Result<Pending, OrchestratorError> {
        if self.end_reason.is_some() {
            return Ok(Pending::Ended);
        }
        self.orchestrator.time_s = self.world.state.time;
        let truth = self.ground_truth();
        let image = self.image();
        let first = self.orchestrator.user(text, image, &mut self.transport, &truth);
        let mut action = match first {
            Ok(a) => a,
            Err(OrchestratorError::Protocol(reason)) => {
                self.flush();
                log::warn!("no usable skill after retries: {reason}");
                return Ok(Pending::Task);
            }
            Err(e) => return Err(e),
        };
        loop {
            self.flush();
            match action {
                Action::Execute(cmd) => {
                    assert!(self.orchestrator.dispatch_allowed(), "skill dispatched outside execution");
                    if self.skill_calls >= self.cfg.max_skill_calls {
                        return Ok(self.end("skill budget exhausted"));
                    }
                    let result = self.execute(cmd, tick);
                    self.orchestrator.time_s = self.world.state.time;
                    let truth = self.ground_truth();
                    let image = self.image();
                    action = match self.orchestrator.skill_outcome(&result, image, &mut self.transport, &truth) {
                        Ok(a) => a,
                        Err(OrchestratorError::Protocol(reason)) => {
                            self.flush();
                            log::warn!("no usable skill after retries: {reason}");
                            return Ok(Pending::Task);
                        }
                        Err(e) => return Err(e),
                    };
                }
                Action::AwaitUser => {
                    return Ok(if self.orchestrator.conv.awaiting_information { Pending::Information } else { Pending::Task });
                }
                Action::TaskFinished => {
                    let target = self.last_target.take();
                    self.finished_targets.push(target);
                    self.emit(SessionEvent::TaskFinished { time_s: self.world.state.time, target });
                    return Ok(Pending::TaskFinished(target));
                }
                Action::Ended => return Ok(self.end("shutdown requested")),
            }
        }
    }

    fn execute(&mut self, cmd: SkillCommand, tick: &mut dyn FnMut(&World)) -> SkillResult {
        self.skill_calls += 1;
        let command = cmd.to_string();
        self.emit(SessionEvent::SkillStarted { time_s: self.world.state.time, command: command.clone() });
        let result = match (cmd.kind, cmd.target) {
            (SkillKind::Drive, Some(t)) => {
                self.last_target = Some(t);
                drive_skill(&mut self.world, t, &self.cfg.drive, self.policy.as_mut(), tick)
            }
            (SkillKind::Rotate, Some(_)) => rotate_skill(&mut self.world, &self.cfg.rotate, tick),
            _ => unreachable!("only Drive and Rotate are executed"),
        };
        self.emit(SessionEvent::SkillFinished {
            time_s: self.world.state.time,
            command,
            status: result.status,
            detail: result.detail.clone(),
        });
        result
    }

    /// Drives the whole session with an operator until it ends, the
    /// operator stops, or `max_sim_time` passes.
    pub fn run(
        &mut self,
        operator: &mut dyn Operator,
        max_sim_time: f64,
        tick: &mut dyn FnMut(&World),
    ) -> Result<SessionSummary, OrchestratorError> {
        let mut pending = self.startup()?;
        loop {
            if pending == Pending::Ended {
                break;
            }
            if self.world.state.time >= max_sim_time {
                self.end("time limit");
                break;
            }
            let last_reply = self
                .orchestrator
                .log
                .iter()
                .rev()
                .find(|m| m.role == Role::Assistant)
                .map(|m| m.text.clone())
                .unwrap_or_default();
            let Some(text) = operator.respond(pending, &last_reply) else {
                self.end("operator done");
                break;
            };
            pending = self.send(&text, tick)?;
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            finishes: self.finished_targets.len(),
            finished_targets: self.finished_targets.clone(),
            skill_calls: self.skill_calls,
            violations: self.orchestrator.violations.len(),
            sim_time: self.world.state.time,
            end_reason: self.end_reason.clone().unwrap_or_default(),
        }
    }
}
