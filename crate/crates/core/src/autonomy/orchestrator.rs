use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transport::{GroundTruth, TransportError, VlmRequest, VlmTransport};
use super::{build_system_prompt, parse_skill_response, ParseError, SkillCommand, SkillKind, SkillResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Startup,
    AwaitingTask,
    Executing,
    AwaitingVlm,
    Finished,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    /// PNG camera frame attached to the message.
    #[serde(skip)]
    pub image: Option<Arc<Vec<u8>>>,
    pub has_image: bool,
    pub time_s: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub phase: Phase,
    pub transcript: Vec<Message>,
    pub active_task: Option<String>,
    /// Set after MoreInformation: the next user text answers the question.
    pub awaiting_information: bool,
}

/// What the caller should do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Execute(SkillCommand),
    AwaitUser,
    /// Finish was chosen; history was cleared and a new task is awaited.
    TaskFinished,
    Ended,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{event} is not accepted in phase {phase:?}")]
    PhaseViolation { phase: Phase, event: &'static str },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A malformed or out-of-place VLM reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time_s: f64,
    pub reply: String,
    pub reason: String,
}

const SKILL_NOTE: &str = "Your previous answer could not be used. Finish your answer with exactly one skill enclosed by the skill tags <skill></skill>.";
const NO_SKILL_NOTE: &str = "You should not pick a skill now. Present yourself and ask for new instructions.";

/// The conversation state machine between operator, VLM and skills.
pub struct Orchestrator {
    pub conv: Conversation,
    pub violations: Vec<Violation>,
    /// Every message ever sent or received, unaffected by history clearing.
    pub log: Vec<Message>,
    /// Simulation time stamped onto new messages.
    pub time_s: f64,
}

impl Default for Orchestrator {
    fn default() -> Self {
        Self::new()
    }
}

impl Orchestrator {
    pub fn new() -> Self {
        let mut o = Orchestrator {
            conv: Conversation { phase: Phase::Startup, transcript: Vec::new(), active_task: None, awaiting_information: false },
            violations: Vec::new(),
            log: Vec::new(),
            time_s: 0.0,
        };
        o.push(super::Role::System, build_system_prompt().to_string(), None);
        o
    }

    pub fn phase(&self) -> Phase {
        self.conv.phase
    }

    /// Skills may only run while the conversation is executing one.
    pub fn dispatch_allowed(&self) -> bool {
        self.conv.phase == Phase::Executing
    }

    fn push(&mut self, role: Role, text: String, image: Option<Arc<Vec<u8>>>) {
        let has_image = image.is_some();
        let phase = self.conv.phase;
        let msg = Message { role, text, image, has_image, time_s: self.time_s, phase };
        self.log.push(msg.clone());
        self.conv.transcript.push(msg);
    }

    fn query(&mut self, vlm: &mut dyn VlmTransport, truth: &GroundTruth) -> Result<String, OrchestratorError> {
        let reply = vlm.complete(&VlmRequest { messages: &self.conv.transcript, truth: Some(truth) })?;
        self.push(Role::Assistant, reply.clone(), None);
        Ok(reply)
    }

    fn violation(&mut self, reply: &str, reason: String) {
        log::warn!("VLM protocol violation: {reason}");
        self.violations.push(Violation { time_s: self.time_s, reply: reply.to_string(), reason });
    }

    /// A greeting turn: the reply must not choose a skill. One re-request,
    /// then the reply is accepted as is.
    fn greet(&mut self, vlm: &mut dyn VlmTransport, truth: &GroundTruth) -> Result<(), OrchestratorError> {
        self.conv.phase = Phase::AwaitingVlm;
        let reply = self.query(vlm, truth)?;
        if reply.contains("<skill>") {
            self.violation(&reply, "skill chosen during a greeting".into());
            self.push(Role::User, NO_SKILL_NOTE.into(), None);
            let again = self.query(vlm, truth)?;
            if again.contains("<skill>") {
                self.violation(&again, "skill chosen during a greeting".into());
            }
        }
        self.conv.phase = Phase::AwaitingTask;
        Ok(())
    }

    /// Asks for a skill: one re-request, then a recorded violation and a
    /// final attempt with an error note.
    fn decide(&mut self, vlm: &mut dyn VlmTransport, truth: &GroundTruth) -> Result<Action, OrchestratorError> {
        self.conv.phase = Phase::AwaitingVlm;
        let mut last: Option<ParseError> = None;
        for attempt in 0..3 {
            if let Some(e) = &last {
                let note = if attempt == 1 { SKILL_NOTE.to_string() } else { format!("{SKILL_NOTE} Error: {e}.") };
                self.push(Role::User, note, None);
            }
            let reply = self.query(vlm, truth)?;
            match parse_skill_response(&reply) {
                Ok(cmd) => return self.apply(cmd, vlm, truth),
                Err(e) => {
                    if attempt >= 1 {
                        self.violation(&reply, e.to_string());
                    }
                    last = Some(e);
                }
            }
        }
        self.conv.phase = Phase::AwaitingTask;
        Err(OrchestratorError::Protocol(last.map(|e| e.to_string()).unwrap_or_default()))
    }

    fn apply(&mut self, cmd: SkillCommand, vlm: &mut dyn VlmTransport, truth: &GroundTruth) -> Result<Action, OrchestratorError> {
        match cmd.kind {
            SkillKind::Drive | SkillKind::Rotate => {
                self.conv.phase = Phase::Executing;
                Ok(Action::Execute(cmd))
            }
            SkillKind::MoreInformation => {
                self.conv.phase = Phase::AwaitingTask;
                self.conv.awaiting_information = true;
                Ok(Action::AwaitUser)
            }
            SkillKind::Shutdown => {
                self.conv.phase = Phase::Shutdown;
                Ok(Action::Ended)
            }
            SkillKind::Finish => {
                self.conv.phase = Phase::Finished;
                self.conv.transcript.truncate(1);
                self.conv.active_task = None;
                self.conv.awaiting_information = false;
                self.push(Role::User, "Continuation!".into(), None);
                self.greet(vlm, truth)?;
                Ok(Action::TaskFinished)
            }
        }
    }

    pub fn startup(&mut self, vlm: &mut dyn VlmTransport, truth: &GroundTruth) -> Result<Action, OrchestratorError> {
        if self.conv.phase != Phase::Startup {
            return Err(OrchestratorError::PhaseViolation { phase: self.conv.phase, event: "Startup!" });
        }
        self.push(Role::User, "Startup!".into(), None);
        self.greet(vlm, truth)?;
        Ok(Action::AwaitUser)
    }

    /// Operator text: a new task, or the answer to a MoreInformation
    /// question.
    pub fn user(
        &mut self,
        text: &str,
        image: Option<Arc<Vec<u8>>>,
        vlm: &mut dyn VlmTransport,
        truth: &GroundTruth,
    ) -> Result<Action, OrchestratorError> {
        if self.conv.phase != Phase::AwaitingTask {
            return Err(OrchestratorError::PhaseViolation { phase: self.conv.phase, event: "user text" });
        }
        if !self.conv.awaiting_information || self.conv.active_task.is_none() {
            self.conv.active_task = Some(text.to_string());
        }
        self.conv.awaiting_information = false;
        self.push(Role::User, text.to_string(), image);
        self.decide(vlm, truth)
    }

    /// Feeds a skill outcome back as exactly "Success" or "Fail".
    pub fn skill_outcome(
        &mut self,
        result: &SkillResult,
        image: Option<Arc<Vec<u8>>>,
        vlm: &mut dyn VlmTransport,
        truth: &GroundTruth,
    ) -> Result<Action, OrchestratorError> {
        if self.conv.phase != Phase::Executing {
            return Err(OrchestratorError::PhaseViolation { phase: self.conv.phase, event: "skill result" });
        }
        self.push(Role::User, result.status.as_str().to_string(), image);
        self.decide(vlm, truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonomy::Target;

    struct Canned(Vec<&'static str>);

    impl VlmTransport for Canned {
        fn complete(&mut self, _: &VlmRequest<'_>) -> Result<String, TransportError> {
            Ok(self.0.remove(0).to_string())
        }
    }

    #[test]
    fn startup_then_task_then_finish() {
        let mut vlm = Canned(vec!["Hello.", "Rock ahead. <skill>Drive(Rock)</skill>", "Close. <skill>Finish()</skill>", "Ready."]);
        let mut o = Orchestrator::new();
        let t = GroundTruth::default();
        assert_eq!(o.startup(&mut vlm, &t).unwrap(), Action::AwaitUser);
        assert_eq!(o.phase(), Phase::AwaitingTask);
        let a = o.user("Drive to the rock", None, &mut vlm, &t).unwrap();
        assert_eq!(a, Action::Execute(SkillCommand::new(SkillKind::Drive, Some(Target::Rock))));
        assert!(o.dispatch_allowed());
        let a = o.skill_outcome(&SkillResult::success("reached"), None, &mut vlm, &t).unwrap();
        assert_eq!(a, Action::TaskFinished);
        assert_eq!(o.phase(), Phase::AwaitingTask);
        let texts: Vec<_> = o.conv.transcript.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts[1..], ["Continuation!", "Ready."]);
        assert!(o.violations.is_empty());
    }

    #[test]
    fn skill_in_greeting_is_re_requested_once() {
        let mut vlm = Canned(vec!["<skill>Drive(Rock)</skill>", "Hello again."]);
        let mut o = Orchestrator::new();
        o.startup(&mut vlm, &GroundTruth::default()).unwrap();
        assert_eq!(o.violations.len(), 1);
        assert_eq!(o.phase(), Phase::AwaitingTask);
    }

    #[test]
    fn unparseable_replies_end_in_protocol_error() {
        let mut vlm = Canned(vec!["Hi", "hmm", "still thinking", "no idea"]);
        let mut o = Orchestrator::new();
        let t = GroundTruth::default();
        o.startup(&mut vlm, &t).unwrap();
        let e = o.user("Drive to the rock", None, &mut vlm, &t);
        assert!(matches!(e, Err(OrchestratorError::Protocol(_))));
        assert_eq!(o.violations.len(), 2);
        assert!(!o.dispatch_allowed());
    }

    #[test]
    fn skill_results_rejected_outside_execution() {
        let mut vlm = Canned(vec![]);
        let mut o = Orchestrator::new();
        let e = o.skill_outcome(&SkillResult::fail("x"), None, &mut vlm, &GroundTruth::default());
        assert!(matches!(e, Err(OrchestratorError::PhaseViolation { .. })));
    }
}
