//! Skill-based autonomy: the VLM prompt and reply protocol, the conversation
//! state machine, chat transports and the skill executors.

mod orchestrator;
mod session;
mod skills;
mod transport;

pub use orchestrator::{Action, Conversation, Message, Orchestrator, OrchestratorError, Phase, Role, Violation};
pub use session::{EventSink, Operator, Pending, ScriptedOperator, Session, SessionConfig, SessionEvent, SessionSummary};
pub use skills::{drive_skill, rotate_skill, DriveConfig, RotateConfig};
pub use transport::{mentioned_targets, ChatClient, GroundTruth, ScriptedOracle, TransportError, VlmRequest, VlmTransport, PROGRESS_MARKER};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::vehicle::ObjectKind as Target;

const SYSTEM_PROMPT: &str = include_str!("../../assets/system_prompt.txt");

/// The fixed controller prompt. The scene always offers the same four
/// targets and five skills, so the text is a stored template.
pub fn build_system_prompt() -> &'static str {
    SYSTEM_PROMPT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkillKind {
    Drive,
    Rotate,
    Finish,
    Shutdown,
    MoreInformation,
}

impl SkillKind {
    pub const ALL: [SkillKind; 5] =
        [SkillKind::Drive, SkillKind::Rotate, SkillKind::Finish, SkillKind::Shutdown, SkillKind::MoreInformation];

    pub fn name(self) -> &'static str {
        match self {
            SkillKind::Drive => "Drive",
            SkillKind::Rotate => "Rotate",
            SkillKind::Finish => "Finish",
            SkillKind::Shutdown => "Shutdown",
            SkillKind::MoreInformation => "MoreInformation",
        }
    }

    pub fn takes_target(self) -> bool {
        matches!(self, SkillKind::Drive | SkillKind::Rotate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCommand {
    pub kind: SkillKind,
    pub target: Option<Target>,
}

impl SkillCommand {
    pub fn new(kind: SkillKind, target: Option<Target>) -> Self {
        debug_assert_eq!(kind.takes_target(), target.is_some());
        SkillCommand { kind, target }
    }
}

impl fmt::Display for SkillCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target {
            Some(t) => write!(f, "{}({})", self.kind.name(), t.name()),
            None => write!(f, "{}()", self.kind.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkillStatus {
    Success,
    Fail,
}

impl SkillStatus {
    /// The exact text fed back to the VLM.
    pub fn as_str(self) -> &'static str {
        match self {
            SkillStatus::Success => "Success",
            SkillStatus::Fail => "Fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillResult {
    pub status: SkillStatus,
    pub detail: String,
}

impl SkillResult {
    pub fn success(detail: impl Into<String>) -> Self {
        SkillResult { status: SkillStatus::Success, detail: detail.into() }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        SkillResult { status: SkillStatus::Fail, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("reply contains no <skill></skill> tag")]
    NoSkillTag,
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("wrong number of arguments for {0}")]
    BadArity(String),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
}

/// Parses the last `<skill>…</skill>` span of a reply. Accepts `Name`,
/// `Name()` and `Name(Target)`, with whitespace tolerated anywhere inside
/// the tags.
pub fn parse_skill_response(text: &str) -> Result<SkillCommand, ParseError> {
    let start = text.rfind("<skill>").ok_or(ParseError::NoSkillTag)?;
    let body = &text[start + "<skill>".len()..];
    let end = body.find("</skill>").ok_or(ParseError::NoSkillTag)?;
    let call = body[..end].trim();

    let (name, args) = match call.find('(') {
        Some(open) => {
            let rest = call[open + 1..].trim_end();
            let inner = rest.strip_suffix(')').ok_or_else(|| ParseError::BadArity(call[..open].trim().to_string()))?;
            (call[..open].trim(), Some(inner.trim()))
        }
        None => (call, None),
    };
    let kind = SkillKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| ParseError::UnknownSkill(name.to_string()))?;
    let arg = args.filter(|a| !a.is_empty());
    match (kind.takes_target(), arg) {
        (true, Some(a)) => {
            if a.contains(',') {
                return Err(ParseError::BadArity(name.to_string()));
            }
            let a = a.trim_matches(|c| c == '"' || c == '\'');
            let target = Target::from_name(a).ok_or_else(|| ParseError::UnknownTarget(a.to_string()))?;
            Ok(SkillCommand::new(kind, Some(target)))
        }
        (false, None) => Ok(SkillCommand::new(kind, None)),
        _ => Err(ParseError::BadArity(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let c = parse_skill_response("I see the rock ahead, driving. <skill>Drive(Rock)</skill>").unwrap();
        assert_eq!(c, SkillCommand::new(SkillKind::Drive, Some(Target::Rock)));
        let c = parse_skill_response("<skill>MoreInformation()</skill>").unwrap();
        assert_eq!(c.kind, SkillKind::MoreInformation);
        assert_eq!(parse_skill_response("Let me think."), Err(ParseError::NoSkillTag));
    }

    #[test]
    fn last_tag_wins_and_whitespace_is_tolerated() {
        let c = parse_skill_response("<skill>Rotate(Rock)</skill> no wait <skill>  Drive ( Antenna )  </skill>").unwrap();
        assert_eq!(c, SkillCommand::new(SkillKind::Drive, Some(Target::Antenna)));
        assert_eq!(parse_skill_response("<skill>Finish</skill>").unwrap().kind, SkillKind::Finish);
    }

    #[test]
    fn errors() {
        assert_eq!(parse_skill_response("<skill>Fly(Rock)</skill>"), Err(ParseError::UnknownSkill("Fly".into())));
        assert_eq!(parse_skill_response("<skill>Drive()</skill>"), Err(ParseError::BadArity("Drive".into())));
        assert_eq!(parse_skill_response("<skill>Finish(Rock)</skill>"), Err(ParseError::BadArity("Finish".into())));
        assert_eq!(parse_skill_response("<skill>Drive(rock)</skill>"), Err(ParseError::UnknownTarget("rock".into())));
        assert_eq!(parse_skill_response("<skill>Drive(Rock, Rover)</skill>"), Err(ParseError::BadArity("Drive".into())));
    }

    #[test]
    fn display_round_trips() {
        for kind in SkillKind::ALL {
            let cmd = SkillCommand::new(kind, kind.takes_target().then_some(Target::Rover));
            assert_eq!(parse_skill_response(&format!("<skill>{cmd}</skill>")).unwrap(), cmd);
        }
    }
}
