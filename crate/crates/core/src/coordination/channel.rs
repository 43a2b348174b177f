//! Messages on the control channel. One JSON object per line on raw TCP, or
//! one per text frame on a WebSocket.

use super::{EndReason, Notice, Task, TaskRequest};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Join { user_id: String, task: TaskRequest },
    Heartbeat {},
    /// Base64 of an encoded phone sample.
    Control { payload: String },
    Quit {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Queued { position: usize },
    SessionStart { session_id: String, robot_id: String, task: Task },
    /// Base64 of an encoded robot state.
    State { payload: String },
    SessionEnd { reason: EndReason },
    Error { code: ErrorCode, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    NotJoined,
    AlreadyJoined,
    NoSession,
    BadSample,
    /// The sample failed a safety check and was dropped.
    SafetyReject,
}

impl ServerMsg {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMsg::Error { code, detail: detail.into() }
    }

    /// The message owed to the notice's user, with that user's id.
    pub fn from_notice(n: &Notice) -> (String, ServerMsg) {
        match n {
            Notice::Assigned(s) => (
                s.user_id.clone(),
                ServerMsg::SessionStart { session_id: s.session_id.clone(), robot_id: s.robot_id.clone(), task: s.task },
            ),
            Notice::QueuePosition { user_id, position } => (user_id.clone(), ServerMsg::Queued { position: *position }),
            Notice::Ended(s) => (
                s.user_id.clone(),
                ServerMsg::SessionEnd { reason: s.end_reason.unwrap_or(EndReason::Disconnect) },
            ),
        }
    }
}

pub fn encode_line<T: Serialize>(msg: &T) -> String {
    let mut s = serde_json::to_string(msg).expect("messages always serialize");
    s.push('\n');
    s
}
