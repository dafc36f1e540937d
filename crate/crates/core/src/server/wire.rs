use serde::{Deserialize, Serialize};

use crate::model::FusionStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// The server ticks every `tick_ms`; missing frames become SIL.
    Realtime,
    /// One step per received frame; fully deterministic.
    #[default]
    Lockstep,
}

pub const DEFAULT_TICK_MS: u64 = 50;
/// Frames buffered in real-time mode before the oldest are dropped.
pub const QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartMessage {
    pub context: String,
    /// When given, must match the served model's fusion strategy.
    #[serde(default)]
    pub fusion: Option<FusionStrategy>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SessionMode,
    #[serde(default)]
    pub tick_ms: Option<u64>,
    #[serde(default)]
    pub top_p: Option<f32>,
    #[serde(default)]
    pub temperature: Option<f32>,
    #[serde(default)]
    pub greedy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start(StartMessage),
    Listen {
        symbols: Vec<usize>,
        /// Offset within `symbols` where a command begins, when the client
        /// knows it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command_start: Option<usize>,
    },
    Stop {},
}

pub const CLIENT_TYPES: [&str; 3] = ["start", "listen", "stop"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ready {
        session_id: u64,
        max_len: usize,
        mu_frames: usize,
    },
    Token {
        step: usize,
        token: usize,
        irq_p: f32,
        irq_log10: f32,
    },
    Done {
        /// `EOS`, `IRQ`, `MaxLen`, or `ClientStop`.
        reason: String,
        step: Option<usize>,
        transcript: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency_frames: Option<i64>,
        /// Real-time frames dropped on queue overflow.
        dropped: usize,
    },
    Error {
        code: String,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Self::Error { code: code.to_string(), message: message.into() }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Distinguishes unparseable input from a well-formed message of an
/// unknown type.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseError {
    BadMessage(String),
    UnknownType(String),
}

impl ParseError {
    pub fn to_message(&self) -> ServerMessage {
        match self {
            Self::BadMessage(m) => ServerMessage::error("bad_message", m.clone()),
            Self::UnknownType(t) => ServerMessage::error("unknown_type", format!("unknown message type {t:?}")),
        }
    }
}

pub fn parse_client(text: &str) -> Result<ClientMessage, ParseError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ParseError::BadMessage(e.to_string()))?;
    let ty = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| ParseError::BadMessage("message needs a string \"type\" field".into()))?;
    if !CLIENT_TYPES.contains(&ty) {
        return Err(ParseError::UnknownType(ty.to_string()));
    }
    serde_json::from_value(value).map_err(|e| ParseError::BadMessage(e.to_string()))
}
