//! Event-stream codec.
//!
//! Every event travels as one `data: <json>\n\n` frame with lexicographically
//! ordered keys; the terminal `done` event is the literal `data: [DONE]\n\n`.
//! The decoder accepts arbitrary chunking, including splits inside a UTF-8
//! sequence.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::patch::Preview;

pub const CONTENT_TYPE: &str = "text/event-stream";
pub const DONE_FRAME: &[u8] = b"data: [DONE]\n\n";
pub const PROTOCOL_ERROR: &str = "protocol_error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventPayload {
    Delta { text: String },
    ToolCall { tool: String, arguments: Value },
    ToolResult { tool: String, result: Value },
    /// A patch in its text form plus the previews shown for it.
    Patch { patch_id: String, patch: String, previews: Vec<Preview> },
    Review(Value),
    Score(Value),
    Done,
    Error { code: String, message: String },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Delta { .. } => "delta",
            Self::ToolCall { .. } => "tool_call",
            Self::ToolResult { .. } => "tool_result",
            Self::Patch { .. } => "patch",
            Self::Review(_) => "review",
            Self::Score(_) => "score",
            Self::Done => "done",
            Self::Error { .. } => "error",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Done | Self::Error { .. })
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Error { code: code.into(), message: message.into() }
    }

    fn to_json(&self) -> Result<Value, EncodeError> {
        Ok(match self {
            Self::Delta { text } => json!({ "text": text }),
            Self::ToolCall { tool, arguments } => {
                non_empty("tool", tool)?;
                json!({ "tool": tool, "arguments": arguments })
            }
            Self::ToolResult { tool, result } => {
                non_empty("tool", tool)?;
                json!({ "tool": tool, "result": result })
            }
            Self::Patch { patch_id, patch, previews } => {
                non_empty("patch_id", patch_id)?;
                let previews = serde_json::to_value(previews).map_err(|e| EncodeError::Invalid(e.to_string()))?;
                json!({ "patch_id": patch_id, "patch": patch, "previews": previews })
            }
            Self::Review(v) | Self::Score(v) => {
                if !v.is_object() {
                    return Err(EncodeError::Invalid(format!("{} payload must be an object", self.kind())));
                }
                v.clone()
            }
            Self::Done => Value::Null,
            Self::Error { code, message } => {
                non_empty("code", code)?;
                json!({ "code": code, "message": message })
            }
        })
    }

    fn from_json(kind: &str, payload: Value) -> Result<Self, String> {
        let mut obj = match payload {
            Value::Object(m) => m,
            other => return Err(format!("payload must be an object, found {other}")),
        };
        let take_str = |obj: &mut Map<String, Value>, key: &str| match obj.remove(key) {
            Some(Value::String(s)) => Ok(s),
            _ => Err(format!("{kind} payload needs string field `{key}`")),
        };
        Ok(match kind {
            "delta" => Self::Delta { text: take_str(&mut obj, "text")? },
            "tool_call" => Self::ToolCall {
                tool: take_str(&mut obj, "tool")?,
                arguments: obj.remove("arguments").unwrap_or(Value::Null),
            },
            "tool_result" => Self::ToolResult {
                tool: take_str(&mut obj, "tool")?,
                result: obj.remove("result").unwrap_or(Value::Null),
            },
            "patch" => Self::Patch {
                patch_id: take_str(&mut obj, "patch_id")?,
                patch: take_str(&mut obj, "patch")?,
                previews: serde_json::from_value(obj.remove("previews").unwrap_or(Value::Array(Vec::new())))
                    .map_err(|e| e.to_string())?,
            },
            "review" => Self::Review(Value::Object(obj)),
            "score" => Self::Score(Value::Object(obj)),
            "error" => Self::Error { code: take_str(&mut obj, "code")?, message: take_str(&mut obj, "message")? },
            other => return Err(format!("unknown event kind `{other}`")),
        })
    }
}

fn non_empty(field: &str, s: &str) -> Result<(), EncodeError> {
    if s.is_empty() {
        Err(EncodeError::Invalid(format!("`{field}` must not be empty")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub sequence: u64,
    pub payload: EventPayload,
}

impl StreamEvent {
    pub fn new(sequence: u64, payload: EventPayload) -> Self {
        Self { sequence, payload }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("invalid payload: {0}")]
    Invalid(String),
}

pub fn encode_event(ev: &StreamEvent) -> Result<Vec<u8>, EncodeError> {
    if ev.payload == EventPayload::Done {
        return Ok(DONE_FRAME.to_vec());
    }
    // serde_json maps are ordered by key, which gives the stable field order.
    let frame = json!({
        "kind": ev.payload.kind(),
        "payload": ev.payload.to_json()?,
        "sequence": ev.sequence,
    });
    let mut out = b"data: ".to_vec();
    out.extend_from_slice(frame.to_string().as_bytes());
    out.extend_from_slice(b"\n\n");
    Ok(out)
}

/// Incremental frame decoder for one stream.
#[derive(Debug, Default, Clone)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    next_sequence: u64,
    terminated: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Feeds a chunk and returns every event whose frame is now complete.
    /// After a terminal event (or a synthesized protocol error) further input is ignored.
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<StreamEvent> {
        let mut out = Vec::new();
        if self.terminated {
            return out;
        }
        self.buf.extend_from_slice(chunk);
        let mut consumed = 0;
        while let Some(pos) = find_blank_line(&self.buf[consumed..]) {
            let frame = &self.buf[consumed..consumed + pos];
            consumed += pos + 2;
            let ev = match decode_frame(frame, self.next_sequence) {
                Ok(Some(ev)) => ev,
                Ok(None) => continue,
                Err(message) => StreamEvent::new(self.next_sequence, EventPayload::error(PROTOCOL_ERROR, message)),
            };
            self.next_sequence = ev.sequence + 1;
            let terminal = ev.payload.is_terminal();
            out.push(ev);
            if terminal {
                self.terminated = true;
                self.buf.clear();
                return out;
            }
        }
        self.buf.drain(..consumed);
        out
    }

    /// Signals end of input. A stream that ended without a terminal event
    /// yields a synthesized protocol error.
    pub fn finish(&mut self) -> Option<StreamEvent> {
        if self.terminated {
            return None;
        }
        self.terminated = true;
        let message = if self.buf.is_empty() { "stream ended without a terminal event" } else { "truncated frame" };
        Some(StreamEvent::new(self.next_sequence, EventPayload::error(PROTOCOL_ERROR, message)))
    }
}

fn find_blank_line(buf: &[u8]) -> Option<usize> {
    buf.windows(2).position(|w| w == b"\n\n")
}

/// Decodes one frame (without its trailing blank line). Comment frames
/// (lines starting with `:`) yield `None`.
fn decode_frame(frame: &[u8], next_sequence: u64) -> Result<Option<StreamEvent>, String> {
    let text = std::str::from_utf8(frame).map_err(|e| format!("frame is not UTF-8: {e}"))?;
    if text.lines().all(|l| l.starts_with(':')) {
        return Ok(None);
    }
    let data = text.strip_prefix("data: ").ok_or("frame must be a single `data:` line")?;
    if data.contains('\n') {
        return Err("frame must be a single `data:` line".into());
    }
    if data == "[DONE]" {
        return Ok(Some(StreamEvent::new(next_sequence, EventPayload::Done)));
    }
    let value: Value = serde_json::from_str(data).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(mut obj) = value else {
        return Err("frame JSON must be an object".into());
    };
    let kind = match obj.remove("kind") {
        Some(Value::String(k)) if k != "done" => k,
        _ => return Err("frame needs a string `kind`".into()),
    };
    let sequence = obj.remove("sequence").and_then(|s| s.as_u64()).ok_or("frame needs an integer `sequence`")?;
    let payload = obj.remove("payload").ok_or("frame needs a `payload`")?;
    Ok(Some(StreamEvent::new(sequence, EventPayload::from_json(&kind, payload)?)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccumulatorState {
    pub text_so_far: String,
    pub events_seen: u64,
    pub terminal: Option<EventPayload>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("expected sequence {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("event after terminal event")]
    AfterTerminal,
}

impl AccumulatorState {
    pub fn accumulate(mut self, ev: &StreamEvent) -> Result<Self, ProtocolError> {
        if self.terminal.is_some() {
            return Err(ProtocolError::AfterTerminal);
        }
        if ev.sequence != self.events_seen {
            return Err(ProtocolError::SequenceGap { expected: self.events_seen, got: ev.sequence });
        }
        self.events_seen += 1;
        match &ev.payload {
            EventPayload::Delta { text } => self.text_so_far.push_str(text),
            p if p.is_terminal() => self.terminal = Some(p.clone()),
            _ => {}
        }
        Ok(self)
    }
}
