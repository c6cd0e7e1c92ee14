//! Wire messages between the server and agent clients.
//!
//! Every message is one UTF-8 JSON document of the shape
//! `{"type": <message type>, "content": {...}}`, terminated by a single zero
//! byte. `bye` carries no content. The full schema with one golden example
//! per message type lives in `docs/protocol.md`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::Action;
use crate::perception::Percept;

/// Frame terminator.
pub const FRAME_END: u8 = 0;

/// Upper bound for a single document; larger frames are rejected.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("malformed json: {0}")]
    Json(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("stale action id {got}, expected {expected}")]
    StaleId { expected: u64, got: u64 },
}

impl ProtocolError {
    /// The field the error points at, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ProtocolError::MissingField(f) => Some(f),
            ProtocolError::InvalidField { field, .. } => Some(field),
            ProtocolError::UnknownType(_) => Some("type"),
            ProtocolError::StaleId { .. } => Some("id"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthRequest {
    pub user: String,
    pub pw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthResult {
    Ok,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthResponse {
    pub result: AuthResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimStart {
    pub team: String,
    pub name: String,
    pub vision: u32,
    pub team_size: u32,
    pub steps: u64,
    pub sim_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestAction {
    pub id: u64,
    pub percept: Percept,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionReply {
    pub id: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEnd {
    pub score: u64,
    /// 1 for the winner (both teams on a draw), 2 for the loser.
    pub ranking: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "content", rename_all = "kebab-case")]
pub enum Message {
    AuthRequest(AuthRequest),
    AuthResponse(AuthResponse),
    SimStart(SimStart),
    RequestAction(RequestAction),
    Action(ActionReply),
    SimEnd(SimEnd),
    Bye,
}

impl Message {
    pub const TYPES: [&'static str; 7] = [
        "auth-request",
        "auth-response",
        "sim-start",
        "request-action",
        "action",
        "sim-end",
        "bye",
    ];

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::AuthRequest(_) => "auth-request",
            Message::AuthResponse(_) => "auth-response",
            Message::SimStart(_) => "sim-start",
            Message::RequestAction(_) => "request-action",
            Message::Action(_) => "action",
            Message::SimEnd(_) => "sim-end",
            Message::Bye => "bye",
        }
    }

    /// The action in an `action` message, provided its id matches.
    pub fn expect_action(self, expected_id: u64) -> Result<Action, ProtocolError> {
        match self {
            Message::Action(reply) if reply.id == expected_id => Ok(reply.action),
            Message::Action(reply) => Err(ProtocolError::StaleId {
                expected: expected_id,
                got: reply.id,
            }),
            other => Err(ProtocolError::InvalidField {
                field: "type".into(),
                reason: format!("expected action, got {}", other.type_name()),
            }),
        }
    }
}

/// The JSON document of a message, without the frame terminator.
pub fn to_document(msg: &Message) -> String {
    serde_json::to_string(msg).expect("message serialization cannot fail")
}

/// Encodes one message as a zero-terminated frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = to_document(msg).into_bytes();
    out.push(FRAME_END);
    out
}

/// Decodes exactly one zero-terminated frame.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    match bytes.split_last() {
        Some((&FRAME_END, body)) => {
            if body.contains(&FRAME_END) {
                return Err(ProtocolError::Framing("embedded zero byte".into()));
            }
            let text = std::str::from_utf8(body)
                .map_err(|e| ProtocolError::Framing(format!("invalid utf-8: {e}")))?;
            from_document(text)
        }
        _ => Err(ProtocolError::Framing("truncated frame: missing terminator".into())),
    }
}

/// Parses an unframed JSON document.
pub fn from_document(text: &str) -> Result<Message, ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::InvalidField {
            field: "type".into(),
            reason: "document is not an object".into(),
        });
    };
    let kind = match obj.remove("type") {
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(ProtocolError::InvalidField {
                field: "type".into(),
                reason: "not a string".into(),
            })
        }
        None => return Err(ProtocolError::MissingField("type".into())),
    };
    if kind == "bye" {
        return Ok(Message::Bye);
    }
    if !Message::TYPES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownType(kind));
    }
    let content = obj
        .remove("content")
        .ok_or_else(|| ProtocolError::MissingField("content".into()))?;
    Ok(match kind.as_str() {
        "auth-request" => Message::AuthRequest(typed(content)?),
        "auth-response" => Message::AuthResponse(typed(content)?),
        "sim-start" => Message::SimStart(typed(content)?),
        "request-action" => Message::RequestAction(typed(content)?),
        "sim-end" => Message::SimEnd(typed(content)?),
        _ => Message::Action(action_reply(content)?),
    })
}

fn typed<T: for<'de> Deserialize<'de>>(content: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(content).map_err(|e| {
        let text = e.to_string();
        match text
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            Some(field) => ProtocolError::MissingField(field.to_string()),
            None => ProtocolError::InvalidField {
                field: "content".into(),
                reason: text,
            },
        }
    })
}

fn action_reply(content: Value) -> Result<ActionReply, ProtocolError> {
    let Value::Object(obj) = content else {
        return Err(ProtocolError::InvalidField {
            field: "content".into(),
            reason: "not an object".into(),
        });
    };
    let id = match obj.get("id") {
        Some(v) => v.as_u64().ok_or_else(|| ProtocolError::InvalidField {
            field: "id".into(),
            reason: "not a non-negative integer".into(),
        })?,
        None => return Err(ProtocolError::MissingField("id".into())),
    };
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.as_str(),
        Some(_) => {
            return Err(ProtocolError::InvalidField {
                field: "type".into(),
                reason: "not a string".into(),
            })
        }
        None => return Err(ProtocolError::MissingField("type".into())),
    };
    if kind == "no_op" {
        return Err(ProtocolError::InvalidField {
            field: "type".into(),
            reason: "no_op is reserved for the server".into(),
        });
    }
    let params = match obj.get("p") {
        Some(Value::Array(items)) => items.as_slice(),
        Some(_) => {
            return Err(ProtocolError::InvalidField {
                field: "p".into(),
                reason: "not an array".into(),
            })
        }
        None => return Err(ProtocolError::MissingField("p".into())),
    };
    let action = Action::from_parts(kind, params).map_err(|e| ProtocolError::InvalidField {
        field: e.field().to_string(),
        reason: e.to_string(),
    })?;
    Ok(ActionReply { id, action })
}

/// Incremental splitter for a zero-terminated byte stream.
///
/// Bytes go in through [`push`](FrameDecoder::push); complete frames come
/// out of [`next_frame`](FrameDecoder::next_frame). A frame longer than
/// [`MAX_FRAME_BYTES`] is reported as an error and skipped up to its
/// terminator, so the decoder never buffers without bound.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    discarding: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame (terminator included), or `None` when more input
    /// is needed.
    pub fn next_frame(&mut self) -> Option<Result<Vec<u8>, ProtocolError>> {
        loop {
            match self.buf.iter().position(|b| *b == FRAME_END) {
                Some(end) => {
                    let frame: Vec<u8> = self.buf.drain(..=end).collect();
                    if self.discarding {
                        self.discarding = false;
                        continue;
                    }
                    if frame.len() - 1 > MAX_FRAME_BYTES {
                        return Some(Err(oversized()));
                    }
                    return Some(Ok(frame));
                }
                None if self.buf.len() > MAX_FRAME_BYTES => {
                    self.buf.clear();
                    if self.discarding {
                        return None;
                    }
                    self.discarding = true;
                    return Some(Err(oversized()));
                }
                None => return None,
            }
        }
    }

    /// Bytes received but not yet part of a complete frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

fn oversized() -> ProtocolError {
    ProtocolError::Framing(format!("frame exceeds {MAX_FRAME_BYTES} bytes"))
}

/// Blocking frame reader over any byte source.
pub struct FrameReader<R> {
    inner: R,
    decoder: FrameDecoder,
}

impl<R: std::io::Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            decoder: FrameDecoder::new(),
        }
    }

    /// Reads the next message. `Ok(None)` means the stream ended cleanly.
    /// Decoding problems come back as `Ok(Some(Err(..)))` so the caller can
    /// keep the connection open.
    #[allow(clippy::type_complexity)]
    pub fn read_message(&mut self) -> std::io::Result<Option<Result<Message, ProtocolError>>> {
        let mut chunk = [0u8; 8192];
        loop {
            if let Some(frame) = self.decoder.next_frame() {
                return Ok(Some(frame.and_then(|f| decode(&f))));
            }
            let n = self.inner.read(&mut chunk)?;
            if n == 0 {
                return Ok(None);
            }
            self.decoder.push(&chunk[..n]);
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Direction;

    #[test]
    fn bye_is_fixed() {
        assert_eq!(encode(&Message::Bye), b"{\"type\":\"bye\"}\0".to_vec());
        assert_eq!(decode(b"{\"type\":\"bye\"}\0"), Ok(Message::Bye));
    }

    #[test]
    fn action_document() {
        let doc = b"{\"type\":\"action\",\"content\":{\"id\":7,\"type\":\"move\",\"p\":[\"n\"]}}\0";
        let msg = decode(doc).unwrap();
        assert_eq!(
            msg,
            Message::Action(ActionReply {
                id: 7,
                action: Action::Move(Direction::North)
            })
        );
        assert_eq!(encode(&msg), doc.to_vec());
        assert_eq!(
            msg.clone().expect_action(8),
            Err(ProtocolError::StaleId {
                expected: 8,
                got: 7
            })
        );
        assert_eq!(msg.expect_action(7), Ok(Action::Move(Direction::North)));
    }

    #[test]
    fn truncated_frame() {
        let doc = encode(&Message::Bye);
        assert!(matches!(
            decode(&doc[..doc.len() - 1]),
            Err(ProtocolError::Framing(_))
        ));
        assert!(matches!(decode(b""), Err(ProtocolError::Framing(_))));
        assert!(matches!(
            decode(b"{\"type\":\"by\0"),
            Err(ProtocolError::Json(_))
        ));
    }

    #[test]
    fn errors_name_fields() {
        let e = decode(b"{\"type\":\"warp\",\"content\":{}}\0").unwrap_err();
        assert_eq!(e, ProtocolError::UnknownType("warp".into()));
        let e = decode(b"{\"type\":\"auth-request\",\"content\":{\"user\":\"x\"}}\0").unwrap_err();
        assert_eq!(e, ProtocolError::MissingField("pw".into()));
        let e = decode(b"{\"type\":\"action\",\"content\":{\"type\":\"skip\",\"p\":[]}}\0")
            .unwrap_err();
        assert_eq!(e.field(), Some("id"));
        let e = decode(b"{\"type\":\"action\",\"content\":{\"id\":1,\"type\":\"move\",\"p\":[\"up\"]}}\0")
            .unwrap_err();
        assert_eq!(e.field(), Some("p"));
        let e = decode(b"{\"type\":\"action\",\"content\":{\"id\":1,\"type\":\"no_op\",\"p\":[]}}\0")
            .unwrap_err();
        assert_eq!(e.field(), Some("type"));
        let e = decode(b"{\"content\":{}}\0").unwrap_err();
        assert_eq!(e, ProtocolError::MissingField("type".into()));
    }

    #[test]
    fn decoder_splits_and_recovers() {
        let mut dec = FrameDecoder::new();
        let mut stream = encode(&Message::Bye);
        stream.extend_from_slice(b"garbage\0");
        stream.extend_from_slice(&encode(&Message::Bye)[..5]);
        dec.push(&stream);
        assert_eq!(decode(&dec.next_frame().unwrap().unwrap()), Ok(Message::Bye));
        assert!(decode(&dec.next_frame().unwrap().unwrap()).is_err());
        assert!(dec.next_frame().is_none());
        assert_eq!(dec.pending(), 5);
        dec.push(&encode(&Message::Bye)[5..]);
        assert_eq!(decode(&dec.next_frame().unwrap().unwrap()), Ok(Message::Bye));
    }

    #[test]
    fn oversized_frames_are_dropped() {
        let mut dec = FrameDecoder::new();
        dec.push(&vec![b'x'; MAX_FRAME_BYTES + 10]);
        assert!(matches!(dec.next_frame(), Some(Err(ProtocolError::Framing(_)))));
        dec.push(b"tail\0");
        dec.push(&encode(&Message::Bye));
        assert_eq!(decode(&dec.next_frame().unwrap().unwrap()), Ok(Message::Bye));
    }
}
