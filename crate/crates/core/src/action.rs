//! Agent actions and their outcome codes.
//!
//! Actions travel as `{"type": <kind>, "p": [<params>]}`. The same shape is
//! used on the wire, in replays and inside world snapshots.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::geometry::{Direction, Position, Rotation};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Move(Direction),
    Rotate(Rotation),
    Attach(Direction),
    Detach(Direction),
    /// Join the own block at `block` (relative) to the partner's block.
    Connect { partner: String, block: Position },
    /// Break the edge between two blocks of the own component.
    Disconnect { first: Position, second: Position },
    Request(Direction),
    Clear(Position),
    Submit(String),
    Skip,
    /// Substituted by the server when no valid action arrived in time.
    NoOp,
}

impl Action {
    pub const KINDS: [&'static str; 11] = [
        "move",
        "rotate",
        "attach",
        "detach",
        "connect",
        "disconnect",
        "request",
        "clear",
        "submit",
        "skip",
        "no_op",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            Action::Move(_) => "move",
            Action::Rotate(_) => "rotate",
            Action::Attach(_) => "attach",
            Action::Detach(_) => "detach",
            Action::Connect { .. } => "connect",
            Action::Disconnect { .. } => "disconnect",
            Action::Request(_) => "request",
            Action::Clear(_) => "clear",
            Action::Submit(_) => "submit",
            Action::Skip => "skip",
            Action::NoOp => "no_op",
        }
    }

    pub fn params(&self) -> Vec<Value> {
        match self {
            Action::Move(d) | Action::Attach(d) | Action::Detach(d) | Action::Request(d) => {
                vec![json!(d.as_str())]
            }
            Action::Rotate(r) => vec![json!(r.as_str())],
            Action::Connect { partner, block } => {
                vec![json!(partner), json!(block.x), json!(block.y)]
            }
            Action::Disconnect { first, second } => vec![
                json!(first.x),
                json!(first.y),
                json!(second.x),
                json!(second.y),
            ],
            Action::Clear(p) => vec![json!(p.x), json!(p.y)],
            Action::Submit(task) => vec![json!(task)],
            Action::Skip | Action::NoOp => Vec::new(),
        }
    }

    /// Rebuilds an action from its kind and parameter list.
    ///
    /// The error names the offending field: `type` for an unknown kind, `p`
    /// for a parameter list of the wrong arity or shape.
    pub fn from_parts(kind: &str, params: &[Value]) -> Result<Action, ActionParseError> {
        let bad_params = || ActionParseError::Params {
            kind: kind.to_string(),
        };
        let dir = |i: usize| {
            params
                .get(i)
                .and_then(Value::as_str)
                .and_then(Direction::parse)
                .ok_or_else(bad_params)
        };
        let int = |i: usize| {
            params
                .get(i)
                .and_then(Value::as_i64)
                .and_then(|v| i32::try_from(v).ok())
                .ok_or_else(bad_params)
        };
        let text = |i: usize| {
            params
                .get(i)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(bad_params)
        };
        let arity = match kind {
            "move" | "attach" | "detach" | "request" | "rotate" | "submit" => 1,
            "connect" => 3,
            "disconnect" => 4,
            "clear" => 2,
            "skip" | "no_op" => 0,
            other => return Err(ActionParseError::Kind(other.to_string())),
        };
        if params.len() != arity {
            return Err(bad_params());
        }
        Ok(match kind {
            "move" => Action::Move(dir(0)?),
            "attach" => Action::Attach(dir(0)?),
            "detach" => Action::Detach(dir(0)?),
            "request" => Action::Request(dir(0)?),
            "rotate" => Action::Rotate(
                params
                    .first()
                    .and_then(Value::as_str)
                    .and_then(Rotation::parse)
                    .ok_or_else(bad_params)?,
            ),
            "connect" => Action::Connect {
                partner: text(0)?,
                block: Position::new(int(1)?, int(2)?),
            },
            "disconnect" => Action::Disconnect {
                first: Position::new(int(0)?, int(1)?),
                second: Position::new(int(2)?, int(3)?),
            },
            "clear" => Action::Clear(Position::new(int(0)?, int(1)?)),
            "submit" => Action::Submit(text(0)?),
            "skip" => Action::Skip,
            _ => Action::NoOp,
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.kind())?;
        for (i, p) in self.params().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match p {
                Value::String(s) => f.write_str(s)?,
                other => write!(f, "{other}")?,
            }
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionParseError {
    #[error("unknown action type `{0}`")]
    Kind(String),
    #[error("invalid parameters for `{kind}`")]
    Params { kind: String },
}

impl ActionParseError {
    pub fn field(&self) -> &'static str {
        match self {
            ActionParseError::Kind(_) => "type",
            ActionParseError::Params { .. } => "p",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ActionRepr {
    #[serde(rename = "type")]
    kind: String,
    p: Vec<Value>,
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ActionRepr {
            kind: self.kind().to_string(),
            p: self.params(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = ActionRepr::deserialize(d)?;
        Action::from_parts(&repr.kind, &repr.p).map_err(D::Error::custom)
    }
}

/// Outcome code of one action. The serialized strings are part of the wire
/// protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FailedPath,
    FailedParameter,
    FailedTarget,
    FailedPartner,
    FailedBlocked,
    FailedStatus,
    FailedResources,
    NoOp,
}

impl Outcome {
    pub const ALL: [Outcome; 9] = [
        Outcome::Success,
        Outcome::FailedPath,
        Outcome::FailedParameter,
        Outcome::FailedTarget,
        Outcome::FailedPartner,
        Outcome::FailedBlocked,
        Outcome::FailedStatus,
        Outcome::FailedResources,
        Outcome::NoOp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::FailedPath => "failed_path",
            Outcome::FailedParameter => "failed_parameter",
            Outcome::FailedTarget => "failed_target",
            Outcome::FailedPartner => "failed_partner",
            Outcome::FailedBlocked => "failed_blocked",
            Outcome::FailedStatus => "failed_status",
            Outcome::FailedResources => "failed_resources",
            Outcome::NoOp => "no_op",
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// What happened to one agent's action in one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub agent: String,
    pub action: Action,
    pub outcome: Outcome,
}
