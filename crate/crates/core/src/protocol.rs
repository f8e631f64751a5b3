//! The JSON-RPC 2.0 subset of A2A used here: `message/send` with text parts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const JSONRPC_VERSION: &str = "2.0";
pub const METHOD_MESSAGE_SEND: &str = "message/send";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;
/// Skill handler failed (after settlement, if the skill is paid).
pub const HANDLER_ERROR: i64 = -32000;
pub const UNSUPPORTED_OPERATION: i64 = -32004;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub kind: String,
    pub text: String,
}

impl Part {
    pub fn text(text: impl Into<String>) -> Part {
        Part {
            kind: "text".into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Message {
        Message {
            role: "user".into(),
            parts: vec![Part::text(text)],
        }
    }

    pub fn agent(text: impl Into<String>) -> Message {
        Message {
            role: "agent".into(),
            parts: vec![Part::text(text)],
        }
    }

    /// Concatenated text of all text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter(|p| p.kind == "text")
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MessageSendParams {
    pub message: Message,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2ARequest {
    pub jsonrpc: String,
    pub id: Value,
    pub method: String,
    pub params: MessageSendParams,
}

impl A2ARequest {
    pub fn message_send(id: u64, skill_id: &str, text: &str) -> A2ARequest {
        A2ARequest {
            jsonrpc: JSONRPC_VERSION.into(),
            id: Value::from(id),
            method: METHOD_MESSAGE_SEND.into(),
            params: MessageSendParams {
                message: Message::user(text),
                skill_id: Some(skill_id.into()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2AResponse {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl A2AResponse {
    pub fn result(id: Value, message: Message) -> A2AResponse {
        A2AResponse {
            jsonrpc: JSONRPC_VERSION.into(),
            id,
            result: Some(message),
            error: None,
        }
    }

    pub fn error(id: Value, code: i64, message: impl Into<String>) -> A2AResponse {
        A2AResponse {
            jsonrpc: JSONRPC_VERSION.into(),
            id,
            result: None,
            error: Some(RpcError {
                code,
                message: message.into(),
            }),
        }
    }

    /// True when the value is a JSON-RPC 2.0 response with exactly one of
    /// `result` / `error`.
    pub fn is_valid_jsonrpc(value: &Value) -> bool {
        let Some(obj) = value.as_object() else {
            return false;
        };
        obj.get("jsonrpc").and_then(Value::as_str) == Some(JSONRPC_VERSION)
            && obj.contains_key("id")
            && (obj.contains_key("result") != obj.contains_key("error"))
    }
}
