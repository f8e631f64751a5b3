//! AgentCard data model, validation, canonical `agent.json` text and the
//! x402 payment extension carried in `capabilities.extensions`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::crypto::Address;

pub const X402_EXTENSION_URI: &str = "urn:a2a-blockchain-x402:extensions:x402:v1";
pub const WELL_KNOWN_PATH: &str = "/.well-known/agent.json";
pub const DEFAULT_MAX_TIMEOUT_SECONDS: u64 = 60;

/// The eight top-level fields every card must carry, in canonical order.
pub const REQUIRED_FIELDS: [&str; 8] = [
    "name",
    "description",
    "url",
    "version",
    "capabilities",
    "defaultInputModes",
    "defaultOutputModes",
    "skills",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentCard {
    pub name: String,
    pub description: String,
    pub url: String,
    pub version: String,
    pub capabilities: Capabilities,
    pub default_input_modes: Vec<String>,
    pub default_output_modes: Vec<String>,
    pub skills: Vec<Skill>,
    /// Fields outside the mandatory set, kept for round-tripping.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skill {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Skill {
    pub fn new(id: &str, name: &str, description: &str) -> Skill {
        Skill {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extensions: Vec<AgentExtension>,
    /// Boolean capability flags such as `streaming`.
    #[serde(flatten)]
    pub flags: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentExtension {
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required: Option<bool>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

/// Payment parameters advertised through the x402 extension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct X402Params {
    pub asset: Address,
    pub network: String,
    /// Base units as decimal text.
    pub amount: String,
    pub pay_to: Address,
    #[serde(default = "default_timeout")]
    pub max_timeout_seconds: u64,
    #[serde(default)]
    pub description: String,
}

fn default_timeout() -> u64 {
    DEFAULT_MAX_TIMEOUT_SECONDS
}

impl X402Params {
    /// `amount` as base units; `None` when it is not a nonnegative integer.
    pub fn amount_units(&self) -> Option<u128> {
        if self.amount.is_empty() || !self.amount.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        self.amount.parse().ok()
    }

    pub fn to_extension(&self) -> AgentExtension {
        let params = match serde_json::to_value(self).expect("params serialize") {
            Value::Object(map) => map,
            _ => unreachable!("struct serializes to an object"),
        };
        AgentExtension {
            uri: X402_EXTENSION_URI.to_string(),
            description: Some("x402 micropayments".to_string()),
            required: Some(false),
            params,
        }
    }
}

/// One failed validation rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Violation {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

pub(crate) fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CardError {
    #[error("malformed agent.json: {0}")]
    Parse(String),
    #[error("invalid card: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("malformed x402 extension: {0}")]
    MalformedExtension(String),
}

impl CardError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            CardError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn is_mime_type(s: &str) -> bool {
    match s.split_once('/') {
        Some((ty, sub)) => {
            let ok = |p: &str| {
                !p.is_empty()
                    && p.chars()
                        .all(|c| c.is_ascii_alphanumeric() || "!#$&^_.+-*".contains(c))
            };
            ok(ty) && ok(sub.split(';').next().unwrap_or("").trim())
        }
        None => false,
    }
}

fn check_modes(field: &str, modes: &[String], out: &mut Vec<Violation>) {
    if modes.is_empty() {
        out.push(Violation::new(field, "nonempty required"));
    }
    for (i, m) in modes.iter().enumerate() {
        if !is_mime_type(m) {
            out.push(Violation::new(
                format!("{field}[{i}]"),
                format!("not a MIME type: {m:?}"),
            ));
        }
    }
}

pub fn validate_card(card: &AgentCard) -> Vec<Violation> {
    let mut out = Vec::new();
    if card.name.trim().is_empty() {
        out.push(Violation::new("name", "nonempty required"));
    }
    match url::Url::parse(&card.url) {
        Ok(u) if matches!(u.scheme(), "http" | "https") && u.has_host() => {}
        Ok(_) => out.push(Violation::new("url", "must be an absolute http(s) URL")),
        Err(_) => out.push(Violation::new("url", "must be an absolute http(s) URL")),
    }
    if semver::Version::parse(&card.version).is_err() {
        out.push(Violation::new("version", "must be a semantic version"));
    }

    let mut uris = BTreeSet::new();
    for (i, ext) in card.capabilities.extensions.iter().enumerate() {
        if ext.uri.trim().is_empty() {
            out.push(Violation::new(
                format!("capabilities.extensions[{i}].uri"),
                "nonempty required",
            ));
        }
        if !uris.insert(ext.uri.as_str()) {
            out.push(Violation::new(
                "capabilities.extensions",
                format!("duplicate extension uri {:?}", ext.uri),
            ));
        }
    }

    check_modes("defaultInputModes", &card.default_input_modes, &mut out);
    check_modes("defaultOutputModes", &card.default_output_modes, &mut out);

    if card.skills.is_empty() {
        out.push(Violation::new("skills", "nonempty required"));
    }
    let mut ids = BTreeSet::new();
    for (i, skill) in card.skills.iter().enumerate() {
        for (name, value) in [
            ("id", &skill.id),
            ("name", &skill.name),
            ("description", &skill.description),
        ] {
            if value.trim().is_empty() {
                out.push(Violation::new(
                    format!("skills[{i}].{name}"),
                    "nonempty required",
                ));
            }
        }
        if !skill.id.is_empty() && !ids.insert(skill.id.as_str()) {
            out.push(Violation::new(
                "skills",
                format!("duplicate skill id {:?}", skill.id),
            ));
        }
    }
    out
}

/// Canonical agent.json: Listing order for the mandatory keys, extra keys
/// sorted after them, no insignificant whitespace.
pub fn to_agent_json(card: &AgentCard) -> Result<String, CardError> {
    let violations = validate_card(card);
    if !violations.is_empty() {
        return Err(CardError::Invalid(violations));
    }
    serde_json::to_string(card).map_err(|e| CardError::Parse(e.to_string()))
}

pub fn parse_agent_json(text: &str) -> Result<AgentCard, CardError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CardError::Parse(e.to_string()))?;
    let Value::Object(obj) = &value else {
        return Err(CardError::Invalid(vec![Violation::new(
            "$",
            "must be a JSON object",
        )]));
    };
    let missing: Vec<Violation> = REQUIRED_FIELDS
        .iter()
        .filter(|f| !obj.contains_key(**f))
        .map(|f| Violation::new(*f, "required"))
        .collect();
    if !missing.is_empty() {
        return Err(CardError::Invalid(missing));
    }
    let card: AgentCard = serde_json::from_value(value)
        .map_err(|e| CardError::Invalid(vec![Violation::new("$", e.to_string())]))?;
    let violations = validate_card(&card);
    if !violations.is_empty() {
        return Err(CardError::Invalid(violations));
    }
    Ok(card)
}

/// The x402 extension parameters, if the card advertises them.
pub fn extract_x402_params(card: &AgentCard) -> Result<Option<X402Params>, CardError> {
    let Some(ext) = card
        .capabilities
        .extensions
        .iter()
        .find(|e| e.uri == X402_EXTENSION_URI)
    else {
        return Ok(None);
    };
    let params: X402Params = serde_json::from_value(Value::Object(ext.params.clone()))
        .map_err(|e| CardError::MalformedExtension(e.to_string()))?;
    if params.amount_units().is_none() {
        return Err(CardError::MalformedExtension(format!(
            "amount must be a nonnegative integer, got {:?}",
            params.amount
        )));
    }
    if params.network.trim().is_empty() {
        return Err(CardError::MalformedExtension("network is empty".into()));
    }
    Ok(Some(params))
}
