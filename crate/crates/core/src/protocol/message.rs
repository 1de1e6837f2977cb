use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

/// One piece of message content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Part {
    Text { text: String },
    Data { json: Map<String, Value> },
}

impl Part {
    pub fn text(text: impl Into<String>) -> Self {
        Part::Text { text: text.into() }
    }

    /// Panics if `value` is not a JSON object.
    pub fn data(value: Value) -> Self {
        match value {
            Value::Object(json) => Part::Data { json },
            other => panic!("data part must be a JSON object, got {other}"),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Part::Text { text } => Some(text),
            Part::Data { .. } => None,
        }
    }

    pub fn as_data(&self) -> Option<&Map<String, Value>> {
        match self {
            Part::Data { json } => Some(json),
            Part::Text { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn new(role: Role, parts: Vec<Part>) -> Self {
        Self { role, parts }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self::new(Role::User, vec![Part::text(text)])
    }

    pub fn assistant_text(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, vec![Part::text(text)])
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(Part::as_text)
    }

    /// First value stored under `key` in any data part.
    pub fn data_field(&self, key: &str) -> Option<&Value> {
        self.parts.iter().filter_map(Part::as_data).find_map(|m| m.get(key))
    }

    /// Human-oriented rendering: text parts verbatim, data parts as compact JSON.
    pub fn render(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                Part::Text { text } => text.clone(),
                Part::Data { json } => crate::canonical::to_compact(json),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub(crate) fn check(&self) -> Result<(), &'static str> {
        if self.parts.is_empty() {
            return Err("parts: empty");
        }
        Ok(())
    }
}
