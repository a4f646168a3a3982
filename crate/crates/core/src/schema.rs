//! A small JSON schema subset: `object`, `array`, `string`, `integer`,
//! `number` and `boolean` types, `required` properties, `enum` values and
//! integer/number ranges. Validation reports every violation, not just the first.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaType {
    Object,
    Array,
    String,
    Integer,
    Number,
    Boolean,
}

impl SchemaType {
    fn name(self) -> &'static str {
        match self {
            Self::Object => "object",
            Self::Array => "array",
            Self::String => "string",
            Self::Integer => "integer",
            Self::Number => "number",
            Self::Boolean => "boolean",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match self {
            Self::Object => v.is_object(),
            Self::Array => v.is_array(),
            Self::String => v.is_string(),
            Self::Integer => v.is_i64() || v.is_u64(),
            Self::Number => v.is_number(),
            Self::Boolean => v.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub ty: Option<SchemaType>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, Schema>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Box<Schema>>,
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Dotted path to the offending value, `items[2].name` style; empty for the root.
    pub path: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "(root)" } else { &self.path };
        write!(f, "{path}: {}", self.reason)
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_owned()
    } else {
        format!("{path}.{key}")
    }
}

impl Schema {
    pub fn of_type(ty: SchemaType) -> Self {
        Self { ty: Some(ty), ..Default::default() }
    }

    pub fn validate(&self, value: &Value) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        self.check(value, "", &mut out);
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    fn check(&self, value: &Value, path: &str, out: &mut Vec<Violation>) {
        let mut push = |reason: String| out.push(Violation { path: path.to_owned(), reason });
        if let Some(ty) = self.ty {
            if !ty.accepts(value) {
                push(format!("expected {}, found {}", ty.name(), kind_of(value)));
                return;
            }
        }
        if let Some(allowed) = &self.allowed {
            if !allowed.contains(value) {
                push(format!("value {value} is not one of the allowed values"));
            }
        }
        if let Some(n) = value.as_f64() {
            if self.minimum.is_some_and(|m| n < m) {
                push(format!("{value} is below the minimum {}", self.minimum.unwrap_or_default()));
            }
            if self.maximum.is_some_and(|m| n > m) {
                push(format!("{value} is above the maximum {}", self.maximum.unwrap_or_default()));
            }
        }
        if let Value::Object(map) = value {
            for key in &self.required {
                if !map.contains_key(key) {
                    out.push(Violation { path: join(path, key), reason: "required property is missing".into() });
                }
            }
            for (key, sub) in &self.properties {
                if let Some(v) = map.get(key) {
                    sub.check(v, &join(path, key), out);
                }
            }
        }
        if let (Value::Array(items), Some(sub)) = (value, &self.items) {
            for (i, v) in items.iter().enumerate() {
                sub.check(v, &format!("{path}[{i}]"), out);
            }
        }
    }

    /// Sub-schema reached by following object property names, when the path is
    /// guaranteed present by `required` at every step.
    pub fn required_path(&self, path: &[&str]) -> Option<&Schema> {
        let mut cur = self;
        for key in path {
            if !cur.required.iter().any(|r| r == key) {
                return None;
            }
            cur = cur.properties.get(*key)?;
        }
        Some(cur)
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_f64() => "number",
        Value::Number(_) => "integer",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("invalid schema document: {0}")]
    Invalid(String),
}

/// Named schemas, referenced by name from templates, workflows and tools.
#[derive(Debug, Clone, Default)]
pub struct SchemaRegistry {
    schemas: BTreeMap<String, Schema>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a JSON object mapping schema names to schemas.
    pub fn from_json(doc: &str) -> Result<Self, SchemaError> {
        let schemas: BTreeMap<String, Schema> =
            serde_json::from_str(doc).map_err(|e| SchemaError::Invalid(e.to_string()))?;
        Ok(Self { schemas })
    }

    pub fn insert(&mut self, name: impl Into<String>, schema: Schema) {
        self.schemas.insert(name.into(), schema);
    }

    pub fn extend(&mut self, other: SchemaRegistry) {
        self.schemas.extend(other.schemas);
    }

    pub fn get(&self, name: &str) -> Result<&Schema, SchemaError> {
        self.schemas.get(name).ok_or_else(|| SchemaError::UnknownSchema(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.schemas.contains_key(name)
    }

    /// Validates `value` against the schema registered as `name`.
    pub fn validate_output(&self, name: &str, value: &Value) -> Result<Result<(), Vec<Violation>>, SchemaError> {
        Ok(self.get(name)?.validate(value))
    }
}
