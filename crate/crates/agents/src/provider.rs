//! The model interface and its deterministic scripted implementation.

use std::collections::BTreeMap;
use std::sync::Mutex;

use margin_core::schema::{Schema, SchemaType};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub model: String,
    pub template_id: String,
    pub prompt: String,
    pub variables: BTreeMap<String, Value>,
    pub output_schema: Option<Schema>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// A language model. Implementations stream text through `on_delta` and then
/// return the final result: any JSON value when a schema is requested,
/// otherwise a string.
pub trait Provider: Send + Sync {
    fn complete(&self, req: &ProviderRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Value, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, req: &ProviderRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Value, ProviderError> {
        (**self).complete(req, on_delta)
    }
}

/// A scripted response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub template: String,
    /// Matches only when the request variables equal this map exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vars: Option<BTreeMap<String, Value>>,
    /// Matches when every listed variable has the given value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    /// Fails the call with this message instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Explicit delta texts; by default the output text is chunked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureFile {
    format: String,
    version: u32,
    fixtures: Vec<Fixture>,
}

pub const FIXTURE_FORMAT: &str = "margin-script";
const DELTA_CHARS: usize = 24;

/// Deterministic provider driven by fixtures keyed on template id and
/// variables. Exact `vars` fixtures win over `when` fixtures; among `when`
/// fixtures the first listed wins. Unmatched requests get a synthesized answer:
/// a value shaped by the output schema (strings copy the same-named variable,
/// else `text`), or the `text` variable itself when no schema is requested.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    fixtures: Vec<Fixture>,
    calls: Mutex<BTreeMap<String, usize>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(doc: &str) -> Result<Self, ProviderError> {
        let file: FixtureFile = serde_json::from_str(doc).map_err(|e| ProviderError(format!("fixture file: {e}")))?;
        if file.format != FIXTURE_FORMAT || file.version != 1 {
            return Err(ProviderError(format!("unsupported fixture format {} v{}", file.format, file.version)));
        }
        Ok(Self { fixtures: file.fixtures, ..Default::default() })
    }

    pub fn with(mut self, fixture: Fixture) -> Self {
        self.fixtures.push(fixture);
        self
    }

    /// Adds a `when` fixture answering `output`.
    pub fn answer(self, template: &str, when: Value, output: Value) -> Self {
        self.with(Fixture { template: template.into(), when: as_map(when), output: Some(output), ..blank() })
    }

    /// Adds a `when` fixture that fails.
    pub fn failing(self, template: &str, when: Value, message: &str) -> Self {
        self.with(Fixture { template: template.into(), when: as_map(when), error: Some(message.into()), ..blank() })
    }

    /// Number of calls made for `template_id`.
    pub fn calls(&self, template_id: &str) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).get(template_id).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).values().sum()
    }

    fn find(&self, req: &ProviderRequest) -> Option<&Fixture> {
        let mine = || self.fixtures.iter().filter(|f| f.template == req.template_id);
        mine()
            .find(|f| f.vars.as_ref() == Some(&req.variables))
            .or_else(|| {
                mine().find(|f| {
                    f.vars.is_none()
                        && f.when.as_ref().is_none_or(|w| w.iter().all(|(k, v)| req.variables.get(k) == Some(v)))
                })
            })
    }
}

fn blank() -> Fixture {
    Fixture { template: String::new(), vars: None, when: None, output: None, error: None, deltas: None }
}

fn as_map(v: Value) -> Option<BTreeMap<String, Value>> {
    match v {
        Value::Object(m) => Some(m.into_iter().collect()),
        _ => None,
    }
}

/// Splits `text` into chunks of at most `DELTA_CHARS` characters.
pub fn chunk_text(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars.chunks(DELTA_CHARS).map(|c| c.iter().collect()).collect()
}

fn output_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A value satisfying `schema`, built from the request variables.
pub fn synthesize(schema: &Schema, name: Option<&str>, vars: &BTreeMap<String, Value>) -> Value {
    if let Some(first) = schema.allowed.as_ref().and_then(|a| a.first()) {
        return first.clone();
    }
    let clamp = |x: f64| {
        let x = schema.minimum.map_or(x, |m| x.max(m));
        schema.maximum.map_or(x, |m| x.min(m))
    };
    match schema.ty {
        Some(SchemaType::Object) | None if !schema.properties.is_empty() || schema.ty.is_some() => {
            let mut out = Map::new();
            for (k, sub) in &schema.properties {
                out.insert(k.clone(), synthesize(sub, Some(k), vars));
            }
            Value::Object(out)
        }
        Some(SchemaType::Array) => Value::Array(Vec::new()),
        Some(SchemaType::Integer) => Value::from(clamp(0.0).ceil() as i64),
        Some(SchemaType::Number) => serde_json::Number::from_f64(clamp(0.0)).map_or(Value::Null, Value::Number),
        Some(SchemaType::Boolean) => Value::Bool(false),
        _ => {
            let pick = name.and_then(|n| vars.get(n)).filter(|v| v.is_string()).or_else(|| vars.get("text"));
            Value::String(pick.map(output_text).unwrap_or_default())
        }
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &ProviderRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Value, ProviderError> {
        *self.calls.lock().unwrap_or_else(|e| e.into_inner()).entry(req.template_id.clone()).or_default() += 1;
        let fixture = self.find(req);
        if let Some(msg) = fixture.and_then(|f| f.error.as_ref()) {
            return Err(ProviderError(msg.clone()));
        }
        let output = match fixture.and_then(|f| f.output.clone()) {
            Some(v) => v,
            None => match &req.output_schema {
                Some(schema) => synthesize(schema, None, &req.variables),
                None => Value::String(req.variables.get("text").map(output_text).unwrap_or_default()),
            },
        };
        let deltas = fixture.and_then(|f| f.deltas.clone()).unwrap_or_else(|| chunk_text(&output_text(&output)));
        for d in &deltas {
            on_delta(d);
        }
        Ok(output)
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    fn req(template: &str, vars: Value, schema: Option<Value>) -> ProviderRequest {
        ProviderRequest {
            model: "scripted".into(),
            template_id: template.into(),
            prompt: String::new(),
            variables: as_map(vars).unwrap(),
            output_schema: schema.map(|s| serde_json::from_value(s).unwrap()),
        }
    }

    fn run(p: &ScriptedProvider, r: &ProviderRequest) -> (Result<Value, ProviderError>, String) {
        let mut text = String::new();
        let out = p.complete(r, &mut |d| text.push_str(d));
        (out, text)
    }

    #[test]
    fn exact_vars_beat_when() {
        let p = ScriptedProvider::new()
            .answer("t", json!({"text": "a"}), json!("when"))
            .with(Fixture { template: "t".into(), vars: as_map(json!({"text": "a"})), output: Some(json!("exact")), ..blank() });
        assert_eq!(run(&p, &req("t", json!({"text": "a"}), None)).0.unwrap(), json!("exact"));
        assert_eq!(run(&p, &req("t", json!({"text": "a", "x": 1}), None)).0.unwrap(), json!("when"));
        assert_eq!(p.calls("t"), 2);
    }

    #[test]
    fn fallback_is_identity_on_text() {
        let p = ScriptedProvider::new();
        let (out, streamed) = run(&p, &req("t", json!({"text": "the quick brown fox jumps over the lazy dog"}), None));
        assert_eq!(out.unwrap(), json!("the quick brown fox jumps over the lazy dog"));
        assert_eq!(streamed, "the quick brown fox jumps over the lazy dog");
    }

    #[test]
    fn fallback_follows_schema() {
        let schema = json!({
            "type": "object",
            "required": ["rewrite", "score", "tags", "level"],
            "properties": {
                "rewrite": {"type": "string"},
                "score": {"type": "integer", "minimum": 1, "maximum": 10},
                "tags": {"type": "array", "items": {"type": "string"}},
                "level": {"type": "string", "enum": ["minor", "major"]}
            }
        });
        let p = ScriptedProvider::new();
        let r = req("t", json!({"text": "teh"}), Some(schema.clone()));
        let out = run(&p, &r).0.unwrap();
        assert_eq!(out, json!({"rewrite": "teh", "score": 1, "tags": [], "level": "minor"}));
        let s: Schema = serde_json::from_value(schema).unwrap();
        assert!(s.validate(&out).is_ok());
    }

    #[test]
    fn scripted_errors_and_fixture_files() {
        let doc = json!({
            "format": "margin-script",
            "version": 1,
            "fixtures": [{"template": "t", "when": {"text": "bad"}, "error": "boom"}]
        });
        let p = ScriptedProvider::from_json(&doc.to_string()).unwrap();
        assert_eq!(run(&p, &req("t", json!({"text": "bad"}), None)).0, Err(ProviderError("boom".into())));
        assert!(ScriptedProvider::from_json(r#"{"format":"x","version":1,"fixtures":[]}"#).is_err());
    }

    #[test]
    fn chunks_respect_char_boundaries() {
        let s = "é".repeat(50);
        let chunks = chunk_text(&s);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks.concat(), s);
        assert!(chunk_text("").is_empty());
    }
}
