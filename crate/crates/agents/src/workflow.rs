//! Declarative workflow specs, binding expressions and static validation.
//!
//! A binding is any JSON value; strings inside it may contain `${inputs.x}`
//! or `${steps.id.output.path}` placeholders. A string that is exactly one
//! placeholder resolves to the raw value, otherwise placeholders are
//! interpolated as text. `$${` is a literal `${`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::template::value_text;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub workflow_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub inputs: Vec<String>,
    /// Optional schema per input, checked before the run starts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub input_schemas: BTreeMap<String, String>,
    pub steps: Vec<WorkflowStep>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowStep {
    pub step_id: String,
    #[serde(flatten)]
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry: Option<Retry>,
}

impl WorkflowStep {
    pub fn max_attempts(&self) -> u32 {
        self.retry.map_or(DEFAULT_MAX_ATTEMPTS, |r| r.max_attempts.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Retry {
    pub max_attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    ConcatOrdered,
    ReviewMerge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepKind {
    LlmCall {
        template: String,
        #[serde(default = "default_model")]
        model: String,
        #[serde(default)]
        vars: BTreeMap<String, Value>,
    },
    ToolCall {
        tool: String,
        #[serde(default)]
        arguments: Value,
    },
    Validate {
        schema: String,
        target: Value,
    },
    FanOut {
        /// Binding that must resolve to an array; one sub-run per element.
        segments: Value,
        workflow: String,
        max_parallel: usize,
        /// Sub-workflow input that receives the element.
        #[serde(default = "default_item_input")]
        item_input: String,
        /// Further sub-workflow inputs, shared by every sub-run.
        #[serde(default)]
        with: BTreeMap<String, Value>,
    },
    Merge {
        from: String,
        reducer: Reducer,
    },
}

fn default_model() -> String {
    "default".into()
}

fn default_item_input() -> String {
    "segment".into()
}

/// Where a placeholder reads from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Input(String),
    Step(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub source: Source,
    pub path: Vec<String>,
}

impl Reference {
    fn parse(expr: &str) -> Result<Self, String> {
        let parts: Vec<&str> = expr.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(format!("malformed reference `{expr}`"));
        }
        let owned = |s: &[&str]| s.iter().map(|p| p.to_string()).collect();
        match parts.as_slice() {
            ["inputs", name, rest @ ..] => Ok(Self { source: Source::Input(name.to_string()), path: owned(rest) }),
            ["steps", id, "output", rest @ ..] => Ok(Self { source: Source::Step(id.to_string()), path: owned(rest) }),
            _ => Err(format!("reference `{expr}` must start with `inputs.` or `steps.<id>.output`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Lit(String),
    Ref(Reference),
}

fn parse_string(s: &str) -> Result<Vec<Part>, String> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut rest = s;
    while let Some(i) = rest.find('$') {
        lit.push_str(&rest[..i]);
        let after = &rest[i..];
        if let Some(r) = after.strip_prefix("$${") {
            lit.push_str("${");
            rest = r;
        } else if let Some(r) = after.strip_prefix("${") {
            let close = r.find('}').ok_or_else(|| format!("unterminated placeholder in `{s}`"))?;
            if !lit.is_empty() {
                out.push(Part::Lit(std::mem::take(&mut lit)));
            }
            out.push(Part::Ref(Reference::parse(&r[..close])?));
            rest = &r[close + 1..];
        } else {
            lit.push('$');
            rest = &after[1..];
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        out.push(Part::Lit(lit));
    }
    Ok(out)
}

/// The reference when `binding` is a string made of exactly one placeholder.
pub fn lone_reference(binding: &Value) -> Option<Reference> {
    let Value::String(s) = binding else { return None };
    match parse_string(s).ok()?.as_slice() {
        [Part::Ref(r)] => Some(r.clone()),
        _ => None,
    }
}

/// Every reference inside a binding value.
pub fn references(binding: &Value) -> Result<Vec<Reference>, String> {
    let mut out = Vec::new();
    walk_refs(binding, &mut out)?;
    Ok(out)
}

fn walk_refs(v: &Value, out: &mut Vec<Reference>) -> Result<(), String> {
    match v {
        Value::String(s) => {
            for p in parse_string(s)? {
                if let Part::Ref(r) = p {
                    out.push(r);
                }
            }
        }
        Value::Array(items) => items.iter().try_for_each(|i| walk_refs(i, out))?,
        Value::Object(map) => map.values().try_for_each(|i| walk_refs(i, out))?,
        _ => {}
    }
    Ok(())
}

/// Values a binding can read.
pub struct Scope<'a> {
    pub inputs: &'a BTreeMap<String, Value>,
    pub steps: &'a BTreeMap<String, Value>,
}

impl Scope<'_> {
    fn lookup(&self, r: &Reference) -> Result<&Value, String> {
        let (root, name) = match &r.source {
            Source::Input(n) => (self.inputs.get(n), format!("inputs.{n}")),
            Source::Step(id) => (self.steps.get(id), format!("steps.{id}.output")),
        };
        let mut cur = root.ok_or_else(|| format!("`{name}` is not available"))?;
        for seg in &r.path {
            cur = match cur {
                Value::Object(m) => m.get(seg),
                Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
                _ => None,
            }
            .ok_or_else(|| format!("`{name}.{}` does not resolve", r.path.join(".")))?;
        }
        Ok(cur)
    }

    pub fn resolve(&self, binding: &Value) -> Result<Value, String> {
        Ok(match binding {
            Value::String(s) => {
                let parts = parse_string(s)?;
                match parts.as_slice() {
                    [Part::Ref(r)] => self.lookup(r)?.clone(),
                    _ => {
                        let mut out = String::new();
                        for p in &parts {
                            match p {
                                Part::Lit(l) => out.push_str(l),
                                Part::Ref(r) => out.push_str(&value_text(self.lookup(r)?)),
                            }
                        }
                        Value::String(out)
                    }
                }
            }
            Value::Array(items) => Value::Array(items.iter().map(|i| self.resolve(i)).collect::<Result<_, _>>()?),
            Value::Object(map) => Value::Object(
                map.iter().map(|(k, v)| Ok((k.clone(), self.resolve(v)?))).collect::<Result<_, String>>()?,
            ),
            other => other.clone(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("workflow `{workflow}`{}: {reason}", step.as_ref().map(|s| format!(", step `{s}`")).unwrap_or_default())]
pub struct WorkflowError {
    pub workflow: String,
    pub step: Option<String>,
    pub reason: String,
}

impl WorkflowSpec {
    pub fn from_json(doc: &str) -> Result<Self, WorkflowError> {
        serde_json::from_str(doc)
            .map_err(|e| WorkflowError { workflow: "(unparsed)".into(), step: None, reason: e.to_string() })
    }

    pub fn step(&self, id: &str) -> Option<&WorkflowStep> {
        self.steps.iter().find(|s| s.step_id == id)
    }

    /// Structural checks that need no catalog: unique ids, the output step,
    /// backward-only references and declared inputs.
    pub fn check_structure(&self) -> Result<(), WorkflowError> {
        let err = |step: Option<&str>, reason: String| WorkflowError {
            workflow: self.workflow_id.clone(),
            step: step.map(str::to_owned),
            reason,
        };
        let inputs: BTreeSet<&str> = self.inputs.iter().map(String::as_str).collect();
        if inputs.len() != self.inputs.len() {
            return Err(err(None, "duplicate input name".into()));
        }
        if let Some(name) = self.input_schemas.keys().find(|k| !inputs.contains(k.as_str())) {
            return Err(err(None, format!("schema given for undeclared input `{name}`")));
        }
        let mut seen = BTreeSet::new();
        for step in &self.steps {
            let id = step.step_id.as_str();
            for b in step.bindings() {
                for r in references(b).map_err(|e| err(Some(id), e))? {
                    match &r.source {
                        Source::Input(n) if !inputs.contains(n.as_str()) => {
                            return Err(err(Some(id), format!("undeclared input `{n}`")));
                        }
                        Source::Step(s) if !seen.contains(s.as_str()) => {
                            return Err(err(Some(id), format!("`{s}` is not an earlier step")));
                        }
                        _ => {}
                    }
                }
            }
            if let StepKind::Merge { from, .. } = &step.kind {
                match self.step(from) {
                    Some(s) if seen.contains(from.as_str()) && matches!(s.kind, StepKind::FanOut { .. }) => {}
                    _ => return Err(err(Some(id), format!("merge source `{from}` is not an earlier fan_out step"))),
                }
            }
            if let StepKind::FanOut { max_parallel: 0, .. } = step.kind {
                return Err(err(Some(id), "max_parallel must be at least 1".into()));
            }
            if !seen.insert(id) {
                return Err(err(Some(id), "duplicate step id".into()));
            }
        }
        if !seen.contains(self.output.as_str()) {
            return Err(err(None, format!("output step `{}` does not exist", self.output)));
        }
        Ok(())
    }
}

impl WorkflowStep {
    /// The binding values this step reads.
    pub fn bindings(&self) -> Vec<&Value> {
        match &self.kind {
            StepKind::LlmCall { vars, .. } => vars.values().collect(),
            StepKind::ToolCall { arguments, .. } => vec![arguments],
            StepKind::Validate { target, .. } => vec![target],
            StepKind::FanOut { segments, with, .. } => std::iter::once(segments).chain(with.values()).collect(),
            StepKind::Merge { .. } => Vec::new(),
        }
    }
}
