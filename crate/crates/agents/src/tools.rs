//! Tool registry with schema-checked invocation.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use margin_core::schema::{SchemaError, SchemaRegistry, Violation};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub input_schema: String,
    pub output_schema: String,
}

pub type ToolHandler = Arc<dyn Fn(&Value) -> Result<Value, String> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("input rejected: {}", list(.0))]
    InputViolation(Vec<Violation>),
    #[error("output rejected: {}", list(.0))]
    OutputViolation(Vec<Violation>),
    #[error("tool failed: {0}")]
    Handler(String),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ToolError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownTool(_) => "unknown_tool",
            Self::Duplicate(_) => "duplicate_tool",
            Self::Schema(_) => "unknown_schema",
            Self::InputViolation(_) => "input_violation",
            Self::OutputViolation(_) => "output_violation",
            Self::Handler(_) => "handler_error",
        }
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::InputViolation(v) | Self::OutputViolation(v) => v,
            _ => &[],
        }
    }
}

struct Registered {
    desc: ToolDescriptor,
    handler: ToolHandler,
}

/// Registration takes a write lock; invocations only hold the read lock long
/// enough to clone the handler, so handlers run concurrently.
pub struct ToolRegistry {
    schemas: Arc<SchemaRegistry>,
    tools: RwLock<BTreeMap<String, Registered>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.list().iter().map(|d| d.name.clone()).collect::<Vec<_>>()).finish()
    }
}

impl ToolRegistry {
    pub fn new(schemas: Arc<SchemaRegistry>) -> Self {
        Self { schemas, tools: RwLock::new(BTreeMap::new()) }
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        &self.schemas
    }

    pub fn register(
        &self,
        desc: ToolDescriptor,
        handler: impl Fn(&Value) -> Result<Value, String> + Send + Sync + 'static,
    ) -> Result<(), ToolError> {
        self.schemas.get(&desc.input_schema)?;
        self.schemas.get(&desc.output_schema)?;
        let mut tools = self.tools.write().unwrap_or_else(|e| e.into_inner());
        if tools.contains_key(&desc.name) {
            return Err(ToolError::Duplicate(desc.name));
        }
        tools.insert(desc.name.clone(), Registered { desc, handler: Arc::new(handler) });
        Ok(())
    }

    /// Descriptors sorted by name.
    pub fn list(&self) -> Vec<ToolDescriptor> {
        self.tools.read().unwrap_or_else(|e| e.into_inner()).values().map(|r| r.desc.clone()).collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<ToolDescriptor> {
        self.tools.read().unwrap_or_else(|e| e.into_inner()).get(name).map(|r| r.desc.clone())
    }

    pub fn invoke(&self, name: &str, args: &Value) -> Result<Value, ToolError> {
        let (desc, handler) = {
            let tools = self.tools.read().unwrap_or_else(|e| e.into_inner());
            let r = tools.get(name).ok_or_else(|| ToolError::UnknownTool(name.into()))?;
            (r.desc.clone(), r.handler.clone())
        };
        self.schemas.validate_output(&desc.input_schema, args)?.map_err(ToolError::InputViolation)?;
        let out = handler(args).map_err(ToolError::Handler)?;
        self.schemas.validate_output(&desc.output_schema, &out)?.map_err(ToolError::OutputViolation)?;
        Ok(out)
    }
}
