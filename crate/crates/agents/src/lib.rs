//! Agents for the margin writing assistant.
//!
//! - [`template`] and [`provider`]: single-shot prompt agents over a pluggable model.
//! - [`workflow`] and [`runtime`]: declarative multi-step workflows with a bounded fan-out pool.
//! - [`tools`] and [`toolset`]: the schema-checked tool registry and the built-in tools.
//! - [`retrieval`]: corpus indexing, search, re-ranking, comparison and research maps.
//! - [`builtin`]: the Reviewer, Enhancer, Scoring and Researcher agents.

pub mod builtin;
pub mod catalog;
pub mod events;
#[cfg(feature = "live")]
pub mod live;
pub mod provider;
pub mod retrieval;
pub mod runtime;
pub mod template;
pub mod tools;
pub mod toolset;
pub mod workflow;

pub use builtin::{AgentContext, AgentKind, AgentOutput, AgentRun};
pub use catalog::Catalog;
pub use events::{EventSink, NullSink, StreamWriter};
pub use provider::{Provider, ProviderError, ProviderRequest, ScriptedProvider};
pub use runtime::{RunError, RunOptions, RunState, RunStatus, Runtime};
pub use tools::{ToolDescriptor, ToolError, ToolRegistry};
pub use workflow::{WorkflowError, WorkflowSpec};
