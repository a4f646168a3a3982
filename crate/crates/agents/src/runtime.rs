//! Executes prompt agents and declarative workflows.
//!
//! Every workflow is validated against the catalog when the runtime is built,
//! so a run can only fail on provider, schema, tool or merge errors, never on
//! a binding that does not resolve.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use margin_core::schema::{Schema, SchemaError, SchemaRegistry, SchemaType, Violation};
use margin_core::stream::EventPayload;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::events::{Buffer, EventSink};
use crate::provider::{Provider, ProviderRequest};
use crate::template::PromptTemplate;
use crate::tools::{ToolError, ToolRegistry};
use crate::workflow::{lone_reference, references, Reducer, Reference, Scope, Source, StepKind, WorkflowError, WorkflowSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("unknown workflow `{0}`")]
    UnknownWorkflow(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("input `{name}`: {reason}")]
    Input { name: String, reason: String },
    #[error("step `{step}`: {reason}")]
    Render { step: String, reason: String },
    #[error("step `{step}`: provider failed: {message}")]
    Provider { step: String, message: String },
    #[error("step `{step}`: output rejected after {attempts} attempt(s): {}", list(.violations))]
    Validation { step: String, attempts: u32, violations: Vec<Violation> },
    #[error("step `{step}`: {source}")]
    Tool { step: String, source: ToolError },
    #[error("step `{step}`: segment {index} failed: {source}")]
    FanOut { step: String, index: usize, source: Box<RunError> },
    #[error("step `{step}`: {reason}")]
    Merge { step: String, reason: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl RunError {
    /// Error code carried by the terminal stream event.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownWorkflow(_) | Self::UnknownTemplate(_) | Self::UnknownModel(_) | Self::Schema(_) => {
                "config_error"
            }
            Self::Input { .. } => "input_error",
            Self::Render { .. } => "render_error",
            Self::Provider { .. } => "provider_error",
            Self::Validation { .. } => "validation_error",
            Self::Tool { .. } => "tool_error",
            Self::FanOut { source, .. } => source.code(),
            Self::Merge { .. } => "merge_error",
        }
    }

    /// The innermost segment index for fan-out failures.
    pub fn failed_segment(&self) -> Option<usize> {
        match self {
            Self::FanOut { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub run_id: String,
    pub thread_id: String,
    pub workflow_id: String,
    pub status: RunStatus,
    /// Results of the steps that completed, kept on failure too.
    pub step_results: BTreeMap<String, Value>,
    pub emitted_events: u64,
    pub output: Option<Value>,
    pub error: Option<RunError>,
}

impl RunState {
    pub fn start(workflow_id: &str, thread_id: &str) -> Self {
        Self {
            run_id: Uuid::new_v4().to_string(),
            thread_id: thread_id.to_owned(),
            workflow_id: workflow_id.to_owned(),
            status: RunStatus::Running,
            step_results: BTreeMap::new(),
            emitted_events: 0,
            output: None,
            error: None,
        }
    }

    /// Moves a running state to its final status.
    pub fn finish(&mut self, outcome: Result<Value, RunError>, emitted: u64) {
        debug_assert_eq!(self.status, RunStatus::Running);
        self.emitted_events = emitted;
        match outcome {
            Ok(v) => {
                self.status = RunStatus::Succeeded;
                self.output = Some(v);
            }
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(e);
            }
        }
    }

    pub fn fail(mut self, err: RunError) -> Self {
        self.finish(Err(err), self.emitted_events);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces every fan_out step's `max_parallel`.
    pub pool_width: Option<usize>,
    /// Replaces every llm_call step's model selector.
    pub model: Option<String>,
    pub thread_id: String,
}

/// Counts what passes through to the wrapped sink.
pub(crate) struct Counting<'a> {
    inner: &'a dyn EventSink,
    n: AtomicU64,
}

impl<'a> Counting<'a> {
    pub(crate) fn new(inner: &'a dyn EventSink) -> Self {
        Self { inner, n: AtomicU64::new(0) }
    }

    pub(crate) fn count(&self) -> u64 {
        self.n.load(Ordering::SeqCst)
    }
}

impl EventSink for Counting<'_> {
    fn emit(&self, payload: EventPayload) {
        self.n.fetch_add(1, Ordering::SeqCst);
        self.inner.emit(payload);
    }
}

pub struct Runtime {
    templates: BTreeMap<String, PromptTemplate>,
    workflows: BTreeMap<String, WorkflowSpec>,
    tools: Arc<ToolRegistry>,
    providers: BTreeMap<String, Arc<dyn Provider>>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("workflows", &self.workflows.keys().collect::<Vec<_>>())
            .field("models", &self.providers.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// What a step's output is statically known to look like.
type Shape = Option<Schema>;

impl Runtime {
    /// Validates every template and workflow. `tools` carries the schema
    /// registry the whole runtime checks against.
    pub fn new(
        templates: BTreeMap<String, PromptTemplate>,
        workflows: BTreeMap<String, WorkflowSpec>,
        tools: Arc<ToolRegistry>,
        providers: BTreeMap<String, Arc<dyn Provider>>,
    ) -> Result<Self, WorkflowError> {
        let rt = Self { templates, workflows, tools, providers };
        for t in rt.templates.values() {
            let err = |reason: String| WorkflowError { workflow: format!("template {}", t.template_id), step: None, reason };
            t.check().map_err(|e| err(e.to_string()))?;
            if let Some(s) = &t.output_schema {
                rt.schemas().get(s).map_err(|e| err(e.to_string()))?;
            }
        }
        for spec in rt.workflows.values() {
            rt.validate(spec)?;
        }
        Ok(rt)
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        self.tools.schemas()
    }

    pub fn tools(&self) -> &Arc<ToolRegistry> {
        &self.tools
    }

    pub fn workflow(&self, id: &str) -> Option<&WorkflowSpec> {
        self.workflows.get(id)
    }

    pub fn template(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.get(id)
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    /// Static validation of `spec` against this runtime's catalog.
    pub fn validate(&self, spec: &WorkflowSpec) -> Result<(), WorkflowError> {
        self.validate_in(spec, &mut vec![spec.workflow_id.clone()])
    }

    fn validate_in(&self, spec: &WorkflowSpec, stack: &mut Vec<String>) -> Result<(), WorkflowError> {
        spec.check_structure()?;
        let err = |step: Option<&str>, reason: String| WorkflowError {
            workflow: spec.workflow_id.clone(),
            step: step.map(str::to_owned),
            reason,
        };
        let mut inputs: BTreeMap<&str, Shape> = spec.inputs.iter().map(|n| (n.as_str(), None)).collect();
        for (name, schema) in &spec.input_schemas {
            let s = self.schemas().get(schema).map_err(|e| err(None, e.to_string()))?;
            inputs.insert(name, Some(s.clone()));
        }
        let mut shapes: BTreeMap<&str, Shape> = BTreeMap::new();
        for step in &spec.steps {
            let id = step.step_id.as_str();
            let fail = |reason: String| err(Some(id), reason);
            for b in step.bindings() {
                for r in references(b).map_err(fail)? {
                    reference_shape(&r, &inputs, &shapes).map_err(fail)?;
                }
            }
            let shape = match &step.kind {
                StepKind::LlmCall { template, model, vars } => {
                    let tpl = self.templates.get(template).ok_or_else(|| fail(format!("unknown template `{template}`")))?;
                    if let Some(v) = tpl.required_variables.iter().find(|v| !vars.contains_key(*v)) {
                        return Err(fail(format!("template `{template}` needs variable `{v}`")));
                    }
                    if !self.providers.contains_key(model) {
                        return Err(fail(format!("unknown model `{model}`")));
                    }
                    match &tpl.output_schema {
                        Some(s) => Some(self.schemas().get(s).map_err(|e| fail(e.to_string()))?.clone()),
                        None => Some(Schema::of_type(SchemaType::String)),
                    }
                }
                StepKind::ToolCall { tool, .. } => {
                    let d = self.tools.descriptor(tool).ok_or_else(|| fail(format!("unknown tool `{tool}`")))?;
                    Some(self.schemas().get(&d.output_schema).map_err(|e| fail(e.to_string()))?.clone())
                }
                StepKind::Validate { schema, .. } => {
                    Some(self.schemas().get(schema).map_err(|e| fail(e.to_string()))?.clone())
                }
                StepKind::FanOut { segments, workflow, item_input, with, .. } => {
                    let sub = self.workflows.get(workflow).ok_or_else(|| fail(format!("unknown workflow `{workflow}`")))?;
                    if stack.contains(workflow) {
                        return Err(fail(format!("workflow `{workflow}` fans out into itself")));
                    }
                    if !sub.inputs.contains(item_input) {
                        return Err(fail(format!("`{workflow}` has no input `{item_input}`")));
                    }
                    if let Some(k) = with.keys().find(|k| !sub.inputs.contains(k) || *k == item_input) {
                        return Err(fail(format!("`with` binds `{k}`, which `{workflow}` does not take")));
                    }
                    if let Some(missing) = sub.inputs.iter().find(|n| *n != item_input && !with.contains_key(*n)) {
                        return Err(fail(format!("input `{missing}` of `{workflow}` is not bound")));
                    }
                    let is_array = match (lone_reference(segments), segments) {
                        (Some(r), _) => reference_shape(&r, &inputs, &shapes)
                            .map_err(fail)?
                            .is_none_or(|s| s.ty.is_none_or(|t| t == SchemaType::Array)),
                        (None, Value::Array(_)) => true,
                        _ => false,
                    };
                    if !is_array {
                        return Err(fail("segments binding does not produce an array".into()));
                    }
                    stack.push(workflow.clone());
                    self.validate_in(sub, stack)?;
                    stack.pop();
                    Some(Schema::of_type(SchemaType::Array))
                }
                StepKind::Merge { reducer: Reducer::ConcatOrdered, .. } => Some(Schema::of_type(SchemaType::String)),
                StepKind::Merge { reducer: Reducer::ReviewMerge, .. } => self.schemas().get("review_report").ok().cloned(),
            };
            shapes.insert(id, shape);
        }
        Ok(())
    }

    /// Runs a registered workflow. Events go to `sink`; no terminal event is
    /// emitted, so the caller can append its own.
    pub fn execute_workflow(
        &self,
        workflow_id: &str,
        inputs: BTreeMap<String, Value>,
        sink: &dyn EventSink,
        opts: &RunOptions,
    ) -> RunState {
        let mut state = RunState::start(workflow_id, &opts.thread_id);
        let Some(spec) = self.workflows.get(workflow_id) else {
            return state.fail(RunError::UnknownWorkflow(workflow_id.into()));
        };
        let counter = Counting::new(sink);
        let outcome = self.run_spec(spec, &inputs, &counter, opts, &mut state.step_results);
        state.finish(outcome, counter.count());
        state
    }

    /// Renders `template_id`, calls the provider and checks the answer
    /// against the template's output schema, retrying up to `max_attempts`.
    pub fn run_prompt_agent(
        &self,
        template_id: &str,
        vars: BTreeMap<String, Value>,
        sink: &dyn EventSink,
        model: &str,
        max_attempts: u32,
    ) -> Result<Value, RunError> {
        self.call_template(template_id, template_id, model, vars, max_attempts, sink)
    }

    fn run_spec(
        &self,
        spec: &WorkflowSpec,
        inputs: &BTreeMap<String, Value>,
        sink: &dyn EventSink,
        opts: &RunOptions,
        results: &mut BTreeMap<String, Value>,
    ) -> Result<Value, RunError> {
        for name in &spec.inputs {
            let value = inputs.get(name).ok_or_else(|| RunError::Input { name: name.clone(), reason: "missing".into() })?;
            if let Some(schema) = spec.input_schemas.get(name) {
                self.schemas().validate_output(schema, value)?.map_err(|v| RunError::Input {
                    name: name.clone(),
                    reason: list(&v),
                })?;
            }
        }
        for step in &spec.steps {
            let out = self.run_step(step, inputs, results, sink, opts)?;
            results.insert(step.step_id.clone(), out);
        }
        Ok(results[&spec.output].clone())
    }

    fn run_step(
        &self,
        step: &crate::workflow::WorkflowStep,
        inputs: &BTreeMap<String, Value>,
        results: &BTreeMap<String, Value>,
        sink: &dyn EventSink,
        opts: &RunOptions,
    ) -> Result<Value, RunError> {
        let id = step.step_id.as_str();
        let scope = Scope { inputs, steps: results };
        let bind = |v: &Value| scope.resolve(v).map_err(|reason| RunError::Render { step: id.into(), reason });
        match &step.kind {
            StepKind::LlmCall { template, model, vars } => {
                let vars = vars.iter().map(|(k, v)| Ok((k.clone(), bind(v)?))).collect::<Result<_, RunError>>()?;
                let model = opts.model.as_deref().unwrap_or(model);
                self.call_template(id, template, model, vars, step.max_attempts(), sink)
            }
            StepKind::ToolCall { tool, arguments } => self.call_tool(id, tool, bind(arguments)?, step.max_attempts(), sink),
            StepKind::Validate { schema, target } => {
                let value = bind(target)?;
                self.schemas().validate_output(schema, &value)?.map_err(|violations| RunError::Validation {
                    step: id.into(),
                    attempts: 1,
                    violations,
                })?;
                Ok(value)
            }
            StepKind::FanOut { segments, workflow, max_parallel, item_input, with } => {
                let items = match bind(segments)? {
                    Value::Array(items) => items,
                    other => {
                        return Err(RunError::Render { step: id.into(), reason: format!("segments resolved to {other}") })
                    }
                };
                let shared = with.iter().map(|(k, v)| Ok((k.clone(), bind(v)?))).collect::<Result<_, RunError>>()?;
                let sub = self.workflows.get(workflow).ok_or_else(|| RunError::UnknownWorkflow(workflow.clone()))?;
                let width = opts.pool_width.unwrap_or(*max_parallel).max(1);
                let job = FanOutJob { step: id, sub, item_input, shared, width };
                self.fan_out(&job, items, sink, opts).map(Value::Array)
            }
            StepKind::Merge { from, reducer } => {
                let items = results.get(from).and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
                merge_results(*reducer, items, self.schemas()).map_err(|reason| RunError::Merge { step: id.into(), reason })
            }
        }
    }

    fn call_template(
        &self,
        step: &str,
        template_id: &str,
        model: &str,
        vars: BTreeMap<String, Value>,
        max_attempts: u32,
        sink: &dyn EventSink,
    ) -> Result<Value, RunError> {
        let tpl = self.templates.get(template_id).ok_or_else(|| RunError::UnknownTemplate(template_id.into()))?;
        let prompt = tpl.render(&vars).map_err(|e| RunError::Render { step: step.into(), reason: e.to_string() })?;
        let provider = self.providers.get(model).ok_or_else(|| RunError::UnknownModel(model.into()))?;
        let schema = tpl.output_schema.as_deref().map(|s| self.schemas().get(s).cloned()).transpose()?;
        let req = ProviderRequest {
            model: model.into(),
            template_id: template_id.into(),
            prompt,
            variables: vars,
            output_schema: schema,
        };
        let attempts = max_attempts.max(1);
        let mut last = Vec::new();
        for _ in 0..attempts {
            let out = provider
                .complete(&req, &mut |d| sink.emit(EventPayload::Delta { text: d.into() }))
                .map_err(|e| RunError::Provider { step: step.into(), message: e.0 })?;
            match &req.output_schema {
                None => return Ok(out),
                Some(s) => match s.validate(&out) {
                    Ok(()) => return Ok(out),
                    Err(v) => last = v,
                },
            }
        }
        Err(RunError::Validation { step: step.into(), attempts, violations: last })
    }

    fn call_tool(&self, step: &str, tool: &str, args: Value, max_attempts: u32, sink: &dyn EventSink) -> Result<Value, RunError> {
        let attempts = max_attempts.max(1);
        for attempt in 1..=attempts {
            sink.emit(EventPayload::ToolCall { tool: tool.into(), arguments: args.clone() });
            match self.tools.invoke(tool, &args) {
                Ok(result) => {
                    sink.emit(EventPayload::ToolResult { tool: tool.into(), result: result.clone() });
                    return Ok(result);
                }
                Err(ToolError::OutputViolation(_)) if attempt < attempts => {}
                Err(source) => return Err(RunError::Tool { step: step.into(), source }),
            }
        }
        unreachable!("the last attempt always returns")
    }

    /// Workers pull indices in increasing order, so when the lowest failing
    /// index is `f` every index below `f` has finished. Buffered events of
    /// sub-runs `0..=f` are released in index order.
    fn fan_out(&self, job: &FanOutJob<'_>, items: Vec<Value>, sink: &dyn EventSink, opts: &RunOptions) -> Result<Vec<Value>, RunError> {
        let n = items.len();
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<(Result<Value, RunError>, Buffer)>>> = (0..n).map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..job.width.min(n) {
                s.spawn(|| loop {
                    if failed.load(Ordering::Acquire) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::AcqRel);
                    if i >= n {
                        break;
                    }
                    let mut inputs = job.shared.clone();
                    inputs.insert(job.item_input.to_owned(), items[i].clone());
                    let buf = Buffer::default();
                    let mut results = BTreeMap::new();
                    let r = self.run_spec(job.sub, &inputs, &buf, opts, &mut results);
                    if r.is_err() {
                        failed.store(true, Ordering::Release);
                    }
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some((r, buf));
                });
            }
        });
        let mut out = Vec::with_capacity(n);
        for (index, slot) in slots.into_iter().enumerate() {
            let Some((r, buf)) = slot.into_inner().unwrap_or_else(|e| e.into_inner()) else {
                unreachable!("an unstarted index always follows a failed one");
            };
            buf.drain_into(sink);
            match r {
                Ok(v) => out.push(v),
                Err(e) => return Err(RunError::FanOut { step: job.step.into(), index, source: Box::new(e) }),
            }
        }
        Ok(out)
    }
}

struct FanOutJob<'a> {
    step: &'a str,
    sub: &'a WorkflowSpec,
    item_input: &'a str,
    shared: BTreeMap<String, Value>,
    width: usize,
}

/// Statically resolves a reference: `Ok(Some)` when a schema guarantees the
/// path, `Ok(None)` for an unschema'd whole value.
fn reference_shape(r: &Reference, inputs: &BTreeMap<&str, Shape>, steps: &BTreeMap<&str, Shape>) -> Result<Shape, String> {
    let (shape, name) = match &r.source {
        Source::Input(n) => (inputs.get(n.as_str()), format!("inputs.{n}")),
        Source::Step(s) => (steps.get(s.as_str()), format!("steps.{s}.output")),
    };
    let shape = shape.ok_or_else(|| format!("`{name}` is not available"))?;
    if r.path.is_empty() {
        return Ok(shape.clone());
    }
    let path: Vec<&str> = r.path.iter().map(String::as_str).collect();
    match shape {
        Some(s) => s
            .required_path(&path)
            .cloned()
            .map(Some)
            .ok_or_else(|| format!("`{name}.{}` is not guaranteed by the schema", r.path.join("."))),
        None => Err(format!("`{name}` has no schema, so `{name}.{}` cannot be checked", r.path.join("."))),
    }
}

/// Combines fan-out results, which arrive in segment order.
pub fn merge_results(reducer: Reducer, items: &[Value], schemas: &SchemaRegistry) -> Result<Value, String> {
    match reducer {
        Reducer::ConcatOrdered => {
            let mut texts = Vec::with_capacity(items.len());
            for (i, it) in items.iter().enumerate() {
                texts.push(it.as_str().ok_or_else(|| format!("concat_ordered needs text results; item {i} is {it}"))?);
            }
            Ok(Value::String(texts.join("\n\n")))
        }
        Reducer::ReviewMerge => {
            let segment_schema = schemas.get("segment_review").ok();
            let mut summaries = Vec::new();
            let mut top_issues = Vec::new();
            for (i, it) in items.iter().enumerate() {
                if let Some(s) = segment_schema {
                    s.validate(it).map_err(|v| format!("item {i} is not a segment critique: {}", list(&v)))?;
                } else if !it.is_object() {
                    return Err(format!("item {i} is not a segment critique"));
                }
                if let Some(summary) = it.get("summary").and_then(Value::as_str) {
                    summaries.push(summary);
                }
                if it.get("severity").and_then(Value::as_str) == Some("major") {
                    let ws = it.get("weaknesses").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
                    top_issues.extend(ws.iter().cloned());
                }
            }
            Ok(json!({
                "per_segment": items,
                "overall": {"summary": summaries.join("\n\n"), "top_issues": top_issues}
            }))
        }
    }
}
