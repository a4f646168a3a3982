//! The Reviewer, Enhancer, Scoring and Researcher agents, plus the paper
//! comparison and research-map functions built on the same runtime.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use margin_core::latex::Granularity;
use margin_core::patch::{render_preview, ApplyOptions, PatchSet, Preview};
use margin_core::store::{DocumentVersion, Span};
use margin_core::stream::EventPayload;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::catalog::Catalog;
use crate::events::EventSink;
use crate::provider::Provider;
use crate::retrieval::{Aspect, AspectComparison, ComparisonReport};
use crate::retrieval::{cluster_hits, Cluster, ResearchMap};
use crate::retrieval::{CorpusEntry, CorpusIndex, RankedHit, RetrievalConfig};
use crate::runtime::{Counting, RunError, RunOptions, RunState, Runtime};
use crate::tools::{ToolError, ToolRegistry};
use crate::toolset::{register_builtin_tools, DEFAULT_K};
use crate::workflow::{WorkflowError, DEFAULT_MAX_ATTEMPTS};

pub const DEFAULT_MODEL: &str = "default";
pub const DEFAULT_INSTRUCTION: &str = "Improve clarity and correct errors.";
/// Words of the seed title used as a cluster's fallback label.
const LABEL_WORDS: usize = 6;

#[derive(Debug, Error)]
pub enum InitError {
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

impl Runtime {
    /// A runtime over `catalog` with the built-in tools registered.
    pub fn standard(
        catalog: Catalog,
        corpus: Arc<CorpusIndex>,
        retrieval: RetrievalConfig,
        providers: BTreeMap<String, Arc<dyn Provider>>,
    ) -> Result<Self, InitError> {
        let tools = ToolRegistry::new(Arc::new(catalog.schemas));
        register_builtin_tools(&tools, corpus, retrieval)?;
        Ok(Runtime::new(catalog.templates, catalog.workflows, Arc::new(tools), providers)?)
    }

    /// The built-in catalog with one provider serving the `default` model.
    pub fn with_provider(provider: Arc<dyn Provider>, corpus: Arc<CorpusIndex>) -> Result<Self, InitError> {
        let catalog = Catalog::builtin().map_err(|e| WorkflowError {
            workflow: "(builtin)".into(),
            step: None,
            reason: e.to_string(),
        })?;
        let providers = BTreeMap::from([(DEFAULT_MODEL.to_string(), provider)]);
        Self::standard(catalog, corpus, RetrievalConfig::default(), providers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Reviewer,
    Enhancer,
    Scoring,
    Researcher,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [Self::Reviewer, Self::Enhancer, Self::Scoring, Self::Researcher];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reviewer => "reviewer",
            Self::Enhancer => "enhancer",
            Self::Scoring => "scoring",
            Self::Researcher => "researcher",
        }
    }

    pub fn workflow_id(self) -> &'static str {
        self.as_str()
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown agent `{s}`"))
    }
}

/// Bindings a built-in agent reads. The span, when given, must be anchored
/// to `document`'s version.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub document: Option<DocumentVersion>,
    pub span: Option<Span>,
    pub instruction: String,
    pub query: Option<String>,
    pub k: usize,
    pub granularity: Granularity,
}

impl Default for AgentContext {
    fn default() -> Self {
        Self { document: None, span: None, instruction: String::new(), query: None, k: DEFAULT_K, granularity: Granularity::Section }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentOutput {
    Review(Value),
    Patch { patch: PatchSet, previews: Vec<Preview> },
    Score(Value),
    Research(Value),
}

impl AgentOutput {
    /// The product event announcing this output on the stream.
    pub fn event(&self) -> EventPayload {
        match self {
            Self::Review(v) => EventPayload::Review(v.clone()),
            Self::Patch { patch, previews } => EventPayload::Patch {
                patch_id: patch.patch_id.clone(),
                patch: patch.to_text(),
                previews: previews.clone(),
            },
            Self::Score(v) => EventPayload::Score(v.clone()),
            Self::Research(v) => EventPayload::ToolResult { tool: AgentKind::Researcher.as_str().into(), result: v.clone() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentRun {
    pub state: RunState,
    pub outcome: Result<AgentOutput, RunError>,
}

fn input_error(name: &str, reason: &str) -> RunError {
    RunError::Input { name: name.into(), reason: reason.into() }
}

/// Workflow inputs for `kind`, checked against the agent's preconditions.
fn agent_inputs(kind: AgentKind, ctx: &AgentContext) -> Result<BTreeMap<String, Value>, RunError> {
    let doc = || ctx.document.as_ref().ok_or_else(|| input_error("document", "this agent needs a document"));
    let mut inputs = BTreeMap::new();
    match kind {
        AgentKind::Reviewer => {
            inputs.insert("document".into(), json!(doc()?.content));
            inputs.insert("granularity".into(), json!(ctx.granularity));
        }
        AgentKind::Enhancer => {
            let d = doc()?;
            let span = ctx.span.as_ref().ok_or_else(|| input_error("span", "the enhancer needs a selected span"))?;
            if span.document_id != d.document_id || span.version_id != d.version_id {
                return Err(input_error("span", "span is not anchored to the given document version"));
            }
            let instruction = if ctx.instruction.trim().is_empty() { DEFAULT_INSTRUCTION } else { ctx.instruction.as_str() };
            inputs.insert("document".into(), json!(d.content));
            inputs.insert("start".into(), json!(span.start));
            inputs.insert("end".into(), json!(span.end));
            inputs.insert("text".into(), json!(span.quoted_text));
            inputs.insert("instruction".into(), json!(instruction));
        }
        AgentKind::Scoring => {
            let text = match (&ctx.span, &ctx.document) {
                (Some(s), _) => s.quoted_text.clone(),
                (None, Some(d)) => d.content.clone(),
                (None, None) => return Err(input_error("text", "scoring needs a span or a document")),
            };
            inputs.insert("text".into(), json!(text));
        }
        AgentKind::Researcher => {
            let query = ctx
                .query
                .clone()
                .or_else(|| ctx.span.as_ref().map(|s| s.quoted_text.clone()))
                .filter(|q| !q.trim().is_empty())
                .ok_or_else(|| input_error("query", "the researcher needs query text"))?;
            inputs.insert("query".into(), json!(query));
            inputs.insert("k".into(), json!(ctx.k.max(1)));
        }
    }
    Ok(inputs)
}

impl Runtime {
    /// Runs a built-in agent. Emits the run's deltas and tool events but not
    /// the product event, so the caller can persist the output first.
    pub fn run_builtin(&self, kind: AgentKind, ctx: &AgentContext, sink: &dyn EventSink, opts: &RunOptions) -> AgentRun {
        let inputs = match agent_inputs(kind, ctx) {
            Ok(i) => i,
            Err(e) => {
                let state = RunState::start(kind.workflow_id(), &opts.thread_id).fail(e.clone());
                return AgentRun { state, outcome: Err(e) };
            }
        };
        let state = self.execute_workflow(kind.workflow_id(), inputs, sink, opts);
        let outcome = match (&state.output, &state.error) {
            (_, Some(e)) => Err(e.clone()),
            (Some(out), None) => finish_output(kind, ctx, &state, out.clone()),
            (None, None) => unreachable!("a finished run has an output or an error"),
        };
        AgentRun { state, outcome }
    }

    /// `run_builtin` followed by the product event and the terminal event.
    pub fn run_agent(&self, kind: AgentKind, ctx: &AgentContext, sink: &dyn EventSink, opts: &RunOptions) -> AgentRun {
        let run = self.run_builtin(kind, ctx, sink, opts);
        match &run.outcome {
            Ok(out) => {
                sink.emit(out.event());
                sink.emit(EventPayload::Done);
            }
            Err(e) => sink.emit(EventPayload::error(e.code(), e.to_string())),
        }
        run
    }

    /// One comparison per aspect, assembled in fixed aspect order.
    pub fn compare_works(
        &self,
        mine: &str,
        theirs: &CorpusEntry,
        sink: &dyn EventSink,
        opts: &RunOptions,
    ) -> Result<ComparisonReport, RunError> {
        if mine.trim().is_empty() {
            return Err(input_error("mine", "the author's text is empty"));
        }
        let theirs_text = format!("{}\n{}", theirs.title, theirs.abstract_text);
        let inputs = BTreeMap::from([("mine".to_string(), json!(mine)), ("theirs".to_string(), json!(theirs_text))]);
        let state = self.execute_workflow("compare_works", inputs, sink, opts);
        if let Some(e) = state.error {
            return Err(e);
        }
        let out = state.output.unwrap_or_default();
        let mut aspects = BTreeMap::new();
        for a in Aspect::ALL {
            let c: AspectComparison = serde_json::from_value(out[a.key()].clone())
                .map_err(|e| RunError::Merge { step: "report".into(), reason: e.to_string() })?;
            aspects.insert(a, c);
        }
        ComparisonReport::new(aspects)
            .map_err(|a| RunError::Merge { step: "report".into(), reason: format!("aspect `{}` missing", a.key()) })
    }

    /// Clusters `hits` and asks the model for cluster labels and takeaways.
    pub fn build_research_map(
        &self,
        index: &CorpusIndex,
        hits: &[RankedHit],
        threshold: f64,
        sink: &dyn EventSink,
        opts: &RunOptions,
    ) -> Result<ResearchMap, RunError> {
        if hits.is_empty() {
            return Err(input_error("hits", "a research map needs at least one hit"));
        }
        let model = opts.model.as_deref().unwrap_or(DEFAULT_MODEL);
        let counter = Counting::new(sink);
        let mut clusters = Vec::new();
        for ids in cluster_hits(index, hits, threshold) {
            let titles: Vec<&str> = ids.iter().filter_map(|id| index.entry(id)).map(|e| e.title.as_str()).collect();
            let seed: Vec<&str> = titles.first().copied().unwrap_or_default().split_whitespace().take(LABEL_WORDS).collect();
            let vars = BTreeMap::from([("text".to_string(), json!(seed.join(" "))), ("titles".to_string(), json!(titles))]);
            let out = self.run_prompt_agent("cluster_label", vars, &counter, model, DEFAULT_MAX_ATTEMPTS)?;
            let label = out["label"].as_str().unwrap_or_default().to_owned();
            clusters.push(Cluster { label, entry_ids: ids });
        }
        let labels: Vec<&str> = clusters.iter().map(|c| c.label.as_str()).collect();
        let vars = BTreeMap::from([("text".to_string(), json!(labels.join("; "))), ("labels".to_string(), json!(labels))]);
        let out = self.run_prompt_agent("research_takeaways", vars, &counter, model, DEFAULT_MAX_ATTEMPTS)?;
        let takeaways = out["takeaways"].as_array().into_iter().flatten().filter_map(Value::as_str).map(str::to_owned).collect();
        Ok(ResearchMap { clusters, takeaways })
    }
}

fn finish_output(kind: AgentKind, ctx: &AgentContext, state: &RunState, out: Value) -> Result<AgentOutput, RunError> {
    match kind {
        AgentKind::Reviewer => Ok(AgentOutput::Review(out)),
        AgentKind::Scoring => Ok(AgentOutput::Score(out)),
        AgentKind::Enhancer => {
            let doc = ctx.document.as_ref().ok_or_else(|| input_error("document", "missing"))?;
            let fail = |reason: String| RunError::Render { step: "patch".into(), reason };
            let text = out["patch"].as_str().ok_or_else(|| fail("draft_patch returned no patch text".into()))?;
            let rationale = state.step_results.get("checked").and_then(|c| c["rationale"].as_str()).unwrap_or_default();
            let patch = PatchSet::parse(text)
                .map_err(|e| fail(e.to_string()))?
                .bind(Uuid::new_v4().to_string(), doc.document_id.clone(), doc.version_id)
                .with_rationale(rationale);
            let previews = render_preview(&patch, &doc.content, &ApplyOptions::default())
                .map_err(|hunks| fail(format!("hunks {hunks:?} do not match the base version")))?;
            Ok(AgentOutput::Patch { patch, previews })
        }
        AgentKind::Researcher => {
            let mut hits = out["hits"].as_array().cloned().unwrap_or_default();
            let notes = out["notes"].as_array().cloned().unwrap_or_default();
            for (hit, note) in hits.iter_mut().zip(&notes) {
                if let Some(n) = note.as_str().filter(|n| !n.trim().is_empty()) {
                    hit["relevance_note"] = json!(n);
                }
            }
            Ok(AgentOutput::Research(json!({"query": out["query"], "hits": hits})))
        }
    }
}
