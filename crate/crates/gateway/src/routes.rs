//! HTTP routes. Every route except `POST /v1/auth` needs a bearer token, and
//! every project-scoped route checks that the caller owns the project.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use margin_agents::{AgentContext, AgentKind, AgentOutput, EventSink, RunOptions, StreamWriter};
use margin_core::patch::{apply_patch, ApplyReport};
use margin_core::store::{MessageRecord, ProjectRecord, Role, ThreadRecord};
use margin_core::stream::{encode_event, EventPayload, StreamEvent, CONTENT_TYPE};
use margin_core::{DocumentVersion, Granularity, Origin, Span};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::app::Gateway;
use crate::auth::{AuthError, Session, SessionToken};
use crate::error::ApiError;
use crate::telemetry::{EventType, TelemetryEvent, UsageSummary};

type AppState = Arc<Gateway>;
type ApiResult<T> = Result<T, ApiError>;

const STREAM_BUFFER: usize = 64;

pub fn router(gateway: AppState) -> Router {
    Router::new()
        .route("/v1/auth", post(authenticate))
        .route("/v1/projects", post(create_project).get(list_projects))
        .route("/v1/projects/{id}", get(get_project))
        .route("/v1/projects/{id}/documents", put(put_document))
        .route("/v1/documents/{id}", get(get_document))
        .route("/v1/threads", post(create_thread))
        .route("/v1/threads/{id}", get(get_thread))
        .route("/v1/threads/{id}/messages", post(submit_message))
        .route("/v1/patches/{id}", get(get_patch))
        .route("/v1/patches/{id}/apply", post(apply_patch_endpoint))
        .route("/v1/tools", get(list_tools))
        .route("/v1/tools/{name}", post(invoke_tool))
        .route("/v1/telemetry", post(record_event))
        .route("/v1/admin/usage", get(usage))
        .with_state(gateway)
}

/// The authenticated caller.
pub struct Caller(pub Session);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, gw: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(AuthError::Missing)?;
        Ok(Caller(gw.sessions.check(token)?))
    }
}

impl Gateway {
    /// Server-observed telemetry never fails the request that caused it.
    fn observe(&self, caller: &Session, event_type: EventType) {
        if let Err(e) = self.telemetry.record_at(event_type, &caller.user_id, &caller.session_id, self.now()) {
            tracing::warn!(error = %e, "telemetry event dropped");
        }
    }

    fn owned_project(&self, caller: &Session, project_id: &str) -> ApiResult<ProjectRecord> {
        let p = self.store.project(project_id)?;
        if p.owner != caller.user_id {
            return Err(ApiError::forbidden());
        }
        Ok(p)
    }

    fn owned_document(&self, caller: &Session, document_id: &str) -> ApiResult<DocumentVersion> {
        let rec = self.store.document(document_id)?;
        self.owned_project(caller, &rec.project_id)?;
        Ok(self.store.head(document_id)?)
    }

    fn owned_thread(&self, caller: &Session, thread_id: &str) -> ApiResult<ThreadRecord> {
        let t = self.store.thread(thread_id)?;
        self.owned_project(caller, &t.project_id)?;
        Ok(t)
    }
}

#[derive(Deserialize)]
struct Credentials {
    username: String,
    password: String,
}

async fn authenticate(State(gw): State<AppState>, Json(c): Json<Credentials>) -> ApiResult<Json<SessionToken>> {
    let who = gw.auth.authenticate(&c.username, &c.password).ok_or(AuthError::BadCredentials)?;
    let token = gw.sessions.issue(&who);
    let session = Session { user_id: token.user_id.clone(), admin: who.admin, session_id: token.session_id.clone() };
    gw.observe(&session, EventType::SessionActive);
    Ok(Json(token))
}

#[derive(Deserialize)]
struct NewProject {
    name: String,
}

async fn create_project(
    State(gw): State<AppState>,
    Caller(caller): Caller,
    Json(body): Json<NewProject>,
) -> ApiResult<(StatusCode, Json<ProjectRecord>)> {
    let p = gw.store.create_project(&body.name, &caller.user_id)?;
    gw.observe(&caller, EventType::ProjectCreated);
    Ok((StatusCode::CREATED, Json(p)))
}

async fn list_projects(State(gw): State<AppState>, Caller(caller): Caller) -> Json<Vec<ProjectRecord>> {
    Json(gw.store.list_projects().into_iter().filter(|p| p.owner == caller.user_id).collect())
}

async fn get_project(State(gw): State<AppState>, Caller(caller): Caller, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = gw.owned_project(&caller, &id)?;
    let documents = gw.store.list_documents(&id)?;
    let threads = gw.store.list_threads(&id)?;
    let thread_ids: Vec<&str> = threads.iter().map(|t| t.thread_id.as_str()).collect();
    Ok(Json(json!({ "project": p, "documents": documents, "thread_ids": thread_ids })))
}

#[derive(Deserialize)]
struct PutDocument {
    path: String,
    content: String,
}

async fn put_document(
    State(gw): State<AppState>,
    Caller(caller): Caller,
    Path(id): Path<String>,
    Json(body): Json<PutDocument>,
) -> ApiResult<Json<DocumentVersion>> {
    gw.owned_project(&caller, &id)?;
    Ok(Json(gw.store.put_document(&id, &body.path, &body.content)?))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

async fn get_document(
    State(gw): State<AppState>,
    Caller(caller): Caller,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Json<DocumentVersion>> {
    let head = gw.owned_document(&caller, &id)?;
    match q.version {
        Some(v) => Ok(Json(gw.store.get_version(&id, v)?)),
        None => Ok(Json(head)),
    }
}

#[derive(Deserialize)]
struct NewThread {
    project_id: String,
}

async fn create_thread(
    State(gw): State<AppState>,
    Caller(caller): Caller,
    Json(body): Json<NewThread>,
) -> ApiResult<(StatusCode, Json<ThreadRecord>)> {
    gw.owned_project(&caller, &body.project_id)?;
    let t = gw.store.create_thread(&body.project_id)?;
    gw.observe(&caller, EventType::ThreadCreated);
    Ok((StatusCode::CREATED, Json(t)))
}

async fn get_thread(State(gw): State<AppState>, Caller(caller): Caller, Path(id): Path<String>) -> ApiResult<Json<ThreadRecord>> {
    Ok(Json(gw.owned_thread(&caller, &id)?))
}

/// A selection. With `quoted_text` it is a previously captured span that is
/// relocated to the head version; without, the range is captured from
/// `version_id` (head by default) and then relocated.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRequest {
    pub document_id: String,
    #[serde(default)]
    pub version_id: Option<u64>,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub quoted_text: Option<String>,
    #[serde(default)]
    pub context_before: Option<String>,
    #[serde(default)]
    pub context_after: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub agent: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub document_id: Option<String>,
    #[serde(default)]
    pub span: Option<SpanRequest>,
    #[serde(default)]
    pub query: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub granularity: Option<Granularity>,
    #[serde(default)]
    pub model: Option<String>,
}

fn locate_span(gw: &Gateway, req: &SpanRequest, head: &DocumentVersion) -> ApiResult<Span> {
    let captured = match &req.quoted_text {
        Some(quoted) => Span {
            document_id: req.document_id.clone(),
            version_id: req.version_id.ok_or_else(|| ApiError::validation("a captured span needs `version_id`"))?,
            start: req.start,
            end: req.end,
            quoted_text: quoted.clone(),
            context_before: req.context_before.clone().unwrap_or_default(),
            context_after: req.context_after.clone().unwrap_or_default(),
        },
        None => {
            let base = match req.version_id {
                Some(v) => gw.store.get_version(&req.document_id, v)?,
                None => head.clone(),
            };
            Span::capture(&base, req.start, req.end)?
        }
    };
    Ok(gw.store.resolve_span(&captured, head)?)
}

/// Checks everything that can be checked before the stream opens.
fn prepare_run(gw: &Gateway, caller: &Session, thread: &ThreadRecord, req: &MessageRequest) -> ApiResult<(AgentKind, AgentContext, RunOptions)> {
    let kind: AgentKind = req.agent.parse().map_err(ApiError::validation)?;
    let model = match &req.model {
        Some(m) if !gw.runtime.models().any(|known| known == m) => {
            return Err(ApiError::validation(format!("unknown model `{m}`")));
        }
        Some(m) => Some(m.clone()),
        None => gw.config.models.get(kind.as_str()).cloned(),
    };
    let document_id = req.document_id.as_ref().or(req.span.as_ref().map(|s| &s.document_id));
    if let (Some(a), Some(s)) = (&req.document_id, &req.span) {
        if *a != s.document_id {
            return Err(ApiError::validation("span and document_id name different documents"));
        }
    }
    let document = match document_id {
        Some(id) => {
            let head = gw.owned_document(caller, id)?;
            if gw.store.document(id)?.project_id != thread.project_id {
                return Err(ApiError::validation("document is not part of this thread's project"));
            }
            Some(head)
        }
        None => None,
    };
    let span = match (&req.span, &document) {
        (Some(s), Some(head)) => Some(locate_span(gw, s, head)?),
        _ => None,
    };
    let ctx = AgentContext {
        document,
        span,
        instruction: req.body.clone(),
        query: req.query.clone(),
        k: req.k.unwrap_or(margin_agents::toolset::DEFAULT_K),
        granularity: req.granularity.unwrap_or_default(),
    };
    let opts = RunOptions { pool_width: gw.config.pool_width, model, thread_id: thread.thread_id.clone() };
    Ok((kind, ctx, opts))
}

fn frame(ev: &StreamEvent) -> Vec<u8> {
    encode_event(ev).unwrap_or_else(|e| {
        let fallback = StreamEvent::new(ev.sequence, EventPayload::error("internal", e.to_string()));
        encode_event(&fallback).unwrap_or_default()
    })
}

fn agent_message(output: &AgentOutput) -> MessageRecord {
    let (body, attached_patch) = match output {
        AgentOutput::Patch { patch, .. } => (patch.rationale.clone(), Some(patch.patch_id.clone())),
        AgentOutput::Review(v) | AgentOutput::Score(v) | AgentOutput::Research(v) => (v.to_string(), None),
    };
    MessageRecord { role: Role::Agent, body, attached_span: None, attached_patch, timestamp: 0 }
}

/// Runs the agent on a blocking thread. The product is persisted (patch,
/// then the agent message) before its event and the terminal event go out.
fn run_to_stream(gw: &Gateway, kind: AgentKind, ctx: AgentContext, opts: RunOptions, writer: &StreamWriter) {
    let run = gw.runtime.run_builtin(kind, &ctx, writer, &opts);
    let thread_id = &opts.thread_id;
    match run.outcome {
        Ok(output) => {
            let persisted = match &output {
                AgentOutput::Patch { patch, .. } => gw.store.put_patch(patch.clone()),
                _ => Ok(()),
            }
            .and_then(|()| {
                let msg = MessageRecord { timestamp: gw.store.now(), ..agent_message(&output) };
                gw.store.append_message(thread_id, msg).map(|_| ())
            });
            match persisted {
                Ok(()) => {
                    writer.emit(output.event());
                    writer.done();
                }
                Err(e) => writer.fail("internal", &format!("could not persist the result: {e}")),
            }
        }
        Err(e) => {
            let msg = MessageRecord {
                role: Role::Agent,
                body: format!("{}: {e}", e.code()),
                attached_span: None,
                attached_patch: None,
                timestamp: gw.store.now(),
            };
            if let Err(store_err) = gw.store.append_message(thread_id, msg) {
                tracing::warn!(error = %store_err, "failed run not recorded in thread");
            }
            writer.fail(e.code(), &e.to_string());
        }
    }
}

async fn submit_message(
    State(gw): State<AppState>,
    Caller(caller): Caller,
    Path(thread_id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> ApiResult<Response> {
    let thread = gw.owned_thread(&caller, &thread_id)?;
    let (kind, ctx, opts) = prepare_run(&gw, &caller, &thread, &req)?;
    gw.store.append_message(
        &thread_id,
        MessageRecord {
            role: Role::User,
            body: req.body.clone(),
            attached_span: ctx.span.clone(),
            attached_patch: None,
            timestamp: gw.store.now(),
        },
    )?;

    let (tx, rx) = tokio::sync::mpsc::channel::<Vec<u8>>(STREAM_BUFFER);
    let worker = gw.clone();
    tokio::task::spawn_blocking(move || {
        // A closed channel means the client left; the run still completes and is persisted.
        let writer = StreamWriter::new(move |ev| {
            let _ = tx.blocking_send(frame(&ev));
        });
        run_to_stream(&worker, kind, ctx, opts, &writer);
    });
    let body = futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|b| (Ok::<_, Infallible>(b), rx)) });
    Response::builder()
        .header(header::CONTENT_TYPE, CONTENT_TYPE)
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(body))
        .map_err(|e| ApiError::internal(e.to_string()))
}

async fn get_patch(State(gw): State<AppState>, Caller(caller): Caller, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let patch = gw.store.patch(&id)?;
    gw.owned_document(&caller, &patch.document_id)?;
    Ok(Json(json!({
        "patch_id": patch.patch_id,
        "document_id": patch.document_id,
        "base_version": patch.base_version,
        "rationale": patch.rationale,
        "patch": patch.to_text(),
    })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApplyResponse {
    pub report: ApplyReport,
    /// The version created by a successful apply.
    pub version: Option<DocumentVersion>,
}

async fn apply_patch_endpoint(State(gw): State<AppState>, Caller(caller): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let patch = gw.store.patch(&id)?;
    gw.owned_document(&caller, &patch.document_id)?;
    let opts = gw.config.patch;
    let (version, mut report) = gw.store.update_document(&patch.document_id, Origin::PatchApply, |head| {
        let (text, report) = apply_patch(&patch, &head.content, &opts);
        (if report.is_conflict() { None } else { Some(text) }, report)
    })?;
    let status = match &version {
        Some(v) => {
            report.new_version = Some(v.version_id);
            gw.observe(&caller, EventType::InsertPatch);
            StatusCode::OK
        }
        None => StatusCode::CONFLICT,
    };
    Ok((status, Json(ApplyResponse { report, version })).into_response())
}

async fn list_tools(State(gw): State<AppState>, Caller(_): Caller) -> Json<Value> {
    let tools: Vec<Value> = gw
        .runtime
        .tools()
        .list()
        .into_iter()
        .map(|d| {
            let schemas = gw.runtime.schemas();
            json!({
                "name": d.name,
                "description": d.description,
                "input_schema": d.input_schema,
                "output_schema": d.output_schema,
                "input": schemas.get(&d.input_schema).ok(),
                "output": schemas.get(&d.output_schema).ok(),
            })
        })
        .collect();
    Json(json!({ "tools": tools }))
}

async fn invoke_tool(
    State(gw): State<AppState>,
    Caller(_): Caller,
    Path(name): Path<String>,
    Json(args): Json<Value>,
) -> ApiResult<Json<Value>> {
    let tools = gw.runtime.tools().clone();
    let out = tokio::task::spawn_blocking(move || tools.invoke(&name, &args))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEvent {
    event_type: EventType,
    #[serde(default)]
    timestamp: Option<i64>,
}

/// Client-reported events are attributed to the caller's session; a supplied
/// timestamp may not lie in the future.
async fn record_event(
    State(gw): State<AppState>,
    Caller(caller): Caller,
    Json(ev): Json<ClientEvent>,
) -> ApiResult<(StatusCode, Json<TelemetryEvent>)> {
    let now = gw.now();
    let event = match ev.timestamp {
        Some(t) if t > now => return Err(ApiError::validation("timestamp lies in the future")),
        Some(t) => {
            let e = TelemetryEvent::new(ev.event_type, &caller.user_id, t, &caller.session_id);
            gw.telemetry.record(e.clone())?;
            e
        }
        None => {
            gw.telemetry.record_at(ev.event_type, &caller.user_id, &caller.session_id, now)?;
            let ts = gw.telemetry.last_timestamp(&caller.session_id).unwrap_or(now);
            TelemetryEvent::new(ev.event_type, &caller.user_id, ts, &caller.session_id)
        }
    };
    Ok((StatusCode::ACCEPTED, Json(event)))
}

#[derive(Deserialize)]
struct UsageQuery {
    now: Option<i64>,
}

async fn usage(State(gw): State<AppState>, Caller(caller): Caller, Query(q): Query<UsageQuery>) -> ApiResult<Json<UsageSummary>> {
    if !caller.admin {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "usage statistics need an admin session"));
    }
    Ok(Json(gw.telemetry.summary(q.now.unwrap_or_else(|| gw.now()))))
}
