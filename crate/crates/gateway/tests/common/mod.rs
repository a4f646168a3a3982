#![allow(dead_code)]

use std::sync::Arc;

use futures::StreamExt;
use margin_agents::retrieval::{index_corpus, CorpusIndex};
use margin_agents::{Provider, Runtime, ScriptedProvider};
use margin_core::clock::{Clock, ManualClock};
use margin_core::stream::{FrameDecoder, StreamEvent};
use margin_core::DocumentStore;
use margin_gateway::auth::UserRecord;
use margin_gateway::telemetry::{EventType, TelemetryEvent, TelemetryLog};
use margin_gateway::{Gateway, GatewayConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

pub const START: i64 = 1_700_000_000;
pub const PASSWORD: &str = "correct horse";

pub const THREE_SECTIONS: &str = "\\section{Introduction}\nWe study graphs.\n\n\\section{Method}\nWe apply teh method to graphs.\nIt scales.\n\n\\section{Results}\nIt works.\n";

/// The enhancer fixture used across the HTTP suites.
pub fn enhancer_script() -> ScriptedProvider {
    ScriptedProvider::new().answer(
        "enhance_rewrite",
        json!({ "text": "teh method" }),
        json!({ "rewrite": "the method", "rationale": "Fix a typo." }),
    )
}

pub struct TestServer {
    pub base: String,
    pub gateway: Arc<Gateway>,
    pub clock: Arc<ManualClock>,
    pub client: reqwest::Client,
    pub task: tokio::task::JoinHandle<std::io::Result<()>>,
}

pub fn users() -> Vec<UserRecord> {
    vec![UserRecord::create("ana", PASSWORD, true), UserRecord::create("bob", PASSWORD, false)]
}

pub async fn start(provider: impl Provider + 'static) -> TestServer {
    start_with(provider, Arc::new(index_corpus(Vec::new()).unwrap()), GatewayConfig::default()).await
}

pub async fn start_with(provider: impl Provider + 'static, corpus: Arc<CorpusIndex>, mut config: GatewayConfig) -> TestServer {
    let clock = Arc::new(ManualClock::new(START));
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    if config.users.is_empty() {
        config.users = users();
    }
    let runtime = Runtime::with_provider(Arc::new(provider), corpus).unwrap();
    let store = DocumentStore::in_memory().with_clock(dyn_clock.clone());
    let gateway = Arc::new(Gateway::assemble(config, Arc::new(store), Arc::new(runtime), TelemetryLog::in_memory(), dyn_clock));
    attach(gateway, clock).await
}

/// Serves an already built gateway on an ephemeral port.
pub async fn attach(gateway: Arc<Gateway>, clock: Arc<ManualClock>) -> TestServer {
    let (addr, task) = margin_gateway::spawn(gateway.clone(), "127.0.0.1:0").await.unwrap();
    TestServer { base: format!("http://{addr}"), gateway, clock, client: reqwest::Client::new(), task }
}

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

impl TestServer {
    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
        Reply { status, body }
    }

    pub async fn login(&self, user: &str) -> String {
        let r = self.call(Method::POST, "/v1/auth", None, Some(json!({ "username": user, "password": PASSWORD }))).await;
        assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
        r.body["token"].as_str().unwrap().to_string()
    }

    /// Creates a project holding `doc` at `main.tex` and a thread on it.
    pub async fn project_with(&self, token: &str, doc: &str) -> (String, Value, String) {
        let p = self.call(Method::POST, "/v1/projects", Some(token), Some(json!({ "name": "paper" }))).await;
        assert_eq!(p.status, StatusCode::CREATED, "{:?}", p.body);
        let pid = p.body["project_id"].as_str().unwrap().to_string();
        let v = self
            .call(Method::PUT, &format!("/v1/projects/{pid}/documents"), Some(token), Some(json!({ "path": "main.tex", "content": doc })))
            .await;
        assert_eq!(v.status, StatusCode::OK, "{:?}", v.body);
        let t = self.call(Method::POST, "/v1/threads", Some(token), Some(json!({ "project_id": pid }))).await;
        assert_eq!(t.status, StatusCode::CREATED);
        (pid, v.body, t.body["thread_id"].as_str().unwrap().to_string())
    }

    /// Posts a message and decodes the event stream chunk by chunk as it arrives.
    pub async fn stream(&self, token: &str, thread_id: &str, body: Value) -> Result<(Vec<StreamEvent>, Vec<u8>), Reply> {
        let resp = self
            .client
            .post(format!("{}/v1/threads/{thread_id}/messages", self.base))
            .bearer_auth(token)
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let is_stream = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .is_some_and(|v| v.to_str().unwrap_or("").starts_with(margin_core::stream::CONTENT_TYPE));
        if !is_stream {
            let text = resp.text().await.unwrap();
            return Err(Reply { status, body: serde_json::from_str(&text).unwrap_or(Value::String(text)) });
        }
        let mut dec = FrameDecoder::new();
        let mut events = Vec::new();
        let mut raw = Vec::new();
        let mut chunks = resp.bytes_stream();
        while let Some(chunk) = chunks.next().await {
            let chunk = chunk.unwrap();
            raw.extend_from_slice(&chunk);
            events.extend(dec.feed(&chunk));
        }
        events.extend(dec.finish());
        Ok((events, raw))
    }
}

/// Session ids for fixture events, one per simulated browser session.
fn session(i: usize) -> String {
    format!("ses_{i:04}")
}

/// Sorts by timestamp so every session's timestamps are non-decreasing.
fn in_log_order(mut events: Vec<TelemetryEvent>) -> Vec<TelemetryEvent> {
    events.sort_by_key(|e| e.timestamp);
    events
}

pub mod table2 {
    pub const DIFF_VIEWED: u64 = 1073;
    pub const COPY_SUGGESTION: u64 = 375;
    pub const INSERT_PATCH: u64 = 359;
}

pub mod table1 {
    pub const INSTALLS: u64 = 112;
    pub const REGISTERED: u64 = 78;
    pub const ACTIVE_30D: u64 = 23;
    pub const PROJECTS: u64 = 158;
    pub const THREADS: u64 = 797;
}

pub const DAY: i64 = 86_400;
pub const NOW: i64 = START + 400 * DAY;

/// Refinement operations only, spread over 30 users and 60 sessions.
pub fn table2_log(rng: &mut impl Rng) -> Vec<TelemetryEvent> {
    let mut kinds = Vec::new();
    kinds.extend(std::iter::repeat_n(EventType::DiffViewed, table2::DIFF_VIEWED as usize));
    kinds.extend(std::iter::repeat_n(EventType::CopySuggestion, table2::COPY_SUGGESTION as usize));
    kinds.extend(std::iter::repeat_n(EventType::InsertPatch, table2::INSERT_PATCH as usize));
    kinds.shuffle(rng);
    let events = kinds
        .into_iter()
        .map(|k| {
            let s = rng.gen_range(0..60);
            TelemetryEvent::new(k, &format!("usr_{:02}", s % 30), START + rng.gen_range(0..300 * DAY), &session(s))
        })
        .collect();
    in_log_order(events)
}

/// Adoption log evaluated at `NOW`: anonymous installs, registrations (some
/// repeated), creation events long before the window, 23 users active inside
/// it, and decoys exactly on the excluded window edge and after `NOW`.
pub fn table1_log(rng: &mut impl Rng) -> Vec<TelemetryEvent> {
    let old = |rng: &mut dyn rand::RngCore| START + rng.gen_range(0..300 * DAY);
    let users: Vec<String> = (0..table1::REGISTERED).map(|i| format!("usr_{i:03}")).collect();
    let mut ev = Vec::new();
    for i in 0..table1::INSTALLS {
        ev.push(TelemetryEvent::new(EventType::Install, &format!("ins_{i:03}"), old(rng), &format!("inst_{i:03}")));
    }
    for (i, u) in users.iter().enumerate() {
        ev.push(TelemetryEvent::new(EventType::UserRegistered, u, old(rng), &session(i)));
        if i % 13 == 0 {
            ev.push(TelemetryEvent::new(EventType::UserRegistered, u, old(rng), &session(i)));
        }
    }
    for _ in 0..table1::PROJECTS {
        let i = rng.gen_range(0..users.len());
        ev.push(TelemetryEvent::new(EventType::ProjectCreated, &users[i], old(rng), &session(i)));
    }
    for _ in 0..table1::THREADS {
        let i = rng.gen_range(0..users.len());
        ev.push(TelemetryEvent::new(EventType::ThreadCreated, &users[i], old(rng), &session(i)));
    }
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(rng);
    let (active, idle) = order.split_at(table1::ACTIVE_30D as usize);
    for (n, &i) in active.iter().enumerate() {
        let at = if n == 0 { NOW } else { NOW - rng.gen_range(0..30 * DAY - 1) };
        ev.push(TelemetryEvent::new(EventType::SessionActive, &users[i], at, &session(i)));
        for _ in 0..rng.gen_range(0..4) {
            ev.push(TelemetryEvent::new(EventType::DiffViewed, &users[i], NOW - rng.gen_range(0..30 * DAY - 1), &session(i)));
        }
    }
    for &i in idle.iter().take(5) {
        ev.push(TelemetryEvent::new(EventType::SessionActive, &users[i], NOW - 30 * DAY, &session(i)));
        ev.push(TelemetryEvent::new(EventType::SessionActive, &users[i], NOW + 1, &session(i)));
    }
    in_log_order(ev)
}
