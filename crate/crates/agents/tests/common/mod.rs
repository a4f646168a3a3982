#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use margin_agents::provider::{Provider, ProviderError, ProviderRequest};
use margin_agents::retrieval::{index_corpus, CorpusIndex, RetrievalConfig};
use margin_agents::{Catalog, EventSink, Runtime, ScriptedProvider};
use margin_core::latex::{segment_document, Granularity, Segment};
use margin_core::stream::EventPayload;
use serde_json::{json, Value};

/// Delays each call by a few milliseconds that depend on global call order,
/// so sub-runs finish in a different order from run to run.
pub struct Jitter<P>(pub P, pub AtomicU64);

impl<P: Provider> Jitter<P> {
    pub fn new(inner: P) -> Self {
        Self(inner, AtomicU64::new(0))
    }
}

impl<P: Provider> Provider for Jitter<P> {
    fn complete(&self, req: &ProviderRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Value, ProviderError> {
        let n = self.1.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_micros((n * 7919) % 3000));
        self.0.complete(req, on_delta)
    }
}

pub fn empty_corpus() -> Arc<CorpusIndex> {
    Arc::new(index_corpus(Vec::new()).unwrap())
}

pub fn runtime(provider: impl Provider + 'static) -> Runtime {
    Runtime::with_provider(Arc::new(provider), empty_corpus()).unwrap()
}

pub fn runtime_with(catalog: Catalog, provider: impl Provider + 'static) -> Result<Runtime, margin_agents::builtin::InitError> {
    let providers: BTreeMap<String, Arc<dyn Provider>> = BTreeMap::from([("default".to_string(), Arc::new(provider) as Arc<dyn Provider>)]);
    Runtime::standard(catalog, empty_corpus(), RetrievalConfig::default(), providers)
}

pub fn sections(doc: &str) -> Vec<Segment> {
    segment_document(doc, Granularity::Section)
}

/// Scripted critiques per segment: even segments carry major weaknesses.
pub fn review_script(doc: &str) -> ScriptedProvider {
    let mut p = ScriptedProvider::new();
    for s in sections(doc) {
        let i = s.index;
        let when = json!({ "text": s.text });
        p = p
            .answer("review_summary", when.clone(), json!({ "summary": format!("Segment {i} states its point.") }))
            .answer("review_strengths", when.clone(), json!({ "strengths": [format!("clear aim {i}")] }))
            .answer(
                "review_weaknesses",
                when.clone(),
                json!({
                    "weaknesses": [format!("issue {i}a"), format!("issue {i}b")],
                    "severity": if i % 2 == 0 { "major" } else { "minor" }
                }),
            )
            .answer("review_questions", when, json!({ "questions": [format!("why {i}?")] }));
    }
    p
}

/// The report `review_script` must produce, built directly from the rules.
pub fn expected_review(doc: &str) -> Value {
    let segs = sections(doc);
    let per_segment: Vec<Value> = segs
        .iter()
        .map(|s| {
            let i = s.index;
            json!({
                "index": i,
                "section_path": s.section_path,
                "summary": format!("Segment {i} states its point."),
                "strengths": [format!("clear aim {i}")],
                "weaknesses": [format!("issue {i}a"), format!("issue {i}b")],
                "questions": [format!("why {i}?")],
                "severity": if i % 2 == 0 { "major" } else { "minor" }
            })
        })
        .collect();
    let summary: Vec<String> = segs.iter().map(|s| format!("Segment {} states its point.", s.index)).collect();
    let top: Vec<String> =
        segs.iter().filter(|s| s.index % 2 == 0).flat_map(|s| [format!("issue {}a", s.index), format!("issue {}b", s.index)]).collect();
    json!({ "per_segment": per_segment, "overall": { "summary": summary.join("\n\n"), "top_issues": top } })
}

#[derive(Default)]
pub struct Recorder(pub Mutex<Vec<EventPayload>>);

impl Recorder {
    pub fn take(&self) -> Vec<EventPayload> {
        std::mem::take(&mut *self.0.lock().unwrap())
    }
}

impl EventSink for Recorder {
    fn emit(&self, payload: EventPayload) {
        self.0.lock().unwrap().push(payload);
    }
}
