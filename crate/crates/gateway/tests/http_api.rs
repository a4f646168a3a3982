mod common;

use std::collections::BTreeSet;

use common::{enhancer_script, start, Reply, TestServer, THREE_SECTIONS};
use margin_agents::ScriptedProvider;
use margin_core::patch::{apply_patch, ApplyOptions};
use margin_core::stream::{AccumulatorState, EventPayload, StreamEvent};
use margin_core::PatchSet;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

fn span_of(version: &Value, needle: &str) -> Value {
    let content = version["content"].as_str().unwrap();
    let byte = content.find(needle).unwrap();
    let start = content[..byte].chars().count();
    json!({ "document_id": version["document_id"], "start": start, "end": start + needle.chars().count() })
}

fn enhance(version: &Value, needle: &str) -> Value {
    json!({ "agent": "enhancer", "body": "fix the typo", "span": span_of(version, needle) })
}

/// Dense sequence numbers and exactly one terminal event, in last position.
fn assert_protocol(events: &[StreamEvent]) {
    let mut acc = AccumulatorState::default();
    for (i, ev) in events.iter().enumerate() {
        assert_eq!(ev.sequence, i as u64);
        acc = acc.accumulate(ev).unwrap();
    }
    assert_eq!(events.iter().filter(|e| e.payload.is_terminal()).count(), 1);
    assert!(events.last().unwrap().payload.is_terminal());
}

fn kinds(events: &[StreamEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.payload.kind()).collect()
}

async fn head(s: &TestServer, token: &str, doc_id: &str) -> Value {
    s.call(Method::GET, &format!("/v1/documents/{doc_id}"), Some(token), None).await.body
}

#[tokio::test(flavor = "multi_thread")]
async fn tokens_gate_every_route() {
    let s = start(ScriptedProvider::new()).await;
    let routes = [
        (Method::POST, "/v1/projects"),
        (Method::GET, "/v1/projects"),
        (Method::GET, "/v1/projects/p"),
        (Method::PUT, "/v1/projects/p/documents"),
        (Method::GET, "/v1/documents/d"),
        (Method::POST, "/v1/threads"),
        (Method::GET, "/v1/threads/t"),
        (Method::POST, "/v1/threads/t/messages"),
        (Method::GET, "/v1/patches/x"),
        (Method::POST, "/v1/patches/x/apply"),
        (Method::GET, "/v1/tools"),
        (Method::POST, "/v1/tools/draft_patch"),
        (Method::POST, "/v1/telemetry"),
        (Method::GET, "/v1/admin/usage"),
    ];
    for (m, path) in routes {
        for token in [None, Some("garbage"), Some("")] {
            let r = s.call(m.clone(), path, token, Some(json!({}))).await;
            assert_eq!(r.status, StatusCode::UNAUTHORIZED, "{m} {path} with {token:?}");
            assert_eq!(r.body["error"]["code"], "unauthorized");
        }
    }
    let bad = s.call(Method::POST, "/v1/auth", None, Some(json!({ "username": "ana", "password": "nope" }))).await;
    assert_eq!(bad.status, StatusCode::UNAUTHORIZED);
    let ghost = s.call(Method::POST, "/v1/auth", None, Some(json!({ "username": "eve", "password": common::PASSWORD }))).await;
    assert_eq!(ghost.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test(flavor = "multi_thread")]
async fn tokens_expire_after_the_ttl() {
    let s = start(ScriptedProvider::new()).await;
    let r = s.call(Method::POST, "/v1/auth", None, Some(json!({ "username": "bob", "password": common::PASSWORD }))).await;
    let token = r.body["token"].as_str().unwrap().to_string();
    assert_eq!(r.body["expires_at"].as_i64().unwrap() - r.body["issued_at"].as_i64().unwrap(), 24 * 3600);
    assert!(!r.body.to_string().contains(common::PASSWORD));
    assert_eq!(s.call(Method::GET, "/v1/projects", Some(&token), None).await.status, StatusCode::OK);
    s.clock.advance(24 * 3600 - 1);
    assert_eq!(s.call(Method::GET, "/v1/projects", Some(&token), None).await.status, StatusCode::OK);
    s.clock.advance(1);
    let late = s.call(Method::GET, "/v1/projects", Some(&token), None).await;
    assert_eq!(late.status, StatusCode::UNAUTHORIZED);
    assert!(late.body["error"]["message"].as_str().unwrap().contains("expired"));
}

#[tokio::test(flavor = "multi_thread")]
async fn foreign_projects_are_forbidden() {
    let s = start(enhancer_script()).await;
    let ana = s.login("ana").await;
    let bob = s.login("bob").await;
    let (pid, v, tid) = s.project_with(&ana, THREE_SECTIONS).await;
    let doc = v["document_id"].as_str().unwrap();
    let (events, _) = s.stream(&ana, &tid, enhance(&v, "teh method")).await.unwrap();
    let EventPayload::Patch { patch_id, .. } = &events[events.len() - 2].payload else { panic!("{events:?}") };

    let attempts = [
        (Method::GET, format!("/v1/projects/{pid}"), None),
        (Method::PUT, format!("/v1/projects/{pid}/documents"), Some(json!({ "path": "x.tex", "content": "x" }))),
        (Method::GET, format!("/v1/documents/{doc}"), None),
        (Method::POST, "/v1/threads".to_string(), Some(json!({ "project_id": pid }))),
        (Method::GET, format!("/v1/threads/{tid}"), None),
        (Method::GET, format!("/v1/patches/{patch_id}"), None),
        (Method::POST, format!("/v1/patches/{patch_id}/apply"), None),
    ];
    for (m, path, body) in attempts {
        let r = s.call(m.clone(), &path, Some(&bob), body).await;
        assert_eq!(r.status, StatusCode::FORBIDDEN, "{m} {path}");
    }
    let Err(Reply { status, body }) = s.stream(&bob, &tid, enhance(&v, "teh method")).await else {
        panic!("a foreign thread must not open a stream")
    };
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"]["code"], "forbidden");
    assert_eq!(head(&s, &ana, doc).await["version_id"], 1);
    let listed = s.call(Method::GET, "/v1/projects", Some(&bob), None).await;
    assert_eq!(listed.body, json!([]));
    let usage = s.call(Method::GET, "/v1/admin/usage", Some(&bob), None).await;
    assert_eq!(usage.status, StatusCode::FORBIDDEN);
}

#[tokio::test(flavor = "multi_thread")]
async fn enhancer_round_trip_and_double_apply() {
    let s = start(enhancer_script()).await;
    let ana = s.login("ana").await;
    let (_, v, tid) = s.project_with(&ana, THREE_SECTIONS).await;
    let doc = v["document_id"].as_str().unwrap().to_string();
    let (events, raw) = s.stream(&ana, &tid, enhance(&v, "teh method")).await.unwrap();
    assert_protocol(&events);
    let k = kinds(&events);
    assert!(k.contains(&"delta"));
    assert_eq!(k.iter().filter(|&&x| x == "patch").count(), 1);
    assert_eq!(k[k.len() - 2..], ["patch", "done"]);
    assert!(raw.ends_with(margin_core::stream::DONE_FRAME));

    let EventPayload::Patch { patch_id, patch, previews } = &events[events.len() - 2].payload else { panic!() };
    assert_eq!(previews.len(), 1);
    assert_eq!(previews[0].section_path, ["Method"]);
    assert!(previews[0].after.contains("the method"));

    let thread = s.call(Method::GET, &format!("/v1/threads/{tid}"), Some(&ana), None).await.body;
    let msgs = thread["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 2);
    assert_eq!((msgs[0]["role"].as_str(), msgs[1]["role"].as_str()), (Some("user"), Some("agent")));
    assert_eq!(msgs[0]["attached_span"]["quoted_text"], "teh method");
    assert_eq!(msgs[1]["attached_patch"], json!(patch_id));
    assert_eq!(msgs[1]["body"], "Fix a typo.");

    let stored = s.call(Method::GET, &format!("/v1/patches/{patch_id}"), Some(&ana), None).await.body;
    assert_eq!(stored["patch"], json!(patch));

    let first = s.call(Method::POST, &format!("/v1/patches/{patch_id}/apply"), Some(&ana), None).await;
    assert_eq!(first.status, StatusCode::OK, "{:?}", first.body);
    assert_eq!(first.body["report"]["status"], "applied");
    assert_eq!(first.body["report"]["new_version"], 2);
    let h = head(&s, &ana, &doc).await;
    assert_eq!((h["version_id"].as_u64(), h["origin"].as_str()), (Some(2), Some("patch_apply")));
    let after = h["content"].as_str().unwrap();
    assert_eq!(after, THREE_SECTIONS.replace("teh method", "the method"));

    let second = s.call(Method::POST, &format!("/v1/patches/{patch_id}/apply"), Some(&ana), None).await;
    assert_eq!(second.status, StatusCode::CONFLICT);
    let parsed = PatchSet::parse(patch).unwrap();
    let (_, oracle) = apply_patch(&parsed, after, &ApplyOptions::default());
    assert!(oracle.is_conflict());
    assert_eq!(second.body["report"]["conflicts"], json!(oracle.conflicts));
    assert_eq!(second.body["version"], Value::Null);
    assert_eq!(head(&s, &ana, &doc).await["version_id"], 2);

    let usage = s.call(Method::GET, "/v1/admin/usage", Some(&ana), None).await.body;
    assert_eq!(usage["event_counts"]["insert_patch"], 1);
    assert_eq!(usage["projects_total"], 1);
    assert_eq!(usage["threads_total"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn stale_selection_is_relocated_to_head() {
    let s = start(enhancer_script()).await;
    let ana = s.login("ana").await;
    let (pid, v1, tid) = s.project_with(&ana, THREE_SECTIONS).await;
    let doc = v1["document_id"].as_str().unwrap();
    let edited = THREE_SECTIONS.replace("We study graphs.\n", "We study graphs.\nA new opening line.\nAnother one.\n");
    let v2 = s
        .call(Method::PUT, &format!("/v1/projects/{pid}/documents"), Some(&ana), Some(json!({ "path": "main.tex", "content": edited })))
        .await
        .body;
    assert_eq!(v2["version_id"], 2);
    let mut span = span_of(&v1, "teh method");
    span["version_id"] = json!(1);
    let (events, _) = s.stream(&ana, &tid, json!({ "agent": "enhancer", "span": span })).await.unwrap();
    assert_protocol(&events);
    let EventPayload::Patch { patch_id, .. } = &events[events.len() - 2].payload else { panic!("{events:?}") };
    let r = s.call(Method::POST, &format!("/v1/patches/{patch_id}/apply"), Some(&ana), None).await;
    assert_eq!(r.body["report"]["status"], "applied");
    assert_eq!(head(&s, &ana, doc).await["content"], json!(edited.replace("teh method", "the method")));
}

#[tokio::test(flavor = "multi_thread")]
async fn reviewer_over_http_reports_every_section() {
    let s = start(ScriptedProvider::new()).await;
    let ana = s.login("ana").await;
    let (_, v, tid) = s.project_with(&ana, THREE_SECTIONS).await;
    let (events, _) = s.stream(&ana, &tid, json!({ "agent": "reviewer", "document_id": v["document_id"] })).await.unwrap();
    assert_protocol(&events);
    let EventPayload::Review(report) = &events[events.len() - 2].payload else { panic!("{:?}", kinds(&events)) };
    let idx: Vec<u64> = report["per_segment"].as_array().unwrap().iter().map(|r| r["index"].as_u64().unwrap()).collect();
    assert_eq!(idx, [0, 1, 2]);
    assert!(kinds(&events).contains(&"tool_call"));
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_requests_fail_before_the_stream_opens() {
    let s = start(ScriptedProvider::new()).await;
    let ana = s.login("ana").await;
    let (_, v, tid) = s.project_with(&ana, THREE_SECTIONS).await;
    let cases = [
        json!({ "agent": "poet", "document_id": v["document_id"] }),
        json!({ "agent": "scoring", "document_id": v["document_id"], "model": "gpt-unknown" }),
        json!({ "agent": "enhancer", "span": { "document_id": v["document_id"], "start": 5, "end": 9999 } }),
        json!({ "agent": "scoring", "colour": "blue" }),
    ];
    for body in cases {
        let Err(r) = s.stream(&ana, &tid, body.clone()).await else { panic!("{body} opened a stream") };
        assert!(r.status.is_client_error(), "{body}: {:?}", r);
    }
    let missing = s.stream(&ana, "thr_missing", json!({ "agent": "scoring" })).await.unwrap_err();
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    let thread = s.call(Method::GET, &format!("/v1/threads/{tid}"), Some(&ana), None).await.body;
    assert_eq!(thread["messages"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_runs_end_with_one_error_event() {
    let p = ScriptedProvider::new().failing("enhance_rewrite", json!({}), "model unavailable");
    let s = start(p).await;
    let ana = s.login("ana").await;
    let (_, v, tid) = s.project_with(&ana, THREE_SECTIONS).await;
    let (events, _) = s.stream(&ana, &tid, enhance(&v, "teh method")).await.unwrap();
    assert_protocol(&events);
    let EventPayload::Error { code, message } = &events.last().unwrap().payload else { panic!() };
    assert_eq!(code, "provider_error");
    assert!(message.contains("model unavailable"));
    assert!(!kinds(&events).contains(&"patch"));
    let thread = s.call(Method::GET, &format!("/v1/threads/{tid}"), Some(&ana), None).await.body;
    assert!(thread["messages"][1]["body"].as_str().unwrap().starts_with("provider_error"));

    let (events, _) = s.stream(&ana, &tid, json!({ "agent": "reviewer" })).await.unwrap();
    assert_eq!(events.last().unwrap().payload, EventPayload::error("input_error", "input `document`: this agent needs a document"));
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_streams_stay_separate() {
    let s = std::sync::Arc::new(start(enhancer_script()).await);
    let ana = s.login("ana").await;
    let mut tasks = Vec::new();
    for _ in 0..6 {
        let (s, ana) = (s.clone(), ana.clone());
        tasks.push(tokio::spawn(async move {
            let (_, v, tid) = s.project_with(&ana, THREE_SECTIONS).await;
            let (events, _) = s.stream(&ana, &tid, enhance(&v, "teh method")).await.unwrap();
            assert_protocol(&events);
            match &events[events.len() - 2].payload {
                EventPayload::Patch { patch_id, .. } => patch_id.clone(),
                other => panic!("{other:?}"),
            }
        }));
    }
    let mut ids = BTreeSet::new();
    for t in tasks {
        ids.insert(t.await.unwrap());
    }
    assert_eq!(ids.len(), 6);
}

#[tokio::test(flavor = "multi_thread")]
async fn tool_registry_over_http() {
    let s = start(ScriptedProvider::new()).await;
    let ana = s.login("ana").await;
    let list = s.call(Method::GET, "/v1/tools", Some(&ana), None).await.body;
    let names: Vec<&str> = list["tools"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["draft_patch", "literature_search", "lookup_reference", "render_comparison_table", "segment_document"]);
    assert!(list["tools"][0]["input"].is_object());

    let ok = s
        .call(Method::POST, "/v1/tools/segment_document", Some(&ana), Some(json!({ "content": THREE_SECTIONS })))
        .await;
    assert_eq!(ok.status, StatusCode::OK);
    assert_eq!(ok.body["segments"].as_array().unwrap().len(), 3);
    let bad = s.call(Method::POST, "/v1/tools/segment_document", Some(&ana), Some(json!({ "content": 7 }))).await;
    assert_eq!((bad.status, bad.body["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("input_violation")));
    let none = s.call(Method::POST, "/v1/tools/nope", Some(&ana), Some(json!({}))).await;
    assert_eq!(none.status, StatusCode::NOT_FOUND);
    let empty = s.call(Method::POST, "/v1/tools/lookup_reference", Some(&ana), Some(json!({ "query": "graphs" }))).await;
    assert_eq!(empty.body["error"]["code"], "handler_error");
}

#[tokio::test(flavor = "multi_thread")]
async fn telemetry_endpoint_validates_and_attributes() {
    let s = start(ScriptedProvider::new()).await;
    let bob = s.login("bob").await;
    let ana = s.login("ana").await;
    let ok = s.call(Method::POST, "/v1/telemetry", Some(&bob), Some(json!({ "event_type": "diff_viewed" }))).await;
    assert_eq!(ok.status, StatusCode::ACCEPTED);
    assert!(ok.body["user_id"].as_str().unwrap().starts_with("usr_"));
    let stamped = json!({ "event_type": "copy_suggestion", "timestamp": common::START });
    assert_eq!(s.call(Method::POST, "/v1/telemetry", Some(&bob), Some(stamped.clone())).await.status, StatusCode::ACCEPTED);
    let rejected = [
        json!({ "event_type": "clicked" }),
        json!({ "event_type": "diff_viewed", "timestamp": common::START + 5 }),
        json!({ "event_type": "diff_viewed", "timestamp": common::START - 1 }),
        json!({ "event_type": "diff_viewed", "user_id": "someone@else" }),
    ];
    for body in rejected {
        let r = s.call(Method::POST, "/v1/telemetry", Some(&bob), Some(body.clone())).await;
        assert!(r.status.is_client_error(), "{body} was accepted");
    }
    let usage = s.call(Method::GET, "/v1/admin/usage", Some(&ana), None).await.body;
    assert_eq!(usage["event_counts"], json!({ "session_active": 2, "diff_viewed": 1, "copy_suggestion": 1 }));
    assert_eq!(usage["active_users_30d"], 2);
    let later = s.call(Method::GET, &format!("/v1/admin/usage?now={}", common::START + 31 * 86_400), Some(&ana), None).await.body;
    assert_eq!(later["active_users_30d"], 0);
}
