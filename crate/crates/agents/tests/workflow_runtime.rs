mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{expected_review, review_script, runtime, runtime_with, sections, Jitter, Recorder};
use margin_agents::provider::{Provider, ProviderError, ProviderRequest};
use margin_agents::template::PromptTemplate;
use margin_agents::{AgentContext, AgentKind, Catalog, NullSink, RunError, RunOptions, RunStatus, ScriptedProvider, StreamWriter, WorkflowSpec};
use margin_core::latex::{segment_document, Granularity};
use margin_core::stream::{encode_event, AccumulatorState, EventPayload, FrameDecoder};
use margin_core::DocumentStore;
use margin_testkit::fixtures::SIX_SECTION_DOC;
use margin_testkit::{pick, rng, Rng};
use proptest::prelude::*;
use serde_json::{json, Value};

fn reviewer_inputs(doc: &str) -> BTreeMap<String, Value> {
    BTreeMap::from([("document".to_string(), json!(doc)), ("granularity".to_string(), json!("section"))])
}

fn width(w: usize) -> RunOptions {
    RunOptions { pool_width: Some(w), ..RunOptions::default() }
}

#[test]
fn reviewer_report_is_identical_for_every_pool_width() {
    assert_eq!(sections(SIX_SECTION_DOC).len(), 6);
    let rt = runtime(Jitter::new(review_script(SIX_SECTION_DOC)));
    let oracle = serde_json::to_string(&expected_review(SIX_SECTION_DOC)).unwrap();

    let rec = Recorder::default();
    let base = rt.execute_workflow("reviewer", reviewer_inputs(SIX_SECTION_DOC), &rec, &width(1));
    assert_eq!(base.status, RunStatus::Succeeded, "{:?}", base.error);
    assert_eq!(serde_json::to_string(base.output.as_ref().unwrap()).unwrap(), oracle);
    let base_events = rec.take();

    for w in [1, 2, 8] {
        for _ in 0..20 {
            let st = rt.execute_workflow("reviewer", reviewer_inputs(SIX_SECTION_DOC), &rec, &width(w));
            assert_eq!(serde_json::to_string(st.output.as_ref().unwrap()).unwrap(), oracle, "width {w}");
            assert_eq!(rec.take(), base_events, "event order differs at width {w}");
        }
    }
}

#[test]
fn fan_out_reports_lowest_failing_segment() {
    let segs = sections(SIX_SECTION_DOC);
    for failing in [vec![1], vec![1, 3], vec![4, 2]] {
        let mut p = ScriptedProvider::new();
        for &i in &failing {
            p = p.failing("review_summary", json!({ "text": segs[i].text }), "scripted outage");
        }
        let p = Arc::new(p);
        let rt = runtime(p.clone());
        let lowest = *failing.iter().min().unwrap();
        let mut streams = Vec::new();
        for w in [1, 2, 8] {
            let rec = Recorder::default();
            let st = rt.execute_workflow("reviewer", reviewer_inputs(SIX_SECTION_DOC), &rec, &width(w));
            assert_eq!(st.status, RunStatus::Failed);
            let err = st.error.unwrap();
            assert_eq!(err.failed_segment(), Some(lowest), "width {w}");
            assert_eq!(err.code(), "provider_error");
            assert!(st.step_results.contains_key("segments"), "partial results are kept");
            assert!(!st.step_results.contains_key("reviews"));
            streams.push(rec.take());
        }
        assert!(streams.windows(2).all(|w| w[0] == w[1]), "released events must not depend on width");
    }

    let segs_fail = ScriptedProvider::new().failing("review_summary", json!({ "text": segs[1].text }), "down");
    let p = Arc::new(segs_fail);
    let rt = runtime(p.clone());
    rt.execute_workflow("reviewer", reviewer_inputs(SIX_SECTION_DOC), &NullSink, &width(1));
    assert_eq!(p.calls("review_summary"), 2, "width 1 stops right after the failing segment");
}

#[test]
fn three_section_review_has_three_entries() {
    let doc = "\\section{A}\nAlpha.\n\n\\section{B}\nBeta.\n\n\\section{C}\nGamma.\n";
    let st = runtime(ScriptedProvider::new()).execute_workflow("reviewer", reviewer_inputs(doc), &NullSink, &width(2));
    let per = st.output.unwrap()["per_segment"].as_array().unwrap().clone();
    assert_eq!(per.len(), 3);
    let idx: Vec<u64> = per.iter().map(|c| c["index"].as_u64().unwrap()).collect();
    assert_eq!(idx, [0, 1, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn review_covers_every_segment(seed in any::<u64>(), paragraph in any::<bool>()) {
        let mut r = rng(seed);
        let doc = margin_testkit::sections::sectioned_doc(&mut r);
        let gran = if paragraph { Granularity::Paragraph } else { Granularity::Section };
        let rt = runtime(ScriptedProvider::new());
        let inputs = BTreeMap::from([("document".to_string(), json!(doc)), ("granularity".to_string(), json!(gran))]);
        let st = rt.execute_workflow("reviewer", inputs, &NullSink, &width(4));
        prop_assert_eq!(st.status, RunStatus::Succeeded);
        let out = st.output.unwrap();
        let per = out["per_segment"].as_array().unwrap();
        let segs = segment_document(&doc, gran);
        prop_assert_eq!(per.len(), segs.len());
        for (c, s) in per.iter().zip(&segs) {
            prop_assert_eq!(c["index"].as_u64(), Some(s.index as u64));
            prop_assert_eq!(&c["section_path"], &json!(s.section_path));
        }
        let weaknesses: Vec<&Value> = per.iter().flat_map(|c| c["weaknesses"].as_array().unwrap()).collect();
        for issue in out["overall"]["top_issues"].as_array().unwrap() {
            prop_assert!(weaknesses.contains(&issue));
        }
    }
}

/// Answers with a fixed value and counts calls.
struct Fixed(Value, std::sync::atomic::AtomicUsize);

impl Provider for Fixed {
    fn complete(&self, _: &ProviderRequest, _: &mut dyn FnMut(&str)) -> Result<Value, ProviderError> {
        self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(self.0.clone())
    }
}

fn scoring_with_retry(max_attempts: Option<u32>) -> Catalog {
    let mut cat = Catalog::builtin().unwrap();
    let retry = max_attempts.map(|n| json!({ "max_attempts": n })).unwrap_or(Value::Null);
    let mut step = json!({ "step_id": "score", "kind": "llm_call", "template": "score_text", "vars": { "text": "${inputs.text}" } });
    if !retry.is_null() {
        step["retry"] = retry;
    }
    let spec = json!({ "workflow_id": "scoring", "inputs": ["text"], "steps": [step], "output": "score" });
    cat.insert_workflow(serde_json::from_value(spec).unwrap());
    cat
}

#[test]
fn invalid_output_is_retried_up_to_the_bound() {
    for (attempts, expected) in [(None, 2), (Some(1), 1), (Some(4), 4)] {
        let p = Arc::new(Fixed(json!({ "clarity": "7" }), Default::default()));
        let rt = runtime_with(scoring_with_retry(attempts), p.clone()).unwrap();
        let st = rt.execute_workflow("scoring", BTreeMap::from([("text".into(), json!("x"))]), &NullSink, &RunOptions::default());
        let err = st.error.unwrap();
        assert_eq!(err.code(), "validation_error");
        let RunError::Validation { violations, .. } = err else { panic!() };
        let mut paths: Vec<&str> = violations.iter().map(|v| v.path.as_str()).collect();
        paths.sort_unstable();
        assert_eq!(paths, ["clarity", "coherence", "comments"]);
        assert_eq!(p.1.load(std::sync::atomic::Ordering::SeqCst), expected);
    }
}

/// Fails validation on the first call and conforms afterwards.
struct SecondTime(std::sync::atomic::AtomicUsize);

impl Provider for SecondTime {
    fn complete(&self, _: &ProviderRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Value, ProviderError> {
        on_delta("…");
        Ok(match self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) {
            0 => json!({ "clarity": 11, "coherence": 8, "comments": [] }),
            _ => json!({ "clarity": 7, "coherence": 8, "comments": ["ok"] }),
        })
    }
}

#[test]
fn retry_recovers_and_provider_errors_are_not_retried() {
    let rt = runtime(SecondTime(Default::default()));
    let st = rt.execute_workflow("scoring", BTreeMap::from([("text".into(), json!("x"))]), &NullSink, &RunOptions::default());
    assert_eq!(st.output.unwrap()["clarity"], 7);

    let p = Arc::new(ScriptedProvider::new().failing("score_text", json!({}), "quota"));
    let rt = runtime(p.clone());
    let st = rt.execute_workflow("scoring", BTreeMap::from([("text".into(), json!("x"))]), &NullSink, &RunOptions::default());
    assert_eq!(st.error.unwrap().code(), "provider_error");
    assert_eq!(p.calls("score_text"), 1);
}

#[test]
fn one_step_workflow_matches_prompt_agent() {
    let p = ScriptedProvider::new().answer("score_text", json!({ "text": "t" }), json!({ "clarity": 3, "coherence": 4, "comments": [] }));
    let rt = runtime(p);
    let (a, b) = (Recorder::default(), Recorder::default());
    let direct = rt.run_prompt_agent("score_text", BTreeMap::from([("text".into(), json!("t"))]), &a, "default", 2).unwrap();
    let st = rt.execute_workflow("scoring", BTreeMap::from([("text".into(), json!("t"))]), &b, &RunOptions::default());
    assert_eq!(st.output.unwrap(), direct);
    assert_eq!(a.take(), b.take());
    assert_eq!(st.step_results.len(), 1);
}

#[test]
fn llm_then_validate_keeps_both_results() {
    let mut cat = Catalog::builtin().unwrap();
    cat.insert_workflow(
        serde_json::from_value(json!({
            "workflow_id": "fix", "inputs": ["text"],
            "steps": [
                { "step_id": "r", "kind": "llm_call", "template": "enhance_rewrite", "vars": { "text": "${inputs.text}", "instruction": "fix" } },
                { "step_id": "v", "kind": "validate", "schema": "rewrite", "target": "${steps.r.output}" }
            ],
            "output": "v"
        }))
        .unwrap(),
    );
    let p = ScriptedProvider::new().answer("enhance_rewrite", json!({ "text": "teh" }), json!({ "rewrite": "the" }));
    let rt = runtime_with(cat, p).unwrap();
    let st = rt.execute_workflow("fix", BTreeMap::from([("text".into(), json!("teh"))]), &NullSink, &RunOptions::default());
    assert_eq!(st.status, RunStatus::Succeeded);
    assert_eq!(st.step_results.len(), 2);
    assert_eq!(st.output.unwrap(), json!({ "rewrite": "the" }));
}

#[test]
fn concat_fan_out_joins_segment_texts_in_order() {
    let mut cat = Catalog::builtin().unwrap();
    cat.insert_template(PromptTemplate {
        template_id: "echo".into(),
        body: "${text}".into(),
        required_variables: ["text".to_string()].into(),
        output_schema: None,
    });
    for spec in [
        json!({ "workflow_id": "echo_segment", "inputs": ["segment"], "input_schemas": { "segment": "segment" },
                "steps": [{ "step_id": "e", "kind": "llm_call", "template": "echo", "vars": { "text": "${inputs.segment.text}" } }],
                "output": "e" }),
        json!({ "workflow_id": "echo_all", "inputs": ["document"],
                "steps": [
                    { "step_id": "s", "kind": "tool_call", "tool": "segment_document", "arguments": { "content": "${inputs.document}" } },
                    { "step_id": "f", "kind": "fan_out", "segments": "${steps.s.output.segments}", "workflow": "echo_segment", "max_parallel": 3 },
                    { "step_id": "m", "kind": "merge", "from": "f", "reducer": "concat_ordered" }
                ],
                "output": "m" }),
    ] {
        cat.insert_workflow(serde_json::from_value(spec).unwrap());
    }
    let rt = runtime_with(cat, Jitter::new(ScriptedProvider::new())).unwrap();
    let oracle: Vec<String> = sections(SIX_SECTION_DOC).into_iter().map(|s| s.text).collect();
    for w in [1, 2, 8] {
        let st = rt.execute_workflow("echo_all", BTreeMap::from([("document".into(), json!(SIX_SECTION_DOC))]), &NullSink, &width(w));
        assert_eq!(st.output.unwrap(), json!(oracle.join("\n\n")));
    }
}

fn rejected(spec: Value) -> margin_agents::WorkflowError {
    let mut cat = Catalog::builtin().unwrap();
    cat.insert_workflow(serde_json::from_value(spec).unwrap());
    match runtime_with(cat, ScriptedProvider::new()) {
        Err(margin_agents::builtin::InitError::Workflow(e)) => e,
        other => panic!("expected a static validation error, got {other:?}"),
    }
}

fn one_input(steps: Value) -> Value {
    json!({ "workflow_id": "w", "inputs": ["text"], "steps": steps, "output": "b" })
}

#[test]
fn static_validation_rejects_bad_specs() {
    let cases = [
        ("forward reference", json!([
            { "step_id": "a", "kind": "validate", "schema": "rewrite", "target": "${steps.b.output}" },
            { "step_id": "b", "kind": "validate", "schema": "rewrite", "target": "${inputs.text}" }
        ])),
        ("unknown tool", json!([{ "step_id": "b", "kind": "tool_call", "tool": "teleport", "arguments": {} }])),
        ("unknown template", json!([{ "step_id": "b", "kind": "llm_call", "template": "nope", "vars": {} }])),
        ("unknown model", json!([{ "step_id": "b", "kind": "llm_call", "template": "score_text", "model": "gpt-x", "vars": { "text": "${inputs.text}" } }])),
        ("unbound template variable", json!([{ "step_id": "b", "kind": "llm_call", "template": "enhance_rewrite", "vars": { "text": "${inputs.text}" } }])),
        ("unknown schema", json!([{ "step_id": "b", "kind": "validate", "schema": "nope", "target": 1 }])),
        ("path not guaranteed", json!([
            { "step_id": "a", "kind": "llm_call", "template": "enhance_rewrite", "vars": { "text": "${inputs.text}", "instruction": "x" } },
            { "step_id": "b", "kind": "validate", "schema": "rewrite", "target": "${steps.a.output.rationale}" }
        ])),
        ("path into unschema'd input", json!([{ "step_id": "b", "kind": "validate", "schema": "rewrite", "target": "${inputs.text.body}" }])),
        ("fan_out over text", json!([
            { "step_id": "a", "kind": "llm_call", "template": "review_summary", "vars": { "text": "${inputs.text}", "section": "x" } },
            { "step_id": "b", "kind": "fan_out", "segments": "${steps.a.output.summary}", "workflow": "segment_review", "max_parallel": 2 }
        ])),
        ("fan_out into unknown workflow", json!([{ "step_id": "b", "kind": "fan_out", "segments": [], "workflow": "nope", "max_parallel": 2 }])),
        ("unbound sub-workflow input", json!([{ "step_id": "b", "kind": "fan_out", "segments": [], "workflow": "reviewer", "item_input": "document", "max_parallel": 2 }])),
    ];
    for (what, steps) in cases {
        let e = rejected(one_input(steps));
        assert_eq!(e.workflow, "w", "{what}");
        assert_eq!(e.step.as_deref(), Some(if what == "forward reference" { "a" } else { "b" }), "{what}: {e}");
    }

    let cyclic = json!({ "workflow_id": "loop", "inputs": ["segment"],
        "steps": [{ "step_id": "b", "kind": "fan_out", "segments": "${inputs.segment}", "workflow": "loop", "max_parallel": 1 }],
        "output": "b" });
    assert!(rejected(cyclic).reason.contains("itself"));
}

#[test]
fn missing_and_invalid_inputs_fail_before_any_call() {
    let p = Arc::new(ScriptedProvider::new());
    let rt = runtime(p.clone());
    let st = rt.execute_workflow("scoring", BTreeMap::new(), &NullSink, &RunOptions::default());
    assert_eq!(st.error.unwrap().code(), "input_error");
    let bad_segment = BTreeMap::from([("segment".to_string(), json!({ "text": "x" }))]);
    let st = rt.execute_workflow("segment_review", bad_segment, &NullSink, &RunOptions::default());
    assert_eq!(st.error.unwrap().code(), "input_error");
    assert_eq!(p.total_calls(), 0);
    assert_eq!(rt.execute_workflow("nope", BTreeMap::new(), &NullSink, &RunOptions::default()).error.unwrap().code(), "config_error");
}

/// Random small specs over a fixed vocabulary of references; any spec the
/// validator accepts must never fail on binding resolution.
#[test]
fn accepted_specs_never_hit_unresolved_bindings() {
    let refs = [
        "${inputs.text}",
        "${inputs.segment}",
        "${inputs.segment.text}",
        "${inputs.segment.section_path}",
        "${inputs.segment.title}",
        "${inputs.text.body}",
        "${steps.s0.output}",
        "${steps.s1.output.summary}",
        "${steps.s0.output.rewrite}",
        "${steps.s2.output.rationale}",
        "${steps.s1.output.clarity}",
        "${steps.s3.output}",
        "prefix ${steps.s0.output} suffix",
    ];
    let templates = [("review_summary", ["text", "section"]), ("enhance_rewrite", ["text", "instruction"]), ("score_text", ["text", "text"])];
    let schemas = ["rewrite", "review_summary", "score", "segment"];
    let mut r = rng(7);
    let (mut accepted, mut refused) = (0, 0);
    for _ in 0..400 {
        let n = r.gen_range(1..=4);
        let steps: Vec<Value> = (0..n)
            .map(|i| {
                let id = format!("s{i}");
                if r.gen_bool(0.6) {
                    let (tpl, vars) = pick(&mut r, &templates);
                    let bound: serde_json::Map<String, Value> =
                        vars.iter().map(|v| (v.to_string(), json!(pick(&mut r, &refs)))).collect();
                    json!({ "step_id": id, "kind": "llm_call", "template": tpl, "vars": bound })
                } else {
                    json!({ "step_id": id, "kind": "validate", "schema": pick(&mut r, &schemas), "target": pick(&mut r, &refs) })
                }
            })
            .collect();
        let spec = json!({ "workflow_id": "rand", "inputs": ["text", "segment"], "input_schemas": { "segment": "segment" },
                           "steps": steps, "output": format!("s{}", n - 1) });
        let spec: WorkflowSpec = serde_json::from_value(spec).unwrap();
        let mut cat = Catalog::builtin().unwrap();
        cat.insert_workflow(spec);
        let Ok(rt) = runtime_with(cat, ScriptedProvider::new()) else {
            refused += 1;
            continue;
        };
        accepted += 1;
        let segment = json!({ "index": 0, "section_path": ["A"], "start": 0, "end": 1, "text": "x" });
        let inputs = BTreeMap::from([("text".to_string(), json!("hello")), ("segment".to_string(), segment)]);
        let st = rt.execute_workflow("rand", inputs, &NullSink, &RunOptions::default());
        if let Some(e) = st.error {
            assert_ne!(e.code(), "render_error", "accepted spec failed on a binding: {e}");
        }
    }
    assert!(accepted > 40 && refused > 40, "accepted {accepted}, refused {refused}");
}

#[test]
fn agent_streams_obey_the_protocol() {
    let store = DocumentStore::in_memory();
    let project = store.create_project("p", "u").unwrap();
    let v = store.put_document(&project.project_id, "main.tex", SIX_SECTION_DOC).unwrap();
    let rt = runtime(review_script(SIX_SECTION_DOC));
    for kind in AgentKind::ALL {
        let span = margin_core::Span::capture(&v, 30, 60).unwrap();
        let ctx = AgentContext { document: Some(v.clone()), span: Some(span), query: None, ..AgentContext::default() };
        let (writer, log) = StreamWriter::collecting();
        let run = rt.run_agent(kind, &ctx, &writer, &width(3));
        let events = log.lock().unwrap().clone();
        assert!(run.outcome.is_ok(), "{kind:?}: {:?}", run.outcome);
        let mut acc = AccumulatorState::default();
        let mut decoder = FrameDecoder::new();
        let mut decoded = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            assert_eq!(ev.sequence, i as u64);
            acc = acc.accumulate(ev).unwrap();
            decoded.extend(decoder.feed(&encode_event(ev).unwrap()));
        }
        assert_eq!(decoded, events);
        assert_eq!(events.iter().filter(|e| e.payload.is_terminal()).count(), 1);
        assert!(events.last().unwrap().payload.is_terminal());
        assert_eq!(run.state.emitted_events + 2, events.len() as u64, "run events plus product and done");
        assert_eq!(events.last().unwrap().payload, EventPayload::Done);
    }
}
