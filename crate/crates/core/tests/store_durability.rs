use std::io::Write;
use std::sync::Arc;

use margin_core::clock::ManualClock;
use margin_core::patch::{apply_patch, compute_diff, ApplyOptions};
use margin_core::store::{DocumentStore, MessageRecord, Origin, Role, Span, StoreError};
use proptest::prelude::*;

fn msg(role: Role, body: &str) -> MessageRecord {
    MessageRecord { role, body: body.into(), attached_span: None, attached_patch: None, timestamp: 0 }
}

#[test]
fn state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let (project, doc, thread, patch_id) = {
        let store = DocumentStore::open(&path).unwrap();
        let p = store.create_project("demo", "u1").unwrap();
        let v1 = store.put_document(&p.project_id, "main.tex", "a\nteh\nc\n").unwrap();
        store.put_document(&p.project_id, "main.tex", "a\nteh\nc\nd\n").unwrap();
        let t = store.create_thread(&p.project_id).unwrap();
        let span = Span::capture(&v1, 2, 5).unwrap();
        store
            .append_message(&t.thread_id, MessageRecord { attached_span: Some(span), ..msg(Role::User, "fix") })
            .unwrap();
        let patch = compute_diff("a\nteh\nc\nd\n", "a\nthe\nc\nd\n").bind("p1", &v1.document_id, 2);
        store.put_patch(patch).unwrap();
        store
            .append_message(&t.thread_id, MessageRecord { attached_patch: Some("p1".into()), ..msg(Role::Agent, "done") })
            .unwrap();
        (p.project_id, v1.document_id, t.thread_id, "p1")
    };
    let store = DocumentStore::open(&path).unwrap();
    assert_eq!(store.project(&project).unwrap().document_ids, vec![doc.clone()]);
    assert_eq!(store.get_version(&doc, 1).unwrap().content, "a\nteh\nc\n");
    assert_eq!(store.head(&doc).unwrap().version_id, 2);
    let t = store.thread(&thread).unwrap();
    assert_eq!(t.messages.len(), 2);
    assert_eq!(t.messages[0].attached_span.as_ref().unwrap().quoted_text, "teh");
    assert_eq!(store.list_threads(&project).unwrap().len(), 1);
    assert_eq!(store.patch(patch_id).unwrap().base_version, 2);
    // Appends after reopen continue the chain.
    assert_eq!(store.put_document(&project, "main.tex", "z").unwrap().version_id, 3);
}

#[test]
fn interrupted_final_append_is_discarded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let project = {
        let store = DocumentStore::open(&path).unwrap();
        store.create_project("demo", "u1").unwrap().project_id
    };
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"record\":\"proj").unwrap();
    let store = DocumentStore::open(&path).unwrap();
    assert!(store.project(&project).is_ok());
    store.create_project("second", "u1").unwrap();
    drop(store);
    assert_eq!(DocumentStore::open(&path).unwrap().list_projects().len(), 2);
}

#[test]
fn corrupt_interior_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    std::fs::write(&path, "garbage\n{}\n").unwrap();
    assert!(matches!(DocumentStore::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
}

#[test]
fn concurrent_writers_keep_a_linear_chain() {
    let store = Arc::new(DocumentStore::in_memory());
    let p = store.create_project("demo", "u1").unwrap();
    let doc = store.put_document(&p.project_id, "main.tex", "0\n").unwrap().document_id;
    std::thread::scope(|s| {
        for w in 0..8 {
            let store = &store;
            let pid = p.project_id.clone();
            let doc = doc.clone();
            s.spawn(move || {
                for i in 0..25 {
                    if i % 2 == 0 {
                        store.put_document(&pid, "main.tex", &format!("{w}-{i}\n")).unwrap();
                    } else {
                        store
                            .update_document(&doc, Origin::PatchApply, |h| (Some(format!("{}+\n", h.content)), ()))
                            .unwrap();
                    }
                }
            });
        }
    });
    let head = store.head(&doc).unwrap();
    assert_eq!(head.version_id, 1 + 8 * 25);
    for v in 1..=head.version_id {
        let ver = store.get_version(&doc, v).unwrap();
        assert_eq!(ver.version_id, v);
        assert_eq!(ver.parent_version, v.checked_sub(1).filter(|p| *p > 0));
    }
    assert_eq!(store.project(&p.project_id).unwrap().document_ids.len(), 1);
}

#[test]
fn clock_stamps_records() {
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    let store = DocumentStore::in_memory().with_clock(clock.clone());
    let p = store.create_project("demo", "u1").unwrap();
    clock.advance(10);
    let t = store.create_thread(&p.project_id).unwrap();
    assert_eq!((p.created_at, t.created_at), (1_700_000_000, 1_700_000_010));
}

#[test]
fn applied_patch_becomes_new_head() {
    let store = DocumentStore::in_memory();
    let p = store.create_project("demo", "u1").unwrap();
    let v1 = store.put_document(&p.project_id, "m.tex", "a\nteh\nc\n").unwrap();
    let patch = compute_diff(&v1.content, "a\nthe\nc\n");
    let (v2, report) = store
        .update_document(&v1.document_id, Origin::PatchApply, |head| {
            let (text, report) = apply_patch(&patch, &head.content, &ApplyOptions::default());
            ((!report.is_conflict()).then_some(text), report)
        })
        .unwrap();
    assert!(!report.is_conflict());
    let v2 = v2.unwrap();
    assert_eq!((v2.version_id, v2.origin, v2.content.as_str()), (2, Origin::PatchApply, "a\nthe\nc\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn versions_are_immutable_and_dense(contents in prop::collection::vec(".{0,40}", 1..12)) {
        let store = DocumentStore::in_memory();
        let p = store.create_project("demo", "u1").unwrap();
        let mut doc = String::new();
        for c in &contents {
            doc = store.put_document(&p.project_id, "a.tex", c).unwrap().document_id;
        }
        for (i, c) in contents.iter().enumerate() {
            let v = store.get_version(&doc, i as u64 + 1).unwrap();
            prop_assert_eq!(v.content, margin_core::text::normalize_newlines(c));
        }
        prop_assert!(store.get_version(&doc, contents.len() as u64 + 1).is_err());
    }

    #[test]
    fn span_resolution_is_idempotent(prefix in ".{0,20}", body in "[a-z ]{5,30}", insert in ".{0,15}") {
        let store = DocumentStore::in_memory();
        let p = store.create_project("demo", "u1").unwrap();
        let text = format!("{prefix}{body}");
        let v1 = store.put_document(&p.project_id, "a.tex", &text).unwrap();
        let v1_len = v1.content.chars().count();
        let start = v1_len - body.chars().count();
        let span = Span::capture(&v1, start, v1_len).unwrap();
        let v2 = store.put_document(&p.project_id, "a.tex", &format!("{insert}{}", v1.content)).unwrap();
        if let Ok(once) = store.resolve_span(&span, &v2) {
            prop_assert_eq!(&store.resolve_span(&once, &v2).unwrap(), &once);
            let chars: Vec<char> = v2.content.chars().collect();
            prop_assert_eq!(chars[once.start..once.end].iter().collect::<String>(), once.quoted_text.clone());
        }
    }
}
