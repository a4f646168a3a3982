//! The tools every standard runtime registers.

use std::collections::BTreeMap;
use std::sync::Arc;

use margin_core::latex::{segment_document, Granularity};
use margin_core::patch::compute_diff;
use margin_core::text::{char_len, char_slice};
use serde_json::{json, Value};

use crate::retrieval::{render_comparison_table, Aspect, AspectComparison, ComparisonReport};
use crate::retrieval::{CorpusEntry, CorpusIndex, RetrievalConfig};
use crate::tools::{ToolDescriptor, ToolError, ToolRegistry};

fn desc(name: &str, description: &str, input: &str, output: &str) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        description: description.into(),
        input_schema: input.into(),
        output_schema: output.into(),
    }
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Result<&'a str, String> {
    args.get(key).and_then(Value::as_str).ok_or_else(|| format!("`{key}` must be a string"))
}

fn usize_arg(args: &Value, key: &str) -> Result<usize, String> {
    args.get(key)
        .and_then(Value::as_u64)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| format!("`{key}` must be a non-negative integer"))
}

/// A hit enriched with the entry's citation metadata.
pub fn hit_json(entry: &CorpusEntry, cosine: f64, rerank_score: f64, note: &str) -> Value {
    let mut v = json!({
        "entry_id": entry.entry_id,
        "title": entry.title,
        "authors": entry.authors,
        "affiliations": entry.affiliations,
        "year": entry.year,
        "venue": entry.venue,
        "cosine": cosine,
        "rerank_score": rerank_score,
        "relevance_note": note,
    });
    if let Some(url) = &entry.url {
        v["url"] = json!(url);
    }
    v
}

pub const DEFAULT_K: usize = 10;

/// Registers `segment_document`, `literature_search`, `lookup_reference`,
/// `draft_patch` and `render_comparison_table`.
pub fn register_builtin_tools(reg: &ToolRegistry, corpus: Arc<CorpusIndex>, cfg: RetrievalConfig) -> Result<(), ToolError> {
    reg.register(
        desc(
            "segment_document",
            "Split a LaTeX document into reviewable segments by section or paragraph.",
            "segment_document_in",
            "segment_document_out",
        ),
        |args| {
            let granularity = match args.get("granularity").and_then(Value::as_str) {
                Some("paragraph") => Granularity::Paragraph,
                _ => Granularity::Section,
            };
            let segments = segment_document(str_arg(args, "content")?, granularity);
            Ok(json!({ "segments": segments }))
        },
    )?;

    let search_corpus = corpus.clone();
    reg.register(
        desc(
            "literature_search",
            "Embedding search over the paper corpus followed by lexical re-ranking.",
            "literature_search_in",
            "literature_search_out",
        ),
        move |args| {
            let k = args.get("k").and_then(Value::as_u64).map_or(DEFAULT_K, |k| k as usize);
            let hits = search_corpus.retrieve(str_arg(args, "query")?, k, &cfg);
            let hits: Vec<Value> = hits
                .iter()
                .filter_map(|h| {
                    let e = search_corpus.entry(&h.entry_id)?;
                    Some(hit_json(e, h.cosine, h.rerank_score.unwrap_or(0.0), &h.relevance_note))
                })
                .collect();
            Ok(json!({ "hits": hits }))
        },
    )?;

    reg.register(
        desc(
            "lookup_reference",
            "Best-matching corpus entry with authors, affiliations, year and venue for citation.",
            "lookup_reference_in",
            "corpus_entry",
        ),
        move |args| {
            let e = corpus.lookup_reference(str_arg(args, "query")?, &cfg).map_err(|e| e.to_string())?;
            serde_json::to_value(e).map_err(|e| e.to_string())
        },
    )?;

    reg.register(
        desc(
            "draft_patch",
            "Replace the character range [start, end) of a document and return the resulting patch.",
            "draft_patch_in",
            "draft_patch_out",
        ),
        |args| {
            let content = str_arg(args, "content")?;
            let (start, end) = (usize_arg(args, "start")?, usize_arg(args, "end")?);
            let len = char_len(content);
            if start > end || end > len {
                return Err(format!("range [{start}, {end}) outside document of length {len}"));
            }
            let before = char_slice(content, 0, start).unwrap_or_default();
            let after = char_slice(content, end, len).unwrap_or_default();
            let updated = format!("{before}{}{after}", str_arg(args, "replacement")?);
            let patch = compute_diff(content, &updated);
            Ok(json!({ "patch": patch.to_text(), "hunks": patch.hunks.len() }))
        },
    )?;

    reg.register(
        desc(
            "render_comparison_table",
            "Render an aspect-by-aspect comparison as a LaTeX tabular.",
            "comparison_table_in",
            "comparison_table_out",
        ),
        |args| {
            let aspects: BTreeMap<Aspect, AspectComparison> =
                serde_json::from_value(args["aspects"].clone()).map_err(|e| format!("aspects: {e}"))?;
            let report = ComparisonReport::new(aspects).map_err(|a| format!("aspect `{}` missing", a.key()))?;
            Ok(json!({ "latex": render_comparison_table(&report) }))
        },
    )?;
    Ok(())
}
