//! Text form of a [`PatchSet`]: a small header followed by standard
//! unified-diff hunks.
//!
//! ```text
//! patch-id: "p-1"
//! document-id: "d-1"
//! base-version: 3
//! rationale: "Fix the typo."
//! --- a/document
//! +++ b/document
//! @@ -1,3 +1,3 @@
//!  a
//! -teh
//! +the
//!  c
//! \ No newline at end of file
//! ```
//!
//! Header values are JSON encoded. `parse` followed by `to_text` reproduces
//! the input byte for byte.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use super::{DiffHunk, HunkLine, LineOp, PatchSet};

const NO_EOL: &str = "\\ No newline at end of file";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct PatchParseError {
    pub line: usize,
    pub reason: String,
}

fn err(line: usize, reason: impl Into<String>) -> PatchParseError {
    PatchParseError { line: line + 1, reason: reason.into() }
}

fn range(start: usize, len: usize) -> String {
    // GNU convention: an empty range names the line before it.
    let shown = if len == 0 { start } else { start + 1 };
    format!("{shown},{len}")
}

fn push_line(out: &mut String, prefix: char, text: &str) {
    out.push(prefix);
    match text.strip_suffix('\n') {
        Some(body) => {
            out.push_str(body);
            out.push('\n');
        }
        None => {
            out.push_str(text);
            out.push('\n');
            out.push_str(NO_EOL);
            out.push('\n');
        }
    }
}

impl PatchSet {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let json = |s: &str| serde_json::to_string(s).expect("string encodes");
        let _ = writeln!(out, "patch-id: {}", json(&self.patch_id));
        let _ = writeln!(out, "document-id: {}", json(&self.document_id));
        let _ = writeln!(out, "base-version: {}", self.base_version);
        let _ = writeln!(out, "rationale: {}", json(&self.rationale));
        out.push_str("--- a/document\n+++ b/document\n");
        let mut delta: isize = 0;
        for h in &self.hunks {
            let old_from = h.old_start - h.context_before.len();
            let ctx = h.context_before.len() + h.context_after.len();
            let old_len = h.old_len() + ctx;
            let new_len = h.new_len() + ctx;
            let new_from = (old_from as isize + delta) as usize;
            delta += h.new_len() as isize - h.old_len() as isize;
            let _ = writeln!(out, "@@ -{} +{} @@", range(old_from, old_len), range(new_from, new_len));
            for c in &h.context_before {
                push_line(&mut out, ' ', c);
            }
            for l in &h.lines {
                let prefix = match l.op {
                    LineOp::Keep => ' ',
                    LineOp::Remove => '-',
                    LineOp::Add => '+',
                };
                push_line(&mut out, prefix, &l.text);
            }
            for c in &h.context_after {
                push_line(&mut out, ' ', c);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<PatchSet, PatchParseError> {
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        if lines.iter().any(|l| !l.ends_with('\n')) {
            return Err(err(lines.len().saturating_sub(1), "patch text must end with a newline"));
        }
        let lines: Vec<&str> = lines.iter().map(|l| &l[..l.len() - 1]).collect();
        let header = |i: usize, key: &str| -> Result<&str, PatchParseError> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(key))
                .and_then(|l| l.strip_prefix(": "))
                .ok_or_else(|| err(i, format!("expected `{key}:` header")))
        };
        let string = |i: usize, key: &str| -> Result<String, PatchParseError> {
            let raw = header(i, key)?;
            let value: String = serde_json::from_str(raw).map_err(|e| err(i, e.to_string()))?;
            if serde_json::to_string(&value).ok().as_deref() != Some(raw) {
                return Err(err(i, "non-canonical JSON string"));
            }
            Ok(value)
        };
        let patch_id = string(0, "patch-id")?;
        let document_id = string(1, "document-id")?;
        let raw_version = header(2, "base-version")?;
        let base_version = u64::from_str(raw_version).map_err(|e| err(2, e.to_string()))?;
        if base_version.to_string() != raw_version {
            return Err(err(2, "non-canonical version number"));
        }
        let rationale = string(3, "rationale")?;
        if lines.get(4) != Some(&"--- a/document") || lines.get(5) != Some(&"+++ b/document") {
            return Err(err(4, "expected `--- a/document` and `+++ b/document`"));
        }

        let mut hunks = Vec::new();
        let mut i = 6;
        let mut delta: isize = 0;
        while i < lines.len() {
            let (old_from, old_len, new_from, new_len) = parse_hunk_header(lines[i]).ok_or_else(|| err(i, "bad hunk header"))?;
            let header_line = i;
            i += 1;
            let mut body: Vec<(char, String)> = Vec::new();
            while i < lines.len() && !lines[i].starts_with("@@") {
                let l = lines[i];
                if l == NO_EOL {
                    let last = body.last_mut().ok_or_else(|| err(i, "marker without a line"))?;
                    if !last.1.ends_with('\n') {
                        return Err(err(i, "duplicate no-newline marker"));
                    }
                    last.1.pop();
                } else {
                    let mut chars = l.chars();
                    let prefix = chars.next().ok_or_else(|| err(i, "empty hunk line"))?;
                    if !matches!(prefix, ' ' | '-' | '+') {
                        return Err(err(i, format!("unexpected line prefix {prefix:?}")));
                    }
                    body.push((prefix, format!("{}\n", chars.as_str())));
                }
                i += 1;
            }
            let first = body.iter().position(|(p, _)| *p != ' ').ok_or_else(|| err(header_line, "hunk without changes"))?;
            let last = body.iter().rposition(|(p, _)| *p != ' ').unwrap_or(first);
            let context_before: Vec<String> = body[..first].iter().map(|(_, t)| t.clone()).collect();
            let context_after: Vec<String> = body[last + 1..].iter().map(|(_, t)| t.clone()).collect();
            let hunk_lines: Vec<HunkLine> = body[first..=last]
                .iter()
                .map(|(p, t)| HunkLine {
                    op: match p {
                        ' ' => LineOp::Keep,
                        '-' => LineOp::Remove,
                        _ => LineOp::Add,
                    },
                    text: t.clone(),
                })
                .collect();
            let hunk = DiffHunk { old_start: old_from + context_before.len(), context_before, lines: hunk_lines, context_after };
            let ctx = hunk.context_before.len() + hunk.context_after.len();
            if hunk.old_len() + ctx != old_len || hunk.new_len() + ctx != new_len {
                return Err(err(header_line, "hunk line counts disagree with header"));
            }
            if (old_from as isize + delta) as usize != new_from {
                return Err(err(header_line, "new-side start disagrees with earlier hunks"));
            }
            delta += hunk.new_len() as isize - hunk.old_len() as isize;
            hunks.push(hunk);
        }
        let patch = PatchSet { patch_id, document_id, base_version, rationale, hunks };
        if !patch.is_well_formed() {
            return Err(err(6, "hunks overlap or are out of order"));
        }
        if patch.to_text() != text {
            return Err(err(0, "patch text is not in canonical form"));
        }
        Ok(patch)
    }
}

/// `@@ -a,b +c,d @@` → 0-based (old_from, old_len, new_from, new_len).
fn parse_hunk_header(line: &str) -> Option<(usize, usize, usize, usize)> {
    let inner = line.strip_prefix("@@ -")?.strip_suffix(" @@")?;
    let (old, new) = inner.split_once(" +")?;
    let side = |s: &str| -> Option<(usize, usize)> {
        let (start, len) = s.split_once(',')?;
        let (start, len): (usize, usize) = (start.parse().ok()?, len.parse().ok()?);
        if len == 0 {
            Some((start, 0))
        } else {
            Some((start.checked_sub(1)?, len))
        }
    };
    let (a, b) = side(old)?;
    let (c, d) = side(new)?;
    Some((a, b, c, d))
}
