use serde::{Deserialize, Serialize};

use super::{DocumentVersion, StoreError};

/// Characters of surrounding text captured on each side of a span.
pub const SPAN_CONTEXT: usize = 32;

/// An anchored selection: character offsets into one version plus the quoted
/// text and its surroundings, so it can be found again after edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub document_id: String,
    pub version_id: u64,
    pub start: usize,
    pub end: usize,
    pub quoted_text: String,
    pub context_before: String,
    pub context_after: String,
}

impl Span {
    /// Captures `[start, end)` of `version`.
    pub fn capture(version: &DocumentVersion, start: usize, end: usize) -> Result<Span, StoreError> {
        let chars: Vec<char> = version.content.chars().collect();
        if start > end || end > chars.len() {
            return Err(StoreError::Validation(format!(
                "span [{start}, {end}) outside document of length {}",
                chars.len()
            )));
        }
        Ok(Span {
            document_id: version.document_id.clone(),
            version_id: version.version_id,
            start,
            end,
            quoted_text: chars[start..end].iter().collect(),
            context_before: chars[start.saturating_sub(SPAN_CONTEXT)..start].iter().collect(),
            context_after: chars[end..(end + SPAN_CONTEXT).min(chars.len())].iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Finds `span` again in `target`.
///
/// Candidates are exact occurrences of the quoted text, tried in tiers: both
/// contexts match, then one context, then a unique bare occurrence. Within a
/// tier the occurrence closest to the old start wins, earlier on ties.
pub fn resolve_span(span: &Span, target: &DocumentVersion) -> Result<Span, StoreError> {
    if span.document_id != target.document_id {
        return Err(StoreError::Validation("span belongs to a different document".into()));
    }
    if span.version_id == target.version_id {
        return Ok(span.clone());
    }
    let text: Vec<char> = target.content.chars().collect();
    let quoted: Vec<char> = span.quoted_text.chars().collect();
    let before: Vec<char> = span.context_before.chars().collect();
    let after: Vec<char> = span.context_after.chars().collect();
    if quoted.len() > text.len() {
        return Err(StoreError::Relocation);
    }
    let hits: Vec<usize> = (0..=text.len() - quoted.len()).filter(|&s| text[s..].starts_with(&quoted)).collect();
    let before_ok = |s: usize| text[..s].ends_with(&before);
    let after_ok = |s: usize| text[s + quoted.len()..].starts_with(&after);

    let closest = |cands: Vec<usize>| {
        cands.into_iter().min_by_key(|&s| ((s as i64 - span.start as i64).unsigned_abs(), s))
    };
    let both: Vec<usize> = hits.iter().copied().filter(|&s| before_ok(s) && after_ok(s)).collect();
    let one: Vec<usize> = hits.iter().copied().filter(|&s| before_ok(s) || after_ok(s)).collect();
    let found = closest(both)
        .or_else(|| closest(one))
        .or_else(|| (hits.len() == 1).then(|| hits[0]))
        .ok_or(StoreError::Relocation)?;
    Span::capture(target, found, found + quoted.len())
}
