use serde::{Deserialize, Serialize};

use super::{split_lines, DiffHunk, PatchSet, Preview};
use crate::latex::{locate_segment, segment_document, Granularity};
use crate::text::char_len;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApplyOptions {
    /// Minimum fraction of context plus source lines that must match in a fuzzy placement.
    pub fuzzy_threshold: f64,
    /// Largest line offset searched away from the recorded position.
    pub max_offset: usize,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self { fuzzy_threshold: 0.8, max_offset: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyStatus {
    Applied,
    AppliedWithOffsets,
    Conflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkMatch {
    pub hunk: usize,
    /// Target line where the hunk body starts.
    pub matched_line: usize,
    pub offset: isize,
    pub fuzzy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub status: ApplyStatus,
    pub per_hunk: Vec<HunkMatch>,
    /// Indices of hunks that could not be placed.
    pub conflicts: Vec<usize>,
    pub new_version: Option<u64>,
}

impl ApplyReport {
    pub fn is_conflict(&self) -> bool {
        self.status == ApplyStatus::Conflict
    }
}

/// Offsets in search order: 0, -1, +1, -2, +2, ...
fn offsets(max: usize) -> impl Iterator<Item = isize> {
    std::iter::once(0).chain((1..=max as isize).flat_map(|d| [-d, d]))
}

fn place_exact(h: &DiffHunk, target: &[&str], base: isize) -> bool {
    if base < h.context_before.len() as isize {
        return false;
    }
    let p = base as usize;
    let body: Vec<&str> = h.old_lines().collect();
    let begin = p - h.context_before.len();
    let end = p + body.len() + h.context_after.len();
    if end > target.len() {
        return false;
    }
    h.context_before.iter().map(String::as_str).chain(body).chain(h.context_after.iter().map(String::as_str))
        .zip(&target[begin..end])
        .all(|(want, have)| want == *have)
}

fn place_fuzzy(h: &DiffHunk, target: &[&str], p: usize, threshold: f64) -> bool {
    let body: Vec<&str> = h.old_lines().collect();
    if p + body.len() > target.len() || body.iter().zip(&target[p..]).any(|(w, t)| w != t) {
        return false;
    }
    let line_at = |i: isize| (i >= 0).then(|| target.get(i as usize)).flatten();
    let cb = h.context_before.len() as isize;
    let before = h
        .context_before
        .iter()
        .enumerate()
        .filter(|(i, want)| line_at(p as isize - cb + *i as isize) == Some(&want.as_str()))
        .count();
    let after_base = (p + body.len()) as isize;
    let after = h
        .context_after
        .iter()
        .enumerate()
        .filter(|(i, want)| line_at(after_base + *i as isize) == Some(&want.as_str()))
        .count();
    let total = body.len() + h.context_before.len() + h.context_after.len();
    total == 0 || (body.len() + before + after) as f64 / total as f64 >= threshold
}

fn locate(
    h: &DiffHunk,
    hunk: usize,
    target: &[&str],
    delta: isize,
    floor: usize,
    opts: &ApplyOptions,
) -> Option<HunkMatch> {
    let expected = h.old_start as isize + delta;
    let fits = |p: isize| p >= floor as isize && p as usize <= target.len();
    let found = |offset: isize, fuzzy| {
        let matched_line = (expected + offset) as usize;
        HunkMatch { hunk, matched_line, offset: matched_line as isize - h.old_start as isize, fuzzy }
    };
    if let Some(off) = offsets(opts.max_offset).find(|&o| fits(expected + o) && place_exact(h, target, expected + o)) {
        return Some(found(off, false));
    }
    offsets(opts.max_offset)
        .find(|&o| fits(expected + o) && place_fuzzy(h, target, (expected + o) as usize, opts.fuzzy_threshold))
        .map(|off| found(off, true))
}

/// Places every hunk of `patch` in `target`, each strictly after the previous
/// hunk's body. Returns the matches and the indices of hunks that could not be placed.
pub fn match_hunks(patch: &PatchSet, target: &str, opts: &ApplyOptions) -> (Vec<HunkMatch>, Vec<usize>) {
    let lines = split_lines(target);
    let mut matches: Vec<HunkMatch> = Vec::new();
    let mut conflicts = Vec::new();
    // Later hunks are searched around the drift observed on the previous one.
    let mut drift = 0isize;
    let mut floor = 0usize;
    for (i, h) in patch.hunks.iter().enumerate() {
        match locate(h, i, &lines, drift, floor, opts) {
            Some(m) => {
                floor = m.matched_line + h.old_len();
                drift = m.offset;
                matches.push(m);
            }
            None => conflicts.push(i),
        }
    }
    (matches, conflicts)
}

/// Applies all hunks or none. On conflict the returned text equals `target`.
pub fn apply_patch(patch: &PatchSet, target: &str, opts: &ApplyOptions) -> (String, ApplyReport) {
    let (matches, conflicts) = match_hunks(patch, target, opts);
    if !conflicts.is_empty() {
        let report = ApplyReport { status: ApplyStatus::Conflict, per_hunk: matches, conflicts, new_version: None };
        return (target.to_owned(), report);
    }
    let mut lines: Vec<&str> = split_lines(target);
    for m in matches.iter().rev() {
        let h = &patch.hunks[m.hunk];
        let start = m.matched_line;
        lines.splice(start..start + h.old_len(), h.new_lines());
    }
    let clean = matches.iter().all(|m| m.offset == 0 && !m.fuzzy);
    let report = ApplyReport {
        status: if clean { ApplyStatus::Applied } else { ApplyStatus::AppliedWithOffsets },
        per_hunk: matches,
        conflicts,
        new_version: None,
    };
    (lines.concat(), report)
}

/// Before/after pairs per hunk, annotated with the enclosing section of the
/// place the hunk matches in `base`. Returns the conflicting hunk indices if
/// any hunk cannot be placed.
pub fn render_preview(patch: &PatchSet, base: &str, opts: &ApplyOptions) -> Result<Vec<Preview>, Vec<usize>> {
    let (matches, conflicts) = match_hunks(patch, base, opts);
    if !conflicts.is_empty() {
        return Err(conflicts);
    }
    let lines = split_lines(base);
    let mut line_offsets = Vec::with_capacity(lines.len() + 1);
    let mut acc = 0;
    for l in &lines {
        line_offsets.push(acc);
        acc += char_len(l);
    }
    line_offsets.push(acc);
    let total = acc;
    let segments = segment_document(base, Granularity::Section);

    Ok(matches
        .iter()
        .map(|m| {
            let h = &patch.hunks[m.hunk];
            let ctx_b = h.context_before.concat();
            let ctx_a = h.context_after.concat();
            let before = format!("{ctx_b}{}{ctx_a}", h.old_lines().collect::<String>());
            let after = format!("{ctx_b}{}{ctx_a}", h.new_lines().collect::<String>());
            let at = line_offsets[m.matched_line].min(total.saturating_sub(1));
            let section_path = locate_segment(&segments, total, at).map(|s| s.section_path.clone()).unwrap_or_default();
            Preview { hunk: m.hunk, before, after, section_path }
        })
        .collect())
}
