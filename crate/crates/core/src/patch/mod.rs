//! Line-based diffs, anchored patch sets and their application.
//!
//! Documents are handled as lists of lines where each line keeps its own
//! terminator, so a missing final newline is just a last line without `\n`
//! and round trips are byte-exact.

mod apply;
mod diff;
mod format;

use serde::{Deserialize, Serialize};

pub use apply::{apply_patch, match_hunks, render_preview, ApplyOptions, ApplyReport, ApplyStatus, HunkMatch};
pub use diff::{compute_diff, edit_script, EditOp};
pub use format::PatchParseError;

/// Number of unchanged lines recorded on each side of a hunk.
pub const CONTEXT_LINES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOp {
    Keep,
    Remove,
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub op: LineOp,
    /// Line content including its `\n`, absent only on a final unterminated line.
    pub text: String,
}

/// One contiguous change. `lines` starts and ends with a change; interior
/// `Keep` lines appear when nearby changes were merged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    /// 0-based index of the first body line in the source.
    pub old_start: usize,
    pub context_before: Vec<String>,
    pub lines: Vec<HunkLine>,
    pub context_after: Vec<String>,
}

impl DiffHunk {
    /// Source-side body: kept and removed lines in order.
    pub fn old_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter(|l| l.op != LineOp::Add).map(|l| l.text.as_str())
    }

    /// Result-side body: kept and added lines in order.
    pub fn new_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter(|l| l.op != LineOp::Remove).map(|l| l.text.as_str())
    }

    pub fn old_len(&self) -> usize {
        self.old_lines().count()
    }

    pub fn new_len(&self) -> usize {
        self.new_lines().count()
    }

    pub fn removed(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter(|l| l.op == LineOp::Remove).map(|l| l.text.as_str())
    }

    pub fn added(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter(|l| l.op == LineOp::Add).map(|l| l.text.as_str())
    }

    /// Inserted plus deleted lines.
    pub fn edit_size(&self) -> usize {
        self.lines.iter().filter(|l| l.op != LineOp::Keep).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatchSet {
    pub patch_id: String,
    pub document_id: String,
    pub base_version: u64,
    pub rationale: String,
    pub hunks: Vec<DiffHunk>,
}

impl PatchSet {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    pub fn edit_size(&self) -> usize {
        self.hunks.iter().map(DiffHunk::edit_size).sum()
    }

    pub fn bind(mut self, patch_id: impl Into<String>, document_id: impl Into<String>, base_version: u64) -> Self {
        self.patch_id = patch_id.into();
        self.document_id = document_id.into();
        self.base_version = base_version;
        self
    }

    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = rationale.into();
        self
    }

    /// The patch that undoes this one. Ids are left unbound.
    pub fn invert(&self) -> PatchSet {
        let mut delta: isize = 0;
        let hunks = self
            .hunks
            .iter()
            .map(|h| {
                let old_start = (h.old_start as isize + delta) as usize;
                delta += h.new_len() as isize - h.old_len() as isize;
                DiffHunk {
                    old_start,
                    context_before: h.context_before.clone(),
                    lines: h
                        .lines
                        .iter()
                        .map(|l| HunkLine {
                            op: match l.op {
                                LineOp::Keep => LineOp::Keep,
                                LineOp::Remove => LineOp::Add,
                                LineOp::Add => LineOp::Remove,
                            },
                            text: l.text.clone(),
                        })
                        .collect(),
                    context_after: h.context_after.clone(),
                }
            })
            .collect();
        PatchSet { rationale: self.rationale.clone(), hunks, ..Default::default() }
    }

    /// True when hunks are sorted and their context-inclusive ranges are disjoint.
    pub fn is_well_formed(&self) -> bool {
        self.hunks.iter().all(|h| h.edit_size() > 0)
            && self.hunks.windows(2).all(|w| {
                let a_end = w[0].old_start + w[0].old_len() + w[0].context_after.len();
                let b_start = w[1].old_start - w[1].context_before.len().min(w[1].old_start);
                a_end <= b_start
            })
    }
}

/// One before/after pair shown to the author for a hunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preview {
    pub hunk: usize,
    pub before: String,
    pub after: String,
    pub section_path: Vec<String>,
}

/// Splits text into lines that keep their terminators.
pub fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

pub fn invert_patch(patch: &PatchSet) -> PatchSet {
    patch.invert()
}
