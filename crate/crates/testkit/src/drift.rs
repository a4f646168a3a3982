//! Cases for applying a patch to a document that changed after the diff was taken.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::docs::words;

#[derive(Debug, Clone)]
enum LineEdit {
    InsertBefore(Vec<String>),
    Replace(Vec<String>),
    Delete,
}

type Edits = BTreeMap<usize, LineEdit>;

fn render(base: &[String], edits: &[&Edits]) -> String {
    let mut out = String::new();
    for (i, line) in base.iter().enumerate().chain(std::iter::once((base.len(), &String::new()))) {
        let mut kept = i < base.len();
        for e in edits {
            match e.get(&i) {
                Some(LineEdit::InsertBefore(ins)) => ins.iter().for_each(|l| out.push_str(l)),
                Some(LineEdit::Replace(repl)) => {
                    repl.iter().for_each(|l| out.push_str(l));
                    kept = false;
                }
                Some(LineEdit::Delete) => kept = false,
                None => {}
            }
        }
        if kept {
            out.push_str(line);
        }
    }
    out
}

/// Net change in line count from `e` at positions strictly before `line`,
/// counting an insertion at `line` itself as before it.
fn net_before(e: &Edits, line: usize) -> isize {
    e.range(..=line)
        .map(|(&p, ed)| match ed {
            LineEdit::InsertBefore(ins) => ins.len() as isize,
            LineEdit::Replace(r) if p < line => r.len() as isize - 1,
            LineEdit::Delete if p < line => -1,
            _ => 0,
        })
        .sum()
}

fn fresh_line(rng: &mut impl Rng, serial: &mut usize) -> String {
    *serial += 1;
    format!("{} [{}]\n", words(rng, 2, 7), serial)
}

/// A base document edited two ways: `edited` is what the patch was computed
/// toward, `target` is the base with unrelated edits placed at least three
/// lines from every intended change. `expected` carries both sets of edits.
#[derive(Debug, Clone)]
pub struct DriftCase {
    pub base: String,
    pub edited: String,
    pub target: String,
    pub expected: String,
    unrelated: Edits,
}

impl DriftCase {
    /// Line shift the unrelated edits cause for a hunk recorded at `old_start`.
    pub fn drift_at(&self, old_start: usize) -> isize {
        net_before(&self.unrelated, old_start)
    }
}

/// Base document lines; each line is unique so every hunk has one true home.
fn base_lines(rng: &mut impl Rng, n: usize, serial: &mut usize) -> Vec<String> {
    (0..n).map(|_| fresh_line(rng, serial)).collect()
}

fn touched_by(pos: usize, e: &LineEdit) -> Vec<usize> {
    match e {
        LineEdit::InsertBefore(_) => vec![pos.saturating_sub(1), pos],
        _ => vec![pos],
    }
}

fn far_from(pos: &[usize], touched: &BTreeSet<usize>, gap: usize) -> bool {
    pos.iter().all(|&p| touched.iter().all(|&t| p.abs_diff(t) >= gap))
}

fn random_edit(rng: &mut impl Rng, serial: &mut usize, allow_delete: bool) -> LineEdit {
    match rng.gen_range(0..if allow_delete { 3 } else { 2 }) {
        0 => LineEdit::InsertBefore((0..rng.gen_range(1..=3)).map(|_| fresh_line(rng, serial)).collect()),
        1 => LineEdit::Replace((0..rng.gen_range(1..=2)).map(|_| fresh_line(rng, serial)).collect()),
        _ => LineEdit::Delete,
    }
}

pub fn drift_case(rng: &mut impl Rng) -> DriftCase {
    let mut serial = 0;
    let n = rng.gen_range(20..=150);
    let base = base_lines(rng, n, &mut serial);

    let mut changes = Edits::new();
    let mut touched = BTreeSet::new();
    for _ in 0..rng.gen_range(1..=4) {
        let p = rng.gen_range(0..n);
        let e = random_edit(rng, &mut serial, true);
        let t = touched_by(p, &e);
        if changes.contains_key(&p) || !far_from(&t, &touched, 2) {
            continue;
        }
        touched.extend(t);
        changes.insert(p, e);
    }

    let mut unrelated = Edits::new();
    let mut used = touched.clone();
    let mut attempts = 0;
    while unrelated.len() < 3 && attempts < 200 {
        attempts += 1;
        let p = rng.gen_range(0..=n);
        let e = random_edit(rng, &mut serial, p < n);
        let e = if p == n { LineEdit::InsertBefore(vec![fresh_line(rng, &mut serial)]) } else { e };
        let t = touched_by(p, &e);
        if !far_from(&t, &touched, 3) || !far_from(&[p], &used, 1) {
            continue;
        }
        used.extend(t);
        unrelated.insert(p, e);
    }
    // Guarantee a real shift: prepend lines to the document.
    if !touched.iter().any(|&t| t < 3) && !unrelated.contains_key(&0) {
        unrelated.insert(0, LineEdit::InsertBefore((0..2).map(|_| fresh_line(rng, &mut serial)).collect()));
    }

    DriftCase {
        edited: render(&base, &[&changes]),
        target: render(&base, &[&unrelated]),
        expected: render(&base, &[&unrelated, &changes]),
        base: base.concat(),
        unrelated,
    }
}

/// A patch source and a target in which the first change's removed lines and
/// all surrounding context have been replaced by new text.
#[derive(Debug, Clone)]
pub struct ConflictCase {
    pub base: String,
    pub edited: String,
    pub target: String,
}

pub fn conflict_case(rng: &mut impl Rng) -> ConflictCase {
    let mut serial = 0;
    let n = rng.gen_range(12..=120);
    let base = base_lines(rng, n, &mut serial);
    let p = rng.gen_range(0..n);
    let mut changes = Edits::new();
    changes.insert(
        p,
        if rng.gen_bool(0.5) { LineEdit::Delete } else { LineEdit::Replace(vec![fresh_line(rng, &mut serial)]) },
    );
    let mut destroyed = Edits::new();
    for q in p.saturating_sub(2)..(p + 3).min(n) {
        destroyed.insert(q, LineEdit::Replace(vec![fresh_line(rng, &mut serial)]));
    }
    ConflictCase {
        edited: render(&base, &[&changes]),
        target: render(&base, &[&destroyed]),
        base: base.concat(),
    }
}
