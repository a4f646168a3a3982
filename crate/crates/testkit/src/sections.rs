//! Generated sectioned documents and a line-oriented recursive-descent
//! reference parser for their section trees.

use rand::Rng;

use crate::docs::words;
use crate::pick;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefNode {
    /// 0 for the document root, 1 section, 2 subsection, 3 subsubsection.
    pub level: u8,
    pub title: String,
    pub start: usize,
    pub end: usize,
    pub children: Vec<RefNode>,
}

const COMMANDS: [(&str, u8); 3] = [("\\section", 1), ("\\subsection", 2), ("\\subsubsection", 3)];

/// Body lines that must never be taken for headings.
const DECOYS: &[&str] = &[
    "% \\section{Commented Out}",
    "Inline $\\section{Math}$ is not structure.",
    "\\sectionmark{Not A Heading}",
    "\\\\section{Escaped}",
    "Text with 50\\% and a % trailing \\subsection{comment}",
    "\\paragraph{Run-in} paragraphs are not tree nodes.",
    "\\[ \\subsection{display} \\]",
    "",
];

fn heading(rng: &mut impl Rng, cmd: &str) -> (String, String) {
    let title = words(rng, 1, 3);
    let line = match rng.gen_range(0..6) {
        0 => format!("{cmd}*{{{title}}}"),
        1 => format!("{cmd}[Short]{{{title}}}"),
        2 => format!("{cmd}{{{title}}} \\label{{s:{}}}", rng.gen_range(0..99)),
        _ => format!("{cmd}{{{title}}}"),
    };
    (line, title)
}

fn body(rng: &mut impl Rng, out: &mut Vec<String>) {
    for _ in 0..rng.gen_range(0..=3) {
        if rng.gen_bool(0.3) {
            out.push(pick(rng, DECOYS).to_string());
        } else {
            out.push(format!("{}.", words(rng, 3, 9)));
        }
    }
}

/// A document with at most five sections and at most three heading levels.
/// Levels may skip (a subsubsection directly under a section).
pub fn sectioned_doc(rng: &mut impl Rng) -> String {
    let mut lines = Vec::new();
    if rng.gen_bool(0.3) {
        lines.push("\\documentclass{article}".to_owned());
        lines.push("\\begin{document}".to_owned());
    }
    body(rng, &mut lines);
    let sections = rng.gen_range(0..=5);
    for _ in 0..sections {
        lines.push(heading(rng, COMMANDS[0].0).0);
        body(rng, &mut lines);
        for _ in 0..rng.gen_range(0..=2) {
            let level = if rng.gen_bool(0.8) { 1 } else { 2 };
            lines.push(heading(rng, COMMANDS[level].0).0);
            body(rng, &mut lines);
            if level == 1 {
                for _ in 0..rng.gen_range(0..=2) {
                    lines.push(heading(rng, COMMANDS[2].0).0);
                    body(rng, &mut lines);
                }
            }
        }
    }
    let mut doc = lines.join("\n");
    if rng.gen_bool(0.8) {
        doc.push('\n');
    }
    doc
}

struct Head {
    level: u8,
    title: String,
    start: usize,
}

/// Recognizes a heading only at the very start of a line.
fn parse_heading(line: &str) -> Option<(u8, String)> {
    let (cmd, level) = COMMANDS.iter().copied().find(|(cmd, _)| {
        line.starts_with(cmd) && !line[cmd.len()..].starts_with(|c: char| c.is_ascii_alphabetic())
    })?;
    let mut rest = &line[cmd.len()..];
    rest = rest.strip_prefix('*').unwrap_or(rest);
    if rest.starts_with('[') {
        rest = &rest[rest.find(']')? + 1..];
    }
    let rest = rest.strip_prefix('{')?;
    let title = &rest[..rest.find('}')?];
    Some((level, title.trim().to_owned()))
}

fn descend(heads: &[Head], i: &mut usize, parent: u8, len: usize) -> Vec<RefNode> {
    let mut out = Vec::new();
    while *i < heads.len() && heads[*i].level > parent {
        let h = &heads[*i];
        *i += 1;
        let children = descend(heads, i, h.level, len);
        let end = heads.get(*i).map_or(len, |n| n.start);
        out.push(RefNode { level: h.level, title: h.title.clone(), start: h.start, end, children });
    }
    out
}

/// Section tree of a document produced by [`sectioned_doc`]; offsets count chars.
pub fn reference_tree(doc: &str) -> RefNode {
    let mut heads = Vec::new();
    let mut offset = 0;
    for line in doc.split('\n') {
        if let Some((level, title)) = parse_heading(line) {
            heads.push(Head { level, title, start: offset });
        }
        offset += line.chars().count() + 1;
    }
    let len = doc.chars().count();
    let mut i = 0;
    let children = descend(&heads, &mut i, 0, len);
    RefNode { level: 0, title: String::new(), start: 0, end: len, children }
}
