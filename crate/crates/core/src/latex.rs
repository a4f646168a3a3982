//! LaTeX tokenization, section trees and segmentation.
//!
//! The tokenizer is total: every input string produces a token list whose
//! lexemes concatenate back to the input. Offsets and lengths count chars.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Command,
    GroupOpen,
    GroupClose,
    MathInline,
    MathDisplay,
    Comment,
    Text,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionLevel {
    Document,
    Section,
    Subsection,
    Subsubsection,
    ParagraphBlock,
}

impl SectionLevel {
    fn from_command(name: &str) -> Option<Self> {
        match name {
            "\\section" => Some(Self::Section),
            "\\subsection" => Some(Self::Subsection),
            "\\subsubsection" => Some(Self::Subsubsection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionNode {
    pub level: SectionLevel,
    pub title: String,
    pub start: usize,
    pub end: usize,
    pub children: Vec<SectionNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub section_path: Vec<String>,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Section,
    Paragraph,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LocateError {
    #[error("offset {offset} is outside the document (length {len})")]
    OutOfRange { offset: usize, len: usize },
}

const SPECIALS: [char; 5] = ['\\', '{', '}', '$', '%'];

pub fn tokenize_latex(content: &str) -> Vec<Token> {
    Lexer::new(content).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    out: Vec<Token>,
}

impl Lexer {
    fn new(content: &str) -> Self {
        Self { chars: content.chars().collect(), pos: 0, out: Vec::new() }
    }

    fn run(mut self) -> Vec<Token> {
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            let end = match c {
                '%' => self.scan_while(self.pos + 1, |c| c != '\n'),
                '{' => {
                    self.emit(TokenKind::GroupOpen, self.pos + 1);
                    continue;
                }
                '}' => {
                    self.emit(TokenKind::GroupClose, self.pos + 1);
                    continue;
                }
                '\\' => {
                    self.lex_backslash();
                    continue;
                }
                '$' => {
                    self.lex_dollar();
                    continue;
                }
                c if c.is_whitespace() => self.scan_while(self.pos, char::is_whitespace),
                _ => self.scan_while(self.pos, |c| !c.is_whitespace() && !SPECIALS.contains(&c)),
            };
            let kind = if c == '%' {
                TokenKind::Comment
            } else if c.is_whitespace() {
                TokenKind::Whitespace
            } else {
                TokenKind::Text
            };
            self.emit(kind, end);
        }
        self.out
    }

    fn scan_while(&self, from: usize, pred: impl Fn(char) -> bool) -> usize {
        let mut i = from;
        while i < self.chars.len() && pred(self.chars[i]) {
            i += 1;
        }
        i
    }

    fn emit(&mut self, kind: TokenKind, end: usize) {
        let lexeme: String = self.chars[self.pos..end].iter().collect();
        self.out.push(Token { kind, lexeme, offset: self.pos, length: end - self.pos });
        self.pos = end;
    }

    fn lex_backslash(&mut self) {
        let next = self.chars.get(self.pos + 1).copied();
        match next {
            None => self.emit(TokenKind::Text, self.pos + 1),
            Some(c) if c.is_ascii_alphabetic() => {
                let end = self.scan_while(self.pos + 1, |c| c.is_ascii_alphabetic());
                self.emit(TokenKind::Command, end);
            }
            Some('[') => match self.find_closing(self.pos + 2, &['\\', ']']) {
                Some(end) => self.emit(TokenKind::MathDisplay, end),
                None => self.emit(TokenKind::Command, self.pos + 2),
            },
            Some('(') => match self.find_closing(self.pos + 2, &['\\', ')']) {
                Some(end) => self.emit(TokenKind::MathInline, end),
                None => self.emit(TokenKind::Command, self.pos + 2),
            },
            Some(_) => self.emit(TokenKind::Command, self.pos + 2),
        }
    }

    fn lex_dollar(&mut self) {
        if self.chars.get(self.pos + 1) == Some(&'$') {
            if let Some(end) = self.find_closing(self.pos + 2, &['$', '$']) {
                self.emit(TokenKind::MathDisplay, end);
                return;
            }
        } else if let Some(end) = self.find_closing(self.pos + 1, &['$']) {
            self.emit(TokenKind::MathInline, end);
            return;
        }
        // Unbalanced: the `$` is plain text and lexing resumes after it.
        self.emit(TokenKind::Text, self.pos + 1);
    }

    /// Finds `delim` starting at `from`, skipping backslash escapes. Gives up
    /// at a blank line so an unclosed math shift cannot swallow a paragraph.
    /// Returns the offset just past the delimiter.
    fn find_closing(&self, from: usize, delim: &[char]) -> Option<usize> {
        let mut i = from;
        let n = self.chars.len();
        while i < n {
            if self.chars[i..].starts_with(delim) {
                return Some(i + delim.len());
            }
            match self.chars[i] {
                '\\' if delim[0] != '\\' => i += 2,
                '\n' => {
                    let j = self.scan_while(i + 1, |c| c.is_whitespace() && c != '\n');
                    if j < n && self.chars[j] == '\n' {
                        return None;
                    }
                    i += 1;
                }
                _ => i += 1,
            }
        }
        None
    }
}

/// A recognized sectioning command and the extent of its arguments.
#[derive(Debug, Clone)]
struct Heading {
    level: SectionLevel,
    title: String,
    start: usize,
    /// One past the closing brace of the title group (or the command itself).
    end: usize,
}

fn source_of(tokens: &[Token]) -> Vec<char> {
    tokens.iter().flat_map(|t| t.lexeme.chars()).collect()
}

/// Parses `*`, `[short]` and `{title}` following a sectioning command.
/// Returns (title, end offset).
fn heading_args(src: &[char], mut i: usize) -> (String, usize) {
    let skip_ws = |mut i: usize| {
        while i < src.len() && src[i].is_whitespace() {
            i += 1;
        }
        i
    };
    let fallback = i;
    i = skip_ws(i);
    if src.get(i) == Some(&'*') {
        i = skip_ws(i + 1);
    }
    if src.get(i) == Some(&'[') {
        let mut depth = 0usize;
        while i < src.len() {
            match src[i] {
                '[' => depth += 1,
                ']' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            i += 1;
        }
        i = skip_ws(i + 1);
    }
    if src.get(i) != Some(&'{') {
        return (String::new(), fallback);
    }
    let open = i;
    let mut depth = 0usize;
    while i < src.len() {
        match src[i] {
            '\\' => i += 1,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    let title: String = src[open + 1..i].iter().collect();
                    return (title.trim().to_owned(), i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    // Unclosed title group: read the rest of the line.
    let stop = src[open + 1..].iter().position(|&c| c == '\n').map_or(src.len(), |p| open + 1 + p);
    let title: String = src[open + 1..stop].iter().collect();
    (title.trim().to_owned(), stop)
}

fn find_headings(tokens: &[Token], src: &[char]) -> (Vec<Heading>, Vec<Heading>) {
    let mut sections = Vec::new();
    let mut paragraphs = Vec::new();
    for tok in tokens.iter().filter(|t| t.kind == TokenKind::Command) {
        if let Some(level) = SectionLevel::from_command(&tok.lexeme) {
            let (title, end) = heading_args(src, tok.offset + tok.length);
            sections.push(Heading { level, title, start: tok.offset, end });
        } else if tok.lexeme == "\\paragraph" {
            let (title, end) = heading_args(src, tok.offset + tok.length);
            paragraphs.push(Heading { level: SectionLevel::ParagraphBlock, title, start: tok.offset, end });
        }
    }
    (sections, paragraphs)
}

pub fn build_section_tree(tokens: &[Token]) -> SectionNode {
    let src = source_of(tokens);
    let (headings, _) = find_headings(tokens, &src);
    tree_from_headings(&headings, src.len())
}

fn tree_from_headings(headings: &[Heading], len: usize) -> SectionNode {
    let mut root = SectionNode {
        level: SectionLevel::Document,
        title: String::new(),
        start: 0,
        end: len,
        children: Vec::new(),
    };
    // Stack of open nodes, outermost first; the root stays implicit.
    let mut stack: Vec<SectionNode> = Vec::new();
    fn close(stack: &mut Vec<SectionNode>, root: &mut SectionNode, end: usize) {
        let mut node = stack.pop().expect("non-empty stack");
        node.end = end;
        match stack.last_mut() {
            Some(parent) => parent.children.push(node),
            None => root.children.push(node),
        }
    }
    for h in headings {
        while stack.last().is_some_and(|n| n.level >= h.level) {
            close(&mut stack, &mut root, h.start);
        }
        stack.push(SectionNode {
            level: h.level,
            title: h.title.clone(),
            start: h.start,
            end: len,
            children: Vec::new(),
        });
    }
    while !stack.is_empty() {
        close(&mut stack, &mut root, len);
    }
    root
}

/// Character range of the `document` environment body, or the whole input.
fn body_range(tokens: &[Token], len: usize) -> (usize, usize) {
    let env_at = |i: usize, cmd: &str| -> Option<usize> {
        let t = |k: usize| tokens.get(i + k);
        (t(0)?.kind == TokenKind::Command
            && t(0)?.lexeme == cmd
            && t(1)?.kind == TokenKind::GroupOpen
            && t(2)?.lexeme == "document"
            && t(3)?.kind == TokenKind::GroupClose)
            .then(|| t(3).map(|c| c.offset + c.length))
            .flatten()
    };
    let start = (0..tokens.len()).find_map(|i| env_at(i, "\\begin"));
    let Some(start) = start else {
        return (0, len);
    };
    let end = (0..tokens.len())
        .filter(|&i| tokens[i].offset >= start)
        .find(|&i| env_at(i, "\\end").is_some())
        .map_or(len, |i| tokens[i].offset);
    (start, end)
}

fn collect_leaves<'a>(node: &'a SectionNode, path: &mut Vec<String>, out: &mut Vec<(&'a SectionNode, Vec<String>)>) {
    for child in &node.children {
        path.push(child.title.clone());
        if child.children.is_empty() {
            out.push((child, path.clone()));
        } else {
            collect_leaves(child, path, out);
        }
        path.pop();
    }
}

/// Shrinks `[start, end)` past leading and trailing whitespace.
fn trim_range(src: &[char], mut start: usize, mut end: usize) -> Option<(usize, usize)> {
    while start < end && src[start].is_whitespace() {
        start += 1;
    }
    while end > start && src[end - 1].is_whitespace() {
        end -= 1;
    }
    (start < end).then_some((start, end))
}

pub fn segment_document(content: &str, granularity: Granularity) -> Vec<Segment> {
    let tokens = tokenize_latex(content);
    let src = source_of(&tokens);
    let (headings, paragraph_heads) = find_headings(&tokens, &src);
    let tree = tree_from_headings(&headings, src.len());
    let (body_start, body_end) = body_range(&tokens, src.len());

    // Each leaf owns everything from the previous leaf's end up to its own
    // end, so parent headings and preamble text fold into the next leaf.
    let mut leaves = Vec::new();
    collect_leaves(&tree, &mut Vec::new(), &mut leaves);
    let mut regions: Vec<(usize, usize, Vec<String>)> = Vec::new();
    if leaves.is_empty() {
        regions.push((body_start, body_end, Vec::new()));
    } else {
        let mut cursor = body_start;
        let last = leaves.len() - 1;
        for (i, (leaf, path)) in leaves.into_iter().enumerate() {
            let end = if i == last { body_end } else { leaf.end };
            let (s, e) = (cursor.max(body_start), end.min(body_end));
            cursor = cursor.max(e);
            if s < e {
                regions.push((s, e, path));
            }
        }
    }

    let mut ranges: Vec<(usize, usize, Vec<String>)> = Vec::new();
    for (s, e, path) in regions {
        match granularity {
            Granularity::Section => {
                if let Some((s, e)) = trim_range(&src, s, e) {
                    ranges.push((s, e, path));
                }
            }
            Granularity::Paragraph => {
                for (ps, pe) in paragraph_blocks(&tokens, &src, &headings, &paragraph_heads, s, e) {
                    ranges.push((ps, pe, path.clone()));
                }
            }
        }
    }

    ranges
        .into_iter()
        .enumerate()
        .map(|(index, (start, end, section_path))| Segment {
            index,
            section_path,
            start,
            end,
            text: src[start..end].iter().collect(),
        })
        .collect()
}

/// Splits `[start, end)` on blank-line runs at group depth zero and before
/// `\paragraph`. Blocks that hold nothing but a heading merge into the next block.
fn paragraph_blocks(
    tokens: &[Token],
    src: &[char],
    headings: &[Heading],
    paragraph_heads: &[Heading],
    start: usize,
    end: usize,
) -> Vec<(usize, usize)> {
    let mut cuts = vec![start];
    let mut depth = 0usize;
    for tok in tokens.iter().filter(|t| t.offset >= start && t.offset + t.length <= end) {
        match tok.kind {
            TokenKind::GroupOpen => depth += 1,
            TokenKind::GroupClose => depth = depth.saturating_sub(1),
            TokenKind::Whitespace if depth == 0 && tok.lexeme.matches('\n').count() >= 2 => {
                cuts.push(tok.offset);
            }
            TokenKind::Command if depth == 0 && tok.lexeme == "\\paragraph" => cuts.push(tok.offset),
            _ => {}
        }
    }
    cuts.push(end);
    cuts.dedup();

    let in_heading = |i: usize| {
        headings.iter().chain(paragraph_heads).any(|h| h.start <= i && i < h.end)
    };
    let heading_only = |s: usize, e: usize| (s..e).all(|i| src[i].is_whitespace() || in_heading(i));

    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<usize> = None;
    for w in cuts.windows(2) {
        let Some((s, e)) = trim_range(src, w[0], w[1]) else { continue };
        let s = pending.take().unwrap_or(s);
        if heading_only(s, e) {
            pending = Some(s);
            continue;
        }
        blocks.push((s, e));
    }
    if let Some(s) = pending {
        if let Some((s, e)) = trim_range(src, s, end) {
            blocks.push((s, e));
        }
    }
    blocks
}

/// Returns the segment containing `offset`. Offsets in whitespace between
/// segments belong to the preceding segment, offsets before the first segment
/// to the first one.
pub fn locate_segment(segments: &[Segment], content_len: usize, offset: usize) -> Result<&Segment, LocateError> {
    if offset >= content_len || segments.is_empty() {
        return Err(LocateError::OutOfRange { offset, len: content_len });
    }
    let idx = segments.partition_point(|s| s.start <= offset);
    Ok(&segments[idx.saturating_sub(1)])
}

/// The segment holding a span's first character.
pub fn locate_segment_of_span<'a>(
    segments: &'a [Segment],
    content_len: usize,
    span: &Span,
) -> Result<&'a Segment, LocateError> {
    locate_segment(segments, content_len, span.start)
}
