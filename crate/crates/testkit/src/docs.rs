use rand::Rng;

use crate::pick;

pub const WORDS: &[&str] = &[
    "graph", "neural", "network", "model", "attention", "layer", "sparse", "dense", "protein", "folding",
    "dynamics", "retrieval", "ranking", "corpus", "language", "token", "embedding", "vector", "cosine",
    "benchmark", "dataset", "baseline", "ablation", "training", "inference", "latency", "memory", "kernel",
    "gradient", "loss", "optimizer", "schedule", "transformer", "encoder", "decoder", "review", "patch",
    "diff", "editor", "latex", "section", "figure", "table", "theorem", "proof", "lemma", "bound",
    "convex", "stochastic", "sampling", "variance", "bias", "robust", "causal", "policy", "reward",
    "agent", "planning", "search", "tree", "cluster", "label", "query", "document", "segment",
];

pub fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *pick(rng, WORDS)).collect::<Vec<_>>().join(" ")
}

/// A single line of LaTeX-like text, without terminator. Repeated lines such
/// as blank lines and `\end{itemize}` are deliberately common.
pub fn latex_line(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..20) {
        0..=7 => format!("{}.", words(rng, 3, 10)),
        8 => String::new(),
        9 => format!("\\section{{{}}}", words(rng, 1, 3)),
        10 => format!("\\subsection{{{}}}", words(rng, 1, 3)),
        11 => format!("We show $x_{} \\leq {}$ for {}.", rng.gen_range(0..9), rng.gen_range(1..99), words(rng, 1, 4)),
        12 => format!("% {}", words(rng, 1, 5)),
        13 => "\\begin{itemize}".into(),
        14 => format!("  \\item {}", words(rng, 2, 6)),
        15 => "\\end{itemize}".into(),
        16 => format!("\\[ \\sum_{{i=1}}^{{{}}} a_i \\]", rng.gen_range(2..20)),
        17 => format!("See~\\cite{{ref{}}} and Table~\\ref{{tab:{}}}.", rng.gen_range(0..50), rng.gen_range(0..9)),
        18 => "}".into(),
        _ => format!("Unicode: {} é 😀 ü.", words(rng, 1, 3)),
    }
}

/// A document of exactly `n` lines. The final newline is present or absent at random.
pub fn latex_doc(rng: &mut impl Rng, n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        out.push_str(&latex_line(rng));
        if i + 1 < n || rng.gen_bool(0.7) {
            out.push('\n');
        }
    }
    out
}

/// Applies a few random line-region edits (insert, delete, replace) and
/// occasionally flips the final newline.
pub fn mutate(rng: &mut impl Rng, doc: &str) -> String {
    let mut lines: Vec<String> = doc.split('\n').map(str::to_owned).collect();
    let had_final = doc.ends_with('\n');
    if had_final {
        lines.pop();
    }
    for _ in 0..rng.gen_range(0..=4) {
        let at = rng.gen_range(0..=lines.len());
        let span = rng.gen_range(0..=3).min(lines.len() - at);
        match rng.gen_range(0..3) {
            0 => {
                for k in 0..rng.gen_range(1..=3) {
                    lines.insert(at + k, latex_line(rng));
                }
            }
            1 => {
                lines.drain(at..at + span);
            }
            _ => {
                let repl: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| latex_line(rng)).collect();
                lines.splice(at..at + span, repl);
            }
        }
    }
    let final_nl = if rng.gen_bool(0.1) { !had_final } else { had_final };
    let mut out = lines.join("\n");
    if final_nl && !lines.is_empty() {
        out.push('\n');
    }
    out
}

/// A document pair of at most `max_lines` lines each; sometimes identical,
/// sometimes completely unrelated.
pub fn doc_pair(rng: &mut impl Rng, max_lines: usize) -> (String, String) {
    // `mutate` adds at most 12 lines.
    let cap = max_lines.saturating_sub(12);
    let n = rng.gen_range(0..=cap);
    let a = latex_doc(rng, n);
    let b = match rng.gen_range(0..20) {
        0 => a.clone(),
        1 => {
            let m = rng.gen_range(0..=cap);
            latex_doc(rng, m)
        }
        _ => mutate(rng, &a),
    };
    (a, b)
}

/// Number of lines in `text` as a line-list (a trailing unterminated line counts).
pub fn line_count(text: &str) -> usize {
    text.split_inclusive('\n').count()
}

const ALPHABET: &[char] = &[
    '\\', '{', '}', '$', '%', '[', ']', '(', ')', '*', ' ', '\n', '\t', '\r', 'a', 'b', 's', 'e', 'c', 't', 'i',
    'o', 'n', 'é', 'ß', '😀', '中', '\u{200b}', '\u{0301}', '~', '^', '_', '&', '#',
];

/// Random Unicode text biased toward LaTeX-significant characters.
pub fn random_unicode(rng: &mut impl Rng, max_len: usize) -> String {
    let n = rng.gen_range(0..=max_len);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.8) {
                *pick(rng, ALPHABET)
            } else {
                loop {
                    if let Some(c) = char::from_u32(rng.gen_range(0..0x11_0000)) {
                        break c;
                    }
                }
            }
        })
        .collect()
}
