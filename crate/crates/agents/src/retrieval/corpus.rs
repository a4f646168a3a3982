//! Corpus files: a header line `{"format":"margin-corpus","version":1}`
//! followed by one JSON `CorpusEntry` per line. Blank lines are ignored.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CorpusEntry, CorpusError};

pub const CORPUS_FORMAT: &str = "margin-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut entries = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| CorpusError::Format { line: n, reason };
        if !saw_header {
            let h: Header = serde_json::from_str(&line).map_err(|e| fail(format!("bad header: {e}")))?;
            if h.format != CORPUS_FORMAT || h.version != CORPUS_VERSION {
                return Err(fail(format!("unsupported corpus format {} v{}", h.format, h.version)));
            }
            saw_header = true;
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?);
    }
    if !saw_header {
        return Err(CorpusError::Format { line: 1, reason: "missing header".into() });
    }
    Ok(entries)
}

pub fn write_corpus(mut out: impl Write, entries: &[CorpusEntry]) -> Result<(), CorpusError> {
    let io = |e: std::io::Error| CorpusError::Io(e.to_string());
    let header = Header { format: CORPUS_FORMAT.into(), version: CORPUS_VERSION };
    writeln!(out, "{}", serde_json::to_string(&header).map_err(|e| CorpusError::Io(e.to_string()))?).map_err(io)?;
    for e in entries {
        writeln!(out, "{}", serde_json::to_string(e).map_err(|e| CorpusError::Io(e.to_string()))?).map_err(io)?;
    }
    Ok(())
}
