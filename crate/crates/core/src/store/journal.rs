use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DocumentVersion, ProjectRecord, StoreError, ThreadRecord};
use super::MessageRecord;
use crate::patch::PatchSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub(super) enum Record {
    Project(ProjectRecord),
    Version { project_id: String, path: String, version: DocumentVersion },
    Thread(ThreadRecord),
    Message { thread_id: String, message: MessageRecord },
    Patch(PatchSet),
}

/// Append-only JSON-lines log. A record is durable once `append` returns.
pub(super) struct Journal {
    file: File,
}

impl Journal {
    /// Opens the log and returns its records with their 1-based line numbers.
    ///
    /// An unterminated final line is the remnant of an interrupted append; it is
    /// dropped and truncated away. Any other unreadable line is corruption.
    pub(super) fn open(path: &Path) -> Result<(Self, Vec<(usize, Record)>), StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut reader = BufReader::new(&file);
        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut line = String::new();
        let mut n = 0;
        loop {
            line.clear();
            let read = reader.read_line(&mut line)?;
            if read == 0 {
                break;
            }
            n += 1;
            if !line.ends_with('\n') {
                break;
            }
            let rec = serde_json::from_str(line.trim_end())
                .map_err(|e| StoreError::Corrupt { line: n, reason: e.to_string() })?;
            records.push((n, rec));
            good_len += read as u64;
        }
        drop(reader);
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok((Self { file }, records))
    }

    pub(super) fn append(&mut self, rec: &Record) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(rec).map_err(|e| StoreError::Validation(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}
