//! System of record for projects, versioned documents, threads and patches.
//!
//! State lives in memory and every mutation is first appended to a JSON-lines
//! journal (and synced) before it becomes visible. Reopening a store replays
//! the journal. Writes to one document are serialized by a per-document lock;
//! readers only contend with writers for the moment a new record is published.

mod journal;
mod span;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::patch::PatchSet;
use crate::text::normalize_newlines;
use journal::{Journal, Record};

pub use span::{resolve_span, Span, SPAN_CONTEXT};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("span could not be relocated in the target version")]
    Relocation,
    #[error("journal I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

fn not_found(kind: &'static str, id: impl Into<String>) -> StoreError {
    StoreError::NotFound { kind, id: id.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub project_id: String,
    pub name: String,
    /// Opaque id of the user who may act on this project.
    pub owner: String,
    pub created_at: i64,
    pub document_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub document_id: String,
    pub project_id: String,
    pub path: String,
    pub head_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    UserEdit,
    PatchApply,
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentVersion {
    pub document_id: String,
    pub version_id: u64,
    pub content: String,
    pub parent_version: Option<u64>,
    pub origin: Origin,
    pub created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub role: Role,
    pub body: String,
    #[serde(default)]
    pub attached_span: Option<Span>,
    #[serde(default)]
    pub attached_patch: Option<String>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadRecord {
    pub thread_id: String,
    pub project_id: String,
    pub created_at: i64,
    pub messages: Vec<MessageRecord>,
}

#[derive(Debug, Default)]
struct DocumentEntry {
    record: Option<DocumentRecord>,
    versions: Vec<Arc<DocumentVersion>>,
}

#[derive(Debug, Default)]
struct State {
    projects: BTreeMap<String, ProjectRecord>,
    documents: HashMap<String, DocumentEntry>,
    by_path: HashMap<(String, String), String>,
    threads: HashMap<String, ThreadRecord>,
    patches: HashMap<String, PatchSet>,
}

impl State {
    fn apply(&mut self, rec: Record) -> Result<(), String> {
        match rec {
            Record::Project(p) => {
                self.projects.insert(p.project_id.clone(), p);
            }
            Record::Version { project_id, path, version } => {
                let doc_id = version.document_id.clone();
                let entry = self.documents.entry(doc_id.clone()).or_default();
                if version.version_id != entry.versions.len() as u64 + 1 {
                    return Err(format!("version {} out of order for {doc_id}", version.version_id));
                }
                match &mut entry.record {
                    Some(r) => r.head_version = version.version_id,
                    None => {
                        entry.record = Some(DocumentRecord {
                            document_id: doc_id.clone(),
                            project_id: project_id.clone(),
                            path: path.clone(),
                            head_version: version.version_id,
                        });
                        let project = self.projects.get_mut(&project_id).ok_or("version for unknown project")?;
                        project.document_ids.push(doc_id.clone());
                        self.by_path.insert((project_id, path), doc_id);
                    }
                }
                entry.versions.push(Arc::new(version));
            }
            Record::Thread(t) => {
                self.threads.insert(t.thread_id.clone(), t);
            }
            Record::Message { thread_id, message } => {
                self.threads.get_mut(&thread_id).ok_or("message for unknown thread")?.messages.push(message);
            }
            Record::Patch(p) => {
                self.patches.insert(p.patch_id.clone(), p);
            }
        }
        Ok(())
    }
}

pub struct DocumentStore {
    state: RwLock<State>,
    journal: Option<Mutex<Journal>>,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for DocumentStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DocumentStore").field("durable", &self.journal.is_some()).finish()
    }
}

fn fresh_id(prefix: &str) -> String {
    format!("{prefix}_{}", uuid::Uuid::new_v4().simple())
}

impl DocumentStore {
    /// A store without a journal; contents vanish with the process.
    pub fn in_memory() -> Self {
        Self::with_parts(State::default(), None, Arc::new(SystemClock))
    }

    /// Opens (or creates) the journal at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with_clock(path, Arc::new(SystemClock))
    }

    pub fn open_with_clock(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let (journal, records) = Journal::open(path.as_ref())?;
        let mut state = State::default();
        for (line, rec) in records {
            state.apply(rec).map_err(|reason| StoreError::Corrupt { line, reason })?;
        }
        Ok(Self::with_parts(state, Some(Mutex::new(journal)), clock))
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn with_parts(state: State, journal: Option<Mutex<Journal>>, clock: Arc<dyn Clock>) -> Self {
        Self { state: RwLock::new(state), journal, writers: Mutex::new(HashMap::new()), clock }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Journals `rec`, then publishes it.
    fn commit(&self, rec: Record) -> Result<(), StoreError> {
        if let Some(j) = &self.journal {
            j.lock().unwrap_or_else(|e| e.into_inner()).append(&rec)?;
        }
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        state.apply(rec).map_err(StoreError::Validation)
    }

    fn writer_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut writers = self.writers.lock().unwrap_or_else(|e| e.into_inner());
        writers.entry(key.to_owned()).or_default().clone()
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn create_project(&self, name: &str, owner: &str) -> Result<ProjectRecord, StoreError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(StoreError::Validation("project name must not be empty".into()));
        }
        let project = ProjectRecord {
            project_id: fresh_id("prj"),
            name: name.to_owned(),
            owner: owner.to_owned(),
            created_at: self.now(),
            document_ids: Vec::new(),
        };
        self.commit(Record::Project(project.clone()))?;
        Ok(project)
    }

    pub fn project(&self, project_id: &str) -> Result<ProjectRecord, StoreError> {
        self.read().projects.get(project_id).cloned().ok_or_else(|| not_found("project", project_id))
    }

    pub fn list_projects(&self) -> Vec<ProjectRecord> {
        self.read().projects.values().cloned().collect()
    }

    /// Stores `content` at `path`: version 1 for a new path, otherwise head + 1.
    pub fn put_document(&self, project_id: &str, path: &str, content: &str) -> Result<DocumentVersion, StoreError> {
        if path.trim().is_empty() {
            return Err(StoreError::Validation("document path must not be empty".into()));
        }
        self.project(project_id)?;
        // Lock on the path so two first writes to one path cannot both create it.
        let lock = self.writer_lock(&format!("{project_id}\u{0}{path}"));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let existing = self.read().by_path.get(&(project_id.to_owned(), path.to_owned())).cloned();
        let content = normalize_newlines(content);
        let version = match existing {
            Some(doc_id) => {
                let head = self.head(&doc_id)?;
                DocumentVersion {
                    document_id: doc_id,
                    version_id: head.version_id + 1,
                    content,
                    parent_version: Some(head.version_id),
                    origin: Origin::UserEdit,
                    created_at: self.now(),
                }
            }
            None => DocumentVersion {
                document_id: fresh_id("doc"),
                version_id: 1,
                content,
                parent_version: None,
                origin: Origin::Import,
                created_at: self.now(),
            },
        };
        self.commit(Record::Version { project_id: project_id.to_owned(), path: path.to_owned(), version: version.clone() })?;
        Ok(version)
    }

    /// Runs `edit` against the head version while holding the document's
    /// writer lock. When `edit` returns new content it becomes head + 1.
    pub fn update_document<T>(
        &self,
        document_id: &str,
        origin: Origin,
        edit: impl FnOnce(&DocumentVersion) -> (Option<String>, T),
    ) -> Result<(Option<DocumentVersion>, T), StoreError> {
        let record = self.document(document_id)?;
        let lock = self.writer_lock(&format!("{}\u{0}{}", record.project_id, record.path));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let head = self.head(document_id)?;
        let (content, out) = edit(&head);
        let Some(content) = content else {
            return Ok((None, out));
        };
        let version = DocumentVersion {
            document_id: document_id.to_owned(),
            version_id: head.version_id + 1,
            content: normalize_newlines(&content),
            parent_version: Some(head.version_id),
            origin,
            created_at: self.now(),
        };
        self.commit(Record::Version { project_id: record.project_id, path: record.path, version: version.clone() })?;
        Ok((Some(version), out))
    }

    pub fn document(&self, document_id: &str) -> Result<DocumentRecord, StoreError> {
        self.read()
            .documents
            .get(document_id)
            .and_then(|d| d.record.clone())
            .ok_or_else(|| not_found("document", document_id))
    }

    pub fn list_documents(&self, project_id: &str) -> Result<Vec<DocumentRecord>, StoreError> {
        let project = self.project(project_id)?;
        project.document_ids.iter().map(|d| self.document(d)).collect()
    }

    pub fn get_version(&self, document_id: &str, version_id: u64) -> Result<DocumentVersion, StoreError> {
        let state = self.read();
        let entry = state.documents.get(document_id).ok_or_else(|| not_found("document", document_id))?;
        version_id
            .checked_sub(1)
            .and_then(|i| entry.versions.get(i as usize))
            .map(|v| (**v).clone())
            .ok_or_else(|| not_found("version", format!("{document_id}@{version_id}")))
    }

    pub fn head(&self, document_id: &str) -> Result<DocumentVersion, StoreError> {
        let state = self.read();
        let entry = state.documents.get(document_id).ok_or_else(|| not_found("document", document_id))?;
        entry.versions.last().map(|v| (**v).clone()).ok_or_else(|| not_found("document", document_id))
    }

    pub fn resolve_span(&self, span: &Span, target: &DocumentVersion) -> Result<Span, StoreError> {
        resolve_span(span, target)
    }

    pub fn create_thread(&self, project_id: &str) -> Result<ThreadRecord, StoreError> {
        self.project(project_id)?;
        let thread = ThreadRecord {
            thread_id: fresh_id("thr"),
            project_id: project_id.to_owned(),
            created_at: self.now(),
            messages: Vec::new(),
        };
        self.commit(Record::Thread(thread.clone()))?;
        Ok(thread)
    }

    pub fn append_message(&self, thread_id: &str, message: MessageRecord) -> Result<ThreadRecord, StoreError> {
        if message.role == Role::User && message.attached_patch.is_some() {
            return Err(StoreError::Validation("user messages cannot carry a patch".into()));
        }
        let lock = self.writer_lock(thread_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.thread(thread_id)?;
        self.commit(Record::Message { thread_id: thread_id.to_owned(), message })?;
        self.thread(thread_id)
    }

    pub fn thread(&self, thread_id: &str) -> Result<ThreadRecord, StoreError> {
        self.read().threads.get(thread_id).cloned().ok_or_else(|| not_found("thread", thread_id))
    }

    /// Threads of a project ordered by creation time (then id).
    pub fn list_threads(&self, project_id: &str) -> Result<Vec<ThreadRecord>, StoreError> {
        self.project(project_id)?;
        let mut threads: Vec<_> =
            self.read().threads.values().filter(|t| t.project_id == project_id).cloned().collect();
        threads.sort_by(|a, b| (a.created_at, &a.thread_id).cmp(&(b.created_at, &b.thread_id)));
        Ok(threads)
    }

    /// Stores a bound patch; `patch_id` and `document_id` must be set.
    pub fn put_patch(&self, patch: PatchSet) -> Result<(), StoreError> {
        if patch.patch_id.is_empty() {
            return Err(StoreError::Validation("patch must have an id".into()));
        }
        self.document(&patch.document_id)?;
        self.commit(Record::Patch(patch))
    }

    pub fn patch(&self, patch_id: &str) -> Result<PatchSet, StoreError> {
        self.read().patches.get(patch_id).cloned().ok_or_else(|| not_found("patch", patch_id))
    }
}
