//! Append-only usage telemetry and its aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACTIVE_WINDOW_SECS: i64 = 30 * 86_400;
const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Install,
    UserRegistered,
    ProjectCreated,
    ThreadCreated,
    DiffViewed,
    CopySuggestion,
    InsertPatch,
    SessionActive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryEvent {
    pub event_type: EventType,
    pub user_id: String,
    pub timestamp: i64,
    pub session_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub installs: u64,
    pub registered_users: u64,
    pub active_users_30d: u64,
    pub projects_total: u64,
    pub threads_total: u64,
    /// Only event types that occur at least once.
    pub event_counts: BTreeMap<EventType, u64>,
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("timestamp {got} precedes {last} in session `{session}`")]
    OutOfOrder { session: String, last: i64, got: i64 },
    #[error("telemetry log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("telemetry log I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Ids are opaque tokens: ASCII letters, digits, `_` and `-`.
fn check_id(field: &str, id: &str) -> Result<(), TelemetryError> {
    if id.is_empty() || id.len() > MAX_ID_LEN || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
        return Err(TelemetryError::Malformed(format!("`{field}` must be an opaque id of at most {MAX_ID_LEN} characters")));
    }
    Ok(())
}

impl TelemetryEvent {
    pub fn new(event_type: EventType, user_id: &str, timestamp: i64, session_id: &str) -> Self {
        Self { event_type, user_id: user_id.into(), timestamp, session_id: session_id.into() }
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        check_id("user_id", &self.user_id)?;
        check_id("session_id", &self.session_id)?;
        if self.timestamp < 0 {
            return Err(TelemetryError::Malformed("timestamp must not be negative".into()));
        }
        Ok(())
    }
}

/// Folds `events` into a summary as of `now`. The active window is
/// `(now - 30 days, now]`.
pub fn aggregate_usage(events: &[TelemetryEvent], now: i64) -> UsageSummary {
    let mut s = UsageSummary::default();
    let mut registered = BTreeSet::new();
    let mut active = BTreeSet::new();
    for ev in events {
        *s.event_counts.entry(ev.event_type).or_default() += 1;
        match ev.event_type {
            EventType::Install => s.installs += 1,
            EventType::UserRegistered => {
                registered.insert(ev.user_id.as_str());
            }
            EventType::ProjectCreated => s.projects_total += 1,
            EventType::ThreadCreated => s.threads_total += 1,
            _ => {}
        }
        if ev.timestamp > now - ACTIVE_WINDOW_SECS && ev.timestamp <= now {
            active.insert(ev.user_id.as_str());
        }
    }
    s.registered_users = registered.len() as u64;
    s.active_users_30d = active.len() as u64;
    s
}

struct LogState {
    events: Vec<TelemetryEvent>,
    last_by_session: HashMap<String, i64>,
    file: Option<File>,
}

impl LogState {
    fn admit(&mut self, ev: &TelemetryEvent) -> Result<(), TelemetryError> {
        ev.validate()?;
        if let Some(&last) = self.last_by_session.get(&ev.session_id) {
            if ev.timestamp < last {
                return Err(TelemetryError::OutOfOrder { session: ev.session_id.clone(), last, got: ev.timestamp });
            }
        }
        Ok(())
    }

    fn publish(&mut self, ev: TelemetryEvent) {
        self.last_by_session.insert(ev.session_id.clone(), ev.timestamp);
        self.events.push(ev);
    }
}

/// The event log. Appends are validated, written as one JSON line and
/// flushed before they become visible, all under one lock.
pub struct TelemetryLog {
    state: Mutex<LogState>,
}

impl TelemetryLog {
    pub fn in_memory() -> Self {
        Self { state: Mutex::new(LogState { events: Vec::new(), last_by_session: HashMap::new(), file: None }) }
    }

    /// Opens (or creates) the log at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self, TelemetryError> {
        let log = Self::in_memory();
        {
            let mut st = log.lock();
            if path.exists() {
                for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let corrupt = |reason: String| TelemetryError::Corrupt { line: i + 1, reason };
                    let ev: TelemetryEvent = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                    st.admit(&ev).map_err(|e| corrupt(e.to_string()))?;
                    st.publish(ev);
                }
            }
            st.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        Ok(log)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LogState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record(&self, ev: TelemetryEvent) -> Result<(), TelemetryError> {
        let mut st = self.lock();
        st.admit(&ev)?;
        Self::append(&mut st, ev)
    }

    /// Records a server-observed event at `now`, or at the session's latest
    /// timestamp if the clock has fallen behind it.
    pub fn record_at(&self, event_type: EventType, user_id: &str, session_id: &str, now: i64) -> Result<(), TelemetryError> {
        let mut st = self.lock();
        let ts = st.last_by_session.get(session_id).map_or(now, |&last| now.max(last));
        let ev = TelemetryEvent::new(event_type, user_id, ts, session_id);
        st.admit(&ev)?;
        Self::append(&mut st, ev)
    }

    fn append(st: &mut LogState, ev: TelemetryEvent) -> Result<(), TelemetryError> {
        if let Some(f) = st.file.as_mut() {
            let mut line = serde_json::to_string(&ev).map_err(|e| TelemetryError::Malformed(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        st.publish(ev);
        Ok(())
    }

    /// Latest timestamp recorded for `session_id`.
    pub fn last_timestamp(&self, session_id: &str) -> Option<i64> {
        self.lock().last_by_session.get(session_id).copied()
    }

    pub fn events(&self) -> Vec<TelemetryEvent> {
        self.lock().events.clone()
    }

    pub fn summary(&self, now: i64) -> UsageSummary {
        aggregate_usage(&self.lock().events, now)
    }
}
