use std::sync::{Arc, Mutex};

use margin_core::stream::{EventPayload, StreamEvent};

/// Receives the events a run produces, in order.
pub trait EventSink: Send + Sync {
    fn emit(&self, payload: EventPayload);
}

struct WriterState {
    next: u64,
    terminated: bool,
    out: Box<dyn FnMut(StreamEvent) + Send>,
}

/// Numbers events densely from 0 and lets exactly one terminal event through.
/// Anything emitted after the terminal event is dropped.
pub struct StreamWriter {
    state: Mutex<WriterState>,
}

impl StreamWriter {
    pub fn new(out: impl FnMut(StreamEvent) + Send + 'static) -> Self {
        Self { state: Mutex::new(WriterState { next: 0, terminated: false, out: Box::new(out) }) }
    }

    /// A writer that appends to a shared vector.
    pub fn collecting() -> (Self, Arc<Mutex<Vec<StreamEvent>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = log.clone();
        let w = Self::new(move |ev| sink.lock().unwrap_or_else(|e| e.into_inner()).push(ev));
        (w, log)
    }

    pub fn emitted(&self) -> u64 {
        self.lock().next
    }

    pub fn is_terminated(&self) -> bool {
        self.lock().terminated
    }

    /// Emits `done`, unless a terminal event was already sent.
    pub fn done(&self) {
        self.emit(EventPayload::Done);
    }

    pub fn fail(&self, code: &str, message: &str) {
        self.emit(EventPayload::error(code, message));
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, WriterState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl EventSink for StreamWriter {
    fn emit(&self, payload: EventPayload) {
        let mut st = self.lock();
        if st.terminated {
            return;
        }
        st.terminated = payload.is_terminal();
        let ev = StreamEvent::new(st.next, payload);
        st.next += 1;
        (st.out)(ev);
    }
}

/// Holds a sub-run's events until the coordinator releases them.
#[derive(Default)]
pub(crate) struct Buffer(Mutex<Vec<EventPayload>>);

impl Buffer {
    pub(crate) fn drain_into(self, sink: &dyn EventSink) {
        for p in self.0.into_inner().unwrap_or_else(|e| e.into_inner()) {
            sink.emit(p);
        }
    }
}

impl EventSink for Buffer {
    fn emit(&self, payload: EventPayload) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(payload);
    }
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: EventPayload) {}
}
