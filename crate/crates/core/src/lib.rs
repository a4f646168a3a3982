//! Core building blocks for the margin writing assistant.
//!
//! - [`store`]: projects, versioned documents, spans, threads and stored patches.
//! - [`latex`]: tokenizer, section tree and segmentation of LaTeX sources.
//! - [`patch`]: line diffs, anchored patch sets and fuzzy application.
//! - [`stream`]: the `text/event-stream` event codec and accumulator.
//! - [`schema`]: the small JSON schema subset used for tool and agent output checks.

pub mod clock;
pub mod latex;
pub mod patch;
pub mod schema;
pub mod store;
pub mod stream;
pub mod text;

pub use latex::{Granularity, Segment, SectionLevel, SectionNode, Token, TokenKind};
pub use patch::{ApplyOptions, ApplyReport, ApplyStatus, DiffHunk, PatchSet, Preview};
pub use schema::{Schema, SchemaRegistry, Violation};
pub use store::{DocumentStore, DocumentVersion, Origin, Span, StoreError};
pub use stream::{EventPayload, FrameDecoder, StreamEvent};
