//! Few-shot named-entity extraction over chat-completion models.
//!
//! The crate covers the full offline pipeline around a model call:
//!
//! * [`tokenize`]: a deterministic whitespace-and-punctuation tokenizer
//!   whose tokens carry character offsets into the source text.
//! * [`corpus`] and [`label`]: annotated documents, gold spans, and the
//!   tagset they are labelled against.
//! * [`prompt`]: template-driven prompt construction. Inputs are rendered
//!   as JSON blocks that embed token indices and character offsets, so a
//!   model can echo real positions instead of inventing its own.
//! * [`outparse`]: recovery of structured predictions from free-form model
//!   output, including grounding of claimed positions against the document
//!   and per-defect diagnostics for everything that had to be dropped.
//! * [`eval`]: strict-boundary precision/recall/F1 plus a span outcome
//!   breakdown (correct, partial, incorrect, missed), with micro-averaged
//!   aggregation across documents.
//!
//! Everything here is pure computation over in-memory values; the crate is
//! `no_std` (with `alloc`). File formats, HTTP transport, and the command
//! line live in the companion `nerval-cli` crate.
//!
//! Character positions throughout the crate count Unicode scalar values,
//! never bytes. Half-open `[start, end)` conventions apply to every
//! interval, whether over characters or tokens.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod corpus;
pub mod eval;
pub mod label;
pub mod outparse;
pub mod prompt;
pub mod text;
pub mod tokenize;

pub use corpus::{Corpus, Document, GoldSpan, Split, Token};
pub use eval::{CountTriple, EvalReport, RepairMode, SpanOutcomeCounts};
pub use label::{LabelDef, LabelSet, OUTSIDE_LABEL};
pub use outparse::{Diagnostics, Grounding, PredictionSet};
pub use prompt::{Granularity, Prompt, PromptTemplates};
