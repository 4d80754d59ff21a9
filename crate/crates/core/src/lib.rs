//! Demonstration-enhanced, schema-guided generative event extraction.
//!
//! The crate converts annotated sentences into demonstrations, builds
//! schema-based prompts, trains or runs a sequence-to-sequence backend that
//! emits linearized event records, and deterministically decodes those
//! records back to typed, token-offset extractions. Low-resource samplers,
//! domain-adaptation splits, and micro-F1 scoring round out the toolkit.

pub mod corpus;
pub mod demo_builder;
pub mod evaluation;
pub mod generation;
pub mod pipeline;
pub mod record_codec;
pub mod schema;

pub use corpus::{AnnotatedExample, Argument, Corpus, EventRecord, Span};
pub use schema::{EventSchema, EventTypeDef, Prompt, SpecialTokens};
