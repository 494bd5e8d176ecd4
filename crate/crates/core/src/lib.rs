//! q2d: turn question-answering data into information-seeking dialogs paired
//! with their search query, filter them by round-trip consistency, and
//! evaluate query-generation models on the result.
//!
//! The crate is organized bottom-up:
//!
//! * [`corpus`] — record types and JSON-lines I/O
//! * [`textmetrics`] — tokenizer and Rouge-1 recall
//! * [`scoring`] — embedding and NLI providers
//! * [`llm`] — prompt templates and completion backends
//! * [`filter`] — the filter cascade and threshold sweep
//! * [`pipeline`] — the resumable generation driver
//! * [`eval`] — query-generation metrics and response factuality
//! * [`cli`] — the `q2d` command line

pub mod canonical;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod filter;
mod http;
pub mod llm;
pub mod pipeline;
pub mod scoring;
pub mod textmetrics;

pub use error::{Error, Result};
