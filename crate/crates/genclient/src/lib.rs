//! Fabricates self-generated instruction/response corpora from any
//! OpenAI-compatible endpoint, in the Magpie (raw template prefix) or
//! Crescent (bait prompt) style, and writes them as JSONL.

mod client;
mod config;
mod dedupe;
mod error;
mod split;
#[cfg(feature = "testing")]
pub mod testing;

pub use client::{write_jsonl, CallKind, CallLog, FetchOutcome, GenClient, Skip};
pub use config::{EndpointConfig, GenMode, GenRequest, RetryPolicy, SamplingParams, DEFAULT_BAIT};
pub use dedupe::{dedupe, dedupe_jsonl, read_jsonl, Pair};
pub use error::{Error, Result};
pub use split::split_questions;
