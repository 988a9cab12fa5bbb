//! Order-bias auditing of chat-completion endpoints.
//!
//! Renders the permutation variants of each query group, queries the
//! endpoint once per variant, persists a replayable transcript, and scores
//! the responses with the order-stability metric suite (accuracy,
//! consistency rate, overconfidence rate).

mod client;
mod error;
mod runner;
mod transcript;

pub use client::{ApiKey, ChatCompletionsClient, CompletionBackend, EndpointConfig};
pub use error::{EvalError, Result};
pub use runner::{
    evaluate_endpoint, replay_eval, run_eval, EvalOutcome, RetryPolicy, RunOptions,
    ABORT_FAILURE_PERCENT,
};
pub use transcript::{digest_request, load_transcript, EvalRecord};
