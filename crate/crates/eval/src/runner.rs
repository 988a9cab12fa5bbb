//! Order-bias audit runner.
//!
//! Every (group, variant) pair is rendered, sent to the backend once, and
//! recorded. Up to `concurrency` requests are in flight at a time; results
//! are folded by key, so completion order never affects the report. Failed
//! requests are retried with exponential backoff and then substituted with
//! empty outputs (scoring 0) so that every group keeps its full N-tuple;
//! if more than [`ABORT_FAILURE_PERCENT`] of requests fail, the run aborts
//! with the partial transcript preserved.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime};

use log::warn;

use dgao::grouping::{render_query, QueryGroup, DEFAULT_SEPARATOR};
use dgao::metrics::{compute_report, GroupOutputs, MetricsReport};
use dgao::rewards::{canonicalize_or_empty, TaskKind};

use crate::client::{ChatCompletionsClient, CompletionBackend, EndpointConfig};
use crate::error::{EvalError, Result};
use crate::transcript::{append_record, digest_request, load_transcript, EvalRecord};

/// Abort threshold: failing more than this percentage of requests (after
/// retries) invalidates the run.
pub const ABORT_FAILURE_PERCENT: u8 = 10;

/// Per-request retry budget.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_backoff: Duration::from_millis(200),
        }
    }
}

/// Knobs for one audit run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub task_kind: TaskKind,
    pub separator: String,
}

impl RunOptions {
    pub fn new(task_kind: TaskKind) -> Self {
        Self {
            concurrency: 4,
            retry: RetryPolicy::default(),
            task_kind,
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }
}

/// Result of a live run.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MetricsReport<f64>,
    pub records: Vec<EvalRecord>,
    /// Requests that exhausted retries and scored 0 with empty output.
    pub failed_requests: usize,
}

struct Job {
    group_id: String,
    variant_index: usize,
    prompt: String,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn complete_with_retries(
    backend: &dyn CompletionBackend,
    prompt: &str,
    retry: &RetryPolicy,
) -> std::result::Result<String, String> {
    let mut last_error = String::new();
    for attempt in 0..retry.attempts {
        match backend.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(e) => {
                last_error = e;
                if attempt + 1 < retry.attempts {
                    std::thread::sleep(retry.base_backoff * 2u32.pow(attempt));
                }
            }
        }
    }
    Err(last_error)
}

/// Queries every variant of every group exactly once and computes the
/// metric suite over the canonicalized responses.
pub fn run_eval(
    dataset: &[QueryGroup],
    backend: &dyn CompletionBackend,
    options: &RunOptions,
    transcript_path: &Path,
) -> Result<EvalOutcome> {
    if dataset.is_empty() {
        return Err(EvalError::Config("dataset is empty".into()));
    }
    let mut jobs = Vec::new();
    for group in dataset {
        for variant in 0..group.n_variants() {
            let rendered = render_query(group, variant, &options.separator)?;
            jobs.push(Job {
                group_id: group.group_id.clone(),
                variant_index: variant,
                prompt: rendered.rendered_text,
            });
        }
    }
    let total = jobs.len();

    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let (record_tx, record_rx) = mpsc::channel::<EvalRecord>();
    for job in jobs {
        job_tx.send(job).expect("queue open");
    }
    drop(job_tx);
    let job_rx = Arc::new(Mutex::new(job_rx));

    let workers = options.concurrency.max(1).min(total);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let job_rx = Arc::clone(&job_rx);
            let record_tx = record_tx.clone();
            let retry = options.retry;
            scope.spawn(move || loop {
                let job = match job_rx.lock().expect("queue lock").recv() {
                    Ok(job) => job,
                    Err(_) => break,
                };
                let digest = digest_request(&backend.request_body(&job.prompt));
                let started = Instant::now();
                let outcome = complete_with_retries(backend, &job.prompt, &retry);
                let latency_ms = started.elapsed().as_millis() as u64;
                let record = match outcome {
                    Ok(text) => EvalRecord {
                        group_id: job.group_id,
                        variant_index: job.variant_index,
                        request_digest: digest,
                        response_text: text,
                        latency_ms,
                        timestamp_ms: now_ms(),
                        failed: false,
                    },
                    Err(e) => {
                        warn!(
                            "request for ({}, {}) failed after retries: {e}",
                            job.group_id, job.variant_index
                        );
                        EvalRecord {
                            group_id: job.group_id,
                            variant_index: job.variant_index,
                            request_digest: digest,
                            response_text: String::new(),
                            latency_ms,
                            timestamp_ms: now_ms(),
                            failed: true,
                        }
                    }
                };
                if record_tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(record_tx);

        // single-consumer fold; transcript appends are serialized here
        let mut writer = BufWriter::new(File::create(transcript_path)?);
        let mut records = Vec::with_capacity(total);
        let mut failed = 0usize;
        for record in record_rx.iter() {
            append_record(&mut writer, &record)?;
            if record.failed {
                failed += 1;
            }
            records.push(record);
        }
        writer.flush()?;

        if failed * 100 > total * usize::from(ABORT_FAILURE_PERCENT) {
            return Err(EvalError::TooManyFailures {
                failed,
                total,
                percent: ABORT_FAILURE_PERCENT,
                transcript: transcript_path.display().to_string(),
            });
        }

        let report = report_from_responses(
            dataset,
            &options.task_kind,
            &records
                .iter()
                .map(|r| ((r.group_id.clone(), r.variant_index), r.response_text.clone()))
                .collect(),
        )?;
        Ok(EvalOutcome {
            report,
            records,
            failed_requests: failed,
        })
    })
}

/// Convenience wrapper wiring the HTTP client from an endpoint config.
pub fn evaluate_endpoint(
    dataset: &[QueryGroup],
    endpoint: EndpointConfig,
    task_kind: TaskKind,
    separator: &str,
    transcript_path: &Path,
) -> Result<EvalOutcome> {
    let mut options = RunOptions::new(task_kind);
    options.concurrency = endpoint.max_concurrency;
    options.separator = separator.to_string();
    let client = ChatCompletionsClient::new(endpoint)?;
    run_eval(dataset, &client, &options, transcript_path)
}

fn report_from_responses(
    dataset: &[QueryGroup],
    task_kind: &TaskKind,
    responses: &HashMap<(String, usize), String>,
) -> Result<MetricsReport<f64>> {
    let mut gaps = Vec::new();
    let mut groups = Vec::with_capacity(dataset.len());
    for group in dataset {
        let mut outputs = Vec::with_capacity(group.n_variants());
        for variant in 0..group.n_variants() {
            match responses.get(&(group.group_id.clone(), variant)) {
                Some(text) => outputs.push(canonicalize_or_empty(text, task_kind)),
                None => gaps.push((group.group_id.clone(), variant)),
            }
        }
        groups.push(GroupOutputs::new(
            group.group_id.clone(),
            outputs,
            canonicalize_or_empty(&group.label, task_kind),
        ));
    }
    if !gaps.is_empty() {
        return Err(EvalError::IncompleteTranscript { gaps });
    }
    Ok(compute_report(&groups)?)
}

/// Recomputes the report from a persisted transcript with no network
/// activity. Later records win if a pair somehow appears twice.
pub fn replay_eval(
    transcript_path: &Path,
    dataset: &[QueryGroup],
    task_kind: &TaskKind,
) -> Result<MetricsReport<f64>> {
    let records = load_transcript(transcript_path)?;
    let mut responses = HashMap::new();
    for record in records {
        responses.insert((record.group_id, record.variant_index), record.response_text);
    }
    report_from_responses(dataset, task_kind, &responses)
}
