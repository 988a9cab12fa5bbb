use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Core(#[from] dgao::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("request failed: {0}")]
    Request(String),

    /// More than the tolerated fraction of requests failed after retries.
    /// The partial transcript is preserved on disk.
    #[error("{failed} of {total} requests failed after retries (> {percent}%); partial transcript kept at {transcript}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        percent: u8,
        transcript: String,
    },

    /// The transcript does not cover every (group, variant) pair.
    #[error("incomplete transcript: missing {}", format_gaps(.gaps))]
    IncompleteTranscript { gaps: Vec<(String, usize)> },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_gaps(gaps: &[(String, usize)]) -> String {
    let shown: Vec<String> = gaps
        .iter()
        .take(8)
        .map(|(g, v)| format!("({g}, {v})"))
        .collect();
    if gaps.len() > shown.len() {
        format!("{} and {} more", shown.join(", "), gaps.len() - shown.len())
    } else {
        shown.join(", ")
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;
