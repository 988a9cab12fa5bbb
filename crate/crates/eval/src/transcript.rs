//! Persisted per-request records, one JSON object per line. A transcript
//! holds everything needed to recompute the metrics offline.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EvalError, Result};

/// One completed (or failed and substituted) request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub group_id: String,
    pub variant_index: usize,
    /// SHA-256 of the request body, hex-encoded.
    pub request_digest: String,
    /// Raw completion text; empty when the request ultimately failed.
    pub response_text: String,
    pub latency_ms: u64,
    /// Unix time of completion, milliseconds.
    pub timestamp_ms: u64,
    /// True when all retries were exhausted and an empty output was
    /// substituted.
    #[serde(default)]
    pub failed: bool,
}

pub fn digest_request(body: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(body.as_bytes());
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Appends one record as a JSON line.
pub fn append_record<W: Write>(writer: &mut W, record: &EvalRecord) -> Result<()> {
    let line = serde_json::to_string(record)
        .map_err(|e| EvalError::Config(format!("serialize record: {e}")))?;
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Reads a whole transcript file.
pub fn load_transcript(path: &Path) -> Result<Vec<EvalRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_hex() {
        let d = digest_request("hello");
        assert_eq!(d.len(), 64);
        assert_eq!(d, digest_request("hello"));
        assert_ne!(d, digest_request("hello2"));
    }

    #[test]
    fn record_round_trip() {
        let record = EvalRecord {
            group_id: "g0".into(),
            variant_index: 3,
            request_digest: digest_request("x"),
            response_text: "answer".into(),
            latency_ms: 12,
            timestamp_ms: 1000,
            failed: false,
        };
        let mut buf = Vec::new();
        append_record(&mut buf, &record).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let back = load_transcript(&path).unwrap();
        assert_eq!(back, vec![record]);
    }
}
