//! Trace files: an optional `#` header line echoing the run configuration,
//! then one encoded envelope per line.

use thiserror::Error;

use crate::messaging::{Codec, CodecError, Dialect, Envelope};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {source}")]
pub struct TraceError {
    pub line: usize,
    #[source]
    pub source: CodecError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: Option<String>,
    /// Envelopes with their 1-based line numbers.
    pub entries: Vec<(usize, Envelope)>,
}

impl TraceFile {
    pub fn envelopes(&self) -> Vec<Envelope> {
        self.entries.iter().map(|(_, e)| e.clone()).collect()
    }
}

/// Renders a trace. Every line ends with `\n`.
pub fn write_trace(
    header: Option<&str>,
    envelopes: &[Envelope],
    dialect: Dialect,
) -> Result<String, CodecError> {
    let codec = Codec::default();
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(h);
        out.push('\n');
    }
    for e in envelopes {
        out.push_str(&codec.encode(e, dialect)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a trace. `#` lines before the first envelope form the header (the
/// first one is kept); blank lines are skipped.
pub fn read_trace(text: &str) -> Result<TraceFile, TraceError> {
    let codec = Codec::default();
    let mut header = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if entries.is_empty() && header.is_none() {
                header = Some(line.to_owned());
            }
            continue;
        }
        let env = codec.decode(line).map_err(|source| TraceError {
            line: i + 1,
            source,
        })?;
        entries.push((i + 1, env));
    }
    Ok(TraceFile { header, entries })
}
