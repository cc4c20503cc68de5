//! JSON payload extraction from raw model output.
//!
//! Models are told to return bare JSON but routinely wrap it in markdown
//! fences or prose. Extraction strips fence lines, then scans for balanced
//! top-level candidates of the expected shape and takes the first one that
//! parses.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no JSON {0} found in response")]
    NoPayload(&'static str),
    #[error("response empty")]
    Empty,
}

/// Structural shape the caller expects back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedShape {
    Object,
    Array,
    Text,
}

impl ExpectedShape {
    fn opener(&self) -> char {
        match self {
            ExpectedShape::Object => '{',
            ExpectedShape::Array => '[',
            ExpectedShape::Text => unreachable!("text has no delimiter"),
        }
    }

    fn noun(&self) -> &'static str {
        match self {
            ExpectedShape::Object => "object",
            ExpectedShape::Array => "array",
            ExpectedShape::Text => "text",
        }
    }
}

/// Extracts the payload of `shape` from `raw`.
///
/// For [`ExpectedShape::Text`] this is just the trimmed response. For JSON
/// shapes, the first balanced top-level candidate that parses wins; the
/// function is idempotent on already-canonical JSON.
pub fn extract_payload(raw: &str, shape: ExpectedShape) -> Result<Value, ExtractError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(ExtractError::Empty);
    }
    if let ExpectedShape::Text = shape {
        return Ok(Value::String(trimmed.to_string()));
    }
    let cleaned = strip_fence_lines(trimmed);
    match first_parsing_candidate(&cleaned, shape.opener()) {
        Some(value) => Ok(value),
        None => Err(ExtractError::NoPayload(shape.noun())),
    }
}

/// Like [`extract_payload`] but takes the LAST parsing candidate — used to
/// salvage the trailing JSON object from a chain-of-thought transcript.
pub fn extract_trailing_object(raw: &str) -> Option<Value> {
    let cleaned = strip_fence_lines(raw.trim());
    let mut last = None;
    let mut from = 0;
    while let Some((value, end)) = next_candidate(&cleaned[from..], '{') {
        last = Some(value);
        from += end;
    }
    last
}

/// Drops markdown fence lines (```...); fence labels otherwise confuse
/// nothing, but this keeps candidate offsets clean.
fn strip_fence_lines(text: &str) -> String {
    if !text.contains("```") {
        return text.to_string();
    }
    text.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn first_parsing_candidate(text: &str, opener: char) -> Option<Value> {
    next_candidate(text, opener).map(|(v, _)| v)
}

/// Finds the next balanced candidate starting at `opener` that parses as
/// JSON; returns the value and the byte offset just past the candidate.
fn next_candidate(text: &str, opener: char) -> Option<(Value, usize)> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find(opener) {
        let start = search_from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(value) = serde_json::from_str::<Value>(&text[start..end]) {
                return Some((value, end));
            }
        }
        search_from = start + 1;
    }
    None
}

/// Walks a `{`/`[` opener at `start` to its matching closer, honoring JSON
/// string and escape rules. Returns the exclusive end offset.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}
