//! Pulls the first JSON object out of free-form model output.
//!
//! Models wrap their JSON in markdown fences, prepend chatter, or trail off
//! with commentary. This scanner finds every `{` and tries the balanced span
//! that starts there, string- and escape-aware, until one parses.

use serde_json::{Map, Value};

/// Candidate starts tried before giving up; bounds work on hostile input.
const MAX_CANDIDATES: usize = 256;

pub fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    for (start, _) in raw.match_indices('{').take(MAX_CANDIDATES) {
        let Some(end) = balanced_end(bytes, start) else {
            continue;
        };
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&raw[start..=end]) {
            return Some(map);
        }
    }
    None
}

/// Index of the `}` closing the object opened at `start`, if any.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Strips markdown code fences so prose renders never leak raw blocks.
pub fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
        .replace("```", "")
}
