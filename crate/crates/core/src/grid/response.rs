use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GridSpec;
use crate::error::{Error, Result};

/// Parsed routing reply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingResult {
    /// Sorted, deduplicated 1-based cell indices.
    pub grid_boxes: Vec<usize>,
    pub object_name: String,
    pub object_part: String,
    pub small: bool,
    pub raw_response: String,
}

/// Strips `//` comments that are outside string literals.
fn strip_line_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let (mut in_str, mut escaped) = (false, false);
    while let Some(c) = chars.next() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(c);
            }
            '/' if chars.peek() == Some(&'/') => {
                for n in chars.by_ref() {
                    if n == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            _ => out.push(c),
        }
    }
    out
}

/// Top-level balanced `{...}` spans, string-aware.
fn object_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let (mut depth, mut start) = (0usize, 0usize);
    let (mut in_str, mut escaped) = (false, false);
    for (i, c) in text.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_str = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

fn as_index(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Extracts the routing answer from a model reply: the last JSON object in
/// the text, tolerating code fences, a leading "Thinking" section and
/// `//` comments.
pub fn parse_vlm_response(text: &str, grid: &GridSpec) -> Result<RoutingResult> {
    let cleaned = strip_line_comments(text);
    let obj = object_spans(&cleaned)
        .into_iter()
        .rev()
        .find_map(|(a, b)| match serde_json::from_str::<Value>(&cleaned[a..b]) {
            Ok(Value::Object(m)) if m.contains_key("grid_boxes") => Some(m),
            _ => None,
        })
        .ok_or_else(|| Error::UnparseableResponse("no JSON object with grid_boxes".into()))?;

    let boxes = obj
        .get("grid_boxes")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::UnparseableResponse("grid_boxes is not an array".into()))?;
    let mut grid_boxes = Vec::with_capacity(boxes.len());
    for b in boxes {
        let i = as_index(b).ok_or_else(|| Error::UnparseableResponse(format!("bad grid index {b}")))?;
        grid_boxes.push(grid.check_index(i)?);
    }
    grid_boxes.sort_unstable();
    grid_boxes.dedup();
    if grid_boxes.is_empty() {
        return Err(Error::EmptyGridBoxes);
    }

    let text_field = |k: &str| obj.get(k).and_then(Value::as_str).map(str::trim).unwrap_or("").to_string();
    let object_name = text_field("object_name");
    if object_name.is_empty() {
        return Err(Error::UnparseableResponse("missing object_name".into()));
    }
    let mut object_part = text_field("object_part");
    if object_part.is_empty() {
        object_part = object_name.clone();
    }
    let small = match obj.get("small") {
        None | Some(Value::Null) => false,
        Some(v) => as_bool(v).ok_or_else(|| Error::UnparseableResponse(format!("bad small flag {v}")))?,
    };
    Ok(RoutingResult {
        grid_boxes,
        object_name,
        object_part,
        small,
        raw_response: text.to_string(),
    })
}
