//! Pulls a JSON object out of free-form model output.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no JSON object found")]
    NoJsonFound,
    /// `offset` is a byte offset into the text after the repair pass.
    #[error("invalid JSON at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },
}

/// Finds the first balanced top-level JSON object in `text`.
///
/// Leading prose and code fences are skipped. When no candidate parses as
/// is, a single repair pass is applied (smart quotes normalized, trailing
/// commas removed) and the candidates are tried again.
pub fn extract_json(text: &str) -> Result<Value, ExtractError> {
    if !text.contains('{') {
        return Err(ExtractError::NoJsonFound);
    }
    // Each candidate is tried as is and then repaired before moving on, so a
    // clean nested object never wins over a repairable outer one.
    let normalized = normalize_quotes(text);
    let mut first_error = None;
    for start in brace_positions(text) {
        if let Some(end) = balanced_end(text, start) {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..end]) {
                return Ok(v);
            }
        }
        // normalization maps one char to one char, so offsets carry over
        let nstart = normalized
            .char_indices()
            .nth(text[..start].chars().count())
            .map_or(0, |(i, _)| i);
        let end = balanced_end(&normalized, nstart).unwrap_or(normalized.len());
        let repaired = strip_trailing_commas(&normalized[nstart..end]);
        match serde_json::from_str::<Value>(&repaired) {
            Ok(v @ Value::Object(_)) => return Ok(v),
            Ok(_) => {}
            Err(e) => {
                first_error.get_or_insert_with(|| ExtractError::Parse {
                    offset: nstart + line_col_to_offset(&repaired, e.line(), e.column()),
                    detail: e.to_string(),
                });
            }
        }
    }
    Err(first_error.unwrap_or(ExtractError::NoJsonFound))
}

fn brace_positions(text: &str) -> impl Iterator<Item = usize> + '_ {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .map(|(i, _)| i)
}

/// Byte index one past the brace closing the object opened at `start`.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_quotes(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => '"',
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' => '\'',
            other => other,
        })
        .collect()
}

fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn line_col_to_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
