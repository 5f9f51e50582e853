//! Extraction of structured results from free-form model output.

use crate::conscious::options::OptionsList;
use crate::conscious::prompt::{parse_codebook, PromptTemplates};
use crate::error::{Error, Result};
use crate::model::{DescriptionPair, KnowledgePrompt, Prototype, Score};

/// Raw scores within this distance of an option snap to it.
pub const SNAP_TOLERANCE: f64 = 0.049;

const SCORE_KEY: &str = "total degree of violation";
const SUMMARY_KEY: &str = "summary";
const OTHER_KEYS: [&str; 3] = ["events", "worst event", "event"];

fn clean(line: &str) -> String {
    let line = line.trim().trim_start_matches('#').trim();
    let line = line.strip_prefix("- ").unwrap_or(line);
    line.replace("**", "").replace("__", "").trim().to_string()
}

/// If `line` starts with `key` (case-insensitive) followed by `:` or the end
/// of the line, returns what follows the key.
fn after_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let head = line.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    let rest = line[key.len()..].trim_start();
    if rest.is_empty() {
        return Some(rest);
    }
    rest.strip_prefix(':').map(str::trim)
}

fn is_key_line(line: &str) -> bool {
    after_key(line, SCORE_KEY).is_some()
        || after_key(line, SUMMARY_KEY).is_some()
        || OTHER_KEYS.iter().any(|k| after_key(line, k).is_some())
}

/// Numbers appearing in `text`, in order. A trailing `%` divides by 100.
fn numbers(text: &str) -> Vec<f64> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let starts_number =
            bytes[i].is_ascii_digit() || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit));
        if !starts_number {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        let token = text[start..i].trim_end_matches('.');
        if let Ok(mut value) = token.parse::<f64>() {
            if bytes.get(i) == Some(&b'%') {
                value /= 100.0;
            }
            out.push(value);
        }
    }
    out
}

/// Extracts `(summary, score)` from analyzer output.
///
/// The score is the first number in `[0, 1]` after the last
/// `Total degree of violation` key (same line first, then the following
/// lines). With options, a score within [`SNAP_TOLERANCE`] of an option is
/// snapped to it; anything else is kept and clamped. The description is the
/// `Summary` field, or everything before the score key when that is absent.
pub fn parse_vlm_output(text: &str, options: Option<&OptionsList>) -> Result<DescriptionPair> {
    let lines: Vec<String> = text.lines().map(clean).collect();
    let key_at = lines
        .iter()
        .rposition(|l| after_key(l, SCORE_KEY).is_some())
        .ok_or_else(|| Error::Parse("no `Total degree of violation` field".into()))?;

    let same_line = after_key(&lines[key_at], SCORE_KEY).unwrap_or("").to_string();
    let raw = std::iter::once(same_line.as_str())
        .chain(lines[key_at + 1..].iter().map(String::as_str))
        .flat_map(numbers)
        .find(|v| (0.0..=1.0).contains(v))
        .ok_or_else(|| Error::Parse("no score in [0, 1] after `Total degree of violation`".into()))?;

    let value = match options {
        Some(o) => {
            let nearest = o.nearest(raw);
            if (nearest - raw).abs() <= SNAP_TOLERANCE {
                nearest
            } else {
                raw
            }
        }
        None => raw,
    };
    let score = Score::clamped(value)?;

    let description = match lines.iter().position(|l| after_key(l, SUMMARY_KEY).is_some()) {
        Some(at) => {
            let mut parts = vec![after_key(&lines[at], SUMMARY_KEY).unwrap_or("").to_string()];
            parts.extend(lines[at + 1..].iter().take_while(|l| !is_key_line(l)).cloned());
            join_words(&parts)
        }
        None => join_words(&lines[..key_at]),
    };
    Ok(DescriptionPair { description, score })
}

fn join_words(parts: &[String]) -> String {
    parts
        .iter()
        .flat_map(|p| p.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reads a refined knowledge prompt from reasoner output.
///
/// Each polarity is deduplicated and truncated to `length / 2`; both
/// polarities must be present. The result is stamped `previous_epoch + 1`.
pub fn parse_reasoner_output(
    text: &str,
    length: usize,
    previous_epoch: u64,
    templates: &PromptTemplates,
) -> Result<KnowledgePrompt> {
    let (normal, abnormal) = parse_codebook(text, templates);
    let half = length / 2;
    let normal = dedup_truncate(normal, half);
    let abnormal = dedup_truncate(abnormal, half);
    if normal.is_empty() || abnormal.is_empty() {
        return Err(Error::Parse(format!(
            "reasoner output has {} normal and {} abnormal prototypes; both are required",
            normal.len(),
            abnormal.len()
        )));
    }
    KnowledgePrompt::with_limit(normal.into_iter().chain(abnormal).collect(), previous_epoch + 1, length)
}

fn dedup_truncate(prototypes: Vec<Prototype>, limit: usize) -> Vec<Prototype> {
    let mut out: Vec<Prototype> = Vec::with_capacity(limit);
    for p in prototypes {
        if out.len() == limit {
            break;
        }
        if !out.iter().any(|q| q.text() == p.text()) {
            out.push(p);
        }
    }
    out
}
