//! Turning raw model generations into validated belief states.
//!
//! Parsing is lenient and total: it accepts the quasi-dict training format
//! (`'Slot-211': 'Jim',`), double-quoted variants, bare values, bracketed
//! value lists and JSON objects, and ignores anything else with a warning.
//! Validation then enforces the grounding rules: free-text values must occur
//! in the conversation, categorical values must be one of the allowed values.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, CompletionRequest};
use crate::prompt::{self, PromptError, TokenBudget, TokenCounter};
use crate::state::{BeliefState, Conversation, SlotId, SlotLibrary};

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WarningReason {
    DroppedNotSubstring,
    MappedToAllowedValue,
    DroppedNoAllowedMatch,
    UnknownSlotId,
    UnparseableLine,
    DuplicateSlotKeptLast,
    /// Only produced with [`NormalizeOptions::repair_substring`].
    RepairedSubstring,
}

impl WarningReason {
    pub fn as_str(self) -> &'static str {
        match self {
            WarningReason::DroppedNotSubstring => "DroppedNotSubstring",
            WarningReason::MappedToAllowedValue => "MappedToAllowedValue",
            WarningReason::DroppedNoAllowedMatch => "DroppedNoAllowedMatch",
            WarningReason::UnknownSlotId => "UnknownSlotId",
            WarningReason::UnparseableLine => "UnparseableLine",
            WarningReason::DuplicateSlotKeptLast => "DuplicateSlotKeptLast",
            WarningReason::RepairedSubstring => "RepairedSubstring",
        }
    }
}

impl fmt::Display for WarningReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarningSubject {
    Slot(SlotId),
    /// 1-based line number in the generation.
    Line(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    #[serde(flatten)]
    pub subject: WarningSubject,
    pub reason: WarningReason,
}

impl ParseWarning {
    fn slot(id: &SlotId, reason: WarningReason) -> Self {
        Self {
            subject: WarningSubject::Slot(id.clone()),
            reason,
        }
    }

    fn line(n: usize) -> Self {
        Self {
            subject: WarningSubject::Line(n),
            reason: WarningReason::UnparseableLine,
        }
    }
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            WarningSubject::Slot(id) => write!(f, "{id}: {}", self.reason),
            WarningSubject::Line(n) => write!(f, "line {n}: {}", self.reason),
        }
    }
}

/// Key/value pairs in order of appearance, duplicates included.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScannedPairs {
    pub pairs: Vec<(SlotId, String)>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawGeneration {
    pub values: BTreeMap<SlotId, String>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseOutcome {
    pub state: BeliefState,
    pub warnings: Vec<ParseWarning>,
}

/// Parses a generation into a raw slot map. Never fails; on duplicate ids
/// the last occurrence wins.
pub fn parse_generation(text: &str) -> RawGeneration {
    let scanned = scan_pairs(text);
    let mut warnings = scanned.warnings;
    let mut values = BTreeMap::new();
    for (id, value) in scanned.pairs {
        if values.insert(id.clone(), value).is_some() {
            warnings.push(ParseWarning::slot(&id, WarningReason::DuplicateSlotKeptLast));
        }
    }
    RawGeneration { values, warnings }
}

/// Scans a generation for `Slot-<n>: value` pairs, preferring an embedded
/// JSON object when one parses.
pub fn scan_pairs(text: &str) -> ScannedPairs {
    if let Some(found) = scan_json(text) {
        return found;
    }
    let mut scanner = Scanner::new(text);
    scanner.run();
    scanner.finish()
}

fn is_ignorable_line(line: &str) -> bool {
    let t = line.trim();
    t.is_empty()
        || t.starts_with("```")
        || matches!(t, "{" | "}" | "[" | "]" | "," | "Output:" | "output:")
}

fn line_number_at(text: &str, byte: usize) -> usize {
    text[..byte].bytes().filter(|b| *b == b'\n').count() + 1
}

fn normalize_key(raw: &str) -> Option<SlotId> {
    let digits = raw
        .strip_prefix("Slot-")
        .or_else(|| raw.strip_prefix("slot-"))
        .or_else(|| raw.strip_prefix("SLOT-"))?;
    format!("Slot-{digits}").parse().ok()
}

fn json_value_text(v: &serde_json::Value) -> Option<String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => items.iter().find_map(json_value_text),
        Value::Null | Value::Object(_) => None,
    }
}

fn scan_json(text: &str) -> Option<ScannedPairs> {
    // Only an object opening a line counts; braces inside quoted values do not.
    let mut offset = 0;
    let start = text.split('\n').find_map(|line| {
        let here = offset;
        offset += line.len() + 1;
        let indent = line.len() - line.trim_start().len();
        line.trim_start().starts_with('{').then_some(here + indent)
    })?;
    let end = balanced_object_end(&text[start..])? + start;
    let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text[start..end]).ok()?;
    let mut out = ScannedPairs::default();
    let obj_line = line_number_at(text, start);
    for (key, value) in &obj {
        match normalize_key(key.trim()) {
            Some(id) => {
                if let Some(v) = json_value_text(value) {
                    out.pairs.push((id, v));
                }
            }
            None => out.warnings.push(ParseWarning::line(obj_line)),
        }
    }
    if out.pairs.is_empty() && !obj.is_empty() {
        return None;
    }
    let mut offset = 0;
    for (i, line) in text.split('\n').enumerate() {
        let line_start = offset;
        offset += line.len() + 1;
        let overlaps = line_start < end && offset > start;
        if !overlaps && !is_ignorable_line(line) {
            out.warnings.push(ParseWarning::line(i + 1));
        }
    }
    Some(out)
}

/// Byte offset just past the `}` closing the object that opens at offset 0.
fn balanced_object_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

struct Scanner<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    out: ScannedPairs,
    /// Byte ranges consumed by recognised pairs.
    consumed: Vec<(usize, usize)>,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            bytes: text.as_bytes(),
            pos: 0,
            out: ScannedPairs::default(),
            consumed: Vec::new(),
        }
    }

    fn run(&mut self) {
        while self.pos < self.bytes.len() {
            let start = self.pos;
            match self.try_pair(start) {
                Some((id, value, end)) => {
                    self.out.pairs.push((id, value));
                    self.consumed.push((start, end));
                    self.pos = end.max(start + 1);
                }
                None => self.pos = self.next_char_boundary(start),
            }
        }
    }

    fn finish(mut self) -> ScannedPairs {
        let mut offset = 0;
        for (i, line) in self.text.split('\n').enumerate() {
            let (ls, le) = (offset, offset + line.len());
            offset = le + 1;
            let touched = self.consumed.iter().any(|&(s, e)| s <= le && e >= ls && !(e == ls && s < ls));
            if !touched && !is_ignorable_line(line) {
                self.out.warnings.push(ParseWarning::line(i + 1));
            }
        }
        self.out
    }

    fn next_char_boundary(&self, from: usize) -> usize {
        let mut i = from + 1;
        while i < self.bytes.len() && !self.text.is_char_boundary(i) {
            i += 1;
        }
        i
    }

    fn peek(&self, i: usize) -> Option<u8> {
        self.bytes.get(i).copied()
    }

    fn skip_inline_ws(&self, mut i: usize) -> usize {
        while matches!(self.peek(i), Some(b' ' | b'\t')) {
            i += 1;
        }
        i
    }

    /// Matches an optionally quoted `Slot-<digits>` key followed by `:`.
    /// Returns the id and the offset after the colon.
    fn match_key(&self, at: usize) -> Option<(SlotId, usize)> {
        if at > 0 {
            let prev = self.bytes[at - 1];
            if prev.is_ascii_alphanumeric() || prev == b'_' || prev == b'-' {
                return None;
            }
        }
        let mut i = at;
        let quote = match self.peek(i) {
            Some(q @ (b'\'' | b'"')) => {
                i += 1;
                Some(q)
            }
            _ => None,
        };
        let rest = &self.bytes[i..];
        if rest.len() < 5 || !rest[..5].eq_ignore_ascii_case(b"slot-") {
            return None;
        }
        i += 5;
        let digits_start = i;
        while matches!(self.peek(i), Some(b'0'..=b'9')) {
            i += 1;
        }
        if i == digits_start {
            return None;
        }
        let id: SlotId = format!("Slot-{}", &self.text[digits_start..i]).parse().ok()?;
        if let Some(q) = quote {
            if self.peek(i) != Some(q) {
                return None;
            }
            i += 1;
        }
        i = self.skip_inline_ws(i);
        if self.peek(i) != Some(b':') {
            return None;
        }
        Some((id, i + 1))
    }

    fn try_pair(&self, at: usize) -> Option<(SlotId, String, usize)> {
        let (id, after_colon) = self.match_key(at)?;
        let mut i = self.skip_inline_ws(after_colon);
        let in_list = self.peek(i) == Some(b'[');
        if in_list {
            i = self.skip_inline_ws(i + 1);
        }
        let (value, mut end) = match self.peek(i) {
            Some(b'\'') => self.single_quoted(i + 1),
            Some(b'"') => self.double_quoted(i + 1),
            Some(b'`') => self.single_quoted(i + 1),
            _ => self.bare(i)?,
        };
        if in_list {
            if let Some(close) = self.text[end..].find(']') {
                let line_end = self.text[end..].find('\n').unwrap_or(usize::MAX);
                if close < line_end {
                    end += close + 1;
                }
            }
        }
        Some((id, value, end))
    }

    /// Body of a single-quoted value. `''` is a literal quote; a quote that is
    /// followed by a separator, line end or end of input closes the value;
    /// any other quote is taken literally (models often emit bare
    /// apostrophes). Values never span lines.
    fn single_quoted(&self, from: usize) -> (String, usize) {
        let mut value = String::new();
        let mut i = from;
        while i < self.bytes.len() {
            let c = self.text[i..].chars().next().expect("in bounds");
            if c == '\n' {
                break;
            }
            if c == '\'' {
                if self.peek(i + 1) == Some(b'\'') {
                    value.push('\'');
                    i += 2;
                    continue;
                }
                let j = self.skip_inline_ws(i + 1);
                match self.peek(j) {
                    None | Some(b',' | b'}' | b']' | b'\n' | b'\r') => return (value, i + 1),
                    _ => {}
                }
            }
            value.push(c);
            i += c.len_utf8();
        }
        // Unterminated: fall back to the rest of the opening line.
        let line_end = self.text[from..].find('\n').map_or(self.bytes.len(), |n| from + n);
        (self.text[from..line_end].trim_end().trim_end_matches(',').to_string(), line_end)
    }

    fn double_quoted(&self, from: usize) -> (String, usize) {
        let mut value = String::new();
        let mut chars = self.text[from..].char_indices();
        while let Some((off, c)) = chars.next() {
            match c {
                '"' => return (value, from + off + 1),
                '\n' => break,
                '\\' => match chars.next() {
                    Some((_, 'n')) => value.push('\n'),
                    Some((_, 't')) => value.push('\t'),
                    Some((_, other)) => value.push(other),
                    None => break,
                },
                _ => value.push(c),
            }
        }
        let line_end = self.text[from..].find('\n').map_or(self.bytes.len(), |n| from + n);
        (self.text[from..line_end].trim_end().trim_end_matches(',').to_string(), line_end)
    }

    /// Unquoted value: up to the end of the line or the next key.
    fn bare(&self, from: usize) -> Option<(String, usize)> {
        let line_end = self.text[from..].find('\n').map_or(self.bytes.len(), |n| from + n);
        let mut end = line_end;
        let mut i = from;
        while i < line_end {
            if matches!(self.peek(i), Some(b'\'' | b'"' | b's' | b'S')) && self.match_key(i).is_some() {
                end = i;
                break;
            }
            i = self.next_char_boundary(i);
        }
        let value = self.text[from..end]
            .trim()
            .trim_end_matches(',')
            .trim_end();
        if value.is_empty() {
            return None;
        }
        Some((value.to_string(), end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeOptions {
    pub fuzzy_threshold: f64,
    /// Replace ungrounded free-text values with the longest conversation span
    /// at least `fuzzy_threshold` similar, instead of dropping them.
    pub repair_substring: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
            repair_substring: false,
        }
    }
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` over case-folded characters.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&a.to_lowercase(), &b.to_lowercase())
}

pub fn validate_and_normalize(
    raw: &BTreeMap<SlotId, String>,
    library: &SlotLibrary,
    conversation: &Conversation,
    options: &NormalizeOptions,
) -> ParseOutcome {
    let text = conversation.text();
    let mut state = BeliefState::for_library(library);
    let mut warnings = Vec::new();
    for (id, value) in raw {
        let Some(spec) = library.get(id) else {
            warnings.push(ParseWarning::slot(id, WarningReason::UnknownSlotId));
            continue;
        };
        let candidate = value.trim();
        match &spec.allowed_values {
            Some(allowed) => match map_categorical(candidate, allowed, options.fuzzy_threshold) {
                Some((mapped, exact)) => {
                    if !exact {
                        warnings.push(ParseWarning::slot(id, WarningReason::MappedToAllowedValue));
                    }
                    state.insert(id.clone(), mapped);
                }
                None => warnings.push(ParseWarning::slot(id, WarningReason::DroppedNoAllowedMatch)),
            },
            None => {
                if !candidate.is_empty() && text.contains(candidate) {
                    state.insert(id.clone(), candidate);
                } else if let Some(repaired) = options
                    .repair_substring
                    .then(|| repair_substring(candidate, conversation, options.fuzzy_threshold))
                    .flatten()
                {
                    warnings.push(ParseWarning::slot(id, WarningReason::RepairedSubstring));
                    state.insert(id.clone(), repaired);
                } else {
                    warnings.push(ParseWarning::slot(id, WarningReason::DroppedNotSubstring));
                }
            }
        }
    }
    ParseOutcome { state, warnings }
}

/// Exact, then case-insensitive, then best fuzzy match at or above
/// `threshold` (ties go to the earliest allowed value). The flag reports an
/// exact match.
fn map_categorical(candidate: &str, allowed: &[String], threshold: f64) -> Option<(String, bool)> {
    if candidate.is_empty() {
        return None;
    }
    if let Some(a) = allowed.iter().find(|a| a.as_str() == candidate) {
        return Some((a.clone(), true));
    }
    let folded = candidate.to_lowercase();
    if let Some(a) = allowed.iter().find(|a| a.to_lowercase() == folded) {
        return Some((a.clone(), false));
    }
    let mut best: Option<(&String, f64)> = None;
    for a in allowed {
        let sim = normalized_similarity(candidate, a);
        if sim >= threshold && best.is_none_or(|(_, b)| sim > b) {
            best = Some((a, sim));
        }
    }
    best.map(|(a, _)| (a.clone(), false))
}

/// Longest word-aligned span of a single turn whose similarity to `value`
/// reaches `threshold`; ties prefer higher similarity, then earlier spans.
fn repair_substring(value: &str, conversation: &Conversation, threshold: f64) -> Option<String> {
    if value.is_empty() || threshold <= 0.0 {
        return None;
    }
    let target_len = value.chars().count() as f64;
    let max_words = value.split_whitespace().count() * 2 + 2;
    let mut best: Option<(usize, f64, &str)> = None;
    for turn in &conversation.turns {
        let spans: Vec<(usize, usize)> = word_spans(&turn.text);
        for i in 0..spans.len() {
            for j in i..spans.len().min(i + max_words) {
                let span = &turn.text[spans[i].0..spans[j].1];
                let len = span.chars().count();
                if (len as f64) < target_len * threshold {
                    continue;
                }
                if (len as f64) > target_len / threshold {
                    break;
                }
                let sim = normalized_similarity(value, span);
                if sim < threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bl, bs, _)) => len > bl || (len == bl && sim > bs),
                };
                if better {
                    best = Some((len, sim, span));
                }
            }
        }
    }
    best.map(|(_, _, s)| s.to_string())
}

fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub outcome: ParseOutcome,
    /// Wall-clock seconds spent in the backend call only.
    pub latency_s: f64,
    pub dropped_turns: usize,
    pub raw_text: String,
}

/// Prompt rendering, one backend call, parsing and validation.
pub fn extract(
    library: &SlotLibrary,
    conversation: &Conversation,
    backend: &dyn CompletionBackend,
    budget: &TokenBudget,
    counter: &dyn TokenCounter,
    options: &NormalizeOptions,
) -> Result<Extraction, ExtractError> {
    let rendered = prompt::render_prompt(library, conversation, budget, counter)?;
    let request = CompletionRequest::new(rendered.text, budget.max_output_tokens);
    let start = Instant::now();
    let completion = backend.complete(&request)?;
    let latency_s = start.elapsed().as_secs_f64();

    let raw = parse_generation(&completion.text);
    let mut outcome = validate_and_normalize(&raw.values, library, conversation, options);
    let mut warnings = raw.warnings;
    warnings.append(&mut outcome.warnings);
    outcome.warnings = warnings;
    Ok(Extraction {
        outcome,
        latency_s,
        dropped_turns: rendered.dropped_turns,
        raw_text: completion.text,
    })
}
