//! Prompt and gold-output rendering.
//!
//! Layout of a prompt (lines joined with `\n`, no trailing newline):
//!
//! ```text
//! Find all the slots and their values from conversation.
//!
//! <slot library>
//! Slot-211: first name
//! Slot-196: add phone number. Allowed values ("Yes", "No")
//!
//! <conversation>
//! [USER] I'd like to register
//! [SYSTEM] ...
//! ```
//!
//! When the rendered prompt exceeds the token budget, whole turns are dropped
//! oldest-first. The instruction, the slot library and the final turn are
//! always kept.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{BeliefState, Conversation, SlotId, SlotLibrary, SlotSpec};

/// First prompt line. The trailing space is part of the format.
pub const INSTRUCTION: &str = "Find all the slots and their values from conversation. ";
pub const LIBRARY_TAG: &str = "<slot library>";
pub const CONVERSATION_TAG: &str = "<conversation>";

pub const DEFAULT_MAX_PROMPT_TOKENS: usize = 1200;
pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 270;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt needs at least {needed} tokens for instruction, library and final turn but the budget is {budget}")]
    BudgetImpossible { needed: usize, budget: usize },
    #[error("conversation is empty")]
    EmptyConversation,
    #[error("slot library is empty")]
    EmptyLibrary,
    #[error("malformed allowed-values clause: {0}")]
    MalformedClause(String),
    #[error("token budgets must be at least 1")]
    InvalidBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenBudget {
    pub max_prompt_tokens: usize,
    pub max_output_tokens: usize,
}

impl TokenBudget {
    pub fn new(max_prompt_tokens: usize, max_output_tokens: usize) -> Result<Self, PromptError> {
        if max_prompt_tokens == 0 || max_output_tokens == 0 {
            return Err(PromptError::InvalidBudget);
        }
        Ok(Self {
            max_prompt_tokens,
            max_output_tokens,
        })
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            max_prompt_tokens: DEFAULT_MAX_PROMPT_TOKENS,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

/// A token counting strategy.
///
/// Implementations must return 0 for the empty string and be monotone under
/// concatenation: `count(a + b) >= max(count(a), count(b))`. Truncation
/// binary-searches over the number of dropped turns and relies on this.
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Counts whitespace-delimited words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// `ceil(chars / chars_per_token)`, the usual rough estimate for BPE models.
#[derive(Debug, Clone, Copy)]
pub struct CharCounter {
    pub chars_per_token: usize,
}

impl Default for CharCounter {
    fn default() -> Self {
        Self { chars_per_token: 4 }
    }
}

impl TokenCounter for CharCounter {
    fn name(&self) -> &str {
        "chars"
    }

    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.chars_per_token.max(1))
    }
}

/// Delegates counting to an external program: the text is written to its
/// stdin and it must print one integer on stdout. This is how a
/// model-exact tokenizer is plugged in.
#[derive(Debug, Clone)]
pub struct CommandCounter {
    pub command: String,
}

impl TokenCounter for CommandCounter {
    fn name(&self) -> &str {
        "plugin"
    }

    fn count(&self, text: &str) -> usize {
        if text.is_empty() {
            return 0;
        }
        match run_counter_command(&self.command, text) {
            Ok(n) => n,
            Err(e) => {
                // Treat a broken counter as infinitely long so nothing is
                // emitted over budget.
                log::error!("token counter command failed: {e}");
                usize::MAX
            }
        }
    }
}

fn run_counter_command(command: &str, text: &str) -> std::io::Result<usize> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()?;
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(text.as_bytes())?;
    let out = child.wait_with_output()?;
    String::from_utf8_lossy(&out.stdout)
        .trim()
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Resolves a counter by CLI name. `plugin` needs a command.
pub fn counter_by_name(
    name: &str,
    command: Option<&str>,
) -> Result<Box<dyn TokenCounter>, String> {
    match name {
        "whitespace" => Ok(Box::new(WhitespaceCounter)),
        "chars" => Ok(Box::new(CharCounter::default())),
        "plugin" => command
            .map(|c| Box::new(CommandCounter { command: c.to_string() }) as Box<dyn TokenCounter>)
            .ok_or_else(|| "the plugin counter needs a command".to_string()),
        other => Err(format!("unknown token counter {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub dropped_turns: usize,
}

pub fn render_prompt(
    library: &SlotLibrary,
    conversation: &Conversation,
    budget: &TokenBudget,
    counter: &dyn TokenCounter,
) -> Result<RenderedPrompt, PromptError> {
    if conversation.is_empty() {
        return Err(PromptError::EmptyConversation);
    }
    if library.is_empty() {
        return Err(PromptError::EmptyLibrary);
    }
    let header = render_header(library);
    let turn_lines: Vec<String> = conversation
        .turns
        .iter()
        .map(|t| format!("{} {}", t.role.tag(), t.text))
        .collect();
    let assemble = |skip: usize| {
        let mut text = header.clone();
        for line in &turn_lines[skip..] {
            text.push('\n');
            text.push_str(line);
        }
        text
    };

    let max = budget.max_prompt_tokens;
    let full = assemble(0);
    if counter.count(&full) <= max {
        return Ok(RenderedPrompt {
            text: full,
            dropped_turns: 0,
        });
    }
    let last = turn_lines.len() - 1;
    let minimal = assemble(last);
    let needed = counter.count(&minimal);
    if needed > max {
        return Err(PromptError::BudgetImpossible { needed, budget: max });
    }
    // Invariant: assemble(lo) does not fit, assemble(hi) does.
    let (mut lo, mut hi) = (0usize, last);
    let mut best = minimal;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let candidate = assemble(mid);
        if counter.count(&candidate) <= max {
            hi = mid;
            best = candidate;
        } else {
            lo = mid;
        }
    }
    Ok(RenderedPrompt {
        text: best,
        dropped_turns: hi,
    })
}

fn render_header(library: &SlotLibrary) -> String {
    let mut text = String::new();
    text.push_str(INSTRUCTION);
    text.push_str("\n\n");
    text.push_str(LIBRARY_TAG);
    for slot in library {
        text.push('\n');
        text.push_str(&render_slot_line(slot));
    }
    text.push_str("\n\n");
    text.push_str(CONVERSATION_TAG);
    text
}

/// `Slot-<n>: <description>`, with the allowed-values clause appended for
/// categorical slots whose description does not already carry one.
pub fn render_slot_line(slot: &SlotSpec) -> String {
    let mut line = format!("{}: {}", slot.id, slot.description);
    if let Some(values) = &slot.allowed_values {
        if !matches!(parse_allowed_values(&slot.description), Ok(Some(_))) {
            let trimmed_len = line.trim_end().len();
            line.truncate(trimmed_len);
            if !line.ends_with('.') {
                line.push('.');
            }
            line.push(' ');
            line.push_str(&allowed_values_clause(values));
        }
    }
    line
}

/// `Allowed values ("a", "b")`
pub fn allowed_values_clause(values: &[String]) -> String {
    let quoted: Vec<String> = values.iter().map(|v| format!("\"{v}\"")).collect();
    format!("Allowed values ({})", quoted.join(", "))
}

/// Strips a trailing allowed-values clause (and the separator before it).
pub fn strip_allowed_values_clause(description: &str) -> &str {
    match find_clause(description) {
        Some(start) if matches!(parse_allowed_values(description), Ok(Some(_))) => {
            description[..start].trim_end().trim_end_matches('.').trim_end()
        }
        _ => description.trim_end(),
    }
}

/// One line per filled slot in library order: `'<id>': '<value>',`, the last
/// line without the comma. Single quotes inside values are doubled.
pub fn render_output(state: &BeliefState, library: &SlotLibrary) -> String {
    render_pairs(
        library
            .iter()
            .filter_map(|s| state.get(&s.id).map(|v| (&s.id, v))),
    )
}

pub fn render_pairs<'a>(pairs: impl IntoIterator<Item = (&'a SlotId, &'a str)>) -> String {
    pairs
        .into_iter()
        .map(|(id, value)| format!("'{}': '{}'", id, value.replace('\'', "''")))
        .collect::<Vec<_>>()
        .join(",\n")
}

fn find_clause(description: &str) -> Option<usize> {
    ["Allowed values (", "allowed values (", "Allowed Values ("]
        .iter()
        .filter_map(|pat| description.rfind(pat))
        .max()
}

/// Extracts the items of a trailing `Allowed values ("…", …)` clause.
pub fn parse_allowed_values(description: &str) -> Result<Option<Vec<String>>, PromptError> {
    let Some(start) = find_clause(description) else {
        return Ok(None);
    };
    let open = start + "Allowed values (".len();
    let rest = &description[open..];
    let mut chars = rest.char_indices().peekable();
    let mut items = Vec::new();
    let malformed = |msg: &str| Err(PromptError::MalformedClause(format!("{msg} in {description:?}")));

    loop {
        while chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
        match chars.next() {
            Some((_, ')')) if items.is_empty() => break,
            Some((_, '"')) => {
                let mut item = String::new();
                let mut closed = false;
                for (_, c) in chars.by_ref() {
                    if c == '"' {
                        closed = true;
                        break;
                    }
                    item.push(c);
                }
                if !closed {
                    return malformed("unterminated quote");
                }
                items.push(item);
            }
            Some(_) => return malformed("expected a quoted value"),
            None => return malformed("unterminated clause"),
        }
        while chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
        match chars.next() {
            Some((_, ',')) => continue,
            Some((_, ')')) => break,
            Some(_) => return malformed("expected ',' or ')'"),
            None => return malformed("unterminated clause"),
        }
    }
    let tail: String = chars.map(|(_, c)| c).collect();
    if tail.chars().all(|c| c.is_whitespace() || c == '.') {
        Ok(Some(items))
    } else {
        Ok(None)
    }
}
