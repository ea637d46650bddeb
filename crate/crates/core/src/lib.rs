//! Schema-guided slot filling: prompt construction, generation parsing,
//! dataset ingestion and augmentation, backends and evaluation.

pub mod augment;
pub mod backend;
pub mod eval;
pub mod parse;
pub mod prompt;
pub mod sgd;
pub mod state;

pub use backend::{BackendConfig, BackendError, BackendKind, CompletionBackend, CompletionRequest};
pub use parse::{extract, parse_generation, validate_and_normalize, Extraction, NormalizeOptions, ParseOutcome, ParseWarning, WarningReason};
pub use prompt::{render_output, render_prompt, PromptError, TokenBudget, TokenCounter, WhitespaceCounter};
pub use state::{
    belief_update, BeliefState, Category, Conversation, GoldState, PromptRecord, Role, SlotId, SlotLibrary, SlotSpec, Split,
    TrackingMode, Turn, validate_state, Violation,
};
