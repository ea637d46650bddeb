//! Command line, dialogue-state tracker, REPL and HTTP service built on
//! `slotfill-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod repl;
pub mod service;
pub mod session;

pub use config::AppConfig;
pub use error::AppError;
pub use session::{Session, SessionManager, TrackerContext};
