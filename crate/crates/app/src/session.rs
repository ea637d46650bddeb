//! Per-session dialogue-state tracking.
//!
//! Each turn re-extracts over the full (truncated) history and folds the
//! result into the session's belief state according to its mode. A failed
//! turn leaves the stored session untouched.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use slotfill_core::parse::ExtractError;
use slotfill_core::{
    belief_update, extract, BackendError, BeliefState, CompletionBackend, Conversation, NormalizeOptions, ParseWarning,
    PromptError, SlotId, SlotLibrary, TokenBudget, TokenCounter, TrackingMode, Turn,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("user text is blank")]
    BlankText,
    #[error("slot library is empty")]
    EmptyLibrary,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    State(#[from] slotfill_core::state::StateError),
    #[error("session store {path}: {source}")]
    Store {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("session file {path} is corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl From<ExtractError> for SessionError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Prompt(p) => p.into(),
            ExtractError::Backend(b) => b.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub library: SlotLibrary,
    pub conversation: Conversation,
    pub state: BeliefState,
    pub mode: TrackingMode,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, library: SlotLibrary, mode: TrackingMode) -> Self {
        let now = now_ms();
        Self {
            id: id.into(),
            state: BeliefState::for_library(&library),
            library,
            conversation: Conversation::default(),
            mode,
            created_at: now,
            updated_at: now,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Added,
    Changed,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotChange {
    pub slot: SlotId,
    pub kind: ChangeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub old: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new: Option<String>,
}

/// Slots whose value differs between two states, in id order.
pub fn state_delta(prev: &BeliefState, next: &BeliefState) -> Vec<SlotChange> {
    let mut out = Vec::new();
    for (id, value) in next.iter() {
        match prev.get(id) {
            None => out.push(SlotChange {
                slot: id.clone(),
                kind: ChangeKind::Added,
                old: None,
                new: Some(value.to_string()),
            }),
            Some(old) if old != value => out.push(SlotChange {
                slot: id.clone(),
                kind: ChangeKind::Changed,
                old: Some(old.to_string()),
                new: Some(value.to_string()),
            }),
            Some(_) => {}
        }
    }
    for (id, old) in prev.iter() {
        if next.get(id).is_none() {
            out.push(SlotChange {
                slot: id.clone(),
                kind: ChangeKind::Removed,
                old: Some(old.to_string()),
                new: None,
            });
        }
    }
    out.sort_by_key(|c| c.slot.number());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub warnings: Vec<ParseWarning>,
    pub delta: Vec<SlotChange>,
    pub latency_s: f64,
    pub dropped_turns: usize,
}

/// What a turn needs besides the session itself.
#[derive(Clone)]
pub struct TrackerContext {
    pub backend: Arc<dyn CompletionBackend>,
    pub budget: TokenBudget,
    pub counter: Arc<dyn TokenCounter>,
    pub normalize: NormalizeOptions,
}

/// Appends the optional system utterance and the user utterance, extracts,
/// and returns the updated session. `session` itself is never modified.
pub fn track_turn(
    session: &Session,
    user_text: &str,
    system_text: Option<&str>,
    ctx: &TrackerContext,
) -> Result<(Session, TurnOutcome), SessionError> {
    if user_text.trim().is_empty() {
        return Err(SessionError::BlankText);
    }
    let mut next = session.clone();
    if let Some(system) = system_text.filter(|s| !s.trim().is_empty()) {
        next.conversation.push(Turn::system(system));
    }
    next.conversation.push(Turn::user(user_text));
    let extraction = extract(
        &next.library,
        &next.conversation,
        ctx.backend.as_ref(),
        &ctx.budget,
        ctx.counter.as_ref(),
        &ctx.normalize,
    )?;
    let prev = session.state.clone().with_library(&session.library);
    let extracted = extraction.outcome.state.with_library(&next.library);
    next.state = belief_update(&prev, &extracted, next.mode)?;
    next.updated_at = now_ms();
    let outcome = TurnOutcome {
        delta: state_delta(&session.state, &next.state),
        warnings: extraction.outcome.warnings,
        latency_s: extraction.latency_s,
        dropped_turns: extraction.dropped_turns,
    };
    Ok((next, outcome))
}

pub trait SessionStore: Send + Sync {
    fn load(&self, id: &str) -> Result<Option<Session>, SessionError>;
    fn save(&self, session: &Session) -> Result<(), SessionError>;
    /// Returns whether the session existed.
    fn remove(&self, id: &str) -> Result<bool, SessionError>;
}

#[derive(Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<String, Session>>,
}

impl MemoryStore {
    fn map(&self) -> MutexGuard<'_, HashMap<String, Session>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl SessionStore for MemoryStore {
    fn load(&self, id: &str) -> Result<Option<Session>, SessionError> {
        Ok(self.map().get(id).cloned())
    }

    fn save(&self, session: &Session) -> Result<(), SessionError> {
        self.map().insert(session.id.clone(), session.clone());
        Ok(())
    }

    fn remove(&self, id: &str) -> Result<bool, SessionError> {
        Ok(self.map().remove(id).is_some())
    }
}

/// One JSON file per session. Writes go to a temporary file that is then
/// renamed over the old one, so a crash never leaves a half-written session.
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| SessionError::Store { path: dir.clone(), source })?;
        Ok(Self { dir })
    }

    /// `None` for ids that could escape the directory.
    fn path(&self, id: &str) -> Option<PathBuf> {
        let ok = !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        ok.then(|| self.dir.join(format!("{id}.json")))
    }

    fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
        move |source| SessionError::Store {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl SessionStore for FileStore {
    fn load(&self, id: &str) -> Result<Option<Session>, SessionError> {
        let Some(path) = self.path(id) else {
            return Ok(None);
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Self::io_err(&path)(e)),
        };
        let mut session: Session = serde_json::from_str(&text).map_err(|e| SessionError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        session.state = session.state.with_library(&session.library);
        Ok(Some(session))
    }

    fn save(&self, session: &Session) -> Result<(), SessionError> {
        let path = self.path(&session.id).ok_or_else(|| SessionError::NotFound(session.id.clone()))?;
        let tmp = self.dir.join(format!(".{}.{}.tmp", session.id, uuid::Uuid::new_v4().simple()));
        let body = serde_json::to_vec_pretty(session).expect("session serializes");
        std::fs::write(&tmp, body).map_err(Self::io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(Self::io_err(&path))
    }

    fn remove(&self, id: &str) -> Result<bool, SessionError> {
        let Some(path) = self.path(id) else {
            return Ok(false);
        };
        match std::fs::remove_file(&path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(Self::io_err(&path)(e)),
        }
    }
}

/// Sessions plus the tracker context. Turns on one session are serialized;
/// distinct sessions run in parallel.
pub struct SessionManager {
    store: Box<dyn SessionStore>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    pub context: TrackerContext,
}

impl SessionManager {
    pub fn new(store: Box<dyn SessionStore>, context: TrackerContext) -> Self {
        Self {
            store,
            locks: Mutex::new(HashMap::new()),
            context,
        }
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn create(&self, library: SlotLibrary, mode: TrackingMode) -> Result<Session, SessionError> {
        if library.is_empty() {
            return Err(SessionError::EmptyLibrary);
        }
        let session = Session::new(uuid::Uuid::new_v4().simple().to_string(), library, mode);
        self.store.save(&session)?;
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        self.store.load(id)?.ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn delete(&self, id: &str) -> Result<(), SessionError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let existed = self.store.remove(id)?;
        self.locks.lock().unwrap_or_else(|p| p.into_inner()).remove(id);
        if existed {
            Ok(())
        } else {
            Err(SessionError::NotFound(id.to_string()))
        }
    }

    pub fn turn(&self, id: &str, user_text: &str, system_text: Option<&str>) -> Result<(Session, TurnOutcome), SessionError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let session = self.get(id)?;
        let (next, outcome) = track_turn(&session, user_text, system_text, &self.context)?;
        self.store.save(&next)?;
        Ok((next, outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use slotfill_core::backend::FnBackend;
    use slotfill_core::{CompletionRequest, SlotSpec, WhitespaceCounter};

    fn library() -> SlotLibrary {
        SlotLibrary::new(vec![
            SlotSpec::free_text(SlotId::new(1), "", "Destination city"),
            SlotSpec::free_text(SlotId::new(2), "", "Departure city"),
        ])
        .unwrap()
    }

    fn context(backend: impl CompletionBackend + 'static) -> TrackerContext {
        TrackerContext {
            backend: Arc::new(backend),
            budget: TokenBudget::default(),
            counter: Arc::new(WhitespaceCounter),
            normalize: NormalizeOptions::default(),
        }
    }

    /// Answers with every known city mentioned in the prompt's conversation.
    fn echo_backend() -> impl CompletionBackend {
        FnBackend(|req: &CompletionRequest| {
            let conv = req.prompt.split("<conversation>").nth(1).unwrap_or("");
            let mut lines = Vec::new();
            if conv.contains("to Reno") {
                lines.push("'Slot-1': 'Reno'");
            }
            if conv.contains("from Fresno") {
                lines.push("'Slot-2': 'Fresno'");
            }
            Ok(lines.join(",\n"))
        })
    }

    #[test]
    fn delta_kinds() {
        let a = BeliefState::from_pairs([("Slot-1", "x"), ("Slot-2", "y")]);
        let b = BeliefState::from_pairs([("Slot-1", "z"), ("Slot-3", "w")]);
        let kinds: Vec<(u64, ChangeKind)> = state_delta(&a, &b).iter().map(|c| (c.slot.number(), c.kind)).collect();
        assert_eq!(kinds, vec![(1, ChangeKind::Changed), (2, ChangeKind::Removed), (3, ChangeKind::Added)]);
    }

    #[test]
    fn turns_accumulate_and_report_delta() {
        let ctx = context(echo_backend());
        let s = Session::new("a", library(), TrackingMode::Replace);
        let (s, first) = track_turn(&s, "I go to Reno", None, &ctx).unwrap();
        assert_eq!(first.delta.len(), 1);
        let (s, second) = track_turn(&s, "leaving from Fresno", Some("Where from?"), &ctx).unwrap();
        assert_eq!(s.conversation.len(), 3);
        assert_eq!(s.conversation.turns[1], Turn::system("Where from?"));
        assert_eq!(second.delta.len(), 1);
        assert_eq!(s.state.get(&SlotId::new(1)), Some("Reno"));
        assert_eq!(s.state.get(&SlotId::new(2)), Some("Fresno"));
    }

    #[test]
    fn failure_leaves_session_unchanged() {
        let ctx = context(FnBackend(|_: &CompletionRequest| Err(BackendError::Transport("down".into()))));
        let manager = SessionManager::new(Box::new(MemoryStore::default()), ctx);
        let s = manager.create(library(), TrackingMode::Merge).unwrap();
        assert!(matches!(manager.turn(&s.id, "to Reno", None), Err(SessionError::Backend(_))));
        assert_eq!(manager.get(&s.id).unwrap(), s);
    }

    #[test]
    fn file_store_roundtrip_and_bad_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let s = Session::new("abc-1", library(), TrackingMode::Merge);
        store.save(&s).unwrap();
        assert_eq!(FileStore::open(dir.path()).unwrap().load("abc-1").unwrap(), Some(s));
        assert_eq!(store.load("../etc/passwd").unwrap(), None);
        assert!(store.remove("abc-1").unwrap());
        assert!(!store.remove("abc-1").unwrap());
    }
}
