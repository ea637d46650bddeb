//! Line-oriented tracker for debugging slot libraries by hand.
//!
//! Plain lines are user turns. `/system TEXT` sets the agent utterance that
//! precedes the next user turn; `/state` prints the whole state, `/reset`
//! starts over and `/quit` exits. After each turn only the changed slots are
//! printed, followed by any parser warnings.

use std::io::{BufRead, Write};

use slotfill_core::{SlotLibrary, TrackingMode};

use crate::session::{track_turn, ChangeKind, Session, SessionError, TrackerContext, TurnOutcome};

pub fn run<R: BufRead, W: Write>(
    library: SlotLibrary,
    mode: TrackingMode,
    ctx: &TrackerContext,
    input: R,
    mut out: W,
) -> std::io::Result<Session> {
    let mut session = Session::new("repl", library.clone(), mode);
    let mut pending_system: Option<String> = None;
    writeln!(out, "{} slots loaded; type /quit to exit", library.len())?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match text.split_once(' ').map_or((text, ""), |(c, rest)| (c, rest.trim())) {
            ("/quit" | "/exit", _) => break,
            ("/state", _) => print_state(&session, &mut out)?,
            ("/reset", _) => {
                session = Session::new("repl", library.clone(), mode);
                pending_system = None;
                writeln!(out, "state cleared")?;
            }
            ("/system", rest) if !rest.is_empty() => pending_system = Some(rest.to_string()),
            (cmd, _) if cmd.starts_with('/') => writeln!(out, "unknown command {cmd}")?,
            _ => match track_turn(&session, text, pending_system.as_deref(), ctx) {
                Ok((next, outcome)) => {
                    session = next;
                    pending_system = None;
                    print_outcome(&outcome, &mut out)?;
                }
                Err(e) => print_error(&e, &mut out)?,
            },
        }
        out.flush()?;
    }
    Ok(session)
}

fn print_outcome<W: Write>(outcome: &TurnOutcome, out: &mut W) -> std::io::Result<()> {
    if outcome.delta.is_empty() {
        writeln!(out, "(no change)")?;
    }
    for change in &outcome.delta {
        match change.kind {
            ChangeKind::Added => writeln!(out, "+ {}: {}", change.slot, change.new.as_deref().unwrap_or(""))?,
            ChangeKind::Changed => writeln!(
                out,
                "~ {}: {} -> {}",
                change.slot,
                change.old.as_deref().unwrap_or(""),
                change.new.as_deref().unwrap_or("")
            )?,
            ChangeKind::Removed => writeln!(out, "- {}: {}", change.slot, change.old.as_deref().unwrap_or(""))?,
        }
    }
    for w in &outcome.warnings {
        writeln!(out, "! {w}")?;
    }
    if outcome.dropped_turns > 0 {
        writeln!(out, "! {} oldest turns dropped to fit the prompt budget", outcome.dropped_turns)?;
    }
    Ok(())
}

fn print_state<W: Write>(session: &Session, out: &mut W) -> std::io::Result<()> {
    if session.state.is_empty() {
        return writeln!(out, "(empty)");
    }
    for spec in session.library.iter() {
        if let Some(v) = session.state.get(&spec.id) {
            writeln!(out, "{}: {}  # {}", spec.id, v, spec.description)?;
        }
    }
    Ok(())
}

fn print_error<W: Write>(e: &SessionError, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "error: {e}")
}
