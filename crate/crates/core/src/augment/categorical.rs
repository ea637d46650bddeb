//! Boolean slots rewritten as explicit confirmations.

use super::{description_phrase, join_natural, AugmentOutput, Augmenter, Pipeline, Step};
use crate::state::{Conversation, PromptRecord, Role, SlotLibrary, SlotSpec, Turn};

pub const CONFIRM_DESCRIPTION: &str = "Please confirm. Allowed values (\"Yes, go ahead\",\"No\")";
pub const CONFIRM_YES: &str = "Yes, go ahead";
pub const CONFIRM_NO: &str = "No";

const CLAUSE: &str = "Allowed values (\"Yes, go ahead\",\"No\").";

fn is_boolean(spec: &SlotSpec) -> bool {
    match &spec.allowed_values {
        Some(values) => {
            let mut lower: Vec<String> = values.iter().map(|v| v.to_lowercase()).collect();
            lower.sort();
            lower.dedup();
            lower == ["false", "true"]
        }
        None => false,
    }
}

impl Augmenter<'_> {
    /// Rewrites the first filled boolean slot of each record into a
    /// confirmation slot. The system turn before the final user turn becomes
    /// a restatement of the other gold values ending in the allowed-values
    /// clause, and the final user turn a bare "Yes." or "No."; records with
    /// a single turn get both turns appended instead.
    pub fn categorical_confirm(&self, records: Vec<PromptRecord>) -> AugmentOutput {
        self.map_records(Pipeline::Categorical, records, confirm)
    }
}

fn confirm(rec: &PromptRecord) -> Step {
    let Some((spec, value)) = rec
        .library
        .iter()
        .filter(|s| is_boolean(s))
        .find_map(|s| rec.gold.primary(&s.id).map(|v| (s, v)))
    else {
        return Step::Keep;
    };
    let yes = value.eq_ignore_ascii_case("true");
    let Ok(new_spec) = SlotSpec::from_description(spec.id.clone(), spec.name.clone(), CONFIRM_DESCRIPTION) else {
        return Step::Keep;
    };
    let mut slots = rec.library.slots().to_vec();
    let pos = rec.library.position(&spec.id).expect("spec comes from this library");
    slots[pos] = new_spec;
    let Ok(library) = SlotLibrary::new(slots) else {
        return Step::Keep;
    };

    let collected: Vec<String> = rec
        .library
        .iter()
        .filter(|s| s.id != spec.id && !is_boolean(s))
        .filter_map(|s| rec.gold.primary(&s.id).map(|v| format!("{} {v}", description_phrase(&s.description))))
        .collect();
    let restatement = if collected.is_empty() {
        format!("Please confirm. {CLAUSE}")
    } else {
        format!("Please confirm the following details: {}. {CLAUSE}", join_natural(&collected))
    };
    let answer = if yes { "Yes." } else { "No." };

    let mut turns = rec.conversation.turns.clone();
    let n = turns.len();
    if n >= 3 && turns[n - 1].role == Role::User && turns[n - 2].role == Role::System {
        turns.truncate(n - 2);
    }
    turns.push(Turn::system(restatement));
    turns.push(Turn::user(answer));

    let mut gold = rec.gold.clone();
    gold.set(spec.id.clone(), if yes { CONFIRM_YES } else { CONFIRM_NO });
    Step::Replace(PromptRecord {
        library,
        conversation: Conversation::new(turns),
        gold,
        ..rec.clone()
    })
}
