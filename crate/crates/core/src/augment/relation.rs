//! A "relationship with receiver" slot for money-transfer style records.

use super::{fresh_ids, AugmentOutput, AugmentWarningKind, Augmenter, Pipeline, Step};
use crate::state::{Conversation, PromptRecord, Role, SlotLibrary, SlotSpec};

pub const RELATION_DESCRIPTION: &str = "relationship with receiver";

/// The leftmost `my <relation>` in the user turns, with the relation word as
/// written. Both words match case-insensitively and on word boundaries.
pub fn find_relation<'a>(conversation: &'a Conversation, lexicon: &[String]) -> Option<&'a str> {
    for turn in conversation.turns.iter().filter(|t| t.role == Role::User) {
        let text = turn.text.as_str();
        let lower = text.to_lowercase();
        // Lowercasing can change byte lengths outside ASCII; only search when
        // offsets line up.
        if lower.len() != text.len() {
            continue;
        }
        let mut from = 0;
        while let Some(off) = lower[from..].find("my ") {
            let at = from + off;
            from = at + 1;
            if at > 0 && is_word_byte(lower.as_bytes()[at - 1]) {
                continue;
            }
            let word_start = at + 3;
            let word_end = lower[word_start..]
                .find(|c: char| !c.is_alphanumeric())
                .map_or(lower.len(), |n| word_start + n);
            let word = &lower[word_start..word_end];
            if !word.is_empty() && lexicon.iter().any(|r| r.eq_ignore_ascii_case(word)) {
                return Some(&text[word_start..word_end]);
            }
        }
    }
    None
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn is_transfer_library(library: &SlotLibrary) -> bool {
    library.iter().any(|s| {
        let hay = format!("{} {}", s.name, s.description).to_lowercase();
        hay.contains("receiver") || hay.contains("recipient")
    })
}

impl Augmenter<'_> {
    /// Adds a relation slot after the existing slots of every record whose
    /// library mentions a receiver or recipient, filled from
    /// [`find_relation`] when the user names one.
    pub fn relation_injection(&self, records: Vec<PromptRecord>) -> AugmentOutput {
        self.map_records(Pipeline::Relation, records, |rec| self.inject_relation(rec))
    }

    fn inject_relation(&self, rec: &PromptRecord) -> Step {
        if !is_transfer_library(&rec.library) || rec.library.iter().any(|s| s.description == RELATION_DESCRIPTION) {
            return Step::Keep;
        }
        let hash = self.id_hash(Pipeline::Relation, "relation");
        let Some(ids) = fresh_ids(Pipeline::Relation.id_class(), hash, &rec.library, 1) else {
            return Step::KeepWithWarning(AugmentWarningKind::IdSpaceFull);
        };
        let id = ids[0].clone();
        let mut slots = rec.library.slots().to_vec();
        slots.push(SlotSpec::free_text(id.clone(), "relation", RELATION_DESCRIPTION));
        let Ok(library) = SlotLibrary::new(slots) else {
            return Step::Keep;
        };
        let mut gold = rec.gold.clone();
        if let Some(word) = find_relation(&rec.conversation, &self.resources.relations) {
            gold.set(id, word);
        }
        Step::Replace(PromptRecord {
            library,
            gold,
            ..rec.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Turn;

    fn lex() -> Vec<String> {
        ["brother", "sister", "mother"].map(String::from).to_vec()
    }

    fn conv(user: &[&str]) -> Conversation {
        Conversation::new(user.iter().map(|t| Turn::user(*t)).collect())
    }

    #[test]
    fn leftmost_match() {
        let c = conv(&["I want to send money to my brother George Sidney"]);
        assert_eq!(find_relation(&c, &lex()), Some("brother"));
        let c = conv(&["pay my brother and my sister"]);
        assert_eq!(find_relation(&c, &lex()), Some("brother"));
        let c = conv(&["for My Sister, please"]);
        assert_eq!(find_relation(&c, &lex()), Some("Sister"));
    }

    #[test]
    fn no_match() {
        assert_eq!(find_relation(&conv(&["send it to George"]), &lex()), None);
        assert_eq!(find_relation(&conv(&["army brothers"]), &lex()), None);
        assert_eq!(find_relation(&conv(&["my brothers"]), &lex()), None);
        let sys = Conversation::new(vec![Turn::system("to my brother?"), Turn::user("yes")]);
        assert_eq!(find_relation(&sys, &lex()), None);
    }
}
