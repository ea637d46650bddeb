//! Confirmation summaries turned into single user requests carrying several
//! values at once.

use super::{description_phrase, join_natural, AugmentOutput, AugmentWarningKind, Augmenter, Pipeline, Step};
use crate::backend::CompletionRequest;
use crate::state::{Conversation, GoldState, PromptRecord, Role, SlotId, Turn};

impl Augmenter<'_> {
    /// For each record whose final user turn follows a system turn repeating
    /// at least `min_confirmed_values` gold values, adds a record with one
    /// user turn stating all of them. The input records are kept.
    pub fn multi_slot(&self, records: Vec<PromptRecord>) -> AugmentOutput {
        self.map_records(Pipeline::MultiSlot, records, |rec| {
            let Some(confirmed) = self.confirmed_values(rec) else {
                return Step::Keep;
            };
            let (utterance, ok) = self.utterance(rec, &confirmed);
            let mut gold = GoldState::new();
            for (id, value, _) in &confirmed {
                gold.set(id.clone(), value.clone());
            }
            let record = PromptRecord {
                conversation: Conversation::new(vec![Turn::user(utterance)]),
                gold,
                ..rec.clone()
            };
            Step::Append(vec![record], (!ok).then_some(AugmentWarningKind::ParaphraseRejected))
        })
    }

    /// Gold slots (library order) whose value appears in the system turn
    /// right before the final user turn, with their description phrases.
    fn confirmed_values(&self, rec: &PromptRecord) -> Option<Vec<(SlotId, String, String)>> {
        let turns = &rec.conversation.turns;
        let n = turns.len();
        if n < 2 || turns[n - 1].role != Role::User || turns[n - 2].role != Role::System {
            return None;
        }
        let system = &turns[n - 2].text;
        let confirmed: Vec<(SlotId, String, String)> = rec
            .library
            .iter()
            .filter_map(|spec| {
                let value = rec.gold.primary(&spec.id)?;
                (!value.is_empty() && system.contains(value))
                    .then(|| (spec.id.clone(), value.to_string(), description_phrase(&spec.description)))
            })
            .collect();
        (confirmed.len() >= self.config.min_confirmed_values.max(1)).then_some(confirmed)
    }

    /// The paraphrase when a backend is configured and it keeps every value
    /// verbatim, otherwise the template sentence. The flag is false when a
    /// paraphrase was attempted and rejected.
    fn utterance(&self, rec: &PromptRecord, confirmed: &[(SlotId, String, String)]) -> (String, bool) {
        let template = template_sentence(confirmed);
        let Some(backend) = self.paraphraser else {
            return (template, true);
        };
        let values: Vec<&str> = confirmed.iter().map(|(_, v, _)| v.as_str()).collect();
        let prompt = format!(
            "Rewrite the request below as one natural sentence a customer would say. Keep these values exactly as written: {}\n\nRequest: {template}\nRewritten:",
            values.join("; ")
        );
        let mut request = CompletionRequest::new(prompt, self.config.budget.max_output_tokens);
        request.stop_sequences = vec!["\n".into()];
        match backend.complete(&request) {
            Ok(c) => {
                let text = c.text.trim();
                if !text.is_empty() && values.iter().all(|v| text.contains(v)) {
                    return (text.to_string(), true);
                }
                log::debug!("paraphrase for {} dropped a value", rec.conversation.fingerprint());
                (template, false)
            }
            Err(e) => {
                log::warn!("paraphrase backend failed: {e}");
                (template, false)
            }
        }
    }
}

/// `I need <desc> <value>, <desc> <value> and <desc> <value>.`
pub(crate) fn template_sentence(confirmed: &[(SlotId, String, String)]) -> String {
    let phrases: Vec<String> = confirmed.iter().map(|(_, v, d)| format!("{d} {v}")).collect();
    format!("I need {}.", join_natural(&phrases))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template() {
        let c = vec![
            (SlotId::new(5), "long beach".to_string(), "city where bus is going to".to_string()),
            (SlotId::new(182), "4".to_string(), "number of travelers for journey".to_string()),
            (SlotId::new(24), "Fresno".to_string(), "city where bus is leaving from".to_string()),
        ];
        assert_eq!(
            template_sentence(&c),
            "I need city where bus is going to long beach, number of travelers for journey 4 and city where bus is leaving from Fresno."
        );
    }
}
