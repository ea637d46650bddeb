//! Records with long free-text values drawn from value banks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fresh_ids, generate_id, AugmentError, Augmenter, IdFormat, Pipeline};
use crate::state::{Category, Conversation, Fnv, GoldState, PromptRecord, Role, SlotId, SlotLibrary, SlotSpec, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    OrderCancellation,
    InsuranceClaim,
    TechSupport,
    HotelReservation,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::OrderCancellation,
        Scenario::InsuranceClaim,
        Scenario::TechSupport,
        Scenario::HotelReservation,
    ];

    /// Bank file name without the `.txt` extension.
    pub fn file_stem(self) -> &'static str {
        match self {
            Scenario::OrderCancellation => "order_cancellation",
            Scenario::InsuranceClaim => "insurance_claim",
            Scenario::TechSupport => "tech_support",
            Scenario::HotelReservation => "hotel_reservation",
        }
    }

    pub fn template(self) -> LongValueTemplate {
        use Role::{System as S, User as U};
        let (id_description, value_description, turns): (&str, &str, Vec<(Role, &str)>) = match self {
            Scenario::OrderCancellation => (
                "id of an order",
                "cancellation reason",
                vec![
                    (U, "I want to cancel my order {id} as {value}"),
                    (S, "sure, cancelled your order with ID {id}."),
                ],
            ),
            Scenario::InsuranceClaim => (
                "insurance policy number",
                "description of the incident",
                vec![
                    (U, "I need to file a claim on my insurance."),
                    (S, "I can help with that. What is your policy number?"),
                    (U, "It is {id}."),
                    (S, "Thanks. What happened?"),
                    (U, "Well, {value}."),
                ],
            ),
            Scenario::TechSupport => (
                "support ticket number",
                "description of the problem",
                vec![
                    (U, "Hi, I am following up on ticket {id}."),
                    (S, "Thanks. Can you describe the problem in more detail?"),
                    (U, "Yes, {value}."),
                ],
            ),
            Scenario::HotelReservation => (
                "reservation number",
                "special requests for the stay",
                vec![
                    (U, "I want to add a request to my reservation {id}."),
                    (S, "Of course, what would you like?"),
                    (U, "Could we get {value}?"),
                    (S, "Noted, I added that to reservation {id}."),
                ],
            ),
        };
        LongValueTemplate {
            scenario: self,
            id_description: id_description.into(),
            value_description: value_description.into(),
            turns: turns.into_iter().map(|(r, t)| (r, t.to_string())).collect(),
            id_format: IdFormat::Mixed,
        }
    }
}

/// A short conversation with `{id}` and `{value}` placeholders and the two
/// slots they fill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongValueTemplate {
    pub scenario: Scenario,
    pub id_description: String,
    pub value_description: String,
    pub turns: Vec<(Role, String)>,
    pub id_format: IdFormat,
}

impl LongValueTemplate {
    /// Library (id slot, then value slot), conversation and gold state.
    pub fn instantiate(&self, id_slot: SlotId, value_slot: SlotId, id: &str, value: &str) -> (SlotLibrary, Conversation, GoldState) {
        let library = SlotLibrary::new(vec![
            SlotSpec::free_text(id_slot.clone(), format!("{}/id", self.scenario.file_stem()), self.id_description.clone()),
            SlotSpec::free_text(value_slot.clone(), format!("{}/value", self.scenario.file_stem()), self.value_description.clone()),
        ])
        .expect("two distinct free-text slots");
        let conversation = Conversation::new(
            self.turns
                .iter()
                .map(|(role, text)| Turn {
                    role: *role,
                    text: text.replace("{id}", id).replace("{value}", value),
                })
                .collect(),
        );
        let mut gold = GoldState::new();
        gold.set(id_slot, id);
        gold.set(value_slot, value);
        (library, conversation, gold)
    }
}

impl Augmenter<'_> {
    /// One record per (scenario, bank entry) for every built-in scenario,
    /// shuffled and capped at `long_value_limit`.
    pub fn long_values(&self) -> Result<Vec<PromptRecord>, AugmentError> {
        let templates: Vec<LongValueTemplate> = Scenario::ALL.iter().map(|s| s.template()).collect();
        let sources: Vec<(&LongValueTemplate, &[String])> = templates
            .iter()
            .map(|t| {
                let bank = self.resources.banks.get(&t.scenario).map(Vec::as_slice).unwrap_or_default();
                (t, bank)
            })
            .collect();
        self.long_values_from(&sources, self.config.long_value_limit)
    }

    /// Records for the cross product of each template with its bank,
    /// shuffled by the seed and truncated to `limit`.
    pub fn long_values_from(&self, sources: &[(&LongValueTemplate, &[String])], limit: Option<usize>) -> Result<Vec<PromptRecord>, AugmentError> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (ti, (template, bank)) in sources.iter().enumerate() {
            if bank.is_empty() {
                return Err(AugmentError::EmptyBank(template.scenario.file_stem().to_string()));
            }
            pairs.extend((0..bank.len()).map(|bi| (ti, bi)));
        }
        let mut h = Fnv::new();
        h.write_u64(self.config.seed);
        h.write(Pipeline::LongValue.as_str().as_bytes());
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(h.finish()));
        pairs.truncate(limit.unwrap_or(usize::MAX));

        let empty = SlotLibrary::default();
        let mut records = Vec::with_capacity(pairs.len());
        for (ti, bi) in pairs {
            let (template, bank) = sources[ti];
            let value = &bank[bi];
            let key = format!("{}#{ti}", template.scenario.file_stem());
            let ids = fresh_ids(Pipeline::LongValue.id_class(), self.id_hash(Pipeline::LongValue, &key), &empty, 2)
                .expect("an empty library leaves every id free");

            let mut h = Fnv::new();
            h.write_u64(self.config.seed);
            h.write(key.as_bytes());
            h.write(value.as_bytes());
            let id = generate_id(&mut ChaCha8Rng::seed_from_u64(h.finish()), template.id_format);

            let (library, conversation, gold) = template.instantiate(ids[0].clone(), ids[1].clone(), &id, value);
            let record = PromptRecord::build(library, conversation, gold, Category::LongValue, &self.config.budget, self.counter)?
                .with_dialogue_id(format!("{}-{ti}-{bi}", template.scenario.file_stem()));
            records.push(record);
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancellation_template_text() {
        let t = Scenario::OrderCancellation.template();
        let (lib, conv, gold) = t.instantiate(SlotId::new(34), SlotId::new(28), "8978JHG", "delivery time is too far away from what I anticipated");
        assert_eq!(lib.len(), 2);
        assert_eq!(
            conv.turns[0].text,
            "I want to cancel my order 8978JHG as delivery time is too far away from what I anticipated"
        );
        assert_eq!(conv.turns[1].text, "sure, cancelled your order with ID 8978JHG.");
        assert_eq!(gold.primary(&SlotId::new(28)), Some("delivery time is too far away from what I anticipated"));
    }
}
