//! Identifier slots with generated values in several formats.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fresh_ids, AugmentOutput, AugmentWarningKind, Augmenter, Pipeline, Step};
use crate::state::{PromptRecord, Role, SlotLibrary, SlotSpec, StateError, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdFormat {
    Digits,
    Letters,
    /// At least one digit and one letter.
    Mixed,
}

impl IdFormat {
    pub const ALL: [IdFormat; 3] = [IdFormat::Digits, IdFormat::Letters, IdFormat::Mixed];
}

const DIGITS: &[u8] = b"0123456789";
const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

/// A 6 to 10 character identifier in `format`.
pub fn generate_id<R: Rng>(rng: &mut R, format: IdFormat) -> String {
    let len = rng.random_range(6..=10);
    let pick = |rng: &mut R, set: &[u8]| set[rng.random_range(0..set.len())];
    let mut out: Vec<u8> = (0..len)
        .map(|_| match format {
            IdFormat::Digits => pick(rng, DIGITS),
            IdFormat::Letters => pick(rng, LETTERS),
            IdFormat::Mixed => {
                if rng.random_bool(0.5) {
                    pick(rng, DIGITS)
                } else {
                    pick(rng, LETTERS)
                }
            }
        })
        .collect();
    if format == IdFormat::Mixed {
        if !out.iter().any(u8::is_ascii_digit) {
            let i = rng.random_range(0..len);
            out[i] = pick(rng, DIGITS);
        }
        if !out.iter().any(u8::is_ascii_alphabetic) {
            let i = rng.random_range(0..len);
            out[i] = pick(rng, LETTERS);
        }
    }
    String::from_utf8(out).expect("ascii")
}

/// Inserts a system `probe` and a user answer (`answer` with `{id}`
/// replaced by `value`) after the first turn, appends `slot` to the library
/// and fills it with `value`. The caller re-renders the record.
pub fn inject_id(record: &PromptRecord, slot: SlotSpec, value: &str, probe: &str, answer: &str) -> Result<PromptRecord, StateError> {
    let mut slots = record.library.slots().to_vec();
    let id = slot.id.clone();
    slots.push(slot);
    let library = SlotLibrary::new(slots)?;
    let mut conversation = record.conversation.clone();
    let at = 1.min(conversation.turns.len());
    conversation.turns.insert(at, Turn::system(probe));
    conversation.turns.insert(at + 1, Turn::user(answer.replace("{id}", value)));
    let mut gold = record.gold.clone();
    gold.set(id, value);
    Ok(PromptRecord {
        library,
        conversation,
        gold,
        ..record.clone()
    })
}

impl Augmenter<'_> {
    /// With probability `id_probability` per record, injects an id slot,
    /// probe and answer. Records already carrying an injected id, or not
    /// opening with a user turn, pass through.
    pub fn id_injection(&self, records: Vec<PromptRecord>) -> AugmentOutput {
        self.map_records(Pipeline::IdData, records, |rec| self.maybe_inject(rec))
    }

    fn maybe_inject(&self, rec: &PromptRecord) -> Step {
        let p = self.config.id_probability.clamp(0.0, 1.0);
        if p == 0.0 || rec.library.iter().any(|s| s.name == "id") {
            return Step::Keep;
        }
        if rec.conversation.turns.first().map(|t| t.role) != Some(Role::User) {
            return Step::Keep;
        }
        let mut rng = self.record_rng(Pipeline::IdData, rec);
        if !rng.random_bool(p) {
            return Step::Keep;
        }
        let r = &self.resources;
        let (Some(desc), Some(probe), Some(answer), Some(format)) = (
            r.id_descriptions.choose(&mut rng),
            r.id_probes.choose(&mut rng),
            r.id_answers.choose(&mut rng),
            IdFormat::ALL.choose(&mut rng),
        ) else {
            return Step::Keep;
        };
        let value = generate_id(&mut rng, *format);
        let hash = self.id_hash(Pipeline::IdData, &rec.conversation.fingerprint().to_string());
        let Some(ids) = fresh_ids(Pipeline::IdData.id_class(), hash, &rec.library, 1) else {
            return Step::KeepWithWarning(AugmentWarningKind::IdSpaceFull);
        };
        let slot = SlotSpec::free_text(ids[0].clone(), "id", desc.clone());
        match inject_id(rec, slot, &value, probe, answer) {
            Ok(new) => Step::Replace(new),
            Err(_) => Step::Keep,
        }
    }
}
