//! Person names split into prefix, first, middle and last name slots.

use serde::{Deserialize, Serialize};

use super::{fresh_ids, short_name, splice_library, AugmentOutput, Augmenter, Pipeline, Step};
use crate::state::{PromptRecord, SlotSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameParts {
    pub prefix: Option<String>,
    pub first: Option<String>,
    pub middle: Option<String>,
    pub last: Option<String>,
}

impl NameParts {
    /// Present parts joined with single spaces.
    pub fn join(&self) -> String {
        self.parts()
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// In prefix, first, middle, last order.
    pub fn parts(&self) -> [Option<&str>; 4] {
        [
            self.prefix.as_deref(),
            self.first.as_deref(),
            self.middle.as_deref(),
            self.last.as_deref(),
        ]
    }
}

/// Splits a single-spaced name. A leading token ending in `.` or listed in
/// `honorifics` (case-insensitive, period ignored) is the prefix; of the
/// rest, the first token is the first name, the last token the last name and
/// anything between the middle name. Returns `None` for empty input or
/// irregular whitespace, where no split could reconstruct the value.
pub fn split_name(value: &str, honorifics: &[String]) -> Option<NameParts> {
    let tokens: Vec<&str> = value.split(' ').collect();
    if value.is_empty() || tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
        return None;
    }
    let mut parts = NameParts::default();
    let mut rest = &tokens[..];
    let lead = rest[0].to_lowercase();
    let bare = lead.trim_end_matches('.');
    if lead.ends_with('.') || honorifics.iter().any(|h| h.eq_ignore_ascii_case(bare)) {
        parts.prefix = Some(rest[0].to_string());
        rest = &rest[1..];
    }
    match rest {
        [] => {}
        [only] => parts.first = Some(only.to_string()),
        [first, middle @ .., last] => {
            parts.first = Some(first.to_string());
            if !middle.is_empty() {
                parts.middle = Some(middle.join(" "));
            }
            parts.last = Some(last.to_string());
        }
    }
    Some(parts)
}

const PARTS: [&str; 4] = ["prefix", "first", "middle", "last"];

fn part_description(original: &str, part: &str) -> String {
    let lower = original.to_lowercase();
    match lower.strip_prefix("name of ") {
        Some(_) => {
            let rest = &original["name of ".len()..];
            let mut cap = part.to_string();
            cap[..1].make_ascii_uppercase();
            format!("{cap} name of {rest}")
        }
        None => format!("{part} name"),
    }
}

impl Augmenter<'_> {
    fn is_name_slot(&self, spec: &SlotSpec) -> bool {
        !spec.is_categorical()
            && !spec.name.contains(':')
            && short_name(spec)
                .to_lowercase()
                .contains(&self.config.name_pattern.to_lowercase())
    }

    /// Replaces every free-text name slot with prefix/first/middle/last
    /// slots. Gold names are split with [`split_name`]; unfilled name slots
    /// are split in the library only.
    pub fn name_split(&self, records: Vec<PromptRecord>) -> AugmentOutput {
        self.map_records(Pipeline::NameSplit, records, |rec| self.split_names(rec))
    }

    fn split_names(&self, rec: &PromptRecord) -> Step {
        let mut library = rec.library.clone();
        let mut gold = rec.gold.clone();
        let mut changed = false;
        let targets: Vec<SlotSpec> = rec.library.iter().filter(|s| self.is_name_slot(s)).cloned().collect();
        for spec in targets {
            let split = match rec.gold.primary(&spec.id) {
                Some(value) => match split_name(value, &self.resources.honorifics) {
                    Some(parts) => Some(parts),
                    None => continue,
                },
                None => None,
            };
            let hash = self.id_hash(Pipeline::NameSplit, spec.id.as_str());
            let Some(fresh) = fresh_ids(Pipeline::NameSplit.id_class(), hash, &library, 3) else {
                return Step::KeepWithWarning(super::AugmentWarningKind::IdSpaceFull);
            };
            // The first-name slot keeps the original id.
            let ids = [fresh[0].clone(), spec.id.clone(), fresh[1].clone(), fresh[2].clone()];
            let base = if spec.name.is_empty() { "name" } else { spec.name.as_str() };
            let specs: Vec<SlotSpec> = PARTS
                .iter()
                .zip(&ids)
                .map(|(part, id)| SlotSpec::free_text(id.clone(), format!("{base}:{part}"), part_description(&spec.description, part)))
                .collect();
            let pos = library.position(&spec.id).expect("target comes from this library");
            library = match splice_library(&library, pos, specs) {
                Ok(l) => l,
                Err(_) => return Step::Keep,
            };
            gold.remove(&spec.id);
            if let Some(parts) = split {
                for (value, id) in parts.parts().into_iter().zip(&ids) {
                    if let Some(v) = value {
                        gold.set(id.clone(), v);
                    }
                }
            }
            changed = true;
        }
        if !changed {
            return Step::Keep;
        }
        Step::Replace(PromptRecord {
            library,
            gold,
            ..rec.clone()
        })
    }
}
