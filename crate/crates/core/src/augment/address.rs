//! Street addresses split into house number, street, city and
//! state/district slots.

use serde::{Deserialize, Serialize};

use super::{fresh_ids, short_name, splice_library, AugmentOutput, AugmentWarningKind, Augmenter, Pipeline, Step};
use crate::state::{PromptRecord, SlotSpec};

pub const STREET_KEYWORDS: [&str; 10] = [
    "Road", "Street", "St", "Ave", "Avenue", "Boulevard", "Blvd", "Lane", "Drive", "Way",
];

/// Slot descriptions for house number, street, city and state/district.
pub const ADDRESS_DESCRIPTIONS: [&str; 4] = [
    "house-number",
    "street name",
    "name of the city/town/village",
    "state-district",
];

const PART_NAMES: [&str; 4] = ["house_number", "street", "city", "state_district"];

/// Each present part is a substring of the address it came from, and the
/// parts occur there in field order without overlapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressParts {
    pub house_number: Option<String>,
    pub street: Option<String>,
    pub city: Option<String>,
    pub state_district: Option<String>,
}

impl AddressParts {
    pub fn parts(&self) -> [Option<&str>; 4] {
        [
            self.house_number.as_deref(),
            self.street.as_deref(),
            self.city.as_deref(),
            self.state_district.as_deref(),
        ]
    }
}

fn is_street_keyword(token: &str) -> bool {
    let bare = token.trim_end_matches([',', '.']);
    STREET_KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(bare))
}

/// Splits an address by position: a leading run of all-digit tokens is the
/// house number, the tokens up to and including the last street keyword the
/// street, the next token the city and whatever remains the state or
/// district. Trailing commas are trimmed from each part. Returns `None` when
/// no street keyword follows the house number.
pub fn split_address(value: &str) -> Option<AddressParts> {
    let tokens: Vec<(usize, usize)> = token_spans(value);
    let house_end = tokens
        .iter()
        .take_while(|&&(s, e)| value[s..e].bytes().all(|b| b.is_ascii_digit()))
        .count();
    let keyword = (house_end..tokens.len())
        .rev()
        .find(|&i| is_street_keyword(&value[tokens[i].0..tokens[i].1]))?;
    let span = |from: usize, to: usize| -> Option<String> {
        if from >= to {
            return None;
        }
        let text = value[tokens[from].0..tokens[to - 1].1].trim_end_matches(',');
        (!text.is_empty()).then(|| text.to_string())
    };
    Some(AddressParts {
        house_number: span(0, house_end),
        street: span(house_end, keyword + 1),
        city: span(keyword + 1, (keyword + 2).min(tokens.len())),
        state_district: span(keyword + 2, tokens.len()),
    })
}

fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn is_address_slot(spec: &SlotSpec) -> bool {
    !spec.is_categorical()
        && !spec.name.contains(':')
        && (short_name(spec).to_lowercase().contains("address") || spec.description.to_lowercase().contains("address"))
}

impl Augmenter<'_> {
    /// Replaces free-text address slots with component slots. A filled
    /// address without a street keyword drops the record with
    /// [`AugmentWarningKind::UnsplittableAddress`].
    pub fn address_split(&self, records: Vec<PromptRecord>) -> AugmentOutput {
        self.map_records(Pipeline::Address, records, |rec| self.split_addresses(rec))
    }

    fn split_addresses(&self, rec: &PromptRecord) -> Step {
        let mut library = rec.library.clone();
        let mut gold = rec.gold.clone();
        let targets: Vec<SlotSpec> = rec.library.iter().filter(|s| is_address_slot(s)).cloned().collect();
        if targets.is_empty() {
            return Step::Keep;
        }
        for spec in targets {
            let parts = match rec.gold.primary(&spec.id) {
                Some(value) => match split_address(value) {
                    Some(p) => Some(p),
                    None => return Step::Drop(AugmentWarningKind::UnsplittableAddress),
                },
                None => None,
            };
            let hash = self.id_hash(Pipeline::Address, spec.id.as_str());
            let Some(fresh) = fresh_ids(Pipeline::Address.id_class(), hash, &library, 3) else {
                return Step::KeepWithWarning(AugmentWarningKind::IdSpaceFull);
            };
            let ids = [spec.id.clone(), fresh[0].clone(), fresh[1].clone(), fresh[2].clone()];
            let base = if spec.name.is_empty() { "address" } else { spec.name.as_str() };
            let specs: Vec<SlotSpec> = PART_NAMES
                .iter()
                .zip(ADDRESS_DESCRIPTIONS)
                .zip(&ids)
                .map(|((part, desc), id)| SlotSpec::free_text(id.clone(), format!("{base}:{part}"), desc))
                .collect();
            let pos = library.position(&spec.id).expect("target comes from this library");
            library = match splice_library(&library, pos, specs) {
                Ok(l) => l,
                Err(_) => return Step::Keep,
            };
            gold.remove(&spec.id);
            if let Some(parts) = parts {
                for (value, id) in parts.parts().into_iter().zip(&ids) {
                    if let Some(v) = value {
                        gold.set(id.clone(), v);
                    }
                }
            }
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

    fn parts(h: Option<&str>, s: Option<&str>, c: Option<&str>, d: Option<&str>) -> AddressParts {
        AddressParts {
            house_number: h.map(Into::into),
            street: s.map(Into::into),
            city: c.map(Into::into),
            state_district: d.map(Into::into),
        }
    }

    #[test]
    fn examples() {
        assert_eq!(
            split_address("11 Hickson Road Walsh Bay"),
            Some(parts(Some("11"), Some("Hickson Road"), Some("Walsh"), Some("Bay")))
        );
        assert_eq!(split_address("Main Street"), Some(parts(None, Some("Main Street"), None, None)));
        assert_eq!(
            split_address("42 Elm Ave Springfield"),
            Some(parts(Some("42"), Some("Elm Ave"), Some("Springfield"), None))
        );
        assert_eq!(split_address("Walsh Bay"), None);
    }

    #[test]
    fn last_keyword_and_commas() {
        assert_eq!(
            split_address("7 Park Lane Way, Leeds, West Yorkshire"),
            Some(parts(Some("7"), Some("Park Lane Way"), Some("Leeds"), Some("West Yorkshire")))
        );
        assert_eq!(
            split_address("1600 Pennsylvania Ave. NW Washington DC"),
            Some(parts(Some("1600"), Some("Pennsylvania Ave."), Some("NW"), Some("Washington DC")))
        );
    }
}
