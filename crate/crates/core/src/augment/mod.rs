//! Seeded data-preparation pipelines that derive specialised records from
//! SGD-style ones.
//!
//! Every pipeline is deterministic for a fixed [`PipelineConfig`]: random
//! choices come from a ChaCha8 stream seeded by the config seed, the pipeline
//! name and the record's own conversation, so results do not depend on record
//! order or on how many worker threads process them. Records a pipeline does
//! not apply to pass through unchanged.
//!
//! Slots introduced by a pipeline draw ids from a residue class of the id
//! space reserved for that pipeline, which keeps pipelines that touch
//! different slots commutative.

mod address;
mod categorical;
mod id_data;
mod long_value;
mod multi_slot;
mod names;
mod relation;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::CompletionBackend;
use crate::prompt::{PromptError, TokenBudget, TokenCounter};
use crate::sgd::ID_SPACE;
use crate::state::{Category, Fnv, PromptRecord, SlotId, SlotLibrary, SlotSpec, StateError};

pub use address::{split_address, AddressParts, ADDRESS_DESCRIPTIONS, STREET_KEYWORDS};
pub use categorical::{CONFIRM_DESCRIPTION, CONFIRM_NO, CONFIRM_YES};
pub use id_data::{generate_id, inject_id, IdFormat};
pub use long_value::{LongValueTemplate, Scenario};
pub use names::{split_name, NameParts};
pub use relation::{find_relation, RELATION_DESCRIPTION};
pub use split::{split_dataset, SplitRatios};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("value bank {0:?} has no entries")]
    EmptyBank(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("unknown pipeline {0:?}")]
    UnknownPipeline(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    MultiSlot,
    LongValue,
    Categorical,
    NameSplit,
    IdData,
    Address,
    Relation,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::MultiSlot,
        Pipeline::LongValue,
        Pipeline::Categorical,
        Pipeline::NameSplit,
        Pipeline::IdData,
        Pipeline::Address,
        Pipeline::Relation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::MultiSlot => "multi-slot",
            Pipeline::LongValue => "long-value",
            Pipeline::Categorical => "categorical",
            Pipeline::NameSplit => "name-split",
            Pipeline::IdData => "id-data",
            Pipeline::Address => "address",
            Pipeline::Relation => "relation",
        }
    }

    pub fn category(self) -> Category {
        match self {
            Pipeline::MultiSlot => Category::MultiSlot,
            Pipeline::LongValue => Category::LongValue,
            Pipeline::Categorical => Category::Categorical,
            Pipeline::NameSplit => Category::NameSplit,
            Pipeline::IdData => Category::IdData,
            Pipeline::Address => Category::Address,
            Pipeline::Relation => Category::Relation,
        }
    }

    /// Residue class (mod [`ID_CLASSES`]) of ids this pipeline allocates.
    fn id_class(self) -> u32 {
        match self {
            Pipeline::LongValue | Pipeline::MultiSlot | Pipeline::Categorical => 0,
            Pipeline::NameSplit => 1,
            Pipeline::IdData => 2,
            Pipeline::Address => 3,
            Pipeline::Relation => 4,
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| AugmentError::UnknownPipeline(s.to_string()))
    }
}

const ID_CLASSES: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub budget: TokenBudget,
    /// Minimum number of gold values a system turn must repeat to count as a
    /// confirmation summary.
    pub min_confirmed_values: usize,
    /// Chance that a record receives an injected id.
    pub id_probability: f64,
    /// Upper bound on generated long-value records.
    pub long_value_limit: Option<usize>,
    /// Upper bound on records of the pipeline's category in its output.
    pub max_records: Option<usize>,
    /// Substring (case-insensitive) marking a slot name as a person name.
    pub name_pattern: String,
    /// Directories overriding the built-in banks and lexicons file by file.
    pub banks_dir: Option<PathBuf>,
    pub lexicon_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: TokenBudget::default(),
            min_confirmed_values: 3,
            id_probability: 0.5,
            long_value_limit: None,
            max_records: None,
            name_pattern: "name".into(),
            banks_dir: None,
            lexicon_dir: None,
        }
    }
}

/// Value banks and lexicons, one entry per line; blank lines and lines
/// starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resources {
    pub banks: BTreeMap<Scenario, Vec<String>>,
    pub relations: Vec<String>,
    pub honorifics: Vec<String>,
    pub id_descriptions: Vec<String>,
    pub id_probes: Vec<String>,
    pub id_answers: Vec<String>,
}

const EMBEDDED_BANKS: [(Scenario, &str); 4] = [
    (Scenario::OrderCancellation, include_str!("../../data/banks/order_cancellation.txt")),
    (Scenario::InsuranceClaim, include_str!("../../data/banks/insurance_claim.txt")),
    (Scenario::TechSupport, include_str!("../../data/banks/tech_support.txt")),
    (Scenario::HotelReservation, include_str!("../../data/banks/hotel_reservation.txt")),
];

const EMBEDDED_LEXICONS: [(&str, &str); 5] = [
    ("relations", include_str!("../../data/lexicons/relations.txt")),
    ("honorifics", include_str!("../../data/lexicons/honorifics.txt")),
    ("id_descriptions", include_str!("../../data/lexicons/id_descriptions.txt")),
    ("id_probes", include_str!("../../data/lexicons/id_probes.txt")),
    ("id_answers", include_str!("../../data/lexicons/id_answers.txt")),
];

fn lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn load_list(dir: Option<&Path>, name: &str, embedded: &str) -> Result<Vec<String>, AugmentError> {
    if let Some(dir) = dir {
        let path = dir.join(format!("{name}.txt"));
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|source| AugmentError::Io { path, source })?;
            return Ok(lines(&text));
        }
    }
    Ok(lines(embedded))
}

impl Resources {
    pub fn embedded() -> Self {
        Self::load(None, None).expect("embedded resources need no I/O")
    }

    pub fn load(banks_dir: Option<&Path>, lexicon_dir: Option<&Path>) -> Result<Self, AugmentError> {
        let mut banks = BTreeMap::new();
        for (scenario, text) in EMBEDDED_BANKS {
            banks.insert(scenario, load_list(banks_dir, scenario.file_stem(), text)?);
        }
        let mut lex = BTreeMap::new();
        for (name, text) in EMBEDDED_LEXICONS {
            lex.insert(name, load_list(lexicon_dir, name, text)?);
        }
        let mut take = |n: &str| lex.remove(n).unwrap_or_default();
        Ok(Self {
            banks,
            relations: take("relations"),
            honorifics: take("honorifics"),
            id_descriptions: take("id_descriptions"),
            id_probes: take("id_probes"),
            id_answers: take("id_answers"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentWarningKind {
    /// An address value has no street keyword; the record is dropped.
    UnsplittableAddress,
    /// The rewritten record no longer fits the prompt budget; the input
    /// record is kept instead.
    BudgetImpossible,
    /// The paraphrase backend failed or lost a value; the template was used.
    ParaphraseRejected,
    /// No free id was left in the pipeline's id class.
    IdSpaceFull,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentWarning {
    /// Index of the input record.
    pub index: usize,
    pub kind: AugmentWarningKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentOutput {
    pub records: Vec<PromptRecord>,
    pub warnings: Vec<AugmentWarning>,
}

/// What a pipeline does with one input record.
pub(crate) enum Step {
    Keep,
    Replace(PromptRecord),
    /// Keep the input and add records after it.
    Append(Vec<PromptRecord>, Option<AugmentWarningKind>),
    Drop(AugmentWarningKind),
    KeepWithWarning(AugmentWarningKind),
}

/// Runs pipelines over records. Holds the shared resources and the optional
/// paraphrase backend.
pub struct Augmenter<'a> {
    pub config: PipelineConfig,
    pub resources: Resources,
    counter: &'a dyn TokenCounter,
    paraphraser: Option<&'a dyn CompletionBackend>,
}

impl<'a> Augmenter<'a> {
    pub fn new(config: PipelineConfig, counter: &'a dyn TokenCounter) -> Result<Self, AugmentError> {
        let resources = Resources::load(config.banks_dir.as_deref(), config.lexicon_dir.as_deref())?;
        Ok(Self {
            config,
            resources,
            counter,
            paraphraser: None,
        })
    }

    pub fn with_resources(mut self, resources: Resources) -> Self {
        self.resources = resources;
        self
    }

    pub fn with_paraphraser(mut self, backend: &'a dyn CompletionBackend) -> Self {
        self.paraphraser = Some(backend);
        self
    }

    /// Runs one pipeline. `long-value` ignores `records` and generates from
    /// the banks.
    pub fn run(&self, pipeline: Pipeline, records: Vec<PromptRecord>) -> Result<AugmentOutput, AugmentError> {
        let mut out = match pipeline {
            Pipeline::MultiSlot => self.multi_slot(records),
            Pipeline::LongValue => AugmentOutput {
                records: self.long_values()?,
                warnings: Vec::new(),
            },
            Pipeline::Categorical => self.categorical_confirm(records),
            Pipeline::NameSplit => self.name_split(records),
            Pipeline::IdData => self.id_injection(records),
            Pipeline::Address => self.address_split(records),
            Pipeline::Relation => self.relation_injection(records),
        };
        if let Some(cap) = self.config.max_records {
            let category = pipeline.category();
            let mut seen = 0;
            out.records.retain(|r| {
                if r.category != category {
                    return true;
                }
                seen += 1;
                seen <= cap
            });
        }
        Ok(out)
    }

    /// RNG for one record: depends on the seed, the pipeline and the
    /// record's conversation only.
    pub(crate) fn record_rng(&self, pipeline: Pipeline, record: &PromptRecord) -> ChaCha8Rng {
        let mut h = Fnv::new();
        h.write_u64(self.config.seed);
        h.write(pipeline.as_str().as_bytes());
        h.write_u64(record.conversation.fingerprint());
        ChaCha8Rng::seed_from_u64(h.finish())
    }

    pub(crate) fn id_hash(&self, pipeline: Pipeline, key: &str) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.config.seed);
        h.write(pipeline.as_str().as_bytes());
        h.write(key.as_bytes());
        h.finish()
    }

    /// Applies `step` to every record in parallel, reassembling in input
    /// order. Rewritten records are re-rendered and their category promoted.
    pub(crate) fn map_records<F>(&self, pipeline: Pipeline, records: Vec<PromptRecord>, step: F) -> AugmentOutput
    where
        F: Fn(&PromptRecord) -> Step + Sync,
    {
        let results: Vec<(Vec<PromptRecord>, Option<AugmentWarning>)> = records
            .into_par_iter()
            .enumerate()
            .map(|(index, rec)| {
                let warn = |kind| Some(AugmentWarning { index, kind });
                match step(&rec) {
                    Step::Keep => (vec![rec], None),
                    Step::KeepWithWarning(kind) => (vec![rec], warn(kind)),
                    Step::Drop(kind) => (Vec::new(), warn(kind)),
                    Step::Replace(new) => match self.finish(pipeline, new) {
                        Some(new) => (vec![new], None),
                        None => (vec![rec], warn(AugmentWarningKind::BudgetImpossible)),
                    },
                    Step::Append(extra, kind) => {
                        let mut out = vec![rec];
                        let mut warning = kind.and_then(warn);
                        for new in extra {
                            match self.finish(pipeline, new) {
                                Some(new) => out.push(new),
                                None => warning = warn(AugmentWarningKind::BudgetImpossible),
                            }
                        }
                        (out, warning)
                    }
                }
            })
            .collect();
        let mut out = AugmentOutput::default();
        for (recs, warning) in results {
            out.records.extend(recs);
            out.warnings.extend(warning);
        }
        out
    }

    fn finish(&self, pipeline: Pipeline, mut rec: PromptRecord) -> Option<PromptRecord> {
        rec.category = promote(rec.category, pipeline.category());
        rec.rerender(&self.config.budget, self.counter).ok()?;
        Some(rec)
    }
}

/// Category of a record after another pipeline rewrote it: the later
/// category in declaration order wins, so composition order does not matter.
pub fn promote(current: Category, applied: Category) -> Category {
    current.max(applied)
}

/// `n` distinct ids of residue class `class` absent from `library`, probing
/// upwards from a hash-chosen start.
pub(crate) fn fresh_ids(class: u32, hash: u64, library: &SlotLibrary, n: usize) -> Option<Vec<SlotId>> {
    let per_class = ID_SPACE / ID_CLASSES;
    let start = (hash % u64::from(per_class)) as u32;
    let mut out: Vec<SlotId> = Vec::with_capacity(n);
    if n == 0 {
        return Some(out);
    }
    for step in 0..per_class {
        let id = SlotId::new(((start + step) % per_class) * ID_CLASSES + class);
        if !library.contains(&id) && !out.contains(&id) {
            out.push(id);
            if out.len() == n {
                return Some(out);
            }
        }
    }
    None
}

/// Description as a phrase: allowed-values clause and final period
/// removed, first letter lowercased.
pub(crate) fn description_phrase(description: &str) -> String {
    let base = crate::prompt::strip_allowed_values_clause(description)
        .trim()
        .trim_end_matches('.')
        .trim_end();
    let mut chars = base.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Last `/`-separated segment of a slot name.
pub(crate) fn short_name(spec: &SlotSpec) -> &str {
    spec.name.rsplit('/').next().unwrap_or_default()
}

/// Joins phrases as `a, b and c`.
pub(crate) fn join_natural(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Library with the slot at `pos` replaced by `with`.
pub(crate) fn splice_library(library: &SlotLibrary, pos: usize, with: Vec<SlotSpec>) -> Result<SlotLibrary, StateError> {
    let mut slots = library.slots().to_vec();
    slots.splice(pos..=pos, with);
    SlotLibrary::new(slots)
}
