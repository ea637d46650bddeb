//! Reading corpora in the public SGD layout and writing record datasets.
//!
//! A corpus directory holds `schema.json` (a list of services with their
//! slots) and any number of `dialogues_*.json` files (lists of dialogues).
//! Each user turn becomes one [`PromptRecord`] whose library covers the
//! services active in that turn and whose gold state is SGD's cumulative
//! frame state at that point.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{PromptError, TokenBudget, TokenCounter};
use crate::state::{
    Category, Conversation, GoldState, PromptRecord, Role, SlotId, SlotLibrary, SlotSpec, Split, StateError, Turn,
};

/// Size of the `Slot-<n>` id space.
pub const ID_SPACE: u32 = 1000;

pub const SLOT_MAP_FILE: &str = "slot_map.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no schema.json in {0}")]
    MissingSchema(PathBuf),
    #[error("{file}:{line}:{column}: malformed JSON: {message}")]
    MalformedJson {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}: record {index}: {message}")]
    InvalidRecord {
        file: PathBuf,
        index: usize,
        message: String,
    },
    #[error("dialogue {dialogue_id}: service {service:?} is not in the schema")]
    UnknownService { dialogue_id: String, service: String },
    #[error("dialogue {dialogue_id}: {reason}")]
    InvalidDialogue { dialogue_id: String, reason: String },
    #[error("{0} distinct slots do not fit in the id space of {ID_SPACE}")]
    IdSpaceExhausted(usize),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("slot {0:?} has no assigned id")]
    UnmappedSlot(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgdSlot {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub is_categorical: bool,
    #[serde(default)]
    pub possible_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgdSchema {
    pub service_name: String,
    #[serde(default)]
    pub description: String,
    pub slots: Vec<SgdSlot>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgdState {
    #[serde(default)]
    pub active_intent: String,
    #[serde(default)]
    pub requested_slots: Vec<String>,
    #[serde(default)]
    pub slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdFrame {
    pub service: String,
    #[serde(default)]
    pub state: Option<SgdState>,
    #[serde(default)]
    pub actions: Vec<serde_json::Value>,
    #[serde(default)]
    pub slots: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdTurn {
    pub speaker: Role,
    pub utterance: String,
    #[serde(default)]
    pub frames: Vec<SgdFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdDialogue {
    pub dialogue_id: String,
    #[serde(default)]
    pub services: Vec<String>,
    pub turns: Vec<SgdTurn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdCorpus {
    pub schemas: Vec<SgdSchema>,
    pub dialogues: Vec<SgdDialogue>,
}

/// Loads `schema.json` and every `dialogues_*.json` in `dir`, files in name
/// order.
pub fn load_sgd(dir: &Path) -> Result<SgdCorpus, IngestError> {
    let schema_path = dir.join("schema.json");
    if !schema_path.is_file() {
        return Err(IngestError::MissingSchema(dir.to_path_buf()));
    }
    let schemas: Vec<SgdSchema> = parse_json_file(&schema_path)?;

    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("dialogues_") && name.ends_with(".json") {
            files.push(path);
        }
    }
    files.sort();

    let per_file: Vec<Vec<SgdDialogue>> = files
        .par_iter()
        .map(|f| parse_json_file(f))
        .collect::<Result<_, _>>()?;
    let dialogues: Vec<SgdDialogue> = per_file.into_iter().flatten().collect();

    let known: BTreeSet<&str> = schemas.iter().map(|s| s.service_name.as_str()).collect();
    for d in &dialogues {
        check_dialogue(d, &known)?;
    }
    Ok(SgdCorpus { schemas, dialogues })
}

/// Parses a JSON array, reporting syntax errors by position and shape errors
/// by record index.
fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let items: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| IngestError::MalformedJson {
        file: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    items
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            serde_json::from_value(v).map_err(|e| IngestError::InvalidRecord {
                file: path.to_path_buf(),
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

fn check_dialogue(d: &SgdDialogue, known: &BTreeSet<&str>) -> Result<(), IngestError> {
    let services = d.services.iter().chain(d.turns.iter().flat_map(|t| t.frames.iter().map(|f| &f.service)));
    for service in services {
        if !known.contains(service.as_str()) {
            return Err(IngestError::UnknownService {
                dialogue_id: d.dialogue_id.clone(),
                service: service.clone(),
            });
        }
    }
    for (i, turn) in d.turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::System };
        if turn.speaker != expected {
            return Err(IngestError::InvalidDialogue {
                dialogue_id: d.dialogue_id.clone(),
                reason: format!("turn {i} should be spoken by {expected:?}"),
            });
        }
    }
    Ok(())
}

/// `Service/slot`, the key slots are identified by across services.
pub fn qualified_name(service: &str, slot: &str) -> String {
    format!("{service}/{slot}")
}

/// Assignment of qualified SGD slot names to `Slot-<n>` ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotIdMap {
    pub seed: Option<u64>,
    pub slots: BTreeMap<String, SlotId>,
}

impl SlotIdMap {
    /// Draws ids without replacement from `0..1000` for every slot in
    /// `schemas`, visiting names in sorted order so the result depends only
    /// on the seed and the set of names.
    pub fn assign(schemas: &[SgdSchema], seed: u64) -> Result<Self, IngestError> {
        let names: BTreeSet<String> = schemas
            .iter()
            .flat_map(|s| s.slots.iter().map(|slot| qualified_name(&s.service_name, &slot.name)))
            .collect();
        if names.len() > ID_SPACE as usize {
            return Err(IngestError::IdSpaceExhausted(names.len()));
        }
        let mut pool: Vec<u32> = (0..ID_SPACE).collect();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let slots = names.into_iter().zip(pool).map(|(n, i)| (n, SlotId::new(i))).collect();
        Ok(Self { seed: Some(seed), slots })
    }

    /// A fixed assignment, e.g. to reproduce a published example.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, SlotId)>,
        S: Into<String>,
    {
        Self {
            seed: None,
            slots: pairs.into_iter().map(|(n, id)| (n.into(), id)).collect(),
        }
    }

    pub fn get(&self, qualified: &str) -> Option<&SlotId> {
        self.slots.get(qualified)
    }

    /// Reverse lookup, id to qualified name.
    pub fn name_of(&self, id: &SlotId) -> Option<&str> {
        self.slots.iter().find(|(_, v)| *v == id).map(|(k, _)| k.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        let text = serde_json::to_string_pretty(self).expect("slot map serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| IngestError::MalformedJson {
            file: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagKind {
    /// A free-text gold value does not occur in the conversation.
    NotSubstring,
    /// A categorical gold value is not among the allowed values.
    NotAllowed,
    /// Even the final turn alone exceeds the prompt budget; no record.
    BudgetImpossible,
    /// The rendered gold output exceeds the output budget.
    OutputOverBudget,
}

/// A data-quality problem found while building records. Flagged records are
/// still emitted unless the kind is [`FlagKind::BudgetImpossible`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestFlag {
    pub dialogue_id: String,
    /// Index of the user turn in the dialogue's turn list.
    pub turn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<SlotId>,
    pub kind: FlagKind,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub records: Vec<PromptRecord>,
    pub flags: Vec<IngestFlag>,
}

pub struct RecordOptions<'a> {
    pub budget: TokenBudget,
    pub counter: &'a dyn TokenCounter,
    pub split: Split,
}

fn slot_spec(id: SlotId, service: &str, slot: &SgdSlot) -> SlotSpec {
    let distinct: BTreeSet<&String> = slot.possible_values.iter().collect();
    let name = qualified_name(service, &slot.name);
    if slot.is_categorical && distinct.len() >= 2 {
        let mut seen = BTreeSet::new();
        let allowed: Vec<&String> = slot.possible_values.iter().filter(|v| seen.insert(*v)).collect();
        SlotSpec::categorical(id, name, slot.description.clone(), allowed)
    } else {
        SlotSpec::free_text(id, name, slot.description.clone())
    }
}

/// One record per user turn of every dialogue.
pub fn to_records(corpus: &SgdCorpus, ids: &SlotIdMap, options: &RecordOptions<'_>) -> Result<IngestReport, IngestError> {
    let schema_index: HashMap<&str, usize> = corpus
        .schemas
        .iter()
        .enumerate()
        .map(|(i, s)| (s.service_name.as_str(), i))
        .collect();
    let mut report = IngestReport::default();

    for dialogue in &corpus.dialogues {
        for (t, turn) in dialogue.turns.iter().enumerate() {
            if turn.speaker != Role::User {
                continue;
            }
            let mut active: Vec<usize> = turn
                .frames
                .iter()
                .map(|f| schema_index_of(&schema_index, dialogue, &f.service))
                .collect::<Result<_, _>>()?;
            if active.is_empty() {
                active = dialogue
                    .services
                    .iter()
                    .map(|s| schema_index_of(&schema_index, dialogue, s))
                    .collect::<Result<_, _>>()?;
            }
            active.sort_unstable();
            active.dedup();

            let mut specs = Vec::new();
            let mut by_name: HashMap<String, SlotId> = HashMap::new();
            for &si in &active {
                let schema = &corpus.schemas[si];
                for slot in &schema.slots {
                    let qn = qualified_name(&schema.service_name, &slot.name);
                    let id = ids.get(&qn).cloned().ok_or_else(|| IngestError::UnmappedSlot(qn.clone()))?;
                    by_name.insert(qn, id.clone());
                    specs.push(slot_spec(id, &schema.service_name, slot));
                }
            }
            let library = SlotLibrary::new(specs)?;

            let mut gold = GoldState::new();
            for frame in &turn.frames {
                let Some(state) = &frame.state else { continue };
                for (slot, values) in &state.slot_values {
                    let qn = qualified_name(&frame.service, slot);
                    let Some(id) = by_name.get(&qn) else {
                        return Err(IngestError::InvalidDialogue {
                            dialogue_id: dialogue.dialogue_id.clone(),
                            reason: format!("state names unknown slot {qn:?}"),
                        });
                    };
                    if !values.is_empty() {
                        gold.insert(id.clone(), values.clone());
                    }
                }
            }

            let conversation = Conversation::new(
                dialogue.turns[..=t]
                    .iter()
                    .map(|x| Turn {
                        role: x.speaker,
                        text: x.utterance.clone(),
                    })
                    .collect(),
            );
            let flag = |slot: Option<SlotId>, kind| IngestFlag {
                dialogue_id: dialogue.dialogue_id.clone(),
                turn: t,
                slot,
                kind,
            };

            let record = match PromptRecord::build(library, conversation, gold, Category::Sgd, &options.budget, options.counter) {
                Ok(r) => r,
                Err(PromptError::BudgetImpossible { .. }) => {
                    report.flags.push(flag(None, FlagKind::BudgetImpossible));
                    continue;
                }
                Err(e) => {
                    return Err(IngestError::InvalidDialogue {
                        dialogue_id: dialogue.dialogue_id.clone(),
                        reason: e.to_string(),
                    })
                }
            };

            let text = record.conversation.text();
            for (id, alts) in record.gold.iter() {
                let spec = record.library.get(id).expect("gold ids come from the library");
                let value = &alts[0];
                match &spec.allowed_values {
                    Some(allowed) if !allowed.contains(value) => {
                        report.flags.push(flag(Some(id.clone()), FlagKind::NotAllowed))
                    }
                    None if !text.contains(value.as_str()) => {
                        report.flags.push(flag(Some(id.clone()), FlagKind::NotSubstring))
                    }
                    _ => {}
                }
            }
            if options.counter.count(&record.gold_output) > options.budget.max_output_tokens {
                report.flags.push(flag(None, FlagKind::OutputOverBudget));
            }
            report.records.push(
                record
                    .with_dialogue_id(dialogue.dialogue_id.clone())
                    .with_split(options.split),
            );
        }
    }
    Ok(report)
}

fn schema_index_of(index: &HashMap<&str, usize>, d: &SgdDialogue, service: &str) -> Result<usize, IngestError> {
    index.get(service).copied().ok_or_else(|| IngestError::UnknownService {
        dialogue_id: d.dialogue_id.clone(),
        service: service.to_string(),
    })
}

/// Writes one JSON object per line.
pub fn write_jsonl_to<W: Write>(records: &[PromptRecord], out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_jsonl(records: &[PromptRecord], path: &Path) -> Result<(), IngestError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_jsonl_to(records, file).map_err(io_err(path))
}

/// Reads records, skipping blank lines. Line numbers in errors are 1-based.
pub fn read_jsonl_from<R: BufRead>(input: R) -> Result<Vec<PromptRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IngestError::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| IngestError::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PromptRecord>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_jsonl_from(BufReader::new(file))
}
