//! Exemplar records for each slot type, rebuilt from source dialogues and
//! compared field by field. Each check panics on the first mismatch.

use std::collections::{BTreeMap, BTreeSet};

use slotfill_core::augment::{inject_id, Augmenter, Pipeline, PipelineConfig, Scenario};
use slotfill_core::backend::FnBackend;
use slotfill_core::prompt::render_slot_line;
use slotfill_core::sgd::{load_sgd, to_records, RecordOptions, SlotIdMap};
use slotfill_core::{Category, CompletionRequest, PromptRecord, Role, SlotId, SlotSpec, Split, TokenBudget, WhitespaceCounter};

const BUS_UTTERANCE: &str = "I need to book 4 tickets for bus leaving from Fresno to long beach on March 10th at 1:40 pm.";

/// Final-turn record of each source dialogue, keyed by dialogue id.
fn sources() -> BTreeMap<String, PromptRecord> {
    let dir = tempfile::tempdir().unwrap();
    let (schema, dialogues) = slotfill_fixtures::table1_corpus();
    slotfill_fixtures::write_corpus(dir.path(), &schema, &dialogues).unwrap();
    let map_path = dir.path().join("slot_map.json");
    std::fs::write(&map_path, slotfill_fixtures::table1_slot_map().to_string()).unwrap();
    let ids = SlotIdMap::read(&map_path).unwrap();
    let corpus = load_sgd(dir.path()).unwrap();
    let options = RecordOptions {
        budget: TokenBudget::default(),
        counter: &WhitespaceCounter,
        split: Split::Train,
    };
    let report = to_records(&corpus, &ids, &options).unwrap();
    assert!(report.flags.is_empty(), "{:?}", report.flags);
    let mut out = BTreeMap::new();
    for r in report.records {
        out.insert(r.dialogue_id.clone().unwrap(), r);
    }
    out
}

fn augmenter() -> Augmenter<'static> {
    Augmenter::new(PipelineConfig::default(), &WhitespaceCounter).unwrap()
}

fn library_lines(rec: &PromptRecord) -> Vec<String> {
    rec.library.iter().map(render_slot_line).collect()
}

fn turns(rec: &PromptRecord) -> Vec<(Role, &str)> {
    rec.conversation.turns.iter().map(|t| (t.role, t.text.as_str())).collect()
}

/// Gold as (description, value), for rows whose ids are freshly drawn.
fn gold_by_description(rec: &PromptRecord) -> BTreeSet<(String, String)> {
    rec.gold
        .iter()
        .map(|(id, v)| (rec.library.get(id).unwrap().description.clone(), v[0].clone()))
        .collect()
}

fn pairs(items: &[(&str, &str)]) -> BTreeSet<(String, String)> {
    items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Prompt text assembled directly from its documented layout.
fn expected_prompt(library: &[&str], turns: &[(&str, &str)]) -> String {
    let mut s = String::from("Find all the slots and their values from conversation. \n\n<slot library>");
    for l in library {
        s.push('\n');
        s.push_str(l);
    }
    s.push_str("\n\n<conversation>");
    for (tag, text) in turns {
        s.push_str(&format!("\n[{tag}] {text}"));
    }
    s
}

pub fn multi_slot_bus() {
    let src = sources().remove("bus").unwrap();
    let para = FnBackend(|_: &CompletionRequest| Ok(BUS_UTTERANCE.to_string()));
    let aug = augmenter().with_paraphraser(&para);
    let out = aug.run(Pipeline::MultiSlot, vec![src]).unwrap();
    assert!(out.warnings.is_empty());
    assert_eq!(out.records.len(), 2);
    let rec = &out.records[1];
    let lib = [
        "Slot-5: City where bus is going to",
        "Slot-182: Number of travelers for journey. Allowed values (\"1\", \"2\", \"3\", \"4\", \"5\")",
        "Slot-53: Date of bus leaving for journey",
        "Slot-57: Time of bus leaving for journey",
        "Slot-24: City where bus is leaving from",
    ];
    assert_eq!(library_lines(rec), lib);
    assert_eq!(turns(rec), [(Role::User, BUS_UTTERANCE)]);
    assert_eq!(
        rec.gold_output,
        "'Slot-5': 'long beach',\n'Slot-182': '4',\n'Slot-53': 'March 10th',\n'Slot-57': '1:40 pm',\n'Slot-24': 'Fresno'"
    );
    assert_eq!(rec.prompt, expected_prompt(&lib, &[("USER", BUS_UTTERANCE)]));
    assert_eq!(rec.category, Category::MultiSlot);
}

pub fn long_value_cancellation() {
    let reason = "delivery time is too far away from what I anticipated";
    let template = Scenario::OrderCancellation.template();
    let (library, conversation, gold) = template.instantiate(SlotId::new(34), SlotId::new(28), "8978JHG", reason);
    let rec = PromptRecord::build(library, conversation, gold, Category::LongValue, &TokenBudget::default(), &WhitespaceCounter).unwrap();
    let lib = ["Slot-34: id of an order", "Slot-28: cancellation reason"];
    assert_eq!(library_lines(&rec), lib);
    assert_eq!(
        turns(&rec),
        [
            (Role::User, "I want to cancel my order 8978JHG as delivery time is too far away from what I anticipated"),
            (Role::System, "sure, cancelled your order with ID 8978JHG."),
        ]
    );
    assert_eq!(rec.gold_output, format!("'Slot-34': '8978JHG',\n'Slot-28': '{reason}'"));

    // The bank carries the exemplar reason, so the generator produces the
    // same conversation shape with its own ids.
    let aug = augmenter();
    let bank = vec![reason.to_string()];
    let generated = aug.long_values_from(&[(&template, bank.as_slice())], None).unwrap();
    assert_eq!(generated.len(), 1);
    let g = &generated[0];
    assert!(g.conversation.turns[0].text.ends_with(&format!(" as {reason}")));
    assert_eq!(gold_by_description(g).iter().find(|(d, _)| d == "cancellation reason").unwrap().1, reason);
    assert!(g.gold_is_grounded());
}

pub fn categorical_salon() {
    let src = sources().remove("salon").unwrap();
    let out = augmenter().run(Pipeline::Categorical, vec![src]).unwrap();
    assert_eq!(out.records.len(), 1);
    let rec = &out.records[0];
    assert_eq!(
        library_lines(rec),
        [
            "Slot-51: Name of the hair stylist/salon",
            "Slot-0: Time of the appointment",
            "Slot-154: Date for the appointment",
            "Slot-63: Please confirm. Allowed values (\"Yes, go ahead\",\"No\")",
        ]
    );
    let t = turns(rec);
    assert_eq!(t.len(), 5);
    assert_eq!(
        t[..3],
        [
            (Role::User, "I need a salon appointment."),
            (Role::System, "Do you have a preferred salon? What date and time do you have in mind for the appointment?"),
            (Role::User, "I like an appointment at Salon Revel on the 1st in the evening 6:45."),
        ]
    );
    assert_eq!(t[3].0, Role::System);
    assert!(t[3].1.starts_with("Please confirm"));
    assert!(t[3].1.ends_with("Allowed values (\"Yes, go ahead\",\"No\")."));
    assert_eq!(t[4], (Role::User, "Yes."));
    assert_eq!(
        rec.gold_output,
        "'Slot-51': 'Salon Revel',\n'Slot-0': 'evening 6:45',\n'Slot-154': 'the 1st',\n'Slot-63': 'Yes, go ahead'"
    );
    assert_eq!(rec.category, Category::Categorical);
}

pub fn name_split_doctor() {
    let src = sources().remove("doctor").unwrap();
    let out = augmenter().run(Pipeline::NameSplit, vec![src]).unwrap();
    let rec = &out.records[0];
    let descriptions: BTreeSet<&str> = rec.library.iter().map(|s| s.description.as_str()).collect();
    assert_eq!(
        descriptions,
        BTreeSet::from([
            "Last name of the doctor",
            "Prefix name of the doctor",
            "Middle name of the doctor",
            "Appointment date with doctor",
            "Appointment time with doctor",
            "First name of the doctor",
        ])
    );
    assert_eq!(
        turns(rec),
        [
            (Role::User, "I need to book a doctor's appointment for the 9th."),
            (Role::System, "Sure, what time, and do you have a preferred doctor"),
            (Role::User, "Can you try for 18:00 with dr. starks jayum bennett?"),
        ]
    );
    assert_eq!(
        gold_by_description(rec),
        pairs(&[
            ("Last name of the doctor", "bennett"),
            ("Prefix name of the doctor", "dr."),
            ("Middle name of the doctor", "jayum"),
            ("Appointment date with doctor", "the 9th"),
            ("Appointment time with doctor", "18:00"),
            ("First name of the doctor", "starks"),
        ])
    );
    // Ids that survive the split keep their exemplar numbers.
    let first = rec.library.iter().find(|s| s.description == "First name of the doctor").unwrap();
    assert_eq!(first.id, SlotId::new(32));
    assert!(rec.library.contains(&SlotId::new(112)) && rec.library.contains(&SlotId::new(31)));
    assert_eq!(rec.category, Category::NameSplit);
}

pub fn id_data_dentist() {
    let src = sources().remove("dentist").unwrap();
    let slot = SlotSpec::free_text(SlotId::new(54), "id", "id of the user");
    let mut rec = inject_id(&src, slot, "74563vQq", "Can you give me your id.", "74563vQq").unwrap();
    rec.rerender(&TokenBudget::default(), &WhitespaceCounter).unwrap();
    let lib = ["Slot-19: City where the dentist is located", "Slot-54: id of the user"];
    assert_eq!(library_lines(&rec), lib);
    let expected_turns = [
        ("USER", "Can you find dentist's listings?"),
        ("SYSTEM", "Can you give me your id."),
        ("USER", "74563vQq"),
        ("SYSTEM", "Do you have an area?"),
        ("USER", "I would like it in Mountain View."),
    ];
    assert_eq!(rec.prompt, expected_prompt(&lib, &expected_turns));
    assert_eq!(rec.gold_output, "'Slot-19': 'Mountain View',\n'Slot-54': '74563vQq'");
}

pub fn address_ride() {
    let src = sources().remove("ride").unwrap();
    let out = augmenter().run(Pipeline::Address, vec![src]).unwrap();
    assert!(out.warnings.is_empty());
    let rec = &out.records[0];
    let descriptions: Vec<&str> = rec.library.iter().map(|s| s.description.as_str()).collect();
    assert_eq!(
        descriptions,
        ["house-number", "street name", "name of the city/town/village", "state-district", "Number of riders"]
    );
    assert_eq!(rec.library.slots()[0].id, SlotId::new(172));
    assert_eq!(
        render_slot_line(&rec.library.slots()[4]),
        "Slot-192: Number of riders. Allowed values (\"1\", \"2\", \"3\", \"4\")"
    );
    assert_eq!(
        turns(rec),
        [(Role::User, "Can you call me at cab for one person? I need to go to 11 Hickson Road Walsh Bay.")]
    );
    assert_eq!(
        gold_by_description(rec),
        pairs(&[
            ("house-number", "11"),
            ("street name", "Hickson Road"),
            ("name of the city/town/village", "Walsh"),
            ("state-district", "Bay"),
            ("Number of riders", "1"),
        ])
    );
}

pub fn relation_payment() {
    let src = sources().remove("payment").unwrap();
    let aug = augmenter();
    let split = aug.run(Pipeline::NameSplit, vec![src]).unwrap();
    let out = aug.run(Pipeline::Relation, split.records).unwrap();
    let rec = &out.records[0];
    let descriptions: BTreeSet<&str> = rec.library.iter().map(|s| s.description.as_str()).collect();
    assert_eq!(
        descriptions,
        BTreeSet::from([
            "The amount of money to transfer",
            "middle name",
            "first name",
            "last name",
            "prefix name",
            "relationship with receiver",
        ])
    );
    assert_eq!(rec.library.slots()[0].id, SlotId::new(135));
    assert_eq!(rec.library.slots().last().unwrap().description, "relationship with receiver");
    assert_eq!(
        turns(rec),
        [
            (Role::User, "I'd like to make a $370 transfer"),
            (Role::System, "Who do you want to send this money to?"),
            (Role::User, "I want to send money to my brother George Sidney"),
        ]
    );
    assert_eq!(
        gold_by_description(rec),
        pairs(&[
            ("The amount of money to transfer", "$370"),
            ("first name", "George"),
            ("last name", "Sidney"),
            ("relationship with receiver", "brother"),
        ])
    );
    let first = rec.library.iter().find(|s| s.description == "first name").unwrap();
    assert_eq!(first.id, SlotId::new(212));
    assert_eq!(rec.category, Category::Relation);
}

/// Every exemplar check with its row name.
pub const ROWS: [(&str, fn()); 7] = [
    ("multi_slot_bus", multi_slot_bus),
    ("long_value_cancellation", long_value_cancellation),
    ("categorical_salon", categorical_salon),
    ("name_split_doctor", name_split_doctor),
    ("id_data_dentist", id_data_dentist),
    ("address_ride", address_ride),
    ("relation_payment", relation_payment),
];
