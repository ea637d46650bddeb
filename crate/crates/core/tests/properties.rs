//! Property tests over truncation, parsing and augmentation.

use proptest::prelude::*;
use slotfill_core::augment::{split_address, split_name, split_dataset, Augmenter, Pipeline, PipelineConfig, SplitRatios};
use slotfill_core::prompt::{CharCounter, TokenCounter};
use slotfill_core::sgd::{load_sgd, to_records, RecordOptions, SlotIdMap};
use slotfill_core::{
    parse_generation, render_prompt, validate_and_normalize, validate_state, Conversation, NormalizeOptions, PromptRecord, Role,
    SlotId, SlotLibrary, SlotSpec, Split, TokenBudget, Turn, WhitespaceCounter,
};

fn library() -> SlotLibrary {
    SlotLibrary::new(vec![
        SlotSpec::free_text(SlotId::new(5), "", "City where bus is going to"),
        SlotSpec::categorical(SlotId::new(182), "", "Number of travelers", ["1", "2", "3"]),
        SlotSpec::free_text(SlotId::new(24), "", "City where bus is leaving from"),
    ])
    .unwrap()
}

fn arb_conversation(max_turns: usize) -> impl Strategy<Value = Conversation> {
    prop::collection::vec(("[a-z]{1,8}( [a-z]{1,8}){0,12}", any::<bool>()), 1..=max_turns).prop_map(|turns| {
        Conversation::new(
            turns
                .into_iter()
                .map(|(text, user)| if user { Turn::user(text) } else { Turn::system(text) })
                .collect(),
        )
    })
}

/// Turns kept by a rendered prompt, read back from its tail.
fn retained(prompt: &str) -> usize {
    prompt.split("<conversation>\n").nth(1).map_or(0, |c| c.lines().count())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn truncation_respects_budget(conv in arb_conversation(60), budget in 20usize..400) {
        let lib = library();
        let counter = WhitespaceCounter;
        let b = TokenBudget::new(budget, 50).unwrap();
        if let Ok(r) = render_prompt(&lib, &conv, &b, &counter) {
            prop_assert!(counter.count(&r.text) <= budget);
            let kept = retained(&r.text);
            prop_assert_eq!(kept + r.dropped_turns, conv.len());
            let expected: Vec<String> = conv.turns[r.dropped_turns..]
                .iter()
                .map(|t| format!("{} {}", t.role.tag(), t.text))
                .collect();
            prop_assert!(r.text.ends_with(&expected.join("\n")));

            let smaller = TokenBudget::new(budget.saturating_sub(7).max(1), 50).unwrap();
            if let Ok(s) = render_prompt(&lib, &conv, &smaller, &counter) {
                prop_assert!(s.dropped_turns >= r.dropped_turns);
            }
        }
    }

    #[test]
    fn char_counter_truncation(conv in arb_conversation(30), budget in 100usize..3000) {
        let counter = CharCounter::default();
        let b = TokenBudget::new(budget, 50).unwrap();
        if let Ok(r) = render_prompt(&library(), &conv, &b, &counter) {
            prop_assert!(counter.count(&r.text) <= budget);
        }
    }

    #[test]
    fn parser_never_panics_and_validates(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let text = String::from_utf8_lossy(&bytes);
        let raw = parse_generation(&text);
        let lib = library();
        let conv = Conversation::new(vec![Turn::user(text.to_string())]);
        let outcome = validate_and_normalize(&raw.values, &lib, &conv, &NormalizeOptions::default());
        prop_assert!(validate_state(&outcome.state, &lib).is_empty());
    }

    #[test]
    fn slot_shaped_noise_validates(lines in prop::collection::vec("(Slot-(5|24|182|7)|slot-5|junk): ?'?[a-z0-9 ]{0,10}'?,?", 0..8)) {
        let text = lines.join("\n");
        let lib = library();
        let conv = Conversation::new(vec![Turn::user("from fresno to reno 2")]);
        let raw = parse_generation(&text);
        let outcome = validate_and_normalize(&raw.values, &lib, &conv, &NormalizeOptions::default());
        prop_assert!(validate_state(&outcome.state, &lib).is_empty());
    }

    #[test]
    fn name_parts_rebuild_the_name(name in "[A-Za-z][A-Za-z.]{0,7}( [A-Za-z][A-Za-z.]{0,7}){0,5}") {
        let honorifics: Vec<String> = ["dr", "mr", "mrs", "ms", "prof"].map(String::from).to_vec();
        let parts = split_name(&name, &honorifics).unwrap();
        prop_assert_eq!(parts.join(), name);
    }

    #[test]
    fn address_parts_are_ordered_substrings(
        house in "([0-9]{1,4} )?",
        street in "[A-Z][a-z]{2,8}( [A-Z][a-z]{2,8})?",
        keyword in prop::sample::select(slotfill_core::augment::STREET_KEYWORDS.to_vec()),
        tail in "( [A-Z][a-z]{2,8}){0,3}",
    ) {
        let address = format!("{house}{street} {keyword}{tail}");
        let parts = split_address(&address).unwrap();
        let mut from = 0;
        for part in parts.parts().into_iter().flatten() {
            let at = address[from..].find(part).map(|i| i + from);
            prop_assert!(at.is_some(), "{part:?} not found after {from} in {address:?}");
            from = at.unwrap() + part.len();
        }
        prop_assert!(parts.street.is_some());
    }

    #[test]
    fn splits_never_straddle_dialogues(ids in prop::collection::vec(0u8..12, 1..40), seed in any::<u64>()) {
        let records: Vec<PromptRecord> = ids
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let conv = Conversation::new(vec![Turn::user(format!("turn {i}"))]);
                PromptRecord::build(library(), conv, Default::default(), slotfill_core::Category::Sgd, &TokenBudget::default(), &WhitespaceCounter)
                    .unwrap()
                    .with_dialogue_id(format!("d{d}"))
            })
            .collect();
        let out = split_dataset(records, SplitRatios::new(0.6, 0.2, 0.2).unwrap(), seed).unwrap();
        let mut seen = std::collections::HashMap::new();
        for r in &out {
            let prev = seen.insert(r.dialogue_id.clone(), r.split);
            prop_assert!(prev.is_none() || prev == Some(r.split));
        }
    }
}

fn synthetic_records(dialogues: usize, seed: u64) -> Vec<PromptRecord> {
    let dir = tempfile::tempdir().unwrap();
    slotfill_fixtures::write_synthetic_corpus(dir.path(), dialogues, seed).unwrap();
    let corpus = load_sgd(dir.path()).unwrap();
    let ids = SlotIdMap::assign(&corpus.schemas, seed).unwrap();
    let options = RecordOptions {
        budget: TokenBudget::default(),
        counter: &WhitespaceCounter,
        split: Split::Train,
    };
    to_records(&corpus, &ids, &options).unwrap().records
}

fn run_all(records: &[PromptRecord], seed: u64) -> Vec<Vec<PromptRecord>> {
    let config = PipelineConfig {
        seed,
        long_value_limit: Some(100),
        ..Default::default()
    };
    let aug = Augmenter::new(config, &WhitespaceCounter).unwrap();
    Pipeline::ALL
        .iter()
        .map(|&p| aug.run(p, records.to_vec()).unwrap().records)
        .collect()
}

fn assert_grounded(rec: &PromptRecord) {
    let text = rec.conversation.text();
    for (id, alts) in rec.gold.iter() {
        let spec = rec.library.get(id).unwrap();
        match &spec.allowed_values {
            Some(allowed) => assert!(allowed.contains(&alts[0]), "{} not allowed for {id}", alts[0]),
            None => assert!(text.contains(alts[0].as_str()), "{:?} not in conversation of {:?}", alts[0], rec.category),
        }
    }
    assert!(validate_state(&rec.gold_state(), &rec.library).is_empty());
    let rerendered = render_prompt(&rec.library, &rec.conversation, &TokenBudget::default(), &WhitespaceCounter).unwrap();
    assert_eq!(rerendered.text, rec.prompt);
}

#[test]
fn every_pipeline_output_is_grounded() {
    let records = synthetic_records(140, 3);
    let outputs = run_all(&records, 3);
    for (pipeline, out) in Pipeline::ALL.iter().zip(&outputs) {
        assert!(out.iter().any(|r| r.category == pipeline.category()), "{pipeline:?} produced nothing");
        out.iter().for_each(assert_grounded);
    }
}

#[test]
fn pipelines_are_deterministic() {
    let records = synthetic_records(70, 5);
    let a = serde_json::to_string(&run_all(&records, 5)).unwrap();
    let b = serde_json::to_string(&run_all(&records, 5)).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_string(&run_all(&records, 6)).unwrap();
    assert_ne!(a, c, "the seed should matter");
}

#[test]
fn name_split_and_relation_commute() {
    let records: Vec<PromptRecord> = synthetic_records(70, 8)
        .into_iter()
        .filter(|r| r.library.iter().any(|s| s.name.starts_with("Payment_1/")))
        .collect();
    assert!(!records.is_empty());
    let aug = Augmenter::new(PipelineConfig { seed: 8, ..Default::default() }, &WhitespaceCounter).unwrap();
    let ns_then_rel = aug.run(Pipeline::Relation, aug.run(Pipeline::NameSplit, records.clone()).unwrap().records).unwrap();
    let rel_then_ns = aug.run(Pipeline::NameSplit, aug.run(Pipeline::Relation, records).unwrap().records).unwrap();
    assert_eq!(ns_then_rel.records, rel_then_ns.records);
}

#[test]
fn id_probability_zero_is_identity() {
    let records = synthetic_records(20, 1);
    let aug = Augmenter::new(PipelineConfig { id_probability: 0.0, ..Default::default() }, &WhitespaceCounter).unwrap();
    assert_eq!(aug.run(Pipeline::IdData, records.clone()).unwrap().records, records);
}

#[test]
fn multi_slot_outputs_are_single_user_turns() {
    let records = synthetic_records(70, 2);
    let out = Augmenter::new(PipelineConfig::default(), &WhitespaceCounter)
        .unwrap()
        .run(Pipeline::MultiSlot, records.clone())
        .unwrap();
    let added: Vec<&PromptRecord> = out.records.iter().filter(|r| r.category == slotfill_core::Category::MultiSlot).collect();
    assert_eq!(out.records.len(), records.len() + added.len());
    assert!(!added.is_empty());
    for r in added {
        assert_eq!(r.conversation.len(), 1);
        assert_eq!(r.conversation.turns[0].role, Role::User);
        assert!(r.gold.len() >= 3);
    }
}
