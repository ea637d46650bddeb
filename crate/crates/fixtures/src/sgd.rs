//! SGD-format corpora: a seeded synthetic generator and the small corpus
//! behind the slot-type exemplars.

use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

struct SlotDef {
    name: &'static str,
    description: &'static str,
    possible: &'static [&'static str],
    /// How a user mentions the value; `{v}` is replaced.
    mention: &'static str,
    pool: &'static [&'static str],
}

struct ServiceDef {
    name: &'static str,
    description: &'static str,
    opener: &'static str,
    slots: &'static [SlotDef],
    /// Boolean slot filled by the final yes/no answer.
    confirm: Option<SlotDef>,
}

const CITIES: &[&str] = &[
    "Fresno", "long beach", "San Diego", "Sacramento", "Portland", "Seattle", "Los Angeles", "San Francisco",
    "Mountain View", "Oakland", "Denver", "Phoenix", "Las Vegas", "Anaheim", "Berkeley", "San Jose", "Vancouver", "Reno",
];
const DATES: &[&str] = &[
    "March 10th", "the 1st", "the 9th", "next Monday", "tomorrow", "March 3rd", "the 14th", "Friday", "the 22nd", "May 5th",
];
const TIMES: &[&str] = &[
    "1:40 pm", "evening 6:45", "18:00", "10 am", "noon", "3:15 pm", "morning 9:30", "7 pm", "11:30 am", "half past 4",
];
const SALONS: &[&str] = &["Salon Revel", "Great Clips", "Bibo Salon", "Supercuts", "Atelier Salon", "Hair Lab"];
const DOCTORS: &[&str] = &[
    "dr. starks jayum bennett", "dr. maya lin", "anna kay smith", "dr. omar haddad", "joseph reyes", "dr. li wei chen",
];
const AMOUNTS: &[&str] = &["$370", "$125", "$40", "$1,200", "$85", "$19.99"];
const RECEIVERS: &[&str] = &["George Sidney", "Maria Lopez", "Tom Hanks", "Priya Patel", "Ken Adams", "Lena Park"];
const ADDRESSES: &[&str] = &[
    "11 Hickson Road Walsh Bay", "221 Baker Street London", "1600 Amphitheatre Parkway Mountain View",
    "742 Evergreen Terrace Springfield", "10 Downing Street Westminster", "350 Fifth Avenue Manhattan",
];
const RESTAURANTS: &[&str] = &["Sushi Ran", "The Grill", "Chez Panisse", "Nopa", "Zuni Cafe", "Slanted Door"];

const ONE_TO_FOUR: &[&str] = &["1", "2", "3", "4"];
const ONE_TO_FIVE: &[&str] = &["1", "2", "3", "4", "5"];
const ONE_TO_SIX: &[&str] = &["1", "2", "3", "4", "5", "6"];
const BOOL: &[&str] = &["True", "False"];

const fn free(name: &'static str, description: &'static str, mention: &'static str, pool: &'static [&'static str]) -> SlotDef {
    SlotDef { name, description, possible: &[], mention, pool }
}

const fn cat(name: &'static str, description: &'static str, mention: &'static str, values: &'static [&'static str]) -> SlotDef {
    SlotDef { name, description, possible: values, mention, pool: values }
}

const SERVICES: &[ServiceDef] = &[
    ServiceDef {
        name: "Buses_1",
        description: "Book bus journeys between cities",
        opener: "I need to book a bus",
        slots: &[
            free("to_location", "City where bus is going to", "to {v}", CITIES),
            cat("travelers", "Number of travelers for journey", "for {v} people", ONE_TO_FIVE),
            free("leaving_date", "Date of bus leaving for journey", "on {v}", DATES),
            free("leaving_time", "Time of bus leaving for journey", "at {v}", TIMES),
            free("from_location", "City where bus is leaving from", "from {v}", CITIES),
        ],
        confirm: None,
    },
    ServiceDef {
        name: "Salon_1",
        description: "Book hair salon appointments",
        opener: "I need a salon appointment",
        slots: &[
            free("stylist_name", "Name of the hair stylist/salon", "at {v}", SALONS),
            free("appointment_time", "Time of the appointment", "in the {v}", TIMES),
            free("appointment_date", "Date for the appointment", "on {v}", DATES),
        ],
        confirm: Some(cat("confirm_booking", "Whether to confirm the appointment", "", BOOL)),
    },
    ServiceDef {
        name: "Doctor_1",
        description: "Book appointments with doctors",
        opener: "I need to book a doctor's appointment",
        slots: &[
            free("doctor_name", "Name of the doctor", "with {v}", DOCTORS),
            free("appointment_date", "Appointment date with doctor", "for {v}", DATES),
            free("appointment_time", "Appointment time with doctor", "at {v}", TIMES),
        ],
        confirm: None,
    },
    ServiceDef {
        name: "Dentist_1",
        description: "Find dentists",
        opener: "Can you find dentist's listings",
        slots: &[free("city", "City where the dentist is located", "in {v}", CITIES)],
        confirm: None,
    },
    ServiceDef {
        name: "RideSharing_2",
        description: "Call a cab",
        opener: "Can you call me a cab",
        slots: &[
            free("destination", "Destination address for the ride", "to {v}", ADDRESSES),
            cat("number_of_riders", "Number of riders", "for {v} riders", ONE_TO_FOUR),
        ],
        confirm: None,
    },
    ServiceDef {
        name: "Payment_1",
        description: "Send money to contacts",
        opener: "I'd like to make a transfer",
        slots: &[
            free("amount", "The amount of money to transfer", "of {v}", AMOUNTS),
            free("receiver_name", "Receiver of the money", "to {v}", RECEIVERS),
        ],
        confirm: None,
    },
    ServiceDef {
        name: "Restaurants_1",
        description: "Reserve restaurant tables",
        opener: "I want to reserve a table",
        slots: &[
            free("restaurant_name", "Name of the restaurant", "at {v}", RESTAURANTS),
            free("city", "City where the restaurant is located", "in {v}", CITIES),
            free("date", "Date of the reservation", "on {v}", DATES),
            free("time", "Time of the reservation", "at {v}", TIMES),
            cat("party_size", "Number of people in the party", "for {v} people", ONE_TO_SIX),
        ],
        confirm: Some(cat("confirm_reservation", "Whether to confirm the reservation", "", BOOL)),
    },
];

fn slot_json(s: &SlotDef) -> Value {
    json!({
        "name": s.name,
        "description": s.description,
        "is_categorical": !s.possible.is_empty(),
        "possible_values": s.possible,
    })
}

/// The schema shared by the synthetic and exemplar corpora.
pub fn schema() -> Value {
    Value::Array(
        SERVICES
            .iter()
            .map(|svc| {
                let slots: Vec<Value> = svc.slots.iter().chain(svc.confirm.as_ref()).map(slot_json).collect();
                json!({ "service_name": svc.name, "description": svc.description, "slots": slots, "intents": [] })
            })
            .collect(),
    )
}

fn user(service: &str, text: &str, state: &[(&str, &str)]) -> Value {
    let mut values = Map::new();
    for (slot, v) in state {
        values.insert(slot.to_string(), json!([v]));
    }
    json!({
        "speaker": "USER",
        "utterance": text,
        "frames": [{
            "service": service,
            "slots": [],
            "actions": [],
            "state": { "active_intent": "", "requested_slots": [], "slot_values": values },
        }],
    })
}

fn system(service: &str, text: &str) -> Value {
    json!({ "speaker": "SYSTEM", "utterance": text, "frames": [{ "service": service, "slots": [], "actions": [] }] })
}

fn mention(s: &SlotDef, v: &str) -> String {
    s.mention.replace("{v}", v)
}

/// A seeded SGD corpus of `dialogues` dialogues as `(schema, dialogues)`.
/// Every dialogue has two or three user turns, each carrying the cumulative
/// state, and every free-text value appears verbatim in the conversation.
pub fn synthetic_corpus(dialogues: usize, seed: u64) -> (Value, Value) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(dialogues);
    for d in 0..dialogues {
        let svc = &SERVICES[d % SERVICES.len()];
        let values: Vec<&str> = svc.slots.iter().map(|s| *s.pool.choose(&mut rng).expect("non-empty pool")).collect();
        let mut order: Vec<usize> = (0..svc.slots.len()).collect();
        order.shuffle(&mut rng);
        let k = rng.random_range(1..=svc.slots.len());
        let (first, rest) = order.split_at(k);

        let mentions = |idx: &[usize]| idx.iter().map(|&i| mention(&svc.slots[i], values[i])).collect::<Vec<_>>().join(" ");
        let state = |idx: &[usize]| idx.iter().map(|&i| (svc.slots[i].name, values[i])).collect::<Vec<_>>();

        let mut turns = vec![user(svc.name, &format!("{} {}.", svc.opener, mentions(first)), &state(first))];
        if !rest.is_empty() {
            let asks: Vec<String> = rest.iter().map(|&i| svc.slots[i].description.to_lowercase()).collect();
            turns.push(system(svc.name, &format!("Sure. Could you also tell me the {}?", asks.join(" and the "))));
            turns.push(user(svc.name, &format!("Sure, {}.", mentions(rest)), &state(&order)));
        }
        let all: Vec<usize> = (0..svc.slots.len()).collect();
        turns.push(system(svc.name, &format!("Please confirm: {}.", mentions(&all))));
        let mut last = state(&order);
        let answer = match &svc.confirm {
            Some(c) => {
                let yes = rng.random_bool(0.7);
                last.push((c.name, if yes { "True" } else { "False" }));
                if yes { "Yes, go ahead." } else { "No, not yet." }
            }
            None => "Yes, that's right.",
        };
        turns.push(user(svc.name, answer, &last));
        out.push(json!({ "dialogue_id": format!("{}_{:05}", d / SERVICES.len(), d), "services": [svc.name], "turns": turns }));
    }
    (schema(), Value::Array(out))
}

/// Writes `schema.json` and `dialogues_001.json` into `dir`.
pub fn write_corpus(dir: &Path, schema: &Value, dialogues: &Value) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("schema.json"), serde_json::to_string_pretty(schema)?)?;
    std::fs::write(dir.join("dialogues_001.json"), serde_json::to_string_pretty(dialogues)?)?;
    Ok(())
}

pub fn write_synthetic_corpus(dir: &Path, dialogues: usize, seed: u64) -> io::Result<()> {
    let (schema, dialogues) = synthetic_corpus(dialogues, seed);
    write_corpus(dir, &schema, &dialogues)
}

/// Source dialogues for the slot-type exemplars, one per SGD-derived row:
/// `bus`, `salon`, `doctor`, `dentist`, `ride` and `payment`.
pub fn table1_corpus() -> (Value, Value) {
    let bus = [
        ("to_location", "long beach"),
        ("travelers", "4"),
        ("leaving_date", "March 10th"),
        ("leaving_time", "1:40 pm"),
        ("from_location", "Fresno"),
    ];
    let salon = [("stylist_name", "Salon Revel"), ("appointment_time", "evening 6:45"), ("appointment_date", "the 1st")];
    let mut salon_final = salon.to_vec();
    salon_final.push(("confirm_booking", "True"));
    let doctor = [
        ("doctor_name", "dr. starks jayum bennett"),
        ("appointment_date", "the 9th"),
        ("appointment_time", "18:00"),
    ];

    let dialogues = json!([
        {
            "dialogue_id": "bus",
            "services": ["Buses_1"],
            "turns": [
                user("Buses_1", "I need to book a bus.", &[]),
                system("Buses_1", "Please confirm: 4 tickets from Fresno to long beach on March 10th at 1:40 pm."),
                user("Buses_1", "Yes, that works.", &bus),
            ],
        },
        {
            "dialogue_id": "salon",
            "services": ["Salon_1"],
            "turns": [
                user("Salon_1", "I need a salon appointment.", &[]),
                system("Salon_1", "Do you have a preferred salon? What date and time do you have in mind for the appointment?"),
                user("Salon_1", "I like an appointment at Salon Revel on the 1st in the evening 6:45.", &salon),
                system("Salon_1", "Please confirm that you need an appointment at Salon Revel at 6:45 pm later today."),
                user("Salon_1", "Yes.", &salon_final),
            ],
        },
        {
            "dialogue_id": "doctor",
            "services": ["Doctor_1"],
            "turns": [
                user("Doctor_1", "I need to book a doctor's appointment for the 9th.", &[("appointment_date", "the 9th")]),
                system("Doctor_1", "Sure, what time, and do you have a preferred doctor"),
                user("Doctor_1", "Can you try for 18:00 with dr. starks jayum bennett?", &doctor),
            ],
        },
        {
            "dialogue_id": "dentist",
            "services": ["Dentist_1"],
            "turns": [
                user("Dentist_1", "Can you find dentist's listings?", &[]),
                system("Dentist_1", "Do you have an area?"),
                user("Dentist_1", "I would like it in Mountain View.", &[("city", "Mountain View")]),
            ],
        },
        {
            "dialogue_id": "ride",
            "services": ["RideSharing_2"],
            "turns": [
                user(
                    "RideSharing_2",
                    "Can you call me at cab for one person? I need to go to 11 Hickson Road Walsh Bay.",
                    &[("destination", "11 Hickson Road Walsh Bay"), ("number_of_riders", "1")],
                ),
            ],
        },
        {
            "dialogue_id": "payment",
            "services": ["Payment_1"],
            "turns": [
                user("Payment_1", "I'd like to make a $370 transfer", &[("amount", "$370")]),
                system("Payment_1", "Who do you want to send this money to?"),
                user("Payment_1", "I want to send money to my brother George Sidney", &[("amount", "$370"), ("receiver_name", "George Sidney")]),
            ],
        },
    ]);
    (schema(), dialogues)
}

/// Slot ids matching the exemplar libraries, in the slot-map file layout.
pub fn table1_slot_map() -> Value {
    let pairs = [
        ("Buses_1/to_location", 5),
        ("Buses_1/travelers", 182),
        ("Buses_1/leaving_date", 53),
        ("Buses_1/leaving_time", 57),
        ("Buses_1/from_location", 24),
        ("Salon_1/stylist_name", 51),
        ("Salon_1/appointment_time", 0),
        ("Salon_1/appointment_date", 154),
        ("Salon_1/confirm_booking", 63),
        ("Doctor_1/doctor_name", 32),
        ("Doctor_1/appointment_date", 112),
        ("Doctor_1/appointment_time", 31),
        ("Dentist_1/city", 19),
        ("RideSharing_2/destination", 172),
        ("RideSharing_2/number_of_riders", 192),
        ("Payment_1/amount", 135),
        ("Payment_1/receiver_name", 212),
    ];
    let slots: Map<String, Value> = pairs.iter().map(|(k, n)| (k.to_string(), json!(format!("Slot-{n}")))).collect();
    json!({ "seed": null, "slots": slots })
}
