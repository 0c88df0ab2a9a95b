//! Seeded generator for the bundled fixture corpus: three domains, nine
//! slots, short multi-domain dialogues.
//!
//! Every user mention of a slot places the word that precedes the value in
//! the slot's phrase template (its cue) right before the value, and no cue
//! word is used anywhere else. That makes relevance separable from the text
//! alone and keeps the extractive filler exact on full prompts.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::corpus::{Corpus, CorpusError};

pub const FIXTURE_SEED: u64 = 2024;
pub const FIXTURE_DIALOGUES: usize = 60;

struct SlotSpec {
    domain: &'static str,
    slot: &'static str,
    phrase: &'static str,
    values: &'static [&'static str],
    /// User phrasings; `{}` is replaced by the value.
    mentions: &'static [&'static str],
}

const PLACES: &[&str] = &[
    "cambridge",
    "ely",
    "london",
    "norwich",
    "peterborough",
    "stansted airport",
    "kings lynn",
];
const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];

const SLOTS: &[SlotSpec] = &[
    SlotSpec {
        domain: "taxi",
        slot: "departure",
        phrase: "from <v>",
        values: PLACES,
        mentions: &["i need a taxi from {}", "please pick me up from {}"],
    },
    SlotSpec {
        domain: "taxi",
        slot: "destination",
        phrase: "to <v>",
        values: PLACES,
        mentions: &["i am going to {}", "the taxi should go to {}"],
    },
    SlotSpec {
        domain: "taxi",
        slot: "leaveat",
        phrase: "leaving at <v>",
        values: &["08:15", "09:30", "12:00", "17:45", "21:00"],
        mentions: &["i want it leaving at {}", "leaving at {} please"],
    },
    SlotSpec {
        domain: "hotel",
        slot: "pricerange",
        phrase: "with <v> prices",
        values: &["cheap", "moderate", "expensive"],
        mentions: &["i want a hotel with {} prices", "something with {} prices"],
    },
    SlotSpec {
        domain: "hotel",
        slot: "area",
        phrase: "situated <v>",
        values: AREAS,
        mentions: &["the hotel should be situated {}", "situated {} if possible"],
    },
    SlotSpec {
        domain: "hotel",
        slot: "stars",
        phrase: "rated <v> stars",
        values: &["2", "3", "4", "5"],
        mentions: &["it should be rated {} stars", "a place rated {} stars"],
    },
    SlotSpec {
        domain: "attraction",
        slot: "area",
        phrase: "located in <v>",
        values: AREAS,
        mentions: &["i want an attraction located in {}", "located in {} please"],
    },
    SlotSpec {
        domain: "attraction",
        slot: "type",
        phrase: "of type <v>",
        values: &["museum", "park", "college", "theatre", "nightclub"],
        mentions: &["an attraction of type {}", "something of type {}"],
    },
    SlotSpec {
        domain: "attraction",
        slot: "name",
        phrase: "called <v>",
        values: &[
            "castle galleries",
            "the fez club",
            "kings college",
            "botanic garden",
            "museum of technology",
        ],
        mentions: &["i would like the one called {}", "please find the place called {}"],
    },
];

const DOMAINS: &[(&str, &str)] = &[
    ("taxi", "The user is looking for a taxi"),
    ("hotel", "The user is looking for a hotel"),
    ("attraction", "The user is looking for an attraction"),
];

const GREETINGS: &[&str] = &["hello , can you help me ?", "hi there , i need some help ."];
const CLOSINGS: &[&str] = &["thanks , that is all .", "great , thank you very much ."];
const SYSTEM: &[&str] = &[
    "sure , what else ?",
    "ok , noted . anything else ?",
    "i can help you . what else do you need ?",
    "got it . any other requirements ?",
];

fn key(spec: &SlotSpec) -> String {
    format!("{}-{}", spec.domain, spec.slot)
}

/// The fixture dataset as a JSON value.
pub fn synthetic_dataset(seed: u64, dialogues: usize) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema: Vec<Value> = SLOTS
        .iter()
        .map(|s| json!({"domain": s.domain, "slot": s.slot}))
        .collect();
    let ontology: BTreeMap<String, Vec<&str>> =
        SLOTS.iter().map(|s| (key(s), s.values.to_vec())).collect();
    let phrases: BTreeMap<String, &str> = SLOTS.iter().map(|s| (key(s), s.phrase)).collect();
    let prefixes: BTreeMap<&str, &str> = DOMAINS.iter().copied().collect();

    let out: Vec<Value> = (0..dialogues)
        .map(|i| dialogue(&mut rng, &format!("syn-{i:03}")))
        .collect();
    json!({
        "schema": schema,
        "ontology": ontology,
        "templates": {"prefixes": prefixes, "phrases": phrases},
        "dialogues": out,
    })
}

fn dialogue(rng: &mut ChaCha8Rng, id: &str) -> Value {
    let domain_count = match rng.random_range(0..10) {
        0..=3 => 1,
        4..=8 => 2,
        _ => 3,
    };
    let mut domains: Vec<&str> = DOMAINS.iter().map(|(d, _)| *d).collect();
    domains.shuffle(rng);
    domains.truncate(domain_count);

    // (slot index, value) mentions, domain by domain.
    let mut mentions: Vec<(usize, &str)> = Vec::new();
    for domain in &domains {
        let mut slots: Vec<usize> = (0..SLOTS.len()).filter(|&i| SLOTS[i].domain == *domain).collect();
        slots.shuffle(rng);
        let keep = rng.random_range(1..=slots.len());
        slots.truncate(keep);
        slots.sort_unstable();
        let mut used: Vec<&str> = Vec::new();
        for s in slots {
            let value = loop {
                let v = *SLOTS[s].values.choose(rng).unwrap();
                // departure and destination differ
                if !(SLOTS[s].domain == "taxi" && used.contains(&v)) {
                    break v;
                }
            };
            used.push(value);
            mentions.push((s, value));
        }
    }
    mentions.truncate(5);

    let mut user_turns: Vec<Vec<(usize, &str)>> = Vec::new();
    if rng.random_bool(0.3) {
        user_turns.push(Vec::new());
    }
    let mut rest = mentions.as_slice();
    while !rest.is_empty() {
        let take = if rest.len() >= 2 && rng.random_bool(0.4) { 2 } else { 1 };
        user_turns.push(rest[..take].to_vec());
        rest = &rest[take..];
    }
    let closing = rng.random_bool(0.4);

    let mut state: BTreeMap<String, String> = BTreeMap::new();
    let mut turns: Vec<Value> = Vec::new();
    for group in &user_turns {
        let user = if group.is_empty() {
            GREETINGS.choose(rng).unwrap().to_string()
        } else {
            let parts: Vec<String> = group
                .iter()
                .map(|(s, v)| SLOTS[*s].mentions.choose(rng).unwrap().replace("{}", v))
                .collect();
            format!("{} .", parts.join(" and "))
        };
        for (s, v) in group {
            state.insert(key(&SLOTS[*s]), v.to_string());
        }
        let sys = if turns.is_empty() {
            String::new()
        } else {
            SYSTEM.choose(rng).unwrap().to_string()
        };
        turns.push(json!({"sys": sys, "user": user, "state": state.clone()}));
    }
    if closing {
        let user = CLOSINGS.choose(rng).unwrap().to_string();
        let sys = SYSTEM.choose(rng).unwrap().to_string();
        turns.push(json!({"sys": sys, "user": user, "state": state.clone()}));
    }
    json!({"id": id, "turns": turns})
}

/// Canonical JSON of `synthetic_dataset(FIXTURE_SEED, FIXTURE_DIALOGUES)`,
/// as shipped in `fixtures/synthetic.json`.
pub const FIXTURE_JSON: &str = include_str!("../fixtures/synthetic.json");

/// The bundled fixture corpus (seed 2024, 60 dialogues).
pub fn fixture_corpus() -> Corpus {
    Corpus::from_json_str(FIXTURE_JSON).expect("bundled fixture is valid")
}

pub fn synthetic_corpus(seed: u64, dialogues: usize) -> Result<Corpus, CorpusError> {
    Corpus::from_json_str(&synthetic_dataset(seed, dialogues).to_string())
}
