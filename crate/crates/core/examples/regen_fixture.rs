//! Rewrites `fixtures/synthetic.json` from the synthetic generator.

use slotfuse::synthetic::{synthetic_corpus, FIXTURE_DIALOGUES, FIXTURE_SEED};

fn main() {
    let corpus = synthetic_corpus(FIXTURE_SEED, FIXTURE_DIALOGUES).expect("generator output is valid");
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/synthetic.json");
    std::fs::write(path, corpus.to_canonical_json()).expect("fixture path is writable");
    println!("wrote {path}");
}
