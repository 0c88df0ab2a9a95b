//! Reference checks shared by the targeted tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotfuse::corpus::Schema;
use slotfuse::encoder::{EncoderConfig, EncoderModel, Tokenizer};
use slotfuse::eval::EvalRecord;
use slotfuse::fusion::build_template;
use slotfuse::generator::{invert_template, render_summary};
use slotfuse::selector::{batch_loss, batch_loss_and_gradients};
use slotfuse::{Corpus, DialogueState, Fill, SlotId};

// ---------------------------------------------------------------------------
// gradient check

pub const FD_STEP: f64 = 1e-4;
pub const FD_MAX_REL_ERR: f64 = 1e-3;
/// Denominator floor so entries whose true gradient is (numerically) zero
/// are compared absolutely.
pub const FD_REL_FLOOR: f64 = 1e-7;

pub fn tiny_model(scale: f64) -> EncoderModel {
    let config = EncoderConfig {
        d_model: 8,
        d_ff: 12,
        heads: 2,
        layers: 2,
        max_len: 12,
        seed: 11,
    };
    let tokenizer = Tokenizer::from_words([
        "[user] [sys] i need a taxi from ely situated north",
        "taxi departure hotel area",
    ]);
    let mut model = EncoderModel::init(config, tokenizer).unwrap();
    for (_, t) in model.weights.tensors_mut() {
        t.mapv_inplace(|x| x * scale);
    }
    // biases start at zero; give them something to differentiate
    for (i, layer) in model.weights.layers.iter_mut().enumerate() {
        layer.b_1.indexed_iter_mut().for_each(|((_, j), b)| *b = 0.01 * ((i + j) as f64 % 5.0 - 2.0));
        layer.b_2.indexed_iter_mut().for_each(|((_, j), b)| *b = -0.02 * ((i * 3 + j) as f64 % 4.0 - 1.5));
    }
    model
}

pub fn two_slots() -> Vec<SlotId> {
    vec![
        SlotId::parse("taxi-departure").unwrap(),
        SlotId::parse("hotel-area").unwrap(),
    ]
}

pub struct FdReport {
    pub worst: f64,
    pub worst_at: String,
    pub checked: usize,
    pub tensors: usize,
}

/// Compares every analytic gradient entry with a central difference.
pub fn finite_difference_check(
    model: &EncoderModel,
    history: &str,
    slots: &[SlotId],
    labels: &[bool],
    step: f64,
) -> FdReport {
    let (_, analytic) = batch_loss_and_gradients(model, history, slots, labels).unwrap();
    let mut probe = model.clone();
    let names: Vec<String> = model.weights.tensors().into_iter().map(|(n, _)| n).collect();
    let mut report = FdReport {
        worst: 0.0,
        worst_at: String::new(),
        checked: 0,
        tensors: names.len(),
    };
    for (t, name) in names.iter().enumerate() {
        let len = model.weights.tensors()[t].1.len();
        for k in 0..len {
            let original = probe.weights.tensors()[t].1.as_slice().unwrap()[k];
            probe.weights.tensors_mut()[t].1.as_slice_mut().unwrap()[k] = original + step;
            let plus = batch_loss(&probe, history, slots, labels).unwrap();
            probe.weights.tensors_mut()[t].1.as_slice_mut().unwrap()[k] = original - step;
            let minus = batch_loss(&probe, history, slots, labels).unwrap();
            probe.weights.tensors_mut()[t].1.as_slice_mut().unwrap()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic.tensors()[t].1.as_slice().unwrap()[k];
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(FD_REL_FLOOR);
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{name}[{k}] analytic={exact:e} numeric={numeric:e}");
            }
            report.checked += 1;
        }
    }
    report
}

// ---------------------------------------------------------------------------
// metrics

pub struct MetricCase {
    pub schema: Schema,
    pub records: Vec<EvalRecord>,
    /// The same cells as plain strings, one row per turn, one column per slot.
    pub gold: Vec<Vec<Option<String>>>,
    pub predicted: Vec<Vec<Option<String>>>,
}

/// A random schema of 1..=5 slots and 1..=4 turns with gold and predicted
/// cells drawn from a tiny value pool, so that matches are common. Predicted
/// values sometimes differ from gold only in case or padding.
pub fn random_metric_case(rng: &mut ChaCha8Rng) -> MetricCase {
    let n_slots = rng.random_range(1..=5);
    let n_turns = rng.random_range(1..=4);
    let slots: Vec<SlotId> = (0..n_slots)
        .map(|i| SlotId::new(if i % 2 == 0 { "taxi" } else { "hotel" }, &format!("s{i}")).unwrap())
        .collect();
    let schema = Schema::new(slots.clone()).unwrap();
    let pool = ["a", "b", "c"];
    let draw = |rng: &mut ChaCha8Rng| -> Option<String> {
        if rng.random_bool(0.4) {
            None
        } else {
            Some(pool[rng.random_range(0..pool.len())].to_string())
        }
    };
    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    let mut records = Vec::new();
    for t in 0..n_turns {
        let g: Vec<Option<String>> = (0..n_slots).map(|_| draw(rng)).collect();
        let p: Vec<Option<String>> = g
            .iter()
            .map(|cell| match rng.random_range(0..4) {
                0 => draw(rng),
                1 => cell.as_ref().map(|v| format!(" {} ", v.to_uppercase())),
                _ => cell.clone(),
            })
            .collect();
        let to_state = |cells: &[Option<String>]| -> DialogueState {
            slots
                .iter()
                .zip(cells)
                .filter_map(|(s, c)| c.as_ref().map(|v| (s.clone(), v.clone())))
                .collect()
        };
        records.push(EvalRecord {
            dialogue_id: "case".into(),
            turn: t,
            gold: to_state(&g),
            predicted: to_state(&p),
        });
        gold.push(g);
        predicted.push(p);
    }
    MetricCase {
        schema,
        records,
        gold,
        predicted,
    }
}

fn cell_matches(g: &Option<String>, p: &Option<String>) -> bool {
    match (g, p) {
        (None, None) => true,
        (Some(a), Some(b)) => a.trim().to_lowercase() == b.trim().to_lowercase(),
        _ => false,
    }
}

/// Counts turns whose every cell matches.
pub fn brute_force_jga(case: &MetricCase) -> f64 {
    let mut hits = 0usize;
    for (g, p) in case.gold.iter().zip(&case.predicted) {
        let mut all = true;
        for j in 0..g.len() {
            if !cell_matches(&g[j], &p[j]) {
                all = false;
            }
        }
        if all {
            hits += 1;
        }
    }
    hits as f64 / case.gold.len() as f64
}

/// Per-column match rate, averaged over columns.
pub fn brute_force_sa(case: &MetricCase) -> f64 {
    let turns = case.gold.len();
    let cols = case.gold[0].len();
    let mut total = 0.0;
    for j in 0..cols {
        let mut hits = 0usize;
        for t in 0..turns {
            if cell_matches(&case.gold[t][j], &case.predicted[t][j]) {
                hits += 1;
            }
        }
        total += hits as f64 / turns as f64;
    }
    total / cols as f64
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// template round trip

/// For every subset of the schema: build the template, fill every mask with
/// an ontology value (the first mask of larger subsets gets "none"), render,
/// invert, and compare with the expected state. Returns the failures.
pub fn template_round_trip_failures(corpus: &Corpus) -> Vec<String> {
    let slots = corpus.schema.slots();
    assert!(slots.len() < 32);
    let mut failures = Vec::new();
    for bits in 0u32..(1 << slots.len()) {
        let selected: Vec<SlotId> = slots
            .iter()
            .enumerate()
            .filter(|(i, _)| bits & (1 << i) != 0)
            .map(|(_, s)| s.clone())
            .collect();
        let template = match build_template(&selected, &corpus.schema, &corpus.templates) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("subset {bits:#b}: {e}"));
                continue;
            }
        };
        let mut fill = Fill::new();
        let mut expected = BTreeMap::new();
        for (i, slot) in template.mask_slots().iter().enumerate() {
            let candidates = corpus.ontology.candidates(slot).unwrap();
            let value = if i == 0 && selected.len() > 3 {
                "none".to_string()
            } else {
                let v = candidates[(bits as usize + i) % candidates.len()].clone();
                expected.insert(slot.to_string(), v.clone());
                v
            };
            fill.set(i, value);
        }
        let outcome = render_summary(&template, &fill)
            .map_err(|e| e.to_string())
            .and_then(|summary| invert_template(&template, &summary).map_err(|e| e.to_string()));
        match outcome {
            Ok(state) if state.to_string_map() == expected => {}
            Ok(state) => failures.push(format!(
                "subset {bits:#b}: expected {expected:?}, got {:?}",
                state.to_string_map()
            )),
            Err(e) => failures.push(format!("subset {bits:#b}: {e}")),
        }
    }
    failures
}
