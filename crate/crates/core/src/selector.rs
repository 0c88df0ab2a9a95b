//! Stage one: contrastive training of the encoder and threshold-based slot
//! selection.
//!
//! For a dialogue history `D` and the schema slots `s_1..s_n` of one turn, the
//! training objective is binary cross-entropy over relevance scores:
//!
//! ```text
//! L = −Σ_i [ α_i · ln sim(Enc(D), Enc(s_i)) + (1 − α_i) · ln(1 − sim(Enc(D), Enc(s_i))) ]
//! ```
//!
//! where `sim` is the logistic of the dot product of the two first-token
//! encodings and `α_i` is 1 exactly when `s_i` holds a value in the turn's
//! gold state. Every irrelevant schema slot is a negative.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{gold_relevant_slots, serialize_history, Corpus, Schema, SlotId};
use crate::encoder::{
    backward_first_token, encode, encode_with_cache, logistic, relevance_logit, EncoderConfig,
    EncoderError, EncoderModel, Segment, Tokenizer, Weights,
};

/// Default operating threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Threshold grid of the precision/recall sweep.
pub const DEFAULT_GRID: [f64; 5] = [0.9, 0.8, 0.7, 0.6, 0.5];

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
    #[error("invalid selector configuration: {0}")]
    InvalidConfig(String),
    #[error("{slots} slot vectors but {labels} labels")]
    LengthMismatch { slots: usize, labels: usize },
    #[error("the training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

pub fn check_threshold(delta: f64) -> Result<(), SelectorError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(SelectorError::InvalidThreshold(delta))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub history_text: String,
    pub slot: SlotId,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectorConfig {
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds both the weight initialization and the turn order.
    pub seed: u64,
    /// Per-step gradients with a larger global L2 norm are rescaled to this
    /// norm. `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub encoder: EncoderConfig,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            threshold: DEFAULT_THRESHOLD,
            learning_rate: 0.5,
            epochs: 120,
            seed: 7,
            max_grad_norm: Some(1.0),
            encoder: EncoderConfig::default(),
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectorError> {
        check_threshold(self.threshold)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SelectorError::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(SelectorError::InvalidConfig(format!(
                    "gradient norm bound {c} must be positive"
                )));
            }
        }
        self.encoder.validate()?;
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed,
            ..self.encoder
        }
    }
}

/// Per-example binary cross-entropy on the logit `z = u·v`, computed without
/// forming `ln(sim)` directly so it stays finite for large `|z|`.
pub fn bce_from_logit(z: f64, label: bool) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    if label {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Per-example binary cross-entropy given the score itself.
pub fn bce_from_score(score: f64, label: bool) -> f64 {
    if label {
        -score.ln()
    } else {
        -(1.0 - score).ln()
    }
}

/// Contrastive loss of one history against `n` slots, with its gradients
/// with respect to the history vector and each slot vector.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub loss: f64,
    pub d_history: Array1<f64>,
    pub d_slots: Vec<Array1<f64>>,
}

pub fn contrastive_loss(
    history_vec: ArrayView1<f64>,
    slot_vecs: &[ArrayView1<f64>],
    labels: &[bool],
) -> Result<LossTerms, SelectorError> {
    if slot_vecs.len() != labels.len() || slot_vecs.is_empty() {
        return Err(SelectorError::LengthMismatch {
            slots: slot_vecs.len(),
            labels: labels.len(),
        });
    }
    let mut loss = 0.0;
    let mut d_history = Array1::zeros(history_vec.len());
    let mut d_slots = Vec::with_capacity(slot_vecs.len());
    for (slot_vec, &label) in slot_vecs.iter().zip(labels) {
        let z = relevance_logit(history_vec, *slot_vec)?;
        loss += bce_from_logit(z, label);
        let dz = logistic(z) - if label { 1.0 } else { 0.0 };
        d_history.scaled_add(dz, slot_vec);
        d_slots.push(history_vec.mapv(|h| dz * h));
    }
    Ok(LossTerms {
        loss,
        d_history,
        d_slots,
    })
}

/// Loss of one batch (one history against several slots) and the gradient
/// of that loss with respect to every model tensor.
pub fn batch_loss_and_gradients(
    model: &EncoderModel,
    history_text: &str,
    slots: &[SlotId],
    labels: &[bool],
) -> Result<(f64, Weights), SelectorError> {
    let (history_vec, history_cache) = encode_with_cache(model, history_text, Segment::History);
    let encoded: Vec<_> = slots
        .iter()
        .map(|s| encode_with_cache(model, &s.encoder_text(), Segment::Slot))
        .collect();
    let views: Vec<_> = encoded.iter().map(|(v, _)| v.view()).collect();
    let terms = contrastive_loss(history_vec.view(), &views, labels)?;
    let mut grads = model.weights.zeros_like();
    backward_first_token(model, &history_cache, terms.d_history.view(), &mut grads);
    for ((_, cache), d_slot) in encoded.iter().zip(&terms.d_slots) {
        backward_first_token(model, cache, d_slot.view(), &mut grads);
    }
    Ok((terms.loss, grads))
}

/// Loss only, for finite-difference checks and evaluation.
pub fn batch_loss(
    model: &EncoderModel,
    history_text: &str,
    slots: &[SlotId],
    labels: &[bool],
) -> Result<f64, SelectorError> {
    if slots.len() != labels.len() || slots.is_empty() {
        return Err(SelectorError::LengthMismatch {
            slots: slots.len(),
            labels: labels.len(),
        });
    }
    let history_vec = encode(model, history_text, Segment::History);
    let mut loss = 0.0;
    for (slot, &label) in slots.iter().zip(labels) {
        let slot_vec = encode(model, &slot.encoder_text(), Segment::Slot);
        loss += bce_from_logit(relevance_logit(history_vec.view(), slot_vec.view())?, label);
    }
    Ok(loss)
}

/// One example per (turn, schema slot), in dialogue, turn, schema order.
pub fn build_training_set(corpus: &Corpus) -> Vec<TrainingExample> {
    let mut examples = Vec::with_capacity(corpus.turn_count() * corpus.schema.len());
    for dialogue in &corpus.dialogues {
        for (t, turn) in dialogue.turns.iter().enumerate() {
            let history_text = serialize_history(dialogue, t).expect("turn index in range");
            for slot in corpus.schema.slots() {
                examples.push(TrainingExample {
                    history_text: history_text.clone(),
                    slot: slot.clone(),
                    label: turn.gold_state.contains(slot),
                });
            }
        }
    }
    examples
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    /// Mean per-example loss accumulated during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-example loss of the final model over the whole training set.
    pub final_loss: f64,
}

struct Batch<'a> {
    history_text: &'a str,
    slots: Vec<SlotId>,
    labels: Vec<bool>,
}

fn batches(examples: &[TrainingExample], per_turn: usize) -> Vec<Batch<'_>> {
    examples
        .chunks(per_turn)
        .map(|chunk| Batch {
            history_text: &chunk[0].history_text,
            slots: chunk.iter().map(|e| e.slot.clone()).collect(),
            labels: chunk.iter().map(|e| e.label).collect(),
        })
        .collect()
}

/// Plain SGD, one step per turn (all schema slots of that turn form the
/// batch), turn order reshuffled every epoch from the seed. Steps whose
/// gradient norm exceeds `max_grad_norm` are shortened to that norm.
pub fn train_selector(corpus: &Corpus, config: &SelectorConfig) -> Result<TrainOutcome, SelectorError> {
    config.validate()?;
    let examples = build_training_set(corpus);
    if examples.is_empty() {
        return Err(SelectorError::EmptyTrainingSet);
    }
    let tokenizer = Tokenizer::from_corpus(corpus);
    let mut model = EncoderModel::init(config.encoder_config(), tokenizer)?;
    let batches = batches(&examples, corpus.schema.len());
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, &b) in order.iter().enumerate() {
            let batch = &batches[b];
            let (loss, grads) =
                batch_loss_and_gradients(&model, batch.history_text, &batch.slots, &batch.labels)?;
            if !loss.is_finite() {
                return Err(SelectorError::NonFiniteLoss { epoch, step, loss });
            }
            let mut step_size = config.learning_rate;
            if let Some(bound) = config.max_grad_norm {
                let norm = grads.l2_norm();
                if norm > bound {
                    step_size *= bound / norm;
                }
            }
            model.weights.scaled_add(-step_size, &grads);
            total += loss;
        }
        epoch_losses.push(total / examples.len() as f64);
    }

    let mut total = 0.0;
    for batch in &batches {
        total += batch_loss(&model, batch.history_text, &batch.slots, &batch.labels)?;
    }
    let final_loss = total / examples.len() as f64;
    if !final_loss.is_finite() {
        return Err(SelectorError::NonFiniteLoss {
            epoch: config.epochs,
            step: 0,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        final_loss,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Score of every schema slot, in schema order.
    pub scores: Vec<(SlotId, f64)>,
    /// Slots scoring strictly above the threshold, in schema order.
    pub selected: Vec<SlotId>,
}

impl SelectionResult {
    pub fn from_scores(scores: Vec<(SlotId, f64)>, delta: f64) -> Self {
        let selected = scores
            .iter()
            .filter(|(_, s)| *s > delta)
            .map(|(slot, _)| slot.clone())
            .collect();
        SelectionResult { scores, selected }
    }

    pub fn score(&self, slot: &SlotId) -> Option<f64> {
        self.scores.iter().find(|(s, _)| s == slot).map(|(_, v)| *v)
    }
}

/// Slot encodings computed once per model and schema.
pub struct SlotBank {
    slots: Vec<(SlotId, Array1<f64>)>,
}

impl SlotBank {
    pub fn new(model: &EncoderModel, schema: &Schema) -> Self {
        SlotBank {
            slots: schema
                .slots()
                .iter()
                .map(|s| (s.clone(), encode(model, &s.encoder_text(), Segment::Slot)))
                .collect(),
        }
    }

    pub fn scores(&self, model: &EncoderModel, history_text: &str) -> Vec<(SlotId, f64)> {
        let history = encode(model, history_text, Segment::History);
        self.slots
            .iter()
            .map(|(slot, v)| (slot.clone(), logistic(history.dot(v))))
            .collect()
    }

    pub fn select(
        &self,
        model: &EncoderModel,
        history_text: &str,
        delta: f64,
    ) -> Result<SelectionResult, SelectorError> {
        check_threshold(delta)?;
        Ok(SelectionResult::from_scores(self.scores(model, history_text), delta))
    }
}

pub fn select_slots(
    model: &EncoderModel,
    history_text: &str,
    schema: &Schema,
    delta: f64,
) -> Result<SelectionResult, SelectorError> {
    SlotBank::new(model, schema).select(model, history_text, delta)
}

/// Precision and recall of a predicted slot set. An empty prediction has
/// precision 1 when the gold set is also empty and 0 otherwise; recall is 1
/// whenever the gold set is empty.
pub fn selection_metrics(predicted: &[SlotId], gold: &[SlotId]) -> (f64, f64) {
    let hits = predicted.iter().filter(|s| gold.contains(s)).count();
    ratio_pair(hits, predicted.len(), gold.len())
}

fn ratio_pair(hits: usize, predicted: usize, gold: usize) -> (f64, f64) {
    let precision = if predicted == 0 {
        if gold == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        hits as f64 / predicted as f64
    };
    let recall = if gold == 0 {
        1.0
    } else {
        hits as f64 / gold as f64
    };
    (precision, recall)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Micro-averaged precision and recall over every turn of the corpus, one
/// row per threshold in grid order.
pub fn sweep_threshold(
    model: &EncoderModel,
    corpus: &Corpus,
    grid: &[f64],
) -> Result<Vec<SweepRow>, SelectorError> {
    for &delta in grid {
        check_threshold(delta)?;
    }
    let bank = SlotBank::new(model, &corpus.schema);
    let mut turns = Vec::with_capacity(corpus.turn_count());
    for dialogue in &corpus.dialogues {
        for (t, turn) in dialogue.turns.iter().enumerate() {
            let history = serialize_history(dialogue, t).expect("turn index in range");
            let gold = gold_relevant_slots(&turn.gold_state, &corpus.schema);
            turns.push((bank.scores(model, &history), gold));
        }
    }
    Ok(sweep_scored_turns(&turns, grid))
}

/// Scores of every schema slot for one turn, with the turn's gold slots.
pub type ScoredTurn = (Vec<(SlotId, f64)>, Vec<SlotId>);

/// Sweep over precomputed per-turn scores and gold slot sets.
pub fn sweep_scored_turns(turns: &[ScoredTurn], grid: &[f64]) -> Vec<SweepRow> {
    grid.iter()
        .map(|&delta| {
            let (mut hits, mut predicted, mut gold_total) = (0, 0, 0);
            for (scores, gold) in turns {
                for (slot, score) in scores {
                    if *score > delta {
                        predicted += 1;
                        if gold.contains(slot) {
                            hits += 1;
                        }
                    }
                }
                gold_total += gold.len();
            }
            let (precision, recall) = ratio_pair(hits, predicted, gold_total);
            SweepRow {
                delta,
                precision,
                recall,
            }
        })
        .collect()
}

/// The row with the highest precision; ties go to higher recall, then to the
/// earlier grid entry.
pub fn best_by_precision(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter().copied().fold(None, |best, row| match best {
        Some(b) if (b.precision, b.recall) >= (row.precision, row.recall) => Some(b),
        _ => Some(row),
    })
}

/// CSV with header `delta,precision,recall`; percentages to one decimal.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta,precision,recall\n");
    for row in rows {
        writeln!(
            out,
            "{},{:.1},{:.1}",
            row.delta,
            row.precision * 100.0,
            row.recall * 100.0
        )
        .unwrap();
    }
    out
}
