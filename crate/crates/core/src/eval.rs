//! Joint goal accuracy and slot accuracy over prediction dumps.
//!
//! Values are compared after lowercasing and trimming. Slot accuracy pools
//! every (turn, slot) cell: per slot, the fraction of turns where predicted
//! and gold agree (both absent counts as agreement); SA is the plain mean of
//! those per-slot accuracies over all schema slots.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{Corpus, DialogueState, Schema, SlotId};
use crate::generator::PredictionRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
    #[error("prediction for unknown dialogue {0:?}")]
    UnknownDialogue(String),
    #[error("prediction for dialogue {dialogue:?} turn {turn}, which does not exist")]
    UnknownTurn { dialogue: String, turn: usize },
    #[error("prediction for dialogue {dialogue:?} turn {turn} uses slot {slot:?}, which is not in the schema")]
    UnknownSlot {
        dialogue: String,
        turn: usize,
        slot: String,
    },
    #[error("dialogue {dialogue:?} turn {turn} is predicted twice")]
    Duplicate { dialogue: String, turn: usize },
    #[error("no prediction for dialogue {dialogue:?} turn {turn}")]
    Missing { dialogue: String, turn: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub gold: DialogueState,
    pub predicted: DialogueState,
}

fn normalize(value: &str) -> String {
    value.trim().to_lowercase()
}

fn same_value(a: Option<&str>, b: Option<&str>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => normalize(a) == normalize(b),
        _ => false,
    }
}

fn exact_match(gold: &DialogueState, predicted: &DialogueState) -> bool {
    gold.len() == predicted.len()
        && gold
            .iter()
            .all(|(slot, value)| same_value(Some(value), predicted.get(slot)))
}

/// Fraction of records whose predicted state equals the gold state exactly.
pub fn joint_goal_accuracy(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = records
        .iter()
        .filter(|r| exact_match(&r.gold, &r.predicted))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean per-slot accuracy over the schema, and the per-slot accuracies in
/// schema order.
pub fn slot_accuracy(
    records: &[EvalRecord],
    schema: &Schema,
) -> Result<(f64, Vec<(SlotId, f64)>), EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_slot: Vec<(SlotId, f64)> = schema
        .slots()
        .iter()
        .map(|slot| {
            let correct = records
                .iter()
                .filter(|r| same_value(r.gold.get(slot), r.predicted.get(slot)))
                .count();
            (slot.clone(), correct as f64 / records.len() as f64)
        })
        .collect();
    let sa = per_slot.iter().map(|(_, a)| a).sum::<f64>() / per_slot.len() as f64;
    Ok((sa, per_slot))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub jga: f64,
    pub sa: f64,
    pub per_slot: Vec<(SlotId, f64)>,
    pub turns: usize,
}

pub fn evaluate(records: &[EvalRecord], schema: &Schema) -> Result<EvalReport, EvalError> {
    let jga = joint_goal_accuracy(records)?;
    let (sa, per_slot) = slot_accuracy(records, schema)?;
    Ok(EvalReport {
        jga,
        sa,
        per_slot,
        turns: records.len(),
    })
}

/// Pairs a prediction dump with the corpus gold states. The dump must cover
/// every turn exactly once and only use schema slots.
pub fn records_from_dump(
    corpus: &Corpus,
    dump: &[PredictionRecord],
) -> Result<Vec<EvalRecord>, EvalError> {
    if dump.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut by_key: HashMap<(&str, usize), &PredictionRecord> = HashMap::with_capacity(dump.len());
    for rec in dump {
        let dialogue = corpus
            .dialogue(&rec.dialogue_id)
            .ok_or_else(|| EvalError::UnknownDialogue(rec.dialogue_id.clone()))?;
        if rec.turn >= dialogue.turns.len() {
            return Err(EvalError::UnknownTurn {
                dialogue: rec.dialogue_id.clone(),
                turn: rec.turn,
            });
        }
        if by_key.insert((&rec.dialogue_id, rec.turn), rec).is_some() {
            return Err(EvalError::Duplicate {
                dialogue: rec.dialogue_id.clone(),
                turn: rec.turn,
            });
        }
    }
    let mut records = Vec::with_capacity(dump.len());
    for dialogue in &corpus.dialogues {
        for (t, turn) in dialogue.turns.iter().enumerate() {
            let rec = by_key
                .get(&(dialogue.id.as_str(), t))
                .ok_or_else(|| EvalError::Missing {
                    dialogue: dialogue.id.clone(),
                    turn: t,
                })?;
            let mut predicted = DialogueState::new();
            for (key, value) in &rec.state {
                let slot = corpus.schema.lookup(&key.to_lowercase()).ok_or_else(|| {
                    EvalError::UnknownSlot {
                        dialogue: dialogue.id.clone(),
                        turn: t,
                        slot: key.clone(),
                    }
                })?;
                predicted.set(slot.clone(), value);
            }
            records.push(EvalRecord {
                dialogue_id: dialogue.id.clone(),
                turn: t,
                gold: turn.gold_state.clone(),
                predicted,
            });
        }
    }
    Ok(records)
}

pub fn percent(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

/// `metric,value` CSV; JGA, SA and per-slot accuracies as percentages.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    writeln!(out, "JGA,{}", percent(report.jga)).unwrap();
    writeln!(out, "SA,{}", percent(report.sa)).unwrap();
    for (slot, acc) in &report.per_slot {
        writeln!(out, "acc:{slot},{}", percent(*acc)).unwrap();
    }
    writeln!(out, "turns,{}", report.turns).unwrap();
    out
}

pub fn report_summary(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "Evaluated turns: {}", report.turns).unwrap();
    writeln!(out, "Joint goal accuracy: {}%", percent(report.jga)).unwrap();
    writeln!(out, "Slot accuracy:       {}%", percent(report.sa)).unwrap();
    writeln!(
        out,
        "(SA pools all turns per slot, absent == absent counts as correct, then averages over {} schema slots)",
        report.per_slot.len()
    )
    .unwrap();
    writeln!(out).unwrap();
    let width = report
        .per_slot
        .iter()
        .map(|(s, _)| s.to_string().len())
        .max()
        .unwrap_or(0);
    for (slot, acc) in &report.per_slot {
        writeln!(out, "  {:<width$}  {:>5}%", slot.to_string(), percent(*acc)).unwrap();
    }
    out
}

/// Writes `report.csv` and `report.txt` into `dir`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), EvalError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv = dir.join("report.csv");
    let txt = dir.join("report.txt");
    fs::write(&csv, report_csv(report)).map_err(io(&csv))?;
    fs::write(&txt, report_summary(report)).map_err(io(&txt))?;
    Ok((csv, txt))
}
