//! Stage two: filling template masks, rendering the summary, and inverting
//! the summary back into a dialogue state.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    gold_relevant_slots, serialize_history, Corpus, CorpusError, Dialogue, DialogueState,
    NONE_VALUE,
};
use crate::encoder::EncoderModel;
use crate::fusion::{
    assemble_prompt, attach_candidates, build_template, Ablation, FusionError,
    OutputTemplate, PromptBundle,
};
use crate::selector::{check_threshold, SelectorError, SlotBank};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeneratorError {
    #[error("fill has no value for mask {0}")]
    MissingMask(usize),
    #[error("fill has a value for mask {0}, which the template does not have")]
    UnexpectedMask(usize),
    #[error("fill value for mask {0} is empty")]
    EmptyValue(usize),
    #[error("summary {summary:?} does not match the template skeleton {template:?}")]
    SkeletonMismatch { summary: String, template: String },
}

/// Mask index to value. The `none` marker stands for "no value".
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Fill {
    pub values: BTreeMap<usize, String>,
}

impl Fill {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, mask: usize, value: impl Into<String>) {
        self.values.insert(mask, value.into());
    }

    pub fn get(&self, mask: usize) -> Option<&str> {
        self.values.get(&mask).map(String::as_str)
    }

    /// Checks that the keys are exactly the template's mask indices.
    pub fn validate(&self, template: &OutputTemplate) -> Result<(), GeneratorError> {
        for i in 0..template.mask_count() {
            match self.values.get(&i) {
                None => return Err(GeneratorError::MissingMask(i)),
                Some(v) if v.is_empty() => return Err(GeneratorError::EmptyValue(i)),
                Some(_) => {}
            }
        }
        if let Some(&extra) = self.values.keys().find(|&&k| k >= template.mask_count()) {
            return Err(GeneratorError::UnexpectedMask(extra));
        }
        Ok(())
    }

    /// The state this fill describes, with `none` entries dropped.
    pub fn to_state(&self, template: &OutputTemplate) -> DialogueState {
        template
            .mask_slots()
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| self.get(i).map(|v| (slot.clone(), v.to_string())))
            .collect()
    }
}

/// Anything that can fill the masks of a prompt.
pub trait Generator {
    fn fill(&self, bundle: &PromptBundle) -> Result<Fill, GeneratorError>;
}

/// Reference filler that copies candidate values out of the history.
///
/// For each mask it looks for whole-word occurrences of the mask's
/// candidates. If the template is visible and the word right before the mask
/// (the cue, e.g. `from` or `to`) occurs in the history, the first candidate
/// occurrence after the cue's last occurrence wins. Otherwise the occurrence
/// ending furthest right wins. Ties go to the longer value, then to the
/// earlier candidate.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExtractiveFiller;

#[derive(Clone, Copy, Debug)]
struct Occurrence {
    start: usize,
    end: usize,
    candidate: usize,
}

fn occurrences(history: &[&str], candidates: &[&str]) -> Vec<Occurrence> {
    let mut found = Vec::new();
    for (c, value) in candidates.iter().enumerate() {
        let words: Vec<&str> = value.split_whitespace().collect();
        if words.is_empty() || words.len() > history.len() {
            continue;
        }
        for start in 0..=history.len() - words.len() {
            if history[start..start + words.len()] == words[..] {
                found.push(Occurrence {
                    start,
                    end: start + words.len(),
                    candidate: c,
                });
            }
        }
    }
    found
}

fn pick<'a>(history: &[&str], candidates: &[&'a str], cue: Option<&str>) -> Option<&'a str> {
    let found = occurrences(history, candidates);
    let len = |o: &Occurrence| o.end - o.start;
    let after_cue = cue
        .and_then(|cue| history.iter().rposition(|w| *w == cue))
        .and_then(|c| {
            found
                .iter()
                .filter(|o| o.start > c)
                .min_by(|a, b| {
                    a.start
                        .cmp(&b.start)
                        .then(len(b).cmp(&len(a)))
                        .then(a.candidate.cmp(&b.candidate))
                })
                .copied()
        });
    let chosen = after_cue.or_else(|| {
        found
            .iter()
            .max_by(|a, b| {
                a.end
                    .cmp(&b.end)
                    .then(len(a).cmp(&len(b)))
                    .then(b.candidate.cmp(&a.candidate))
            })
            .copied()
    });
    chosen.map(|o| candidates[o.candidate])
}

impl Generator for ExtractiveFiller {
    fn fill(&self, bundle: &PromptBundle) -> Result<Fill, GeneratorError> {
        let history: Vec<String> = bundle
            .history
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        let history: Vec<&str> = history.iter().map(String::as_str).collect();
        let template = bundle.visible_template();
        let flat = bundle.flat_candidates();
        let mut fill = Fill::new();
        for i in 0..bundle.template.mask_count() {
            let candidates: Option<Vec<&str>> = match bundle.ablation {
                Ablation::Full => bundle
                    .anchored_candidates(i)
                    .map(|v| v.iter().map(String::as_str).collect()),
                Ablation::NoTemplate => Some(flat.clone()),
                Ablation::NoCandidates | Ablation::NoPrompt => None,
            };
            let cue = template.and_then(|t| t.cue_word(i)).map(str::to_lowercase);
            let value = candidates
                .and_then(|c| pick(&history, &c, cue.as_deref()))
                .unwrap_or(NONE_VALUE);
            fill.set(i, value);
        }
        Ok(fill)
    }
}

/// Fills every mask from a known gold state. Used as a harness self-test.
#[derive(Clone, Debug)]
pub struct GoldOracle {
    pub state: DialogueState,
}

impl Generator for GoldOracle {
    fn fill(&self, bundle: &PromptBundle) -> Result<Fill, GeneratorError> {
        let mut fill = Fill::new();
        for (i, slot) in bundle.template.mask_slots().iter().enumerate() {
            fill.set(i, self.state.get(slot).unwrap_or(NONE_VALUE));
        }
        Ok(fill)
    }
}

/// Substitutes each mask marker with its fill value.
pub fn render_summary(template: &OutputTemplate, fill: &Fill) -> Result<String, GeneratorError> {
    fill.validate(template)?;
    let literals = template.literals();
    let mut out = literals[0].clone();
    for (i, lit) in literals[1..].iter().enumerate() {
        out.push_str(fill.get(i).expect("validated"));
        out.push_str(lit);
    }
    Ok(out)
}

fn split_values<'s>(rest: &'s str, literals: &[String], out: &mut Vec<&'s str>) -> bool {
    let Some((next, tail)) = literals.split_first() else {
        return rest.is_empty();
    };
    if tail.is_empty() {
        // Last literal anchors the end of the summary.
        return match rest.strip_suffix(next.as_str()) {
            Some(value) if !value.is_empty() => {
                out.push(value);
                true
            }
            _ => false,
        };
    }
    for (pos, _) in rest.match_indices(next.as_str()) {
        if pos == 0 {
            continue;
        }
        out.push(&rest[..pos]);
        if split_values(&rest[pos + next.len()..], tail, out) {
            return true;
        }
        out.pop();
    }
    false
}

/// Recovers the state from a summary rendered over `template`. Mask values
/// are matched against the literal skeleton left to right, taking the
/// earliest literal match that still lets the remainder match. `none`
/// values are dropped.
pub fn invert_template(
    template: &OutputTemplate,
    summary: &str,
) -> Result<DialogueState, GeneratorError> {
    let mismatch = || GeneratorError::SkeletonMismatch {
        summary: summary.to_string(),
        template: template.text().to_string(),
    };
    let literals = template.literals();
    let rest = summary.strip_prefix(literals[0].as_str()).ok_or_else(mismatch)?;
    let mut values = Vec::with_capacity(template.mask_count());
    if template.mask_count() == 0 {
        return if rest.is_empty() {
            Ok(DialogueState::new())
        } else {
            Err(mismatch())
        };
    }
    if !split_values(rest, &literals[1..], &mut values) {
        return Err(mismatch());
    }
    let mut fill = Fill::new();
    for (i, v) in values.into_iter().enumerate() {
        fill.set(i, v);
    }
    Ok(fill.to_state(template))
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[history] {0}")]
    History(#[from] CorpusError),
    #[error("[selection] {0}")]
    Selection(#[from] SelectorError),
    #[error("[template] {0}")]
    Template(#[from] FusionError),
    #[error("[generation] {0}")]
    Generation(GeneratorError),
    #[error("[inversion] {0}")]
    Inversion(GeneratorError),
}

/// Where stage one's slot set comes from.
pub enum SlotSource<'a> {
    Encoder {
        model: &'a EncoderModel,
        bank: SlotBank,
        delta: f64,
    },
    /// The turn's gold slots; isolates stage two.
    Gold,
}

impl<'a> SlotSource<'a> {
    pub fn encoder(model: &'a EncoderModel, corpus: &Corpus, delta: f64) -> Result<Self, SelectorError> {
        check_threshold(delta)?;
        Ok(SlotSource::Encoder {
            model,
            bank: SlotBank::new(model, &corpus.schema),
            delta,
        })
    }
}

/// Intermediate artifacts of one prediction.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub state: DialogueState,
    pub prompt: PromptBundle,
    pub summary: String,
}

pub struct Pipeline<'a> {
    pub corpus: &'a Corpus,
    pub source: SlotSource<'a>,
    pub ablation: Ablation,
}

impl Pipeline<'_> {
    /// history → selection → template → candidates → prompt → fill → summary → state
    pub fn predict(
        &self,
        generator: &dyn Generator,
        dialogue: &Dialogue,
        turn_index: usize,
    ) -> Result<Prediction, PipelineError> {
        let history = serialize_history(dialogue, turn_index)?;
        let selected = match &self.source {
            SlotSource::Encoder { model, bank, delta } => bank.select(model, &history, *delta)?.selected,
            SlotSource::Gold => gold_relevant_slots(
                &dialogue.turns[turn_index].gold_state,
                &self.corpus.schema,
            ),
        };
        let template = build_template(&selected, &self.corpus.schema, &self.corpus.templates)?;
        let candidates = attach_candidates(&template, &self.corpus.ontology)?;
        let prompt = assemble_prompt(&history, template, candidates, self.ablation);
        let fill = generator.fill(&prompt).map_err(PipelineError::Generation)?;
        let summary = render_summary(&prompt.template, &fill).map_err(PipelineError::Generation)?;
        let state = invert_template(&prompt.template, &summary).map_err(PipelineError::Inversion)?;
        Ok(Prediction {
            state,
            prompt,
            summary,
        })
    }

    pub fn predict_state(
        &self,
        generator: &dyn Generator,
        dialogue: &Dialogue,
        turn_index: usize,
    ) -> Result<DialogueState, PipelineError> {
        self.predict(generator, dialogue, turn_index).map(|p| p.state)
    }

    /// Predicts every turn of every dialogue, in corpus order.
    pub fn predict_corpus(&self, kind: GeneratorKind) -> Result<Vec<PredictionRecord>, PipelineError> {
        let mut records = Vec::with_capacity(self.corpus.turn_count());
        for dialogue in &self.corpus.dialogues {
            for (t, turn) in dialogue.turns.iter().enumerate() {
                let state = match kind {
                    GeneratorKind::Extractive => self.predict_state(&ExtractiveFiller, dialogue, t)?,
                    GeneratorKind::GoldOracle => {
                        let oracle = GoldOracle {
                            state: turn.gold_state.clone(),
                        };
                        self.predict_state(&oracle, dialogue, t)?
                    }
                };
                records.push(PredictionRecord {
                    dialogue_id: dialogue.id.clone(),
                    turn: t,
                    state: state.to_string_map(),
                });
            }
        }
        Ok(records)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Extractive,
    GoldOracle,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Extractive => "extractive",
            GeneratorKind::GoldOracle => "gold-oracle",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "extractive" => Ok(GeneratorKind::Extractive),
            "gold-oracle" => Ok(GeneratorKind::GoldOracle),
            _ => Err(format!("unknown generator {s:?}; expected extractive or gold-oracle")),
        }
    }
}

/// One entry of a prediction dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub state: BTreeMap<String, String>,
}

pub fn dump_to_json(records: &[PredictionRecord]) -> String {
    let mut text = serde_json::to_string_pretty(records).expect("dump serialization cannot fail");
    text.push('\n');
    text
}

pub fn write_dump(records: &[PredictionRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, dump_to_json(records))
}

pub fn dump_from_json(text: &str) -> Result<Vec<PredictionRecord>, serde_json::Error> {
    serde_json::from_str(text)
}
