//! Stage-two prompt assembly.
//!
//! A prompt has up to three sections joined by `" || "`:
//!
//! ```text
//! [User] i need a taxi || The user is looking for a taxi from [0] to [1]. || [0]: cambridge|ely [1]: london|ely
//! ```
//!
//! The output template is built from the selected slots, grouped by domain.
//! Each domain contributes its prefix sentence followed by the phrase
//! templates of its selected slots, with every value hole replaced by the
//! next mask marker.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{Ontology, Schema, SlotId, TemplateCatalog};

pub const SECTION_SEPARATOR: &str = " || ";
pub const VALUE_SEPARATOR: &str = "|";
pub const EMPTY_SELECTION_SENTENCE: &str = "The user provided no information.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("no phrase template for selected slot {0}")]
    MissingPhrase(SlotId),
    #[error("no prefix sentence for domain {0:?}")]
    MissingPrefix(String),
    #[error("slot {0} is not in the schema")]
    UnknownSlot(SlotId),
    #[error("slot {0} has no ontology entry")]
    MissingCandidates(SlotId),
}

pub fn mask_marker(index: usize) -> String {
    format!("[{index}]")
}

/// A summary sentence with numbered masks. `literals` holds the text around
/// the masks, so `literals.len() == mask_slots.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputTemplate {
    text: String,
    literals: Vec<String>,
    mask_slots: Vec<SlotId>,
}

impl OutputTemplate {
    fn from_parts(literals: Vec<String>, mask_slots: Vec<SlotId>) -> Self {
        debug_assert_eq!(literals.len(), mask_slots.len() + 1);
        let mut text = literals[0].clone();
        for (i, lit) in literals[1..].iter().enumerate() {
            text.push_str(&mask_marker(i));
            text.push_str(lit);
        }
        OutputTemplate {
            text,
            literals,
            mask_slots,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn mask_slots(&self) -> &[SlotId] {
        &self.mask_slots
    }

    pub fn mask_count(&self) -> usize {
        self.mask_slots.len()
    }

    /// Literal text before mask 0, between consecutive masks, and after the
    /// last mask.
    pub fn literals(&self) -> &[String] {
        &self.literals
    }

    /// Last word of the literal text preceding mask `index`, e.g. `from` in
    /// `... a taxi from [0] ...`.
    pub fn cue_word(&self, index: usize) -> Option<&str> {
        self.literals
            .get(index)?
            .split_whitespace()
            .next_back()
            .filter(|w| w.chars().any(char::is_alphanumeric))
    }
}

pub fn build_template(
    selected: &[SlotId],
    schema: &Schema,
    catalog: &TemplateCatalog,
) -> Result<OutputTemplate, FusionError> {
    let mut slots: Vec<SlotId> = Vec::with_capacity(selected.len());
    for slot in selected {
        if !schema.contains(slot) {
            return Err(FusionError::UnknownSlot(slot.clone()));
        }
        if !slots.contains(slot) {
            slots.push(slot.clone());
        }
    }
    schema.sort(&mut slots);
    if slots.is_empty() {
        return Ok(OutputTemplate::from_parts(
            vec![EMPTY_SELECTION_SENTENCE.to_string()],
            Vec::new(),
        ));
    }

    let mut literals = Vec::with_capacity(slots.len() + 1);
    let mut mask_slots = Vec::with_capacity(slots.len());
    let mut current = String::new();
    for domain in schema.domain_order() {
        let in_domain: Vec<&SlotId> = slots.iter().filter(|s| s.domain() == domain).collect();
        if in_domain.is_empty() {
            continue;
        }
        let prefix = catalog
            .prefix(domain)
            .ok_or_else(|| FusionError::MissingPrefix(domain.clone()))?;
        if !mask_slots.is_empty() || !current.is_empty() {
            current.push(' ');
        }
        current.push_str(prefix);
        for slot in in_domain {
            let phrase = catalog
                .phrase(slot)
                .ok_or_else(|| FusionError::MissingPhrase(slot.clone()))?;
            current.push(' ');
            current.push_str(&phrase.before);
            literals.push(std::mem::take(&mut current));
            mask_slots.push(slot.clone());
            current.push_str(&phrase.after);
        }
        current.push('.');
    }
    literals.push(current);
    Ok(OutputTemplate::from_parts(literals, mask_slots))
}

/// Candidate values for each mask, in mask order, preserving ontology order.
pub fn attach_candidates(
    template: &OutputTemplate,
    ontology: &Ontology,
) -> Result<Vec<(usize, Vec<String>)>, FusionError> {
    template
        .mask_slots()
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            ontology
                .candidates(slot)
                .map(|values| (i, values.to_vec()))
                .ok_or_else(|| FusionError::MissingCandidates(slot.clone()))
        })
        .collect()
}

/// Which prompt sections are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// History, template and candidates.
    Full,
    /// History only.
    NoPrompt,
    /// History and a flat, unanchored candidate list.
    NoTemplate,
    /// History and template.
    NoCandidates,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoPrompt,
        Ablation::NoTemplate,
        Ablation::NoCandidates,
    ];

    pub fn include_template(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoCandidates)
    }

    pub fn include_candidates(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoTemplate)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPrompt => "-prompt",
            Ablation::NoTemplate => "-OT",
            Ablation::NoCandidates => "-CV",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown ablation {s:?}; expected full, -prompt, -OT or -CV"))
    }
}

/// Everything a stage-two generator receives. The template and candidates
/// are always carried so the pipeline can invert the output, but a generator
/// may only look at what the ablation leaves visible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptBundle {
    pub history: String,
    pub template: OutputTemplate,
    pub candidates: Vec<(usize, Vec<String>)>,
    pub ablation: Ablation,
}

impl PromptBundle {
    pub fn visible_template(&self) -> Option<&OutputTemplate> {
        self.ablation.include_template().then_some(&self.template)
    }

    /// Candidates anchored to mask `index`, when the prompt shows them so.
    pub fn anchored_candidates(&self, index: usize) -> Option<&[String]> {
        if self.ablation == Ablation::Full {
            self.candidates
                .iter()
                .find(|(i, _)| *i == index)
                .map(|(_, v)| v.as_slice())
        } else {
            None
        }
    }

    /// The flat candidate list shown when the template is removed: every
    /// candidate once, in mask then ontology order.
    pub fn flat_candidates(&self) -> Vec<&str> {
        let mut flat: Vec<&str> = Vec::new();
        for (_, values) in &self.candidates {
            for v in values {
                if !flat.contains(&v.as_str()) {
                    flat.push(v);
                }
            }
        }
        flat
    }

    /// Canonical wire form of the prompt.
    pub fn serialize(&self) -> String {
        let mut sections = vec![self.history.clone()];
        if self.ablation.include_template() {
            sections.push(self.template.text().to_string());
            if self.ablation.include_candidates() && !self.candidates.is_empty() {
                let entries: Vec<String> = self
                    .candidates
                    .iter()
                    .map(|(i, values)| format!("{}: {}", mask_marker(*i), values.join(VALUE_SEPARATOR)))
                    .collect();
                sections.push(entries.join(" "));
            }
        } else if self.ablation.include_candidates() {
            let flat = self.flat_candidates();
            if !flat.is_empty() {
                sections.push(format!("values: {}", flat.join(VALUE_SEPARATOR)));
            }
        }
        sections.join(SECTION_SEPARATOR)
    }
}

pub fn assemble_prompt(
    history: &str,
    template: OutputTemplate,
    candidates: Vec<(usize, Vec<String>)>,
    ablation: Ablation,
) -> PromptBundle {
    PromptBundle {
        history: history.to_string(),
        template,
        candidates,
        ablation,
    }
}
