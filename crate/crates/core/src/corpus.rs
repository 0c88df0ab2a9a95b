//! Dialogue data model and the single-file dataset format.
//!
//! A dataset file bundles the schema, the ontology, the template catalog and
//! the dialogues themselves:
//!
//! ```text
//! {
//!   "schema":    [{"domain": "taxi", "slot": "departure"}, ...],
//!   "ontology":  {"taxi-departure": ["cambridge", "ely"], ...},
//!   "templates": {"prefixes": {"taxi": "The user is looking for a taxi"},
//!                 "phrases":  {"taxi-departure": "from <v>"}},
//!   "dialogues": [{"id": "d1", "turns": [{"sys": "", "user": "...", "state": {...}}]}]
//! }
//! ```
//!
//! Dialogue text, slot names and values are lowercased at load time. Template
//! text keeps its casing since it is rendered verbatim into summaries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hole marker inside a phrase template.
pub const VALUE_HOLE: &str = "<v>";

/// Reserved value meaning "no value"; never stored in a state.
pub const NONE_VALUE: &str = "none";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dialogue {dialogue:?} turn {turn}: slot {slot:?} is not declared in the schema")]
    UndeclaredSlot {
        dialogue: String,
        turn: usize,
        slot: String,
    },
    #[error("dialogue {dialogue:?} turn {turn}: {message}")]
    InvalidTurn {
        dialogue: String,
        turn: usize,
        message: String,
    },
    #[error("invalid slot identifier {0:?}")]
    InvalidSlotId(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("turn index {index} out of range for dialogue with {len} turns")]
    TurnOutOfRange { index: usize, len: usize },
}

impl CorpusError {
    /// Whether the error is about the file itself (missing, unreadable,
    /// malformed) rather than about the data contract.
    pub fn is_input_error(&self) -> bool {
        matches!(self, CorpusError::Io { .. } | CorpusError::Parse { .. })
    }
}

impl From<serde_json::Error> for CorpusError {
    fn from(err: serde_json::Error) -> Self {
        CorpusError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// A `domain-slot` identifier such as `taxi-departure`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId {
    domain: String,
    slot: String,
}

fn valid_name_part(part: &str) -> bool {
    !part.is_empty()
        && part.trim() == part
        && !part.contains('-')
        && !part.contains('|')
        && !part.contains('\n')
        && part.chars().all(|c| !c.is_uppercase())
}

impl SlotId {
    pub fn new(domain: &str, slot: &str) -> Result<Self, CorpusError> {
        if !valid_name_part(domain) || !valid_name_part(slot) {
            return Err(CorpusError::InvalidSlotId(format!("{domain}-{slot}")));
        }
        Ok(SlotId {
            domain: domain.to_string(),
            slot: slot.to_string(),
        })
    }

    /// Parses the rendered `domain-slot` form.
    pub fn parse(rendered: &str) -> Result<Self, CorpusError> {
        match rendered.split_once('-') {
            Some((domain, slot)) => SlotId::new(domain, slot),
            None => Err(CorpusError::InvalidSlotId(rendered.to_string())),
        }
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn slot(&self) -> &str {
        &self.slot
    }

    /// Text fed to the encoder for this slot: `taxi departure`.
    pub fn encoder_text(&self) -> String {
        format!("{} {}", self.domain, self.slot)
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

/// Slot to value map. Absent keys mean "no value".
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DialogueState {
    entries: BTreeMap<SlotId, String>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a value. Empty strings and the reserved `none` marker remove the
    /// slot instead of being stored.
    pub fn set(&mut self, slot: SlotId, value: &str) {
        if value.is_empty() || value == NONE_VALUE {
            self.entries.remove(&slot);
        } else {
            self.entries.insert(slot, value.to_string());
        }
    }

    pub fn get(&self, slot: &SlotId) -> Option<&str> {
        self.entries.get(slot).map(String::as_str)
    }

    pub fn contains(&self, slot: &SlotId) -> bool {
        self.entries.contains_key(slot)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotId, &str)> {
        self.entries.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn slots(&self) -> impl Iterator<Item = &SlotId> {
        self.entries.keys()
    }

    /// String-keyed view used by the JSON formats.
    pub fn to_string_map(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }
}

impl FromIterator<(SlotId, String)> for DialogueState {
    fn from_iter<I: IntoIterator<Item = (SlotId, String)>>(iter: I) -> Self {
        let mut state = DialogueState::new();
        for (slot, value) in iter {
            state.set(slot, &value);
        }
        state
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub system_utterance: String,
    pub user_utterance: String,
    /// Cumulative state after this turn.
    pub gold_state: DialogueState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Ordered slot declarations. Declaration order is the canonical slot order
/// for mask numbering and tie-breaking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    slots: Vec<SlotId>,
    index: HashMap<SlotId, usize>,
    domain_order: Vec<String>,
}

impl Schema {
    pub fn new(slots: Vec<SlotId>) -> Result<Self, CorpusError> {
        if slots.is_empty() {
            return Err(CorpusError::Schema("schema declares no slots".into()));
        }
        let mut index = HashMap::with_capacity(slots.len());
        let mut domain_order: Vec<String> = Vec::new();
        for (i, slot) in slots.iter().enumerate() {
            if index.insert(slot.clone(), i).is_some() {
                return Err(CorpusError::Schema(format!("slot {slot} declared twice")));
            }
            if !domain_order.iter().any(|d| d == slot.domain()) {
                domain_order.push(slot.domain().to_string());
            }
        }
        Ok(Schema {
            slots,
            index,
            domain_order,
        })
    }

    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn domain_order(&self) -> &[String] {
        &self.domain_order
    }

    pub fn index_of(&self, slot: &SlotId) -> Option<usize> {
        self.index.get(slot).copied()
    }

    pub fn contains(&self, slot: &SlotId) -> bool {
        self.index.contains_key(slot)
    }

    /// Sorts slots into schema order. Unknown slots sort last.
    pub fn sort(&self, slots: &mut [SlotId]) {
        slots.sort_by_key(|s| self.index_of(s).unwrap_or(usize::MAX));
    }

    pub fn lookup(&self, rendered: &str) -> Option<&SlotId> {
        let id = SlotId::parse(rendered).ok()?;
        self.index.get(&id).map(|&i| &self.slots[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ontology {
    candidates: BTreeMap<SlotId, Vec<String>>,
}

impl Ontology {
    pub fn new(candidates: BTreeMap<SlotId, Vec<String>>) -> Self {
        Ontology { candidates }
    }

    pub fn candidates(&self, slot: &SlotId) -> Option<&[String]> {
        self.candidates.get(slot).map(Vec::as_slice)
    }
}

/// A phrase pattern split around its single value hole.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhraseTemplate {
    pub before: String,
    pub after: String,
}

impl PhraseTemplate {
    pub fn parse(pattern: &str) -> Result<Self, CorpusError> {
        let mut parts = pattern.split(VALUE_HOLE);
        let (Some(before), Some(after), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CorpusError::Schema(format!(
                "phrase template {pattern:?} must contain exactly one {VALUE_HOLE} hole"
            )));
        };
        Ok(PhraseTemplate {
            before: before.to_string(),
            after: after.to_string(),
        })
    }

    pub fn pattern(&self) -> String {
        format!("{}{VALUE_HOLE}{}", self.before, self.after)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemplateCatalog {
    phrases: BTreeMap<SlotId, PhraseTemplate>,
    prefixes: BTreeMap<String, String>,
}

impl TemplateCatalog {
    pub fn new(
        phrases: BTreeMap<SlotId, PhraseTemplate>,
        prefixes: BTreeMap<String, String>,
    ) -> Self {
        TemplateCatalog { phrases, prefixes }
    }

    pub fn phrase(&self, slot: &SlotId) -> Option<&PhraseTemplate> {
        self.phrases.get(slot)
    }

    pub fn prefix(&self, domain: &str) -> Option<&str> {
        self.prefixes.get(domain).map(String::as_str)
    }
}

/// A loaded dataset. Immutable once validated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub schema: Schema,
    pub ontology: Ontology,
    pub templates: TemplateCatalog,
}

// On-disk representation. Struct fields are declared in alphabetical order
// so serialization is already key-sorted.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    dialogues: Vec<RawDialogue>,
    ontology: BTreeMap<String, Vec<String>>,
    schema: Vec<RawSlot>,
    templates: RawTemplates,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    domain: String,
    slot: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    phrases: BTreeMap<String, String>,
    prefixes: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    state: BTreeMap<String, String>,
    sys: String,
    user: String,
}

/// Characters reserved by the prompt wire format.
fn check_text(what: &str, text: &str) -> Result<(), String> {
    if text.contains('|') {
        return Err(format!("{what} {text:?} contains the reserved '|' character"));
    }
    if text.contains('\n') || text.contains('\r') {
        return Err(format!("{what} {text:?} contains a line break"));
    }
    Ok(())
}

fn check_template_text(what: &str, text: &str) -> Result<(), CorpusError> {
    check_text(what, text).map_err(CorpusError::Schema)?;
    if text.contains('[') || text.contains(']') {
        return Err(CorpusError::Schema(format!(
            "{what} {text:?} contains '[' or ']', which are reserved for mask markers"
        )));
    }
    Ok(())
}

impl Corpus {
    pub fn from_json_str(text: &str) -> Result<Self, CorpusError> {
        let raw: RawCorpus = serde_json::from_str(text)?;
        Corpus::from_raw(raw)
    }

    fn from_raw(raw: RawCorpus) -> Result<Self, CorpusError> {
        let slots = raw
            .schema
            .iter()
            .map(|s| SlotId::new(&s.domain.to_lowercase(), &s.slot.to_lowercase()))
            .collect::<Result<Vec<_>, _>>()?;
        let schema = Schema::new(slots)?;

        let mut candidates = BTreeMap::new();
        for (key, values) in &raw.ontology {
            let slot = schema.lookup(&key.to_lowercase()).cloned().ok_or_else(|| {
                CorpusError::Schema(format!("ontology entry for undeclared slot {key:?}"))
            })?;
            let mut seen = HashSet::new();
            let mut list = Vec::with_capacity(values.len());
            for value in values {
                let value = value.to_lowercase();
                if value.trim().is_empty() || value == NONE_VALUE {
                    return Err(CorpusError::Schema(format!(
                        "ontology for {slot} contains the invalid value {value:?}"
                    )));
                }
                check_text("ontology value", &value).map_err(CorpusError::Schema)?;
                if !seen.insert(value.clone()) {
                    return Err(CorpusError::Schema(format!(
                        "ontology for {slot} lists {value:?} twice"
                    )));
                }
                list.push(value);
            }
            if candidates.insert(slot.clone(), list).is_some() {
                return Err(CorpusError::Schema(format!("ontology lists {slot} twice")));
            }
        }
        if let Some(missing) = schema.slots().iter().find(|s| !candidates.contains_key(*s)) {
            return Err(CorpusError::Schema(format!("ontology has no entry for {missing}")));
        }

        let mut phrases = BTreeMap::new();
        for (key, pattern) in &raw.templates.phrases {
            let slot = schema.lookup(&key.to_lowercase()).cloned().ok_or_else(|| {
                CorpusError::Schema(format!("phrase template for undeclared slot {key:?}"))
            })?;
            check_template_text("phrase template", pattern)?;
            if phrases.insert(slot, PhraseTemplate::parse(pattern)?).is_some() {
                return Err(CorpusError::Schema(format!("phrase template for {key:?} given twice")));
            }
        }
        if let Some(missing) = schema.slots().iter().find(|s| !phrases.contains_key(*s)) {
            return Err(CorpusError::Schema(format!("no phrase template for {missing}")));
        }
        let mut prefixes = BTreeMap::new();
        for (domain, sentence) in &raw.templates.prefixes {
            check_template_text("prefix sentence", sentence)?;
            if sentence.contains(VALUE_HOLE) {
                return Err(CorpusError::Schema(format!(
                    "prefix sentence for {domain:?} must not contain a {VALUE_HOLE} hole"
                )));
            }
            prefixes.insert(domain.to_lowercase(), sentence.clone());
        }
        if let Some(missing) = schema.domain_order().iter().find(|d| !prefixes.contains_key(*d)) {
            return Err(CorpusError::Schema(format!("no prefix sentence for domain {missing:?}")));
        }

        let mut ids = HashSet::new();
        let mut dialogues = Vec::with_capacity(raw.dialogues.len());
        for raw_dialogue in raw.dialogues {
            let id = raw_dialogue.id;
            if !ids.insert(id.clone()) {
                return Err(CorpusError::Schema(format!("dialogue id {id:?} is not unique")));
            }
            if raw_dialogue.turns.is_empty() {
                return Err(CorpusError::Schema(format!("dialogue {id:?} has no turns")));
            }
            let mut turns = Vec::with_capacity(raw_dialogue.turns.len());
            for (t, raw_turn) in raw_dialogue.turns.into_iter().enumerate() {
                let invalid = |message: String| CorpusError::InvalidTurn {
                    dialogue: id.clone(),
                    turn: t,
                    message,
                };
                let system_utterance = raw_turn.sys.to_lowercase();
                let user_utterance = raw_turn.user.to_lowercase();
                if user_utterance.trim().is_empty() {
                    return Err(invalid("user utterance is empty".into()));
                }
                check_text("system utterance", &system_utterance).map_err(invalid)?;
                check_text("user utterance", &user_utterance).map_err(invalid)?;
                let mut gold_state = DialogueState::new();
                for (key, value) in raw_turn.state {
                    let key = key.to_lowercase();
                    let slot = schema.lookup(&key).cloned().ok_or_else(|| {
                        CorpusError::UndeclaredSlot {
                            dialogue: id.clone(),
                            turn: t,
                            slot: key.clone(),
                        }
                    })?;
                    let value = value.to_lowercase();
                    if value.trim().is_empty() || value == NONE_VALUE {
                        return Err(invalid(format!("slot {slot} has the empty value {value:?}")));
                    }
                    check_text("state value", &value).map_err(invalid)?;
                    gold_state.set(slot, &value);
                }
                turns.push(Turn {
                    system_utterance,
                    user_utterance,
                    gold_state,
                });
            }
            dialogues.push(Dialogue { id, turns });
        }

        Ok(Corpus {
            dialogues,
            schema,
            ontology: Ontology::new(candidates),
            templates: TemplateCatalog::new(phrases, prefixes),
        })
    }

    fn to_raw(&self) -> RawCorpus {
        RawCorpus {
            dialogues: self
                .dialogues
                .iter()
                .map(|d| RawDialogue {
                    id: d.id.clone(),
                    turns: d
                        .turns
                        .iter()
                        .map(|t| RawTurn {
                            state: t.gold_state.to_string_map(),
                            sys: t.system_utterance.clone(),
                            user: t.user_utterance.clone(),
                        })
                        .collect(),
                })
                .collect(),
            ontology: self
                .ontology
                .candidates
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            schema: self
                .schema
                .slots()
                .iter()
                .map(|s| RawSlot {
                    domain: s.domain().to_string(),
                    slot: s.slot().to_string(),
                })
                .collect(),
            templates: RawTemplates {
                phrases: self
                    .templates
                    .phrases
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.pattern()))
                    .collect(),
                prefixes: self.templates.prefixes.clone(),
            },
        }
    }

    /// Canonical serialization: pretty-printed JSON with sorted object keys
    /// and a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_raw())
            .expect("corpus serialization cannot fail");
        text.push('\n');
        text
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Corpus::from_json_str(&text)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, corpus.to_canonical_json()).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Full history up to and including `turn_index`, with `[Sys]`/`[User]` tags.
/// Empty system utterances are left out.
pub fn serialize_history(dialogue: &Dialogue, turn_index: usize) -> Result<String, CorpusError> {
    if turn_index >= dialogue.turns.len() {
        return Err(CorpusError::TurnOutOfRange {
            index: turn_index,
            len: dialogue.turns.len(),
        });
    }
    let mut out = String::new();
    for turn in &dialogue.turns[..=turn_index] {
        for (tag, text) in [("[Sys] ", &turn.system_utterance), ("[User] ", &turn.user_utterance)] {
            if text.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tag);
            out.push_str(text);
        }
    }
    Ok(out)
}

/// Slots holding a value in `state`, in schema order.
pub fn gold_relevant_slots(state: &DialogueState, schema: &Schema) -> Vec<SlotId> {
    let mut slots: Vec<SlotId> = state.slots().cloned().collect();
    schema.sort(&mut slots);
    slots
}
