use std::collections::{BTreeSet, HashMap};

use crate::corpus::Corpus;

pub const PAD_TOKEN: &str = "[pad]";
pub const UNK_TOKEN: &str = "[unk]";
pub const FIRST_TOKEN: &str = "[cls]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const FIRST_ID: usize = 2;

/// Whitespace, case-insensitive tokenizer over a closed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Tokenizer {
    /// Special symbols take ids 0..3, the remaining words follow in sorted
    /// order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let specials = [PAD_TOKEN, UNK_TOKEN, FIRST_TOKEN];
        let words: BTreeSet<String> = words
            .into_iter()
            .flat_map(str::split_whitespace)
            .map(str::to_lowercase)
            .filter(|w| !specials.contains(&w.as_str()))
            .collect();
        let vocab = specials
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_vocab(vocab).expect("generated vocabulary is well formed")
    }

    /// Builds from an explicit id-ordered vocabulary, as stored in checkpoints.
    pub fn from_vocab(vocab: Vec<String>) -> Result<Self, String> {
        if vocab.len() < 3
            || vocab[PAD_ID] != PAD_TOKEN
            || vocab[UNK_ID] != UNK_TOKEN
            || vocab[FIRST_ID] != FIRST_TOKEN
        {
            return Err("vocabulary must start with [pad], [unk], [cls]".into());
        }
        let mut ids = HashMap::with_capacity(vocab.len());
        for (i, word) in vocab.iter().enumerate() {
            if ids.insert(word.clone(), i).is_some() {
                return Err(format!("vocabulary lists {word:?} twice"));
            }
        }
        Ok(Tokenizer { vocab, ids })
    }

    /// Vocabulary covering every utterance, history tag, slot name and
    /// candidate value of the corpus.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut texts: Vec<String> = vec!["[user]".into(), "[sys]".into()];
        for dialogue in &corpus.dialogues {
            for turn in &dialogue.turns {
                texts.push(turn.system_utterance.clone());
                texts.push(turn.user_utterance.clone());
            }
        }
        for slot in corpus.schema.slots() {
            texts.push(slot.encoder_text());
            if let Some(values) = corpus.ontology.candidates(slot) {
                texts.extend(values.iter().cloned());
            }
        }
        Self::from_words(texts.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Token ids with the first-token symbol prepended. When the text is
    /// longer than `max_len - 1` words the oldest words are dropped.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<usize> {
        let words: Vec<usize> = text
            .split_whitespace()
            .map(|w| self.id(&w.to_lowercase()))
            .collect();
        let keep = max_len.saturating_sub(1);
        let start = words.len().saturating_sub(keep);
        let mut ids = Vec::with_capacity(words.len() - start + 1);
        ids.push(FIRST_ID);
        ids.extend_from_slice(&words[start..]);
        ids
    }
}
