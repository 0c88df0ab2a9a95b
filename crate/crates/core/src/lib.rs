//! Two-stage dialogue state tracking.
//!
//! Stage one scores every schema slot against the dialogue history with a
//! contrastively trained transformer encoder and keeps the slots above a
//! threshold. Stage two turns the kept slots into a masked summary template,
//! attaches ontology candidates, lets a generator fill the masks, and parses
//! the filled summary back into a dialogue state.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod fusion;
pub mod generator;
pub mod selector;
pub mod synthetic;

pub use corpus::{load_corpus, Corpus, Dialogue, DialogueState, Schema, SlotId, Turn};
pub use encoder::{EncoderConfig, EncoderModel};
pub use fusion::{Ablation, OutputTemplate, PromptBundle};
pub use generator::{ExtractiveFiller, Fill, Generator, GoldOracle, Pipeline, SlotSource};
pub use selector::{SelectionResult, SelectorConfig};
