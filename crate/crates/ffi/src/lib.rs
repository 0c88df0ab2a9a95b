//! C ABI over the slotfuse pipeline.
//!
//! Corpora and models are opaque handles created by `sf_*_load`/`sf_*_train`
//! and released with the matching `_free`. Every fallible call returns an
//! `SfStatus`; on failure `sf_last_error` describes the problem until the
//! next call on the same thread. Strings returned through `char **out`
//! parameters are owned by the caller and must be released with
//! `sf_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slotfuse::corpus::CorpusError;
use slotfuse::encoder::EncoderError;
use slotfuse::eval::{evaluate, records_from_dump};
use slotfuse::generator::{dump_from_json, dump_to_json, GeneratorKind, Pipeline, PipelineError, SlotSource};
use slotfuse::selector::{select_slots, train_selector, SelectorConfig, SelectorError};
use slotfuse::{Ablation, Corpus, EncoderModel};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Missing, unreadable or malformed input, or an invalid option.
    Input = 3,
    /// Input that parses but violates the data contract.
    Contract = 4,
    /// Training produced a non-finite loss.
    Numeric = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// Opaque corpus handle.
pub struct SfCorpus {
    inner: Corpus,
}

/// Opaque encoder handle.
pub struct SfModel {
    inner: EncoderModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SfStatus, String);

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = if e.is_input_error() {
            SfStatus::Input
        } else {
            SfStatus::Contract
        };
        Failure(status, e.to_string())
    }
}

impl From<EncoderError> for Failure {
    fn from(e: EncoderError) -> Self {
        let status = match e {
            EncoderError::Io { .. } | EncoderError::Checkpoint(_) => SfStatus::Input,
            EncoderError::ShapeMismatch(_) | EncoderError::InvalidConfig(_) => SfStatus::Contract,
        };
        Failure(status, e.to_string())
    }
}

impl From<SelectorError> for Failure {
    fn from(e: SelectorError) -> Self {
        match e {
            SelectorError::Encoder(inner) => inner.into(),
            SelectorError::NonFiniteLoss { .. } => Failure(SfStatus::Numeric, e.to_string()),
            SelectorError::InvalidThreshold(_) | SelectorError::InvalidConfig(_) => {
                Failure(SfStatus::Input, e.to_string())
            }
            _ => Failure(SfStatus::Contract, e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Selection(inner) => inner.into(),
            other => Failure(SfStatus::Contract, other.to_string()),
        }
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure (or panic) as the last error and maps it to
/// a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SfStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SfStatus::NullArgument, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SfStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(SfStatus::Contract, "output contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_corpus_load(path: *const c_char, out: *mut *mut SfCorpus) -> SfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let corpus = slotfuse::load_corpus(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SfCorpus { inner: corpus }));
        Ok(())
    })
}

/// Parses a dataset from JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_corpus_from_json(json: *const c_char, out: *mut *mut SfCorpus) -> SfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let corpus = Corpus::from_json_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(SfCorpus { inner: corpus }));
        Ok(())
    })
}

/// Number of turns over all dialogues; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_corpus_turn_count(corpus: *const SfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.turn_count())
}

/// # Safety
/// `corpus` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_corpus_free(corpus: *mut SfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Loads an encoder checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_model_load(path: *const c_char, out: *mut *mut SfModel) -> SfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let model = EncoderModel::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SfModel { inner: model }));
        Ok(())
    })
}

/// Trains the selector on `corpus` with default hyperparameters except for
/// `seed` and `epochs`.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_model_train(
    corpus: *const SfCorpus,
    seed: u64,
    epochs: usize,
    out: *mut *mut SfModel,
) -> SfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let corpus = ref_arg(corpus, "corpus")?;
        let config = SelectorConfig {
            seed,
            epochs,
            ..SelectorConfig::default()
        };
        let outcome = train_selector(&corpus.inner, &config)?;
        *out = Box::into_raw(Box::new(SfModel { inner: outcome.model }));
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sf_model_save(model: *const SfModel, path: *const c_char) -> SfStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        model.inner.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores every schema slot against `history` and writes
/// `{"scores": {"domain-slot": score, ...}, "selected": [...]}` to `out`.
///
/// # Safety
/// Handles must be live; `history` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_select(
    model: *const SfModel,
    corpus: *const SfCorpus,
    history: *const c_char,
    delta: f64,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let model = ref_arg(model, "model")?;
        let corpus = ref_arg(corpus, "corpus")?;
        let result = select_slots(&model.inner, str_arg(history, "history")?, &corpus.inner.schema, delta)?;
        let scores: serde_json::Map<String, serde_json::Value> = result
            .scores
            .iter()
            .map(|(slot, score)| (slot.to_string(), (*score).into()))
            .collect();
        let selected: Vec<String> = result.selected.iter().map(ToString::to_string).collect();
        let json = serde_json::json!({"scores": scores, "selected": selected});
        *out = into_c_string(json.to_string())?;
        Ok(())
    })
}

/// Predicts every turn of `corpus` and writes the JSON prediction dump to
/// `out`. With a null `model` the turn's gold slots are selected;
/// `ablation` is one of full, -prompt, -OT, -CV and `generator` one of
/// extractive, gold-oracle.
///
/// # Safety
/// `corpus` must be live, `model` null or live, strings nul-terminated and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_predict(
    corpus: *const SfCorpus,
    model: *const SfModel,
    delta: f64,
    ablation: *const c_char,
    generator: *const c_char,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let corpus = &ref_arg(corpus, "corpus")?.inner;
        let ablation: Ablation = str_arg(ablation, "ablation")?
            .parse()
            .map_err(|e| Failure(SfStatus::Input, e))?;
        let generator: GeneratorKind = str_arg(generator, "generator")?
            .parse()
            .map_err(|e| Failure(SfStatus::Input, e))?;
        let source = match model.as_ref() {
            Some(m) => SlotSource::encoder(&m.inner, corpus, delta)?,
            None => SlotSource::Gold,
        };
        let pipeline = Pipeline {
            corpus,
            source,
            ablation,
        };
        let dump = pipeline.predict_corpus(generator)?;
        *out = into_c_string(dump_to_json(&dump))?;
        Ok(())
    })
}

/// Scores a JSON prediction dump against `corpus`, writing joint goal
/// accuracy and slot accuracy as fractions in [0, 1].
///
/// # Safety
/// `corpus` must be live, `dump_json` nul-terminated, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sf_evaluate(
    corpus: *const SfCorpus,
    dump_json: *const c_char,
    jga: *mut f64,
    sa: *mut f64,
) -> SfStatus {
    guard(|| {
        out_arg(jga, "jga")?;
        out_arg(sa, "sa")?;
        let corpus = &ref_arg(corpus, "corpus")?.inner;
        let dump = dump_from_json(str_arg(dump_json, "dump_json")?)
            .map_err(|e| Failure(SfStatus::Input, format!("invalid dump: {e}")))?;
        let records = records_from_dump(corpus, &dump).map_err(|e| Failure(SfStatus::Contract, e.to_string()))?;
        let report = evaluate(&records, &corpus.schema).map_err(|e| Failure(SfStatus::Contract, e.to_string()))?;
        *jga = report.jga;
        *sa = report.sa;
        Ok(())
    })
}
