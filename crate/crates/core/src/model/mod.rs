//! Autoregressive model interface and built-in models.
//!
//! All probabilities live in natural-log space. A model call is one
//! evaluation of a next-token [`Distribution`]; it is the unit every
//! estimator's budget is expressed in.

mod distribution;
mod ngram;
pub mod remote;
mod synthetic;
mod temperature;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::query::{History, QueryError, Token, Vocab};

pub use distribution::{apply_temperature, Distribution, NORMALIZATION_TOLERANCE};
pub use ngram::{NGramModel, Tokenization};
pub use remote::RemoteModel;
pub use synthetic::{fnv1a64, SyntheticMixerModel};
pub use temperature::TemperatureWrapped;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: Token, vocab: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("distribution does not normalize: logsumexp = {0}")]
    NotNormalized(f64),
    #[error("distribution has {got} entries, vocabulary has {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("smoothing parameter must be finite and nonnegative, got {0}")]
    InvalidSmoothing(f64),
    #[error("model needs {needed} context tokens, got {got}")]
    InsufficientContext { needed: usize, got: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("json error: {0}")]
    Json(String),
    #[error("remote model unavailable: {0}")]
    RemoteModelUnavailable(String),
    #[error("remote model error: {0}")]
    Remote(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Json(e.to_string())
    }
}

/// Thread-safe model-call counter.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn new() -> Self {
        CallCounter(AtomicU64::new(0))
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// An autoregressive categorical sequence model.
///
/// Implementors provide [`SequenceModel::evaluate`]; callers use
/// [`SequenceModel::next`], which validates tokens and counts the call.
pub trait SequenceModel: Send + Sync {
    fn vocab(&self) -> Vocab;

    /// Next-token distribution given `history ‖ prefix`. Must be deterministic
    /// in its inputs. Does not touch the call counter.
    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError>;

    fn counter(&self) -> &CallCounter;

    fn name(&self) -> String {
        "model".to_string()
    }

    fn next(&self, history: &History, prefix: &[Token]) -> Result<Distribution, ModelError> {
        let vocab = self.vocab();
        for &t in history.tokens().iter().chain(prefix) {
            vocab.check(t)?;
        }
        self.counter().increment();
        self.evaluate(history.tokens(), prefix)
    }

    fn calls(&self) -> u64 {
        self.counter().get()
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for Arc<M> {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }
    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        (**self).evaluate(history, prefix)
    }
    fn counter(&self) -> &CallCounter {
        (**self).counter()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn next(&self, history: &History, prefix: &[Token]) -> Result<Distribution, ModelError> {
        (**self).next(history, prefix)
    }
}

/// Per-run view of a model with its own call counter.
///
/// Calls go through the inner model's [`SequenceModel::next`], so the inner
/// counter advances too; the meter's counter only sees this run, which keeps
/// accounting exact when several runs share one model concurrently.
pub struct Meter<'a> {
    inner: &'a dyn SequenceModel,
    counter: CallCounter,
}

impl<'a> Meter<'a> {
    pub fn new(inner: &'a dyn SequenceModel) -> Self {
        Meter { inner, counter: CallCounter::new() }
    }
}

impl SequenceModel for Meter<'_> {
    fn vocab(&self) -> Vocab {
        self.inner.vocab()
    }
    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        self.inner.evaluate(history, prefix)
    }
    fn counter(&self) -> &CallCounter {
        &self.counter
    }
    fn name(&self) -> String {
        self.inner.name()
    }
    fn next(&self, history: &History, prefix: &[Token]) -> Result<Distribution, ModelError> {
        let dist = self.inner.next(history, prefix)?;
        self.counter.increment();
        Ok(dist)
    }
}

/// Uniform next-token distribution regardless of context.
#[derive(Debug)]
pub struct UniformModel {
    vocab: Vocab,
    counter: CallCounter,
}

impl UniformModel {
    pub fn new(vocab: Vocab) -> Self {
        UniformModel { vocab, counter: CallCounter::new() }
    }
}

impl SequenceModel for UniformModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }
    fn evaluate(&self, _history: &[Token], _prefix: &[Token]) -> Result<Distribution, ModelError> {
        Ok(Distribution::uniform(self.vocab.size()))
    }
    fn counter(&self) -> &CallCounter {
        &self.counter
    }
    fn name(&self) -> String {
        "uniform".to_string()
    }
}

/// `Σ_k ln p(x_k | history, x_<k)`; exactly `seq.len()` model calls.
pub fn sequence_logprob(model: &dyn SequenceModel, history: &History, seq: &[Token]) -> Result<f64, ModelError> {
    if seq.is_empty() {
        return Err(ModelError::Invalid("sequence must be nonempty".into()));
    }
    let vocab = model.vocab();
    for &t in seq {
        vocab.check(t)?;
    }
    let mut total = 0.0;
    for k in 0..seq.len() {
        let dist = model.next(history, &seq[..k])?;
        total += dist.log_prob(seq[k]);
    }
    Ok(total)
}
