//! Model adapters: the wire protocol shared by every inference backend and the
//! traits the rest of the engine programs against.
//!
//! Implementations:
//!
//! * [`http::HttpAdapter`]: JSON over HTTP against a model server.
//! * [`stub`]: deterministic pure functions, no network.
//! * [`fixture::FixtureAdapter`]: replays responses recorded with
//!   [`fixture::RecordingAdapter`].
//!
//! Each trait has one required method talking to the backend and one provided
//! method that enforces the contract (input preconditions, arity, simplex and
//! sanitization postconditions). Callers use the provided method.

pub mod fixture;
pub mod http;
pub mod stub;

use serde::{Deserialize, Serialize};

use crate::label::{Role, SentimentLabel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdapterError {
    /// Network failure, timeout or server-side error. Safe to retry.
    #[error("transport error: {0}")]
    Transport(String),
    /// The backend answered, but not in the agreed format.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("invalid adapter input: {0}")]
    InvalidInput(String),
    #[error("no recorded fixture for {0}")]
    FixtureMiss(String),
}

impl AdapterError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AdapterError::Transport(_))
    }
}

pub type AdapterResult<T> = Result<T, AdapterError>;

/// Sentiment class plus the (positive, neutral, negative) probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentPrediction {
    pub label: SentimentLabel,
    pub probs: [f64; 3],
}

impl SentimentPrediction {
    /// Builds a prediction whose label is the argmax of `probs` (first index on ties).
    pub fn from_probs(probs: [f64; 3]) -> Self {
        let mut best = 0;
        for i in 1..3 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        SentimentPrediction {
            label: SentimentLabel::from_index(best).unwrap(),
            probs,
        }
    }

    pub fn one_hot(label: SentimentLabel) -> Self {
        let mut probs = [0.0; 3];
        probs[label.index()] = 1.0;
        SentimentPrediction { label, probs }
    }

    fn check(&self) -> AdapterResult<()> {
        let max = self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AdapterError::Protocol(format!(
                "sentiment probabilities out of range: {:?}",
                self.probs
            )));
        }
        if self.probs[self.label.index()] < max {
            return Err(AdapterError::Protocol(format!(
                "label {} is not the argmax of {:?}",
                self.label, self.probs
            )));
        }
        Ok(())
    }
}

/// Entailment / neutral / contradiction probabilities for one premise-hypothesis pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliTriple {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliTriple {
    pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Self {
        NliTriple {
            entailment,
            neutral,
            contradiction,
        }
    }

    pub fn validate(&self) -> AdapterResult<()> {
        let parts = [self.entailment, self.neutral, self.contradiction];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AdapterError::Protocol(format!(
                "NLI probabilities out of range: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > Self::SIMPLEX_TOLERANCE {
            return Err(AdapterError::Protocol(format!(
                "NLI probabilities sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Persona model to use.
    pub cluster: SentimentLabel,
    /// Dialogue so far, from the speaker's perspective.
    pub history: Vec<HistoryEntry>,
    pub max_new_tokens: u32,
}

/// Token count and summed natural-log probability of a text under a scoring model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub tokens: u64,
    #[serde(rename = "total_log_prob")]
    pub total_log_probability: f64,
}

impl TokenScore {
    /// `exp(-total_log_probability / tokens)`.
    pub fn perplexity(&self) -> f64 {
        (-self.total_log_probability / self.tokens as f64).exp()
    }

    fn validate(&self) -> AdapterResult<()> {
        if self.tokens == 0 {
            return Err(AdapterError::Protocol("score reported zero tokens".into()));
        }
        let ppl = self.perplexity();
        if !ppl.is_finite() || self.total_log_probability > 0.0 {
            return Err(AdapterError::Protocol(format!(
                "score yields invalid perplexity {ppl} (total_log_prob {})",
                self.total_log_probability
            )));
        }
        Ok(())
    }
}

pub trait SentimentAdapter: Send + Sync {
    /// Classifies each text independently.
    fn classify(&self, texts: &[String]) -> AdapterResult<Vec<SentimentPrediction>>;

    /// Contract-checked classification: order- and arity-preserving.
    fn sentiment(&self, texts: &[String]) -> AdapterResult<Vec<SentimentPrediction>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(AdapterError::InvalidInput(format!("text {i} is empty")));
        }
        let out = self.classify(texts)?;
        if out.len() != texts.len() {
            return Err(AdapterError::Protocol(format!(
                "sentiment returned {} predictions for {} texts",
                out.len(),
                texts.len()
            )));
        }
        for p in &out {
            p.check()?;
        }
        Ok(out)
    }
}

pub trait NliAdapter: Send + Sync {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple>;

    fn nli(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(AdapterError::InvalidInput(
                "NLI premise and hypothesis must be non-empty".into(),
            ));
        }
        let triple = self.infer(premise, hypothesis)?;
        triple.validate()?;
        Ok(triple)
    }
}

pub trait GenerationAdapter: Send + Sync {
    /// Raw completion as returned by the backend.
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String>;

    /// A single sanitized utterance: first line only, trimmed, non-empty.
    fn generate(&self, request: &GenerationRequest) -> AdapterResult<String> {
        if request.max_new_tokens == 0 {
            return Err(AdapterError::InvalidInput(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        let raw = self.complete(request)?;
        sanitize_utterance(&raw)
            .ok_or_else(|| AdapterError::Generation("empty generation after trimming".into()))
    }
}

pub trait ScoreAdapter: Send + Sync {
    fn score_tokens(&self, text: &str) -> AdapterResult<TokenScore>;

    fn score(&self, text: &str) -> AdapterResult<TokenScore> {
        if text.trim().is_empty() {
            return Err(AdapterError::InvalidInput("cannot score empty text".into()));
        }
        let s = self.score_tokens(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// First non-empty line, trimmed, with a leading `focus:`/`other:` prefix removed.
pub fn sanitize_utterance(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = ["focus:", "other:"]
        .iter()
        .find_map(|p| line.strip_prefix(p))
        .map(str::trim)
        .unwrap_or(line);
    (!line.is_empty()).then(|| line.to_string())
}

/// One backend per capability, as used by the pipeline commands.
pub struct AdapterSet {
    pub sentiment: Box<dyn SentimentAdapter>,
    pub nli: Box<dyn NliAdapter>,
    pub generator: Box<dyn GenerationAdapter>,
    pub scorer: Box<dyn ScoreAdapter>,
}
