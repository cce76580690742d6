//! Recorded-response adapters.
//!
//! A [`RecordingAdapter`] wraps any backend and captures every request and
//! response into a [`FixtureStore`]; a [`FixtureAdapter`] replays a store
//! without touching the backend. Unrecorded requests fail with
//! [`AdapterError::FixtureMiss`].

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    AdapterError, AdapterResult, GenerationAdapter, GenerationRequest, NliAdapter, NliTriple,
    ScoreAdapter, SentimentAdapter, SentimentPrediction, TokenScore,
};
use crate::label::SentimentLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentRecord {
    pub text: String,
    pub label: SentimentLabel,
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliRecord {
    pub premise: String,
    pub hypothesis: String,
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRecord {
    pub request: GenerationRequest,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub text: String,
    pub tokens: u64,
    pub total_log_prob: f64,
}

/// Serializable collection of recorded exchanges, in call order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureStore {
    pub sentiment: Vec<SentimentRecord>,
    pub nli: Vec<NliRecord>,
    pub generate: Vec<GenerateRecord>,
    pub score: Vec<ScoreRecord>,
}

impl FixtureStore {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixture store serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn request_key(request: &GenerationRequest) -> String {
    serde_json::to_string(request).expect("generation request serializes")
}

/// Replays a [`FixtureStore`]. When a request was recorded more than once the
/// first response wins.
#[derive(Debug, Default)]
pub struct FixtureAdapter {
    sentiment: HashMap<String, SentimentPrediction>,
    nli: HashMap<(String, String), NliTriple>,
    generate: HashMap<String, String>,
    score: HashMap<String, TokenScore>,
}

impl FixtureAdapter {
    pub fn new(store: &FixtureStore) -> Self {
        let mut a = FixtureAdapter::default();
        for r in &store.sentiment {
            a.sentiment
                .entry(r.text.clone())
                .or_insert(SentimentPrediction {
                    label: r.label,
                    probs: r.probs,
                });
        }
        for r in &store.nli {
            a.nli
                .entry((r.premise.clone(), r.hypothesis.clone()))
                .or_insert(NliTriple::new(r.entailment, r.neutral, r.contradiction));
        }
        for r in &store.generate {
            a.generate
                .entry(request_key(&r.request))
                .or_insert(r.text.clone());
        }
        for r in &store.score {
            a.score.entry(r.text.clone()).or_insert(TokenScore {
                tokens: r.tokens,
                total_log_probability: r.total_log_prob,
            });
        }
        a
    }
}

fn snippet(text: &str) -> String {
    let short: String = text.chars().take(40).collect();
    if short.len() < text.len() {
        format!("{short:?}...")
    } else {
        format!("{short:?}")
    }
}

impl SentimentAdapter for FixtureAdapter {
    fn classify(&self, texts: &[String]) -> AdapterResult<Vec<SentimentPrediction>> {
        texts
            .iter()
            .map(|t| {
                self.sentiment.get(t).copied().ok_or_else(|| {
                    AdapterError::FixtureMiss(format!("sentiment of {}", snippet(t)))
                })
            })
            .collect()
    }
}

impl NliAdapter for FixtureAdapter {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        self.nli
            .get(&(premise.to_string(), hypothesis.to_string()))
            .copied()
            .ok_or_else(|| {
                AdapterError::FixtureMiss(format!(
                    "nli of {} against {}",
                    snippet(hypothesis),
                    snippet(premise)
                ))
            })
    }
}

impl GenerationAdapter for FixtureAdapter {
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String> {
        self.generate
            .get(&request_key(request))
            .cloned()
            .ok_or_else(|| {
                AdapterError::FixtureMiss(format!(
                    "generation for cluster {} after {} history lines",
                    request.cluster,
                    request.history.len()
                ))
            })
    }
}

impl ScoreAdapter for FixtureAdapter {
    fn score_tokens(&self, text: &str) -> AdapterResult<TokenScore> {
        self.score
            .get(text)
            .copied()
            .ok_or_else(|| AdapterError::FixtureMiss(format!("score of {}", snippet(text))))
    }
}

/// Forwards to `inner` and records every successful exchange.
#[derive(Debug)]
pub struct RecordingAdapter<A> {
    inner: A,
    store: Mutex<FixtureStore>,
}

impl<A> RecordingAdapter<A> {
    pub fn new(inner: A) -> Self {
        RecordingAdapter {
            inner,
            store: Mutex::new(FixtureStore::default()),
        }
    }

    pub fn store(&self) -> FixtureStore {
        self.store.lock().unwrap().clone()
    }

    pub fn into_store(self) -> FixtureStore {
        self.store.into_inner().unwrap()
    }
}

impl<A: SentimentAdapter> SentimentAdapter for RecordingAdapter<A> {
    fn classify(&self, texts: &[String]) -> AdapterResult<Vec<SentimentPrediction>> {
        let out = self.inner.classify(texts)?;
        let mut store = self.store.lock().unwrap();
        for (t, p) in texts.iter().zip(&out) {
            store.sentiment.push(SentimentRecord {
                text: t.clone(),
                label: p.label,
                probs: p.probs,
            });
        }
        Ok(out)
    }
}

impl<A: NliAdapter> NliAdapter for RecordingAdapter<A> {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        let t = self.inner.infer(premise, hypothesis)?;
        self.store.lock().unwrap().nli.push(NliRecord {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            entailment: t.entailment,
            neutral: t.neutral,
            contradiction: t.contradiction,
        });
        Ok(t)
    }
}

impl<A: GenerationAdapter> GenerationAdapter for RecordingAdapter<A> {
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String> {
        let text = self.inner.complete(request)?;
        self.store.lock().unwrap().generate.push(GenerateRecord {
            request: request.clone(),
            text: text.clone(),
        });
        Ok(text)
    }
}

impl<A: ScoreAdapter> ScoreAdapter for RecordingAdapter<A> {
    fn score_tokens(&self, text: &str) -> AdapterResult<TokenScore> {
        let s = self.inner.score_tokens(text)?;
        self.store.lock().unwrap().score.push(ScoreRecord {
            text: text.into(),
            tokens: s.tokens,
            total_log_prob: s.total_log_probability,
        });
        Ok(s)
    }
}
