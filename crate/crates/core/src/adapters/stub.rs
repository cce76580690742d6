//! Deterministic stand-ins for the model server. All of them are pure
//! functions of their inputs except the counting and scripted helpers, which
//! keep an atomic call counter.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{
    AdapterResult, GenerationAdapter, GenerationRequest, NliAdapter, NliTriple, ScoreAdapter,
    SentimentAdapter, SentimentPrediction, TokenScore,
};
use crate::label::{Role, SentimentLabel};

/// Labels a text by substring markers (case-insensitive).
///
/// A text matching only positive markers is positive, only negative markers
/// negative, and anything else neutral.
#[derive(Debug, Clone)]
pub struct KeywordSentiment {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl KeywordSentiment {
    pub fn new<P, N>(positive: P, negative: N) -> Self
    where
        P: IntoIterator,
        P::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        KeywordSentiment {
            positive: positive
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .collect(),
            negative: negative
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .collect(),
        }
    }

    pub fn label(&self, text: &str) -> SentimentLabel {
        let text = text.to_lowercase();
        let pos = self.positive.iter().any(|m| text.contains(m.as_str()));
        let neg = self.negative.iter().any(|m| text.contains(m.as_str()));
        match (pos, neg) {
            (true, false) => SentimentLabel::Positive,
            (false, true) => SentimentLabel::Negative,
            _ => SentimentLabel::Neutral,
        }
    }
}

impl Default for KeywordSentiment {
    fn default() -> Self {
        KeywordSentiment::new(
            [
                "great",
                "wonderful",
                "love",
                "glad",
                "happy",
                "thank",
                "lovely",
                "good",
            ],
            [
                "terrible", "hate", "awful", "worst", "angry", "never", "stupid", "sick of",
            ],
        )
    }
}

impl SentimentAdapter for KeywordSentiment {
    fn classify(&self, texts: &[String]) -> AdapterResult<Vec<SentimentPrediction>> {
        Ok(texts
            .iter()
            .map(|t| SentimentPrediction::one_hot(self.label(t)))
            .collect())
    }
}

/// Returns the same triple for every pair.
#[derive(Debug, Clone, Copy)]
pub struct ConstantNli(pub NliTriple);

impl ConstantNli {
    pub fn neutral() -> Self {
        ConstantNli(NliTriple::new(0.0, 1.0, 0.0))
    }
}

impl NliAdapter for ConstantNli {
    fn infer(&self, _premise: &str, _hypothesis: &str) -> AdapterResult<NliTriple> {
        Ok(self.0)
    }
}

/// Entailment when the premise equals the hypothesis, neutral otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEntailmentNli;

impl NliAdapter for IdentityEntailmentNli {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        Ok(if premise == hypothesis {
            NliTriple::new(1.0, 0.0, 0.0)
        } else {
            NliTriple::new(0.0, 1.0, 0.0)
        })
    }
}

/// Returns the scripted neutral probabilities in call order (cycling), with the
/// remaining mass on entailment.
#[derive(Debug, Default)]
pub struct ScriptedNli {
    neutrals: Vec<f64>,
    calls: AtomicUsize,
}

impl ScriptedNli {
    pub fn new(neutrals: Vec<f64>) -> Self {
        assert!(
            !neutrals.is_empty(),
            "scripted NLI needs at least one value"
        );
        ScriptedNli {
            neutrals,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl NliAdapter for ScriptedNli {
    fn infer(&self, _premise: &str, _hypothesis: &str) -> AdapterResult<NliTriple> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        let n = self.neutrals[i % self.neutrals.len()];
        Ok(NliTriple::new(1.0 - n, n, 0.0))
    }
}

/// Counts calls made through it.
#[derive(Debug)]
pub struct CountingNli<A> {
    pub inner: A,
    calls: AtomicUsize,
}

impl<A> CountingNli<A> {
    pub fn new(inner: A) -> Self {
        CountingNli {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<A: NliAdapter> NliAdapter for CountingNli<A> {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.infer(premise, hypothesis)
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Scores by word overlap: with `o` the fraction of hypothesis words present in
/// the premise, entailment = 0.8·o, contradiction = 0.1·(1 − o), neutral takes
/// the rest.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlapNli;

impl NliAdapter for LexicalOverlapNli {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        let premise: std::collections::HashSet<String> = words(premise).into_iter().collect();
        let hyp = words(hypothesis);
        let overlap = if hyp.is_empty() {
            0.0
        } else {
            hyp.iter().filter(|w| premise.contains(*w)).count() as f64 / hyp.len() as f64
        };
        let entailment = 0.8 * overlap;
        let contradiction = 0.1 * (1.0 - overlap);
        Ok(NliTriple::new(
            entailment,
            1.0 - entailment - contradiction,
            contradiction,
        ))
    }
}

/// One fixed utterance per cluster, regardless of history.
#[derive(Debug, Clone)]
pub struct TemplateGenerator {
    templates: [String; 3],
}

impl TemplateGenerator {
    pub fn new(positive: &str, neutral: &str, negative: &str) -> Self {
        TemplateGenerator {
            templates: [positive.into(), neutral.into(), negative.into()],
        }
    }

    pub fn template(&self, cluster: SentimentLabel) -> &str {
        &self.templates[cluster.index()]
    }
}

impl Default for TemplateGenerator {
    fn default() -> Self {
        TemplateGenerator::new(
            "that sounds wonderful.",
            "i see what you mean.",
            "this is a terrible idea.",
        )
    }
}

impl GenerationAdapter for TemplateGenerator {
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String> {
        Ok(self.template(request.cluster).to_string())
    }
}

/// Echoes the last history line reversed; empty history yields `"..."`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReverseEchoGenerator;

impl GenerationAdapter for ReverseEchoGenerator {
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String> {
        Ok(match request.history.last() {
            Some(h) => h.text.chars().rev().collect(),
            None => "...".to_string(),
        })
    }
}

/// Cycles through a per-cluster phrase list, indexed by the number of history
/// lines and how many of them the speaker said.
#[derive(Debug, Clone)]
pub struct PhrasebookGenerator {
    phrases: [Vec<String>; 3],
}

impl PhrasebookGenerator {
    pub fn new(phrases: [Vec<String>; 3]) -> Self {
        assert!(
            phrases.iter().all(|p| !p.is_empty()),
            "every cluster needs phrases"
        );
        PhrasebookGenerator { phrases }
    }
}

fn owned(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for PhrasebookGenerator {
    fn default() -> Self {
        PhrasebookGenerator::new([
            owned(&[
                "What a wonderful morning this is!",
                "I love how this is turning out. Thank you for coming.",
                "That is great news. We should celebrate tonight.",
                "I'm so glad you told me.",
                "You always make things better, you know that?",
                "Let's do it together. It will be lovely.",
                "Honestly, this is the best idea I have heard all week.",
            ]),
            owned(&[
                "Where did you put the keys?",
                "I went to the station earlier. The train was late.",
                "Okay. Let me check the schedule first.",
                "It depends on what the others decide.",
                "The meeting starts at nine, I think.",
                "Sure. Tell me more about the plan.",
                "Hm. I hadn't thought about it that way.",
            ]),
            owned(&[
                "This is the worst day of my life.",
                "I hate it when you do that. Stop it.",
                "You never listen to anything I say!",
                "That's a terrible plan and you know it.",
                "I'm sick of waiting around for you.",
                "Don't talk to me like that. I'm angry enough already.",
                "Awful. Just awful.",
            ]),
        ])
    }
}

impl GenerationAdapter for PhrasebookGenerator {
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String> {
        let list = &self.phrases[request.cluster.index()];
        let own = request
            .history
            .iter()
            .filter(|h| h.role == Role::Focus)
            .count();
        let i = (request.history.len() * 3 + own) % list.len();
        Ok(list[i].clone())
    }
}

/// Assigns the same log-probability to every whitespace-separated token.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub log_prob_per_token: f64,
}

impl Default for UniformScorer {
    fn default() -> Self {
        UniformScorer {
            log_prob_per_token: -std::f64::consts::LN_2,
        }
    }
}

impl ScoreAdapter for UniformScorer {
    fn score_tokens(&self, text: &str) -> AdapterResult<TokenScore> {
        let tokens = text.split_whitespace().count() as u64;
        Ok(TokenScore {
            tokens,
            total_log_probability: self.log_prob_per_token * tokens as f64,
        })
    }
}
