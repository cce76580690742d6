//! Evaluation of generated dialogues: lexical diversity, perplexity,
//! persona sentiment consistency and NLI-Score.
//!
//! NLI-Score is the mean neutral-class probability of each sentence judged
//! against everything before it. A neutral judgement means the sentence adds
//! information without contradicting or repeating the context, so higher is
//! better.

use std::collections::{BTreeMap, HashSet};

use crate::adapters::{AdapterError, NliAdapter, ScoreAdapter, SentimentAdapter};
use crate::label::SentimentLabel;
use crate::orchestration::Script;

pub const DEFAULT_MAX_CONTEXT_CHARS: usize = 2000;

/// Summary table columns, after the leading model column.
pub const SUMMARY_COLUMNS: [&str; 5] = [
    "Perplexity",
    "1-gram Vocab",
    "2-gram Vocab",
    "Words",
    "NLI-Score",
];

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("NLI-Score needs at least 2 sentences, got {0}")]
    TooFewSentences(usize),
    #[error("NLI call for sentence {step}: {source}")]
    Nli {
        step: usize,
        #[source]
        source: AdapterError,
    },
    #[error("scoring dialogue {dialogue}: {source}")]
    Score {
        dialogue: usize,
        #[source]
        source: AdapterError,
    },
    #[error("classifying utterances of script {script}: {source}")]
    Sentiment {
        script: usize,
        #[source]
        source: AdapterError,
    },
    #[error("script {script} line {line}: speaker `{speaker}` is not in the roster")]
    Unattributed {
        script: usize,
        line: usize,
        speaker: String,
    },
    #[error("no dialogues to evaluate")]
    Empty,
}

/// Lower-cases, splits on whitespace and splits every ASCII punctuation character into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            } else {
                word.push(c);
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiversityCounts {
    pub words: usize,
    pub distinct_unigrams: usize,
    pub distinct_bigrams: usize,
}

impl DiversityCounts {
    pub fn of_tokens(tokens: &[String]) -> Self {
        let unigrams: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        let bigrams: HashSet<(&str, &str)> = tokens
            .windows(2)
            .map(|w| (w[0].as_str(), w[1].as_str()))
            .collect();
        DiversityCounts {
            words: tokens.len(),
            distinct_unigrams: unigrams.len(),
            distinct_bigrams: bigrams.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DialogueDiversity {
    pub counts: DiversityCounts,
    /// `None` when no scorer is configured or the dialogue is empty.
    pub perplexity: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiversityAverages {
    pub words: f64,
    pub distinct_unigrams: f64,
    pub distinct_bigrams: f64,
    /// Mean over the dialogues that have a perplexity.
    pub perplexity: Option<f64>,
}

impl DiversityAverages {
    pub fn of(dialogues: &[DialogueDiversity]) -> Self {
        if dialogues.is_empty() {
            return DiversityAverages::default();
        }
        let n = dialogues.len() as f64;
        let sum = |f: fn(&DiversityCounts) -> usize| {
            dialogues.iter().map(|d| f(&d.counts) as f64).sum::<f64>() / n
        };
        DiversityAverages {
            words: sum(|c| c.words),
            distinct_unigrams: sum(|c| c.distinct_unigrams),
            distinct_bigrams: sum(|c| c.distinct_bigrams),
            perplexity: mean(dialogues.iter().filter_map(|d| d.perplexity)),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub per_dialogue: Vec<DialogueDiversity>,
    pub average: DiversityAverages,
}

/// Diversity of each dialogue (given as its utterances) and the corpus average.
///
/// Counts run over the tokens of all utterances concatenated, speaker names excluded.
pub fn diversity(
    dialogues: &[Vec<String>],
    scorer: Option<&dyn ScoreAdapter>,
) -> Result<DiversityReport, MetricError> {
    if dialogues.is_empty() {
        return Err(MetricError::Empty);
    }
    let per_dialogue = dialogues
        .iter()
        .enumerate()
        .map(|(i, utterances)| {
            let text = utterances.join(" ");
            let tokens = tokenize(&text);
            let perplexity = match scorer {
                Some(s) if !text.trim().is_empty() => Some(
                    s.score(&text)
                        .map_err(|source| MetricError::Score {
                            dialogue: i,
                            source,
                        })?
                        .perplexity(),
                ),
                _ => None,
            };
            Ok(DialogueDiversity {
                counts: DiversityCounts::of_tokens(&tokens),
                perplexity,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let average = DiversityAverages::of(&per_dialogue);
    Ok(DiversityReport {
        per_dialogue,
        average,
    })
}

/// Rows: target cluster of the speaking character. Columns: classified sentiment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SentimentMatrix(pub [[u64; 3]; 3]);

impl SentimentMatrix {
    pub fn get(&self, target: SentimentLabel, classified: SentimentLabel) -> u64 {
        self.0[target.index()][classified.index()]
    }

    pub fn row(&self, target: SentimentLabel) -> [u64; 3] {
        self.0[target.index()]
    }

    pub fn row_sum(&self, target: SentimentLabel) -> u64 {
        self.row(target).iter().sum()
    }

    pub fn add(&mut self, other: &SentimentMatrix) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] += other.0[r][c];
            }
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<10}{:>10}{:>10}{:>10}\n",
            "Character", "Positive", "Neutral", "Negative"
        );
        for label in SentimentLabel::ALL {
            let r = self.row(label);
            out.push_str(&format!(
                "{:<10}{:>10}{:>10}{:>10}\n",
                capitalized(label.as_str()),
                r[0],
                r[1],
                r[2]
            ));
        }
        out
    }
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Classifies every generated utterance and tallies it under its speaker's cluster.
pub fn sentiment_consistency(
    scripts: &[Script],
    classifier: &dyn SentimentAdapter,
) -> Result<SentimentMatrix, MetricError> {
    let mut matrix = SentimentMatrix::default();
    for (si, script) in scripts.iter().enumerate() {
        let targets = script
            .lines
            .iter()
            .enumerate()
            .map(|(li, l)| {
                script
                    .cluster_of(&l.speaker)
                    .ok_or_else(|| MetricError::Unattributed {
                        script: si,
                        line: li + 1,
                        speaker: l.speaker.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let texts: Vec<String> = script.lines.iter().map(|l| l.text.clone()).collect();
        let predictions = classifier
            .sentiment(&texts)
            .map_err(|source| MetricError::Sentiment { script: si, source })?;
        for (target, p) in targets.into_iter().zip(predictions) {
            matrix.0[target.index()][p.label.index()] += 1;
        }
    }
    Ok(matrix)
}

/// Splits on `.`, `!` or `?` followed by whitespace; every utterance boundary is
/// also a sentence boundary.
pub fn split_sentences<S: AsRef<str>>(utterances: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    for u in utterances {
        let mut current = String::new();
        let mut chars = u.as_ref().chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            let terminal = matches!(c, '.' | '!' | '?');
            if terminal && chars.peek().is_some_and(|n| n.is_whitespace()) {
                push_trimmed(&mut out, &current);
                current.clear();
            }
        }
        push_trimmed(&mut out, &current);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Keeps the last `max_chars` characters of `context`.
pub fn truncate_context(context: &str, max_chars: usize) -> &str {
    let len = context.chars().count();
    if len <= max_chars {
        return context;
    }
    let (offset, _) = context.char_indices().nth(len - max_chars).unwrap();
    &context[offset..]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NliScoreReport {
    /// Neutral probability for sentences 2..=n, in order.
    pub steps: Vec<f64>,
    pub score: f64,
}

/// NLI-Score of an ordered sentence list: sentence `i` is the hypothesis, the
/// space-joined sentences before it (cut from the start to `max_context_chars`)
/// the premise.
pub fn nli_score<S: AsRef<str>>(
    sentences: &[S],
    nli: &dyn NliAdapter,
    max_context_chars: usize,
) -> Result<NliScoreReport, MetricError> {
    if sentences.len() < 2 {
        return Err(MetricError::TooFewSentences(sentences.len()));
    }
    let mut context = sentences[0].as_ref().to_string();
    let mut steps = Vec::with_capacity(sentences.len() - 1);
    for (i, s) in sentences.iter().enumerate().skip(1) {
        let premise = truncate_context(&context, max_context_chars);
        let triple = nli
            .nli(premise, s.as_ref())
            .map_err(|source| MetricError::Nli {
                step: i + 1,
                source,
            })?;
        steps.push(triple.neutral);
        context.push(' ');
        context.push_str(s.as_ref());
    }
    let score = steps.iter().sum::<f64>() / steps.len() as f64;
    Ok(NliScoreReport { steps, score })
}

/// Everything measured for one generated dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueMetrics {
    pub script_id: String,
    /// Label of the system that produced the dialogue (e.g. its ordering mode).
    pub model: String,
    pub diversity: DialogueDiversity,
    /// `None` when the dialogue has fewer than two sentences.
    pub nli: Option<NliScoreReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: String,
    pub dialogues: usize,
    pub diversity: DiversityAverages,
    pub nli_score: Option<f64>,
    /// Dialogues with a defined NLI-Score.
    pub nli_dialogues: usize,
}

/// Per-model averages, models in lexicographic order.
pub fn summarize(dialogues: &[DialogueMetrics]) -> Vec<ModelSummary> {
    let mut groups: BTreeMap<&str, Vec<&DialogueMetrics>> = BTreeMap::new();
    for d in dialogues {
        groups.entry(&d.model).or_default().push(d);
    }
    groups
        .into_iter()
        .map(|(model, ds)| {
            let div: Vec<DialogueDiversity> = ds.iter().map(|d| d.diversity).collect();
            let scores: Vec<f64> = ds
                .iter()
                .filter_map(|d| d.nli.as_ref().map(|n| n.score))
                .collect();
            ModelSummary {
                model: model.to_string(),
                dialogues: ds.len(),
                diversity: DiversityAverages::of(&div),
                nli_score: mean(scores.iter().copied()),
                nli_dialogues: scores.len(),
            }
        })
        .collect()
}

fn opt(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(v) => format!("{v:.precision$}"),
        None => "n/a".into(),
    }
}

/// Human-readable table: model, then [`SUMMARY_COLUMNS`].
pub fn render_summary_table(summaries: &[ModelSummary]) -> String {
    let mut out = format!(
        "{:<12}{:>12}{:>14}{:>14}{:>10}{:>11}\n",
        "Model",
        SUMMARY_COLUMNS[0],
        SUMMARY_COLUMNS[1],
        SUMMARY_COLUMNS[2],
        SUMMARY_COLUMNS[3],
        SUMMARY_COLUMNS[4]
    );
    for s in summaries {
        out.push_str(&format!(
            "{:<12}{:>12}{:>14.2}{:>14.2}{:>10.2}{:>11}\n",
            s.model,
            opt(s.diversity.perplexity, 2),
            s.diversity.distinct_unigrams,
            s.diversity.distinct_bigrams,
            s.diversity.words,
            opt(s.nli_score, 2),
        ));
    }
    out
}

/// Tab-separated per-dialogue records with a header line.
pub fn render_dialogue_records(dialogues: &[DialogueMetrics]) -> String {
    let mut out = String::from(
        "script_id\tmodel\twords\tdistinct_unigrams\tdistinct_bigrams\tperplexity\tnli_score\tnli_steps\n",
    );
    for d in dialogues {
        let c = d.diversity.counts;
        let perplexity = d
            .diversity
            .perplexity
            .map_or("NA".to_string(), |p| p.to_string());
        let (score, steps) = match &d.nli {
            Some(n) => (
                n.score.to_string(),
                n.steps
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            None => ("NA".to_string(), String::new()),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            d.script_id,
            d.model,
            c.words,
            c.distinct_unigrams,
            c.distinct_bigrams,
            perplexity,
            score,
            steps
        ));
    }
    out
}
