//! Persona clustering: every utterance is classified on its own and a character
//! joins the cluster of its prevailing label.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::adapters::{AdapterError, SentimentAdapter};
use crate::label::{CharacterId, SentimentLabel};
use crate::preprocess::RawScript;

/// Scope used for characters whose counts were pooled across scripts.
pub const POOLED_SCOPE: &str = "*";

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("cannot assign a cluster to a character with no utterances")]
    NoUtterances,
    #[error("labeling `{character}` in script `{script_id}`: {source}")]
    Adapter {
        script_id: String,
        character: CharacterId,
        #[source]
        source: AdapterError,
    },
    #[error("cluster table line {line}: {message}")]
    Table { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelCounts([u64; 3]);

impl LabelCounts {
    pub fn new(positive: u64, neutral: u64, negative: u64) -> Self {
        LabelCounts([positive, neutral, negative])
    }

    pub fn get(&self, label: SentimentLabel) -> u64 {
        self.0[label.index()]
    }

    pub fn add(&mut self, label: SentimentLabel) {
        self.0[label.index()] += 1;
    }

    pub fn merge(&mut self, other: &LabelCounts) {
        for i in 0..3 {
            self.0[i] += other.0[i];
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl FromIterator<SentimentLabel> for LabelCounts {
    fn from_iter<I: IntoIterator<Item = SentimentLabel>>(iter: I) -> Self {
        let mut c = LabelCounts::default();
        for l in iter {
            c.add(l);
        }
        c
    }
}

/// Classifies each utterance individually, preserving order.
pub fn label_utterances(
    utterances: &[String],
    classifier: &dyn SentimentAdapter,
) -> Result<Vec<SentimentLabel>, AdapterError> {
    Ok(classifier
        .sentiment(utterances)?
        .into_iter()
        .map(|p| p.label)
        .collect())
}

/// Label with the greatest count. Ties go to neutral when it is among the
/// leaders, otherwise to positive.
pub fn assign_cluster(counts: &LabelCounts) -> Result<SentimentLabel, ClusterError> {
    if counts.total() == 0 {
        return Err(ClusterError::NoUtterances);
    }
    let best = SentimentLabel::ALL
        .iter()
        .map(|l| counts.get(*l))
        .max()
        .unwrap();
    let leaders: Vec<SentimentLabel> = SentimentLabel::ALL
        .into_iter()
        .filter(|l| counts.get(*l) == best)
        .collect();
    Ok(match leaders.as_slice() {
        [only] => *only,
        tied if tied.contains(&SentimentLabel::Neutral) => SentimentLabel::Neutral,
        _ => SentimentLabel::Positive,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CharacterKey {
    /// Script id, or [`POOLED_SCOPE`] when counts span the whole corpus.
    pub scope: String,
    pub character: CharacterId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterProfile {
    pub counts: LabelCounts,
    pub assigned_cluster: SentimentLabel,
}

impl CharacterProfile {
    pub fn utterance_count(&self) -> u64 {
        self.counts.total()
    }
}

/// Cluster assignment for every speaking character of a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterTable {
    pub profiles: BTreeMap<CharacterKey, CharacterProfile>,
}

const TABLE_HEADER: &str = "script_id\tcharacter\tpositive\tneutral\tnegative\tcluster";

impl ClusterTable {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, scope: &str, character: &CharacterId) -> Option<&CharacterProfile> {
        self.profiles.get(&CharacterKey {
            scope: scope.to_string(),
            character: character.clone(),
        })
    }

    /// Cluster of every character visible from `script_id`: per-script entries
    /// first, pooled entries otherwise.
    pub fn clusters_for_script(&self, script_id: &str) -> BTreeMap<CharacterId, SentimentLabel> {
        let mut out = BTreeMap::new();
        for (key, profile) in &self.profiles {
            if key.scope == POOLED_SCOPE {
                out.entry(key.character.clone())
                    .or_insert(profile.assigned_cluster);
            } else if key.scope == script_id {
                out.insert(key.character.clone(), profile.assigned_cluster);
            }
        }
        out
    }

    pub fn members(&self, cluster: SentimentLabel) -> Vec<&CharacterKey> {
        self.profiles
            .iter()
            .filter(|(_, p)| p.assigned_cluster == cluster)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for (k, p) in &self.profiles {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                k.scope,
                k.character,
                p.counts.get(SentimentLabel::Positive),
                p.counts.get(SentimentLabel::Neutral),
                p.counts.get(SentimentLabel::Negative),
                p.assigned_cluster
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, ClusterError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == TABLE_HEADER => {}
            _ => {
                return Err(ClusterError::Table {
                    line: 1,
                    message: format!("expected header `{TABLE_HEADER}`"),
                })
            }
        }
        let mut table = ClusterTable::default();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ClusterError::Table {
                line: n + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let count = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| err(format!("bad count `{s}`: {e}")))
            };
            let counts = LabelCounts::new(count(f[2])?, count(f[3])?, count(f[4])?);
            let assigned_cluster: SentimentLabel = f[5].parse().map_err(|e| err(format!("{e}")))?;
            table.profiles.insert(
                CharacterKey {
                    scope: f[0].to_string(),
                    character: CharacterId::new(f[1]),
                },
                CharacterProfile {
                    counts,
                    assigned_cluster,
                },
            );
        }
        Ok(table)
    }
}

/// Clusters every speaking character of the corpus.
///
/// With `pool_across_scripts`, a name's counts are summed over all scripts
/// before the argmax and the table uses [`POOLED_SCOPE`]; otherwise each
/// script's characters are independent.
pub fn cluster_corpus(
    corpus: &[RawScript],
    classifier: &dyn SentimentAdapter,
    pool_across_scripts: bool,
) -> Result<ClusterTable, ClusterError> {
    let mut groups: Vec<(&str, CharacterId, Vec<String>)> = Vec::new();
    for script in corpus {
        for speaker in script.speakers() {
            let texts = script
                .lines
                .iter()
                .filter(|u| u.speaker == speaker)
                .map(|u| u.text.clone())
                .collect();
            groups.push((&script.script_id, speaker, texts));
        }
    }

    // Requests run concurrently; results are collected back in group order.
    let labeled: Vec<Result<LabelCounts, ClusterError>> = groups
        .par_iter()
        .map(|(script_id, character, texts)| {
            label_utterances(texts, classifier)
                .map(LabelCounts::from_iter)
                .map_err(|source| ClusterError::Adapter {
                    script_id: script_id.to_string(),
                    character: character.clone(),
                    source,
                })
        })
        .collect();

    let mut counts: BTreeMap<CharacterKey, LabelCounts> = BTreeMap::new();
    for ((script_id, character, _), result) in groups.into_iter().zip(labeled) {
        let c = result?;
        let scope = if pool_across_scripts {
            POOLED_SCOPE
        } else {
            script_id
        };
        counts
            .entry(CharacterKey {
                scope: scope.to_string(),
                character,
            })
            .or_default()
            .merge(&c);
    }

    let mut table = ClusterTable::default();
    for (key, c) in counts {
        let assigned_cluster = assign_cluster(&c)?;
        table.profiles.insert(
            key,
            CharacterProfile {
                counts: c,
                assigned_cluster,
            },
        );
    }
    Ok(table)
}
