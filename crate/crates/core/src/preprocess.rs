//! Script corpus parsing and per-cluster training data.
//!
//! Corpus scripts are plain UTF-8 text, one `NAME: utterance` per line. Blank
//! lines and anything without a speaker prefix (stage directions, scene
//! headings) are skipped.
//!
//! Training files hold one document per (script, focus character): each line is
//! rendered `focus: <text>` when spoken by the focus character and
//! `other: <text>` otherwise, and every document is terminated by a blank line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::adapters::HistoryEntry;
use crate::fsutil::write_atomic;
use crate::label::{CharacterId, Role, SentimentLabel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub script_id: String,
    pub message: String,
    /// 1-based numbers of non-blank lines that were skipped.
    pub skipped_lines: Vec<usize>,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "script `{}`: {}", self.script_id, self.message)?;
        if !self.skipped_lines.is_empty() {
            let shown: Vec<String> = self
                .skipped_lines
                .iter()
                .take(10)
                .map(|n| n.to_string())
                .collect();
            write!(f, " (skipped lines: {}", shown.join(", "))?;
            if self.skipped_lines.len() > 10 {
                write!(f, ", ...")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl std::error::Error for FormatError {}

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("script `{script_id}`: speaker `{character}` has no cluster assignment")]
    MissingCluster {
        script_id: String,
        character: CharacterId,
    },
    #[error("training file for {expected} contains an instance of cluster {found}")]
    MixedClusters {
        expected: SentimentLabel,
        found: SentimentLabel,
    },
    #[error("training file line {line}: expected `focus: ` or `other: ` prefix")]
    MalformedTrainingLine { line: usize },
    #[error("writing {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: CharacterId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawScript {
    pub script_id: String,
    pub lines: Vec<Utterance>,
}

impl RawScript {
    /// Speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<CharacterId> {
        let mut seen = BTreeSet::new();
        self.lines
            .iter()
            .filter(|u| seen.insert(u.speaker.clone()))
            .map(|u| u.speaker.clone())
            .collect()
    }

    /// Renders back to the `NAME: utterance` corpus format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for u in &self.lines {
            out.push_str(u.speaker.as_str());
            out.push_str(": ");
            out.push_str(&u.text);
            out.push('\n');
        }
        out
    }
}

fn speaker_line(line: &str) -> Option<(&str, &str)> {
    let (name, text) = line.split_once(':')?;
    let name = name.trim();
    let text = text.trim();
    let starts_ok = name.chars().next().is_some_and(|c| c.is_alphanumeric());
    if !starts_ok || text.is_empty() {
        return None;
    }
    Some((name, text))
}

pub fn parse_script(script_id: &str, raw: &str) -> Result<RawScript, FormatError> {
    let mut lines = Vec::new();
    let mut skipped = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match speaker_line(line) {
            Some((name, text)) => lines.push(Utterance {
                speaker: CharacterId::new(name),
                text: text.to_string(),
            }),
            None => skipped.push(n + 1),
        }
    }
    if lines.is_empty() {
        return Err(FormatError {
            script_id: script_id.to_string(),
            message: "no `NAME: utterance` lines found".into(),
            skipped_lines: skipped,
        });
    }
    Ok(RawScript {
        script_id: script_id.to_string(),
        lines,
    })
}

/// Reads every `*.txt` file in `dir` (sorted by file name) as a script whose id is the file stem.
pub fn load_corpus(dir: &Path) -> Result<Vec<RawScript>, crate::Error> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| crate::Error::input(format!("reading corpus dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(crate::Error::input(format!(
            "corpus dir {} contains no .txt scripts",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| crate::Error::input(format!("reading {}: {e}", p.display())))?;
            let id = p.file_stem().unwrap().to_string_lossy();
            parse_script(&id, &raw).map_err(|e| crate::Error::input(e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub source_script_id: String,
    pub cluster: SentimentLabel,
    pub focus_character: CharacterId,
    pub lines: Vec<HistoryEntry>,
}

/// One instance per speaker of `target` in the script, with that speaker as focus.
///
/// Instances come out sorted by focus character.
pub fn expand_instances(
    script: &RawScript,
    clusters: &BTreeMap<CharacterId, SentimentLabel>,
    target: SentimentLabel,
) -> Result<Vec<TrainingInstance>, PreprocessError> {
    let mut focus = BTreeSet::new();
    for speaker in script.speakers() {
        let cluster = clusters
            .get(&speaker)
            .ok_or_else(|| PreprocessError::MissingCluster {
                script_id: script.script_id.clone(),
                character: speaker.clone(),
            })?;
        if *cluster == target {
            focus.insert(speaker);
        }
    }
    Ok(focus
        .into_iter()
        .map(|f| TrainingInstance {
            source_script_id: script.script_id.clone(),
            cluster: target,
            lines: script
                .lines
                .iter()
                .map(|u| HistoryEntry {
                    role: if u.speaker == f {
                        Role::Focus
                    } else {
                        Role::Other
                    },
                    text: u.text.clone(),
                })
                .collect(),
            focus_character: f,
        })
        .collect())
}

/// Renders a training file, ordering documents by (script id, focus character).
pub fn render_training_file(
    instances: &[TrainingInstance],
    cluster: SentimentLabel,
) -> Result<String, PreprocessError> {
    if let Some(bad) = instances.iter().find(|i| i.cluster != cluster) {
        return Err(PreprocessError::MixedClusters {
            expected: cluster,
            found: bad.cluster,
        });
    }
    let mut ordered: Vec<&TrainingInstance> = instances.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.source_script_id, &a.focus_character).cmp(&(&b.source_script_id, &b.focus_character))
    });
    let mut out = String::new();
    for inst in ordered {
        for line in &inst.lines {
            out.push_str(line.role.as_str());
            out.push_str(": ");
            out.push_str(&line.text);
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a rendered training file back into documents of role-tagged lines.
pub fn parse_training_file(text: &str) -> Result<Vec<Vec<HistoryEntry>>, PreprocessError> {
    let mut docs = Vec::new();
    let mut current = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
            continue;
        }
        let (role, rest) = if let Some(rest) = line.strip_prefix("focus: ") {
            (Role::Focus, rest)
        } else if let Some(rest) = line.strip_prefix("other: ") {
            (Role::Other, rest)
        } else {
            return Err(PreprocessError::MalformedTrainingLine { line: n + 1 });
        };
        current.push(HistoryEntry {
            role,
            text: rest.to_string(),
        });
    }
    if !current.is_empty() {
        docs.push(current);
    }
    Ok(docs)
}

pub fn emit_training_file(
    instances: &[TrainingInstance],
    cluster: SentimentLabel,
    path: &Path,
) -> Result<(), PreprocessError> {
    let text = render_training_file(instances, cluster)?;
    write_atomic(path, text.as_bytes()).map_err(|source| PreprocessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn training_file_name(cluster: SentimentLabel) -> String {
    format!("train_{cluster}.txt")
}
