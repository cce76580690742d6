//! Script generation: a speaker ordering (dramatic network or uniform random)
//! drives per-cluster generators one utterance at a time.
//!
//! The generator only ever sees the speaker's cluster and the dialogue so far
//! rendered from the speaker's perspective (their own lines `focus`, everyone
//! else's `other`). Ordering parameters never reach it.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterError, GenerationAdapter, GenerationRequest, HistoryEntry};
use crate::dn::{self, DnConfig, DnError};
use crate::label::{CharacterId, Role, SentimentLabel};
use crate::preprocess::parse_script;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingMode {
    Dn,
    Random,
}

impl OrderingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderingMode::Dn => "dn",
            OrderingMode::Random => "random",
        }
    }
}

impl fmt::Display for OrderingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dn" => Ok(OrderingMode::Dn),
            "random" => Ok(OrderingMode::Random),
            other => Err(format!(
                "unknown ordering mode `{other}` (expected dn or random)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: CharacterId,
    pub cluster: SentimentLabel,
}

/// One character per cluster.
pub fn default_roster() -> Vec<RosterEntry> {
    [
        ("ALEX", SentimentLabel::Positive),
        ("JORDAN", SentimentLabel::Neutral),
        ("MORGAN", SentimentLabel::Negative),
    ]
    .into_iter()
    .map(|(id, cluster)| RosterEntry {
        id: CharacterId::new(id),
        cluster,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptLine {
    pub speaker: CharacterId,
    pub addressee: Option<CharacterId>,
    pub exchange_index: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub mode: OrderingMode,
    pub seed: u64,
    pub config: DnConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub roster: Vec<RosterEntry>,
    pub lines: Vec<ScriptLine>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineMeta {
    speaker: CharacterId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addressee: Option<CharacterId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exchange_index: Option<usize>,
}

/// Sidecar written next to each script file.
#[derive(Debug, Serialize, Deserialize)]
struct ScriptMeta {
    mode: OrderingMode,
    seed: u64,
    config: DnConfig,
    roster: Vec<RosterEntry>,
    lines: Vec<LineMeta>,
}

impl Script {
    pub fn cluster_of(&self, id: &CharacterId) -> Option<SentimentLabel> {
        self.roster.iter().find(|r| &r.id == id).map(|r| r.cluster)
    }

    /// Corpus-format text: one `NAME: utterance` line per script line.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&format!("{}: {}\n", l.speaker, l.text));
        }
        out
    }

    /// TOML sidecar with mode, seed, configuration, roster and per-line structure.
    pub fn render_metadata(&self) -> String {
        let meta = ScriptMeta {
            mode: self.provenance.mode,
            seed: self.provenance.seed,
            config: self.provenance.config.clone(),
            roster: self.roster.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| LineMeta {
                    speaker: l.speaker.clone(),
                    addressee: l.addressee.clone(),
                    exchange_index: l.exchange_index,
                })
                .collect(),
        };
        toml::to_string(&meta).expect("script metadata serializes")
    }

    /// Rebuilds a script from its text and sidecar.
    pub fn from_parts(script_id: &str, text: &str, metadata: &str) -> Result<Script, String> {
        let raw = parse_script(script_id, text).map_err(|e| e.to_string())?;
        let meta: ScriptMeta =
            toml::from_str(metadata).map_err(|e| format!("script `{script_id}` metadata: {e}"))?;
        if meta.lines.len() != raw.lines.len() {
            return Err(format!(
                "script `{script_id}`: metadata describes {} lines, text has {}",
                meta.lines.len(),
                raw.lines.len()
            ));
        }
        let lines = raw
            .lines
            .into_iter()
            .zip(meta.lines)
            .enumerate()
            .map(|(i, (u, m))| {
                if u.speaker != m.speaker {
                    return Err(format!(
                        "script `{script_id}` line {}: speaker `{}` disagrees with metadata `{}`",
                        i + 1,
                        u.speaker,
                        m.speaker
                    ));
                }
                Ok(ScriptLine {
                    speaker: u.speaker,
                    addressee: m.addressee,
                    exchange_index: m.exchange_index,
                    text: u.text,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Script {
            roster: meta.roster,
            lines,
            provenance: Provenance {
                mode: meta.mode,
                seed: meta.seed,
                config: meta.config,
            },
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestrationError {
    #[error("invalid roster: {0}")]
    Roster(String),
    #[error(transparent)]
    Dn(#[from] DnError),
    #[error("generation failed at line {line}: {source}")]
    Partial {
        /// The lines generated before the failure.
        completed: Box<Script>,
        line: usize,
        #[source]
        source: AdapterError,
    },
}

/// The dialogue so far as seen by `speaker`.
pub fn render_history(lines: &[ScriptLine], speaker: &CharacterId) -> Vec<HistoryEntry> {
    lines
        .iter()
        .map(|l| HistoryEntry {
            role: if &l.speaker == speaker {
                Role::Focus
            } else {
                Role::Other
            },
            text: l.text.clone(),
        })
        .collect()
}

fn check_roster(roster: &[RosterEntry]) -> Result<(), OrchestrationError> {
    if roster.is_empty() {
        return Err(OrchestrationError::Roster("roster is empty".into()));
    }
    let mut seen = HashSet::new();
    for r in roster {
        if !seen.insert(&r.id) {
            return Err(OrchestrationError::Roster(format!(
                "duplicate character `{}`",
                r.id
            )));
        }
    }
    Ok(())
}

struct Slot {
    speaker: usize,
    addressee: Option<CharacterId>,
    exchange_index: Option<usize>,
}

fn fill(
    roster: &[RosterEntry],
    slots: Vec<Slot>,
    provenance: Provenance,
    generator: &dyn GenerationAdapter,
    max_new_tokens: u32,
) -> Result<Script, OrchestrationError> {
    let mut script = Script {
        roster: roster.to_vec(),
        lines: Vec::with_capacity(slots.len()),
        provenance,
    };
    for (i, slot) in slots.into_iter().enumerate() {
        let speaker = &roster[slot.speaker];
        let request = GenerationRequest {
            cluster: speaker.cluster,
            history: render_history(&script.lines, &speaker.id),
            max_new_tokens,
        };
        match generator.generate(&request) {
            Ok(text) => script.lines.push(ScriptLine {
                speaker: speaker.id.clone(),
                addressee: slot.addressee,
                exchange_index: slot.exchange_index,
                text,
            }),
            Err(source) => {
                return Err(OrchestrationError::Partial {
                    completed: Box::new(script),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(script)
}

/// Orders speakers with the dramatic-network simulator seeded by `config.rng_seed`.
pub fn generate_script_dn(
    roster: &[RosterEntry],
    config: &DnConfig,
    generator: &dyn GenerationAdapter,
    max_new_tokens: u32,
) -> Result<Script, OrchestrationError> {
    check_roster(roster)?;
    let characters: Vec<(CharacterId, SentimentLabel)> =
        roster.iter().map(|r| (r.id.clone(), r.cluster)).collect();
    let (schedule, _) = dn::run_simulation(&characters, config)?;
    let slots = schedule
        .turns
        .into_iter()
        .map(|t| Slot {
            speaker: roster.iter().position(|r| r.id == t.speaker).unwrap(),
            addressee: Some(t.addressee),
            exchange_index: Some(t.exchange_index),
        })
        .collect();
    let provenance = Provenance {
        mode: OrderingMode::Dn,
        seed: config.rng_seed,
        config: config.clone(),
    };
    fill(roster, slots, provenance, generator, max_new_tokens)
}

/// Roster indices drawn i.i.d. uniformly; after each line the dialogue ends
/// with probability `end_probability` (capped at `max_lines`).
pub fn sample_random_order<R: Rng + ?Sized>(
    roster_len: usize,
    end_probability: f64,
    max_lines: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut order = Vec::new();
    loop {
        order.push(rng.random_range(0..roster_len));
        if rng.random::<f64>() < end_probability || order.len() >= max_lines {
            return order;
        }
    }
}

/// Random-order variant: uniform speakers, geometric length, no addressees or exchanges.
pub fn generate_script_random(
    roster: &[RosterEntry],
    config: &DnConfig,
    generator: &dyn GenerationAdapter,
    max_new_tokens: u32,
) -> Result<Script, OrchestrationError> {
    check_roster(roster)?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let slots = sample_random_order(
        roster.len(),
        config.end_probability,
        config.max_lines,
        &mut rng,
    )
    .into_iter()
    .map(|speaker| Slot {
        speaker,
        addressee: None,
        exchange_index: None,
    })
    .collect();
    let provenance = Provenance {
        mode: OrderingMode::Random,
        seed: config.rng_seed,
        config: config.clone(),
    };
    fill(roster, slots, provenance, generator, max_new_tokens)
}

pub fn generate_script(
    mode: OrderingMode,
    roster: &[RosterEntry],
    config: &DnConfig,
    generator: &dyn GenerationAdapter,
    max_new_tokens: u32,
) -> Result<Script, OrchestrationError> {
    match mode {
        OrderingMode::Dn => generate_script_dn(roster, config, generator, max_new_tokens),
        OrderingMode::Random => generate_script_random(roster, config, generator, max_new_tokens),
    }
}
