//! Dramatic-network turn-taking simulator.
//!
//! Every character carries three parameters:
//!
//! * **centrality**: an unnormalized weight for starting an exchange. It starts
//!   at `centrality_init` and grows by `centrality_increment` with every line
//!   the character speaks. Initiators are sampled proportionally to it.
//! * **loyalty**: a distribution over the other characters, used to pick an
//!   addressee. Addressing someone boosts their entry additively and the row is
//!   renormalized.
//! * **reciprocity**: the probability of replying when addressed. It decays
//!   geometrically with every line of an exchange and resets when the exchange
//!   ends.
//!
//! After every emitted line the dialogue ends with a fixed probability,
//! independent of the characters, so the total line count is geometric.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::{CharacterId, SentimentLabel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DnError {
    #[error("invalid dramatic-network configuration: {0}")]
    Config(String),
    #[error("degenerate network state: {0}")]
    Degenerate(String),
    #[error("unknown character `{0}`")]
    UnknownCharacter(CharacterId),
    #[error("character `{0}` cannot address itself")]
    SelfAddress(CharacterId),
}

/// Per-character reciprocity settings; unset fields fall back to the global defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReciprocityOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reciprocity_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reciprocity_decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnConfig {
    /// Probability that the dialogue ends after any emitted line.
    pub end_probability: f64,
    pub centrality_init: f64,
    pub centrality_increment: f64,
    /// Additive boost applied to the addressed loyalty entry before renormalizing.
    pub loyalty_boost: f64,
    pub reciprocity_init: f64,
    /// Multiplicative factor applied to reciprocity after each line of an exchange.
    pub reciprocity_decay: f64,
    /// Safety cap on dialogue length.
    pub max_lines: usize,
    pub rng_seed: u64,
    /// Reciprocity overrides keyed by character id.
    pub characters: BTreeMap<String, ReciprocityOverride>,
}

impl Default for DnConfig {
    fn default() -> Self {
        DnConfig {
            end_probability: 0.2,
            centrality_init: 1.0,
            centrality_increment: 1.0,
            loyalty_boost: 0.5,
            reciprocity_init: 0.95,
            reciprocity_decay: 2.0 / 3.0,
            max_lines: 200,
            rng_seed: 0,
            characters: BTreeMap::new(),
        }
    }
}

fn check_probability(name: &str, value: f64) -> Result<(), DnError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(DnError::Config(format!(
            "{name} must lie in [0, 1], got {value}"
        )))
    }
}

fn check_decay(name: &str, value: f64) -> Result<(), DnError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(DnError::Config(format!(
            "{name} must lie in (0, 1), got {value}"
        )))
    }
}

impl DnConfig {
    pub fn validate(&self) -> Result<(), DnError> {
        check_probability("end_probability", self.end_probability)?;
        check_probability("reciprocity_init", self.reciprocity_init)?;
        check_decay("reciprocity_decay", self.reciprocity_decay)?;
        if !(self.centrality_init >= 0.0 && self.centrality_init.is_finite()) {
            return Err(DnError::Config(format!(
                "centrality_init must be a nonnegative real, got {}",
                self.centrality_init
            )));
        }
        if !(self.centrality_increment > 0.0 && self.centrality_increment.is_finite()) {
            return Err(DnError::Config(format!(
                "centrality_increment must be positive, got {}",
                self.centrality_increment
            )));
        }
        if !(self.loyalty_boost >= 0.0 && self.loyalty_boost.is_finite()) {
            return Err(DnError::Config(format!(
                "loyalty_boost must be nonnegative, got {}",
                self.loyalty_boost
            )));
        }
        if self.max_lines == 0 {
            return Err(DnError::Config("max_lines must be at least 1".into()));
        }
        for (id, o) in &self.characters {
            if let Some(init) = o.reciprocity_init {
                check_probability(&format!("characters.{id}.reciprocity_init"), init)?;
            }
            if let Some(decay) = o.reciprocity_decay {
                check_decay(&format!("characters.{id}.reciprocity_decay"), decay)?;
            }
        }
        Ok(())
    }

    /// Effective (initial reciprocity, decay factor) for one character.
    pub fn reciprocity_for(&self, id: &CharacterId) -> (f64, f64) {
        let o = self
            .characters
            .iter()
            .find(|(k, _)| CharacterId::new(k) == *id)
            .map(|(_, v)| v);
        (
            o.and_then(|o| o.reciprocity_init)
                .unwrap_or(self.reciprocity_init),
            o.and_then(|o| o.reciprocity_decay)
                .unwrap_or(self.reciprocity_decay),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterState {
    pub id: CharacterId,
    pub cluster: SentimentLabel,
    pub centrality: f64,
    /// Potential addressees, in roster order; never contains `id`.
    pub addressees: Vec<CharacterId>,
    /// Loyalty distribution, parallel to `addressees`.
    pub loyalty: Vec<f64>,
    pub reciprocity_init: f64,
    pub reciprocity_decay: f64,
    pub reciprocity_current: f64,
    pub lines_spoken: u64,
}

impl CharacterState {
    pub fn loyalty_to(&self, other: &CharacterId) -> Option<f64> {
        self.addressees
            .iter()
            .position(|a| a == other)
            .map(|i| self.loyalty[i])
    }

    pub fn decay_reciprocity(&mut self) {
        self.reciprocity_current *= self.reciprocity_decay;
    }

    pub fn reset_reciprocity(&mut self) {
        self.reciprocity_current = self.reciprocity_init;
    }
}

/// Mutable state of every character during a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    characters: Vec<CharacterState>,
    config: DnConfig,
}

impl NetworkState {
    pub fn new(
        characters: &[(CharacterId, SentimentLabel)],
        config: &DnConfig,
    ) -> Result<Self, DnError> {
        config.validate()?;
        if characters.len() < 2 {
            return Err(DnError::Config(format!(
                "a dramatic network needs at least 2 characters, got {}",
                characters.len()
            )));
        }
        let mut seen = HashSet::new();
        for (id, _) in characters {
            if !seen.insert(id) {
                return Err(DnError::Config(format!("duplicate character id `{id}`")));
            }
        }
        let uniform = 1.0 / (characters.len() - 1) as f64;
        let states = characters
            .iter()
            .map(|(id, cluster)| {
                let (init, decay) = config.reciprocity_for(id);
                let addressees: Vec<CharacterId> = characters
                    .iter()
                    .filter(|(other, _)| other != id)
                    .map(|(other, _)| other.clone())
                    .collect();
                CharacterState {
                    id: id.clone(),
                    cluster: *cluster,
                    centrality: config.centrality_init,
                    loyalty: vec![uniform; addressees.len()],
                    addressees,
                    reciprocity_init: init,
                    reciprocity_decay: decay,
                    reciprocity_current: init,
                    lines_spoken: 0,
                }
            })
            .collect();
        Ok(NetworkState {
            characters: states,
            config: config.clone(),
        })
    }

    pub fn characters(&self) -> &[CharacterState] {
        &self.characters
    }

    pub fn config(&self) -> &DnConfig {
        &self.config
    }

    pub fn get(&self, id: &CharacterId) -> Option<&CharacterState> {
        self.characters.iter().find(|c| &c.id == id)
    }

    fn index_of(&self, id: &CharacterId) -> Result<usize, DnError> {
        self.characters
            .iter()
            .position(|c| &c.id == id)
            .ok_or_else(|| DnError::UnknownCharacter(id.clone()))
    }

    fn initiator_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize, DnError> {
        let weights = self.characters.iter().map(|c| c.centrality);
        let dist = WeightedIndex::new(weights).map_err(|e| {
            DnError::Degenerate(format!("cannot sample an initiator from centralities: {e}"))
        })?;
        Ok(dist.sample(rng))
    }

    fn addressee_index<R: Rng + ?Sized>(
        &self,
        initiator: usize,
        rng: &mut R,
    ) -> Result<usize, DnError> {
        let state = &self.characters[initiator];
        let dist = WeightedIndex::new(&state.loyalty).map_err(|e| {
            DnError::Degenerate(format!("invalid loyalty row for `{}`: {e}", state.id))
        })?;
        let target = &state.addressees[dist.sample(rng)];
        self.index_of(target)
    }

    /// Samples an exchange initiator with probability proportional to centrality.
    pub fn select_initiator<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CharacterId, DnError> {
        let i = self.initiator_index(rng)?;
        Ok(self.characters[i].id.clone())
    }

    /// Samples an addressee for `initiator` from its loyalty row.
    pub fn select_addressee<R: Rng + ?Sized>(
        &self,
        initiator: &CharacterId,
        rng: &mut R,
    ) -> Result<CharacterId, DnError> {
        let i = self.index_of(initiator)?;
        let j = self.addressee_index(i, rng)?;
        Ok(self.characters[j].id.clone())
    }

    /// Updates centrality and loyalty for one emitted line.
    pub fn record_line(
        &mut self,
        speaker: &CharacterId,
        addressee: &CharacterId,
    ) -> Result<(), DnError> {
        if speaker == addressee {
            return Err(DnError::SelfAddress(speaker.clone()));
        }
        let s = self.index_of(speaker)?;
        let a = self.index_of(addressee)?;
        self.record_line_at(s, a);
        Ok(())
    }

    fn record_line_at(&mut self, speaker: usize, addressee: usize) {
        let boost = self.config.loyalty_boost;
        let (init, inc) = (
            self.config.centrality_init,
            self.config.centrality_increment,
        );
        let target = self.characters[addressee].id.clone();
        let state = &mut self.characters[speaker];
        state.lines_spoken += 1;
        // Recomputed rather than accumulated so the bookkeeping identity is exact.
        state.centrality = init + inc * state.lines_spoken as f64;
        if boost > 0.0 {
            let slot = state
                .addressees
                .iter()
                .position(|c| *c == target)
                .expect("addressee is in the speaker's loyalty row");
            state.loyalty[slot] += boost;
            let total: f64 = state.loyalty.iter().sum();
            for w in &mut state.loyalty {
                *w /= total;
            }
        }
    }

    pub fn decay_reciprocity(&mut self, id: &CharacterId) -> Result<(), DnError> {
        let i = self.index_of(id)?;
        self.characters[i].decay_reciprocity();
        Ok(())
    }

    pub fn reset_reciprocity(&mut self, id: &CharacterId) -> Result<(), DnError> {
        let i = self.index_of(id)?;
        self.characters[i].reset_reciprocity();
        Ok(())
    }
}

/// Initializes a network: uniform loyalty, `centrality_init` everywhere, reciprocity at its initial value.
pub fn init_network(
    characters: &[(CharacterId, SentimentLabel)],
    config: &DnConfig,
) -> Result<NetworkState, DnError> {
    NetworkState::new(characters, config)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: CharacterId,
    pub addressee: CharacterId,
    pub exchange_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndProbability,
    MaxLines,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::EndProbability => "end_probability",
            Termination::MaxLines => "max_lines",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Termination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "end_probability" => Ok(Termination::EndProbability),
            "max_lines" => Ok(Termination::MaxLines),
            other => Err(format!("unknown termination `{other}`")),
        }
    }
}

/// Ordered (speaker, addressee, exchange) sequence produced by a simulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSchedule {
    pub turns: Vec<Turn>,
    pub terminated_by: Termination,
}

impl TurnSchedule {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Number of lines in each exchange, in order.
    pub fn exchange_lengths(&self) -> Vec<usize> {
        let mut lengths: Vec<usize> = Vec::new();
        let mut current = None;
        for t in &self.turns {
            if current == Some(t.exchange_index) {
                *lengths.last_mut().unwrap() += 1;
            } else {
                current = Some(t.exchange_index);
                lengths.push(1);
            }
        }
        lengths
    }

    /// Checks alternation within exchanges and exchange-index monotonicity.
    pub fn check_invariants(&self) -> Result<(), String> {
        let Some(first) = self.turns.first() else {
            return Ok(());
        };
        if first.exchange_index != 0 {
            return Err(format!(
                "first exchange index is {}, expected 0",
                first.exchange_index
            ));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.speaker == t.addressee {
                return Err(format!("turn {i}: `{}` addresses itself", t.speaker));
            }
            if i == 0 {
                continue;
            }
            let prev = &self.turns[i - 1];
            if t.exchange_index == prev.exchange_index {
                if t.speaker != prev.addressee || t.addressee != prev.speaker {
                    return Err(format!("turn {i}: exchange does not alternate"));
                }
            } else if t.exchange_index != prev.exchange_index + 1 {
                return Err(format!(
                    "turn {i}: exchange index jumps from {} to {}",
                    prev.exchange_index, t.exchange_index
                ));
            }
        }
        Ok(())
    }

    /// Line-oriented rendering: one `exchange_index<TAB>speaker<TAB>addressee` record per turn.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for t in &self.turns {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                t.exchange_index, t.speaker, t.addressee
            ));
        }
        out
    }

    /// Parses records produced by [`TurnSchedule::to_records`].
    pub fn turns_from_records(text: &str) -> Result<Vec<Turn>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, line)| {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(format!("line {}: expected 3 fields", n + 1));
                }
                let exchange_index = fields[0]
                    .parse()
                    .map_err(|e| format!("line {}: bad exchange index: {e}", n + 1))?;
                Ok(Turn {
                    exchange_index,
                    speaker: CharacterId::new(fields[1]),
                    addressee: CharacterId::new(fields[2]),
                })
            })
            .collect()
    }
}

/// Runs one dialogue with an RNG seeded from `config.rng_seed`.
pub fn run_simulation(
    characters: &[(CharacterId, SentimentLabel)],
    config: &DnConfig,
) -> Result<(TurnSchedule, NetworkState), DnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    run_simulation_with_rng(characters, config, &mut rng)
}

/// Runs one dialogue drawing from the supplied RNG.
///
/// Per emitted line, draws happen in a fixed order: first the end-of-dialogue
/// check, then (if the dialogue continues) the addressee's reply gate. The gate
/// compares against the replier's reciprocity before this line's decay is
/// applied, so the first reply of an exchange uses the initial value.
pub fn run_simulation_with_rng<R: Rng + ?Sized>(
    characters: &[(CharacterId, SentimentLabel)],
    config: &DnConfig,
    rng: &mut R,
) -> Result<(TurnSchedule, NetworkState), DnError> {
    let mut net = NetworkState::new(characters, config)?;
    let mut turns = Vec::new();
    let mut exchange_index = 0;
    loop {
        let mut speaker = net.initiator_index(rng)?;
        let mut listener = net.addressee_index(speaker, rng)?;
        loop {
            turns.push(Turn {
                speaker: net.characters[speaker].id.clone(),
                addressee: net.characters[listener].id.clone(),
                exchange_index,
            });
            net.record_line_at(speaker, listener);

            if rng.random::<f64>() < config.end_probability {
                return Ok((schedule(turns, Termination::EndProbability), net));
            }
            if turns.len() >= config.max_lines {
                return Ok((schedule(turns, Termination::MaxLines), net));
            }

            let replies = rng.random::<f64>() < net.characters[listener].reciprocity_current;
            if replies {
                net.characters[speaker].decay_reciprocity();
                net.characters[listener].decay_reciprocity();
                std::mem::swap(&mut speaker, &mut listener);
            } else {
                net.characters[speaker].reset_reciprocity();
                net.characters[listener].reset_reciprocity();
                exchange_index += 1;
                break;
            }
        }
    }
}

fn schedule(turns: Vec<Turn>, terminated_by: Termination) -> TurnSchedule {
    TurnSchedule {
        turns,
        terminated_by,
    }
}

/// RNG for run `run` of a batch rooted at `seed`: one independent ChaCha stream per run.
pub fn batch_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}
