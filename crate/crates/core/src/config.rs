//! Pipeline configuration: a TOML file whose every field can be overridden
//! with a dotted key, e.g. `dn.end_probability=0.3`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::adapters::fixture::{FixtureAdapter, FixtureStore};
use crate::adapters::http::{EndpointPaths, HttpAdapter, HttpConfig};
use crate::adapters::stub::{
    KeywordSentiment, LexicalOverlapNli, PhrasebookGenerator, TemplateGenerator, UniformScorer,
};
use crate::adapters::AdapterSet;
use crate::dn::DnConfig;
use crate::metrics::DEFAULT_MAX_CONTEXT_CHARS;
use crate::orchestration::{default_roster, OrderingMode, RosterEntry};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Scripts read by `evaluate`; defaults to `<output_dir>/scripts`.
    pub scripts_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus_dir: PathBuf::from("corpus"),
            output_dir: PathBuf::from("out"),
            scripts_dir: None,
        }
    }
}

impl PathsConfig {
    pub fn cluster_table(&self) -> PathBuf {
        self.output_dir.join("clusters.tsv")
    }

    pub fn training_dir(&self) -> PathBuf {
        self.output_dir.join("training")
    }

    pub fn simulation_dir(&self) -> PathBuf {
        self.output_dir.join("simulation")
    }

    pub fn scripts_dir(&self) -> PathBuf {
        self.scripts_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("scripts"))
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.output_dir.join("evaluation")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMode {
    Stub,
    Fixture,
    Http,
}

/// Generator used in stub mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StubGenerator {
    /// Rotating per-cluster phrase lists.
    #[default]
    Phrasebook,
    /// One constant utterance per cluster.
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub mode: AdapterMode,
    pub stub_generator: StubGenerator,
    pub base_url: Option<String>,
    pub fixture_path: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub paths: EndpointPaths,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            mode: AdapterMode::Stub,
            stub_generator: StubGenerator::default(),
            base_url: None,
            fixture_path: None,
            timeout_secs: 30,
            max_retries: 3,
            backoff_ms: 200,
            paths: EndpointPaths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub max_context_chars: usize,
    /// Score perplexity through the adapter.
    pub perplexity: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            perplexity: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub pool_across_scripts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub mode: OrderingMode,
    /// Number of scripts per run.
    pub count: usize,
    pub max_new_tokens: u32,
    pub roster: Vec<RosterEntry>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            mode: OrderingMode::Dn,
            count: 50,
            max_new_tokens: 40,
            roster: default_roster(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Number of independent dialogues to simulate.
    pub count: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { count: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    /// `dn.rng_seed` is the root seed of every command.
    pub dn: DnConfig,
    pub adapter: AdapterConfig,
    pub metrics: MetricsConfig,
    pub clustering: ClusteringConfig,
    pub generate: GenerateConfig,
    pub simulate: SimulateConfig,
}

/// Keys holding paths; relative values in a config file are resolved against the file's directory.
const PATH_KEYS: [&str; 4] = [
    "paths.corpus_dir",
    "paths.output_dir",
    "paths.scripts_dir",
    "adapter.fixture_path",
];

fn lookup_mut<'a>(root: &'a mut toml::Table, dotted: &str) -> Option<&'a mut toml::Value> {
    let mut parts = dotted.split('.');
    let mut value = root.get_mut(parts.next()?)?;
    for p in parts {
        value = value.as_table_mut()?.get_mut(p)?;
    }
    Some(value)
}

/// Sets `dotted` in `root`, creating intermediate tables. The raw value is read
/// as a TOML literal when possible and as a bare string otherwise.
pub fn apply_override(root: &mut toml::Table, dotted: &str, raw: &str) -> Result<(), Error> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{dotted}`")));
    }
    let (last, path) = parts.split_last().unwrap();
    let mut table = root;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{dotted}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Loads an optional config file, then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("reading config {}: {e}", p.display())))?;
                let mut t: toml::Table = toml::from_str(&text)
                    .map_err(|e| Error::config(format!("parsing config {}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                for key in PATH_KEYS {
                    if let Some(toml::Value::String(s)) = lookup_mut(&mut t, key) {
                        if Path::new(s.as_str()).is_relative() {
                            *s = base.join(s.as_str()).to_string_lossy().into_owned();
                        }
                    }
                }
                t
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let config: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.dn.validate()?;
        if self.metrics.max_context_chars == 0 {
            return Err(Error::config(
                "metrics.max_context_chars must be at least 1",
            ));
        }
        if self.generate.max_new_tokens == 0 {
            return Err(Error::config("generate.max_new_tokens must be at least 1"));
        }
        if self.generate.roster.is_empty() {
            return Err(Error::config(
                "generate.roster must list at least one character",
            ));
        }
        match self.adapter.mode {
            AdapterMode::Http if self.adapter.base_url.is_none() => Err(Error::config(
                "adapter.mode = http requires adapter.base_url (or --model-url / DRAMANET_MODEL_URL)",
            )),
            AdapterMode::Fixture if self.adapter.fixture_path.is_none() => {
                Err(Error::config("adapter.mode = fixture requires adapter.fixture_path"))
            }
            _ => Ok(()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn build_adapters(&self) -> Result<AdapterSet, Error> {
        let a = &self.adapter;
        Ok(match a.mode {
            AdapterMode::Stub => AdapterSet {
                sentiment: Box::new(KeywordSentiment::default()),
                nli: Box::new(LexicalOverlapNli),
                generator: match a.stub_generator {
                    StubGenerator::Phrasebook => Box::new(PhrasebookGenerator::default()),
                    StubGenerator::Template => Box::new(TemplateGenerator::default()),
                },
                scorer: Box::new(UniformScorer::default()),
            },
            AdapterMode::Fixture => {
                let path = a.fixture_path.as_ref().unwrap();
                let store = FixtureStore::load(path).map_err(|e| {
                    Error::config(format!("loading fixtures {}: {e}", path.display()))
                })?;
                AdapterSet {
                    sentiment: Box::new(FixtureAdapter::new(&store)),
                    nli: Box::new(FixtureAdapter::new(&store)),
                    generator: Box::new(FixtureAdapter::new(&store)),
                    scorer: Box::new(FixtureAdapter::new(&store)),
                }
            }
            AdapterMode::Http => {
                let config = HttpConfig {
                    base_url: a.base_url.clone().unwrap(),
                    paths: a.paths.clone(),
                    timeout: Duration::from_secs(a.timeout_secs),
                    max_retries: a.max_retries,
                    backoff: Duration::from_millis(a.backoff_ms),
                };
                let client = HttpAdapter::new(config).map_err(|e| Error::config(e.to_string()))?;
                AdapterSet {
                    sentiment: Box::new(client.clone()),
                    nli: Box::new(client.clone()),
                    generator: Box::new(client.clone()),
                    scorer: Box::new(client),
                }
            }
        })
    }
}
