//! Script generation with persona language models orchestrated by a simulated
//! dramatic network.
//!
//! The pipeline:
//!
//! 1. [`clustering`]: classify every utterance of a script corpus and assign
//!    each character the prevailing sentiment (positive, neutral, negative).
//! 2. [`preprocess`]: turn the corpus into one training file per cluster,
//!    relabeling speakers as `focus` / `other`.
//! 3. [`dn`]: simulate who speaks to whom, driven by per-character centrality,
//!    loyalty and reciprocity.
//! 4. [`orchestration`]: fill a speaker schedule with utterances from the
//!    per-cluster generators.
//! 5. [`metrics`]: diversity, perplexity, sentiment consistency and NLI-Score.
//!
//! All model inference goes through the [`adapters`] traits.

pub mod adapters;
pub mod clustering;
pub mod config;
pub mod dn;
mod fsutil;
pub mod label;
pub mod metrics;
pub mod orchestration;
pub mod pipeline;
pub mod preprocess;

pub use label::{CharacterId, Role, SentimentLabel};

use adapters::AdapterError;

/// Top-level error of the pipeline commands; each variant maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("adapter failure: {0}")]
    Adapter(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// 2 for configuration and input problems, 3 for adapter or transport failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            Error::Adapter(_) => 3,
        }
    }
}

impl From<AdapterError> for Error {
    fn from(e: AdapterError) -> Self {
        match e {
            AdapterError::InvalidInput(m) => Error::Input(m),
            other => Error::Adapter(other.to_string()),
        }
    }
}

impl From<dn::DnError> for Error {
    fn from(e: dn::DnError) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<clustering::ClusterError> for Error {
    fn from(e: clustering::ClusterError) -> Self {
        match e {
            clustering::ClusterError::Adapter { .. } => Error::Adapter(e.to_string()),
            other => Error::Input(other.to_string()),
        }
    }
}

impl From<preprocess::PreprocessError> for Error {
    fn from(e: preprocess::PreprocessError) -> Self {
        Error::Input(e.to_string())
    }
}

impl From<orchestration::OrchestrationError> for Error {
    fn from(e: orchestration::OrchestrationError) -> Self {
        use orchestration::OrchestrationError as O;
        match e {
            O::Partial { .. } => Error::Adapter(e.to_string()),
            O::Dn(d) => d.into(),
            O::Roster(m) => Error::Config(format!("invalid roster: {m}")),
        }
    }
}

impl From<metrics::MetricError> for Error {
    fn from(e: metrics::MetricError) -> Self {
        use metrics::MetricError as M;
        match e {
            M::Nli { .. } | M::Score { .. } | M::Sentiment { .. } => Error::Adapter(e.to_string()),
            other => Error::Input(other.to_string()),
        }
    }
}
