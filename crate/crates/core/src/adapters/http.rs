//! Blocking JSON-over-HTTP client for the model server.
//!
//! Endpoints (field names are normative):
//!
//! | path         | request                                          | response                                  |
//! |--------------|--------------------------------------------------|-------------------------------------------|
//! | `/sentiment` | `{"texts":[..]}`                                 | `{"labels":[..],"probs":[[pos,neu,neg]]}` |
//! | `/nli`       | `{"premise":..,"hypothesis":..}`                 | `{"entailment":..,"neutral":..,"contradiction":..}` |
//! | `/generate`  | `{"cluster":..,"history":[..],"max_new_tokens":..}` | `{"text":..}`                          |
//! | `/score`     | `{"text":..}`                                    | `{"tokens":..,"total_log_prob":..}`       |
//!
//! Transport failures (connection errors, timeouts, 5xx) are retried with
//! exponential backoff; anything else is returned immediately.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    AdapterError, AdapterResult, GenerationAdapter, GenerationRequest, NliAdapter, NliTriple,
    ScoreAdapter, SentimentAdapter, SentimentPrediction, TokenScore,
};
use crate::label::SentimentLabel;

pub const MODEL_URL_ENV: &str = "DRAMANET_MODEL_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointPaths {
    pub sentiment: String,
    pub nli: String,
    pub generate: String,
    pub score: String,
}

impl Default for EndpointPaths {
    fn default() -> Self {
        EndpointPaths {
            sentiment: "/sentiment".into(),
            nli: "/nli".into(),
            generate: "/generate".into(),
            score: "/score".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub paths: EndpointPaths,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further one.
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            paths: EndpointPaths::default(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentimentRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentimentResponse {
    pub labels: Vec<SentimentLabel>,
    pub probs: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NliRequest {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct HttpAdapter {
    config: HttpConfig,
    client: Client,
}

impl HttpAdapter {
    pub fn new(config: HttpConfig) -> AdapterResult<Self> {
        let url = reqwest::Url::parse(&config.base_url).map_err(|e| {
            AdapterError::InvalidInput(format!("bad model url `{}`: {e}", config.base_url))
        })?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(AdapterError::InvalidInput(format!(
                "model url must be http(s), got `{}`",
                config.base_url
            )));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AdapterError::Transport(format!("cannot build http client: {e}")))?;
        Ok(HttpAdapter { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.config.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> AdapterResult<Resp> {
        let url = self.url(path);
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    log::warn!(
                        "POST {url} failed ({e}); retry {attempt}/{}",
                        self.config.max_retries
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> AdapterResult<Resp> {
        log::debug!("POST {url}");
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| AdapterError::Transport(format!("POST {url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| AdapterError::Transport(format!("reading response from {url}: {e}")))?;
        if status.is_server_error() {
            return Err(AdapterError::Transport(format!(
                "{url} returned {status}: {text}"
            )));
        }
        if !status.is_success() {
            return Err(AdapterError::Protocol(format!(
                "{url} returned {status}: {text}"
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| AdapterError::Protocol(format!("malformed response from {url}: {e}")))
    }
}

impl SentimentAdapter for HttpAdapter {
    fn classify(&self, texts: &[String]) -> AdapterResult<Vec<SentimentPrediction>> {
        let resp: SentimentResponse = self.post(
            &self.config.paths.sentiment,
            &SentimentRequest {
                texts: texts.to_vec(),
            },
        )?;
        if resp.labels.len() != resp.probs.len() {
            return Err(AdapterError::Protocol(format!(
                "sentiment response has {} labels but {} probability vectors",
                resp.labels.len(),
                resp.probs.len()
            )));
        }
        Ok(resp
            .labels
            .into_iter()
            .zip(resp.probs)
            .map(|(label, probs)| SentimentPrediction { label, probs })
            .collect())
    }
}

impl NliAdapter for HttpAdapter {
    fn infer(&self, premise: &str, hypothesis: &str) -> AdapterResult<NliTriple> {
        self.post(
            &self.config.paths.nli,
            &NliRequest {
                premise: premise.into(),
                hypothesis: hypothesis.into(),
            },
        )
    }
}

impl GenerationAdapter for HttpAdapter {
    fn complete(&self, request: &GenerationRequest) -> AdapterResult<String> {
        let resp: GenerateResponse = self.post(&self.config.paths.generate, request)?;
        Ok(resp.text)
    }
}

impl ScoreAdapter for HttpAdapter {
    fn score_tokens(&self, text: &str) -> AdapterResult<TokenScore> {
        self.post(
            &self.config.paths.score,
            &ScoreRequest { text: text.into() },
        )
    }
}
