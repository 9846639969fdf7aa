use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::DistributionProvider;
use crate::distribution::{TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Environment variable that overrides [`LogitServerEndpoint::timeout_ms`].
pub const TIMEOUT_ENV: &str = "PROMPTCD_HTTP_TIMEOUT_MS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogitServerEndpoint {
    pub base_url: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl LogitServerEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout_ms: 30_000,
            retries: 2,
        }
    }

    /// Applies [`TIMEOUT_ENV`] when it is set to a positive integer.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(TIMEOUT_ENV) {
            self.timeout_ms = raw
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{TIMEOUT_ENV}={raw:?} is not an integer")))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::invalid("endpoint timeout must be positive"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct VocabResponse {
    tokens: Vec<String>,
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EncodeResponse {
    ids: Vec<TokenId>,
}

#[derive(Serialize)]
struct LogitsRequest<'a> {
    ids: &'a [TokenId],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

/// Client for a remote logit server. Tokenization is owned by the server.
#[derive(Debug)]
pub struct HttpProvider {
    endpoint: LogitServerEndpoint,
    agent: ureq::Agent,
    vocab: Vocabulary,
}

impl HttpProvider {
    /// Fetches the vocabulary; fails if the server is unreachable.
    pub fn connect(endpoint: LogitServerEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build();
        let mut provider = Self {
            endpoint,
            agent,
            vocab: Vocabulary::new(vec![String::new(), String::new()])?,
        };
        let body = provider.call("GET", "/v1/vocab", None)?;
        let resp: VocabResponse = parse(&body, "/v1/vocab")?;
        provider.vocab = Vocabulary::new(resp.tokens).map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(provider)
    }

    pub fn endpoint(&self) -> &LogitServerEndpoint {
        &self.endpoint
    }

    fn call(&self, method: &str, path: &str, body: Option<serde_json::Value>) -> Result<String> {
        let url = format!("{}{}", self.endpoint.base_url, path);
        let attempts = self.endpoint.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let req = self.agent.request(method, &url);
            let result = match &body {
                Some(json) => req.send_json(json.clone()),
                None => req.call(),
            };
            match result {
                Ok(resp) => {
                    return resp.into_string().map_err(|e| Error::Backend {
                        attempts: attempt,
                        message: format!("{path}: reading body: {e}"),
                    })
                }
                Err(ureq::Error::Status(code, _)) if code < 500 => {
                    return Err(Error::Backend {
                        attempts: attempt,
                        message: format!("{path}: HTTP {code}"),
                    })
                }
                Err(ureq::Error::Status(code, _)) => last = format!("{path}: HTTP {code}"),
                Err(e) => last = format!("{path}: {e}"),
            }
            log::debug!("attempt {attempt}/{attempts} failed: {last}");
        }
        Err(Error::Backend {
            attempts,
            message: last,
        })
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str, path: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::Protocol(format!("{path}: {e}")))
}

impl DistributionProvider for HttpProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let body = self.call(
            "POST",
            "/v1/encode",
            Some(serde_json::to_value(EncodeRequest { text })?),
        )?;
        let resp: EncodeResponse = parse(&body, "/v1/encode")?;
        if let Some(&bad) = resp.ids.iter().find(|&&id| id >= self.vocab.len()) {
            return Err(Error::Protocol(format!(
                "/v1/encode returned id {bad} outside vocabulary of {}",
                self.vocab.len()
            )));
        }
        Ok(resp.ids)
    }

    fn next_distribution(&self, ids: &[TokenId], _prompt_len: usize) -> Result<TokenDistribution> {
        let body = self.call("POST", "/v1/logits", Some(serde_json::to_value(LogitsRequest { ids })?))?;
        let resp: LogitsResponse = parse(&body, "/v1/logits")?;
        if resp.logits.len() != self.vocab.len() {
            return Err(Error::Protocol(format!(
                "/v1/logits returned {} logits, vocabulary has {}",
                resp.logits.len(),
                self.vocab.len()
            )));
        }
        TokenDistribution::new(resp.logits).map_err(|e| Error::Protocol(e.to_string()))
    }
}
