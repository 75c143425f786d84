//! Chat backends: an OpenAI-compatible HTTP client and a scripted mock.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::{render_pairs, KeyedTweet};
use super::{Provenance, RelevanceScore};
use crate::error::{Error, Result};
use crate::ingestion::read_jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub max_tweets_per_prompt: usize,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 60.0,
            max_tweets_per_prompt: super::prompt::DEFAULT_MAX_TWEETS_PER_PROMPT,
            temperature: 0.0,
            max_in_flight: 4,
            backoff_base_ms: 500,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::Config("llm timeout must be positive".into()));
        }
        if self.max_tweets_per_prompt == 0 || self.max_in_flight == 0 {
            return Err(Error::Config(
                "max_tweets_per_prompt and max_in_flight must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One scoring call: the rendered prompt plus the keys it asks about.
#[derive(Debug, Clone, Copy)]
pub struct ScoringRequest<'a> {
    pub user_id: &'a str,
    pub prompt: &'a str,
    pub keys: &'a [KeyedTweet],
}

pub trait ChatBackend: Send + Sync {
    /// Model name recorded in the verdict cache.
    fn model(&self) -> &str;
    fn provenance(&self) -> Provenance;
    /// Returns the raw text of the model's answer.
    fn complete(&self, request: &ScoringRequest<'_>) -> Result<String>;
}

struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: LlmEndpointConfig,
    client: reqwest::blocking::Client,
    api_key: ApiKey,
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: LlmEndpointConfig) -> Result<Self> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| Error::MissingApiKey(config.api_key_env.clone()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: LlmEndpointConfig, api_key: String) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            config,
            client,
            api_key: ApiKey(api_key),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, (bool, Option<u16>, String)> {
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key.0)
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| (true, None, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| (true, Some(status), e.to_string()))?;
        if !(200..300).contains(&status) {
            let retryable = status == 408 || status == 429 || status >= 500;
            return Err((retryable, Some(status), text));
        }
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| (false, Some(status), format!("{e}: {text}")))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or((false, Some(status), text))
    }
}

impl ChatBackend for HttpBackend {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn provenance(&self) -> Provenance {
        Provenance::Llm
    }

    fn complete(&self, request: &ScoringRequest<'_>) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, status, last_body)) => {
                    if !retryable || attempts > self.config.max_retries {
                        return Err(Error::LlmExhausted {
                            attempts,
                            status,
                            body: last_body,
                        });
                    }
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
                    log::warn!(
                        "llm request for user {} failed (status {status:?}); retry {attempts} in {delay} ms",
                        request.user_id
                    );
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MockRecord {
    Verdict { tweet_id: String, score: u8 },
    Scripted { user_id: String, response: String },
}

/// Deterministic stand-in for an LLM.
///
/// Scripted responses are returned verbatim for their user. Otherwise the
/// mock answers with `(key:score)` pairs looked up by tweet id, defaulting
/// to 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockBackend {
    pub verdicts: BTreeMap<String, RelevanceScore>,
    pub scripted: BTreeMap<String, String>,
}

impl MockBackend {
    pub fn load(path: &Path) -> Result<Self> {
        let mut mock = MockBackend::default();
        for (line, rec) in read_jsonl::<MockRecord>(path)? {
            match rec {
                MockRecord::Verdict { tweet_id, score } => {
                    let s = RelevanceScore::new(i64::from(score)).map_err(|_| Error::Malformed {
                        file: path.display().to_string(),
                        line,
                        message: format!("score {score} outside 1..=3"),
                    })?;
                    mock.verdicts.insert(tweet_id, s);
                }
                MockRecord::Scripted { user_id, response } => {
                    mock.scripted.insert(user_id, response);
                }
            }
        }
        Ok(mock)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<MockRecord> = self
            .verdicts
            .iter()
            .map(|(t, s)| MockRecord::Verdict {
                tweet_id: t.clone(),
                score: s.value(),
            })
            .chain(self.scripted.iter().map(|(u, r)| MockRecord::Scripted {
                user_id: u.clone(),
                response: r.clone(),
            }))
            .collect();
        crate::ingestion::write_jsonl(path, &records)
    }
}

impl ChatBackend for MockBackend {
    fn model(&self) -> &str {
        "mock"
    }

    fn provenance(&self) -> Provenance {
        Provenance::Mock
    }

    fn complete(&self, request: &ScoringRequest<'_>) -> Result<String> {
        if let Some(r) = self.scripted.get(request.user_id) {
            return Ok(r.clone());
        }
        Ok(render_pairs(request.keys.iter().map(|k| {
            (
                k.key.as_str(),
                self.verdicts.get(&k.tweet_id).copied().unwrap_or(RelevanceScore::NONE),
            )
        })))
    }
}
