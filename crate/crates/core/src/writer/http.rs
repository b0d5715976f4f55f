//! OpenAI-compatible completions client.
//!
//! Request: `POST {base_url}/completions` with
//! `{"model", "prompt", "max_tokens", "temperature", "stop", "seed"?}` and an
//! optional bearer token. Response: the text of `choices[0].text`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, CompletionParams, LmBackend};

pub const ENV_BASE_URL: &str = "QW_LM_BASE_URL";
pub const ENV_API_KEY: &str = "QW_LM_API_KEY";
pub const ENV_MODEL: &str = "QW_LM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-instruct";

#[derive(Debug, Serialize)]
struct Request<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
}

#[derive(Debug, Deserialize)]
struct Response {
    choices: Vec<Choice>,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    model: String,
    /// Delay before the single retry; doubled per further attempt.
    pub backoff: Duration,
    pub retries: u32,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            backoff: Duration::from_millis(500),
            retries: 1,
        })
    }

    /// Reads the base URL, key and model from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(ENV_BASE_URL).map_err(|_| BackendError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Self::new(base, key, model)
    }

    fn attempt(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let body = Request {
            model: &self.model,
            prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            stop: &params.stop,
            seed: params.seed,
        };
        let mut req = self.client.post(format!("{}/completions", self.base_url)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: Response = serde_json::from_str(&text).map_err(|e| BackendError::Decode(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Decode("no choices".into()))
    }
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Transport(_) => true,
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl LmBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            match self.attempt(prompt, params) {
                Err(e) if attempt < self.retries && retryable(&e) => {
                    log::warn!("completion request failed ({e}); retrying");
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
