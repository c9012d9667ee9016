//! Client for a logit provider served over HTTP/JSON.
//!
//! ```text
//! GET    /v1/vocab                 -> ["<eos>", "Yes", ...]
//! POST   /v1/session               {"prompt": "..."} -> {"session_id": "...", "vocab_size": N}
//! POST   /v1/session/{id}/step     {"token_id": 17}  -> {"logits": [...]}
//! DELETE /v1/session/{id}
//! ```
//!
//! A step with `"token_id": null` ingests the prompt and returns the logits
//! for the first generated position.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::{Deserialize, Serialize};

use crate::provider::{LogitProvider, Logits, ProviderError, Session, TokenId, Vocabulary};

#[derive(Debug, Serialize, Deserialize)]
pub struct OpenRequest {
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OpenResponse {
    pub session_id: String,
    pub vocab_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepRequest {
    pub token_id: Option<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub logits: Vec<f32>,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct HttpProvider {
    base: String,
    client: Client,
    vocab: Vocabulary,
}

fn transport(e: reqwest::Error) -> ProviderError {
    ProviderError::Transport(e.to_string())
}

fn check(resp: Response, what: &str) -> Result<Response, ProviderError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    let msg = format!("{what}: HTTP {status}: {}", body.trim());
    Err(if status.is_client_error() {
        ProviderError::Protocol(msg)
    } else {
        ProviderError::Transport(msg)
    })
}

impl HttpProvider {
    /// Fetches the vocabulary and detects the end-of-sequence token.
    pub fn connect(base_url: &str) -> Result<Self, ProviderError> {
        Self::connect_with(base_url, None, DEFAULT_TIMEOUT)
    }

    /// As [`HttpProvider::connect`], with an explicit end-of-sequence token.
    pub fn connect_with(base_url: &str, eos: Option<&str>, timeout: Duration) -> Result<Self, ProviderError> {
        let base = base_url.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ProviderError::Protocol(format!(
                "provider URL must be http(s): {base_url:?}"
            )));
        }
        let client = Client::builder().timeout(timeout).build().map_err(transport)?;
        let resp = client.get(format!("{base}/v1/vocab")).send().map_err(transport)?;
        let tokens: Vec<String> = check(resp, "GET /v1/vocab")?
            .json()
            .map_err(|e| ProviderError::Protocol(format!("vocabulary is not a JSON string list: {e}")))?;
        let vocab = match eos {
            Some(eos) => Vocabulary::new(tokens, eos)?,
            None => Vocabulary::detect_eos(tokens)?,
        };
        Ok(Self { base, client, vocab })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }
}

impl LogitProvider for HttpProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn open_session(&self, prompt: &str) -> Result<Box<dyn Session>, ProviderError> {
        let resp = self
            .client
            .post(format!("{}/v1/session", self.base))
            .json(&OpenRequest {
                prompt: prompt.to_string(),
            })
            .send()
            .map_err(transport)?;
        let opened: OpenResponse = check(resp, "POST /v1/session")?
            .json()
            .map_err(|e| ProviderError::Protocol(format!("bad session response: {e}")))?;
        let session = HttpSession {
            client: self.client.clone(),
            url: format!("{}/v1/session/{}", self.base, opened.session_id),
            vocab_size: self.vocab.len(),
        };
        if opened.vocab_size != self.vocab.len() {
            return Err(ProviderError::Protocol(format!(
                "session reports vocab_size {} but /v1/vocab lists {}",
                opened.vocab_size,
                self.vocab.len()
            )));
        }
        Ok(Box::new(session))
    }

    fn prefill_batch(&self, sessions: &mut [&mut dyn Session]) -> Vec<Result<Logits, ProviderError>> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = sessions.iter_mut().map(|s| scope.spawn(move || s.prefill())).collect();
            handles.into_iter().map(join).collect()
        })
    }

    fn step_batch(&self, sessions: &mut [&mut dyn Session], tokens: &[TokenId]) -> Vec<Result<Logits, ProviderError>> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = sessions
                .iter_mut()
                .zip(tokens)
                .map(|(s, &t)| scope.spawn(move || s.step(t)))
                .collect();
            handles.into_iter().map(join).collect()
        })
    }
}

fn join(h: std::thread::ScopedJoinHandle<'_, Result<Logits, ProviderError>>) -> Result<Logits, ProviderError> {
    h.join()
        .unwrap_or_else(|_| Err(ProviderError::Transport("request thread panicked".into())))
}

struct HttpSession {
    client: Client,
    url: String,
    vocab_size: usize,
}

impl HttpSession {
    fn post(&self, token_id: Option<TokenId>) -> Result<Logits, ProviderError> {
        let resp = self
            .client
            .post(format!("{}/step", self.url))
            .json(&StepRequest { token_id })
            .send()
            .map_err(transport)?;
        let body: StepResponse = check(resp, "POST step")?
            .json()
            .map_err(|e| ProviderError::Protocol(format!("bad step response: {e}")))?;
        if body.logits.len() != self.vocab_size {
            return Err(ProviderError::Protocol(format!(
                "step returned {} logits for a vocabulary of {}",
                body.logits.len(),
                self.vocab_size
            )));
        }
        Ok(body.logits)
    }
}

impl Session for HttpSession {
    fn prefill(&mut self) -> Result<Logits, ProviderError> {
        self.post(None)
    }

    fn step(&mut self, token: TokenId) -> Result<Logits, ProviderError> {
        if token as usize >= self.vocab_size {
            return Err(ProviderError::UnknownToken(token));
        }
        self.post(Some(token))
    }
}

impl Drop for HttpSession {
    fn drop(&mut self) {
        if let Err(e) = self.client.delete(&self.url).send() {
            log::debug!("closing {} failed: {e}", self.url);
        }
    }
}
