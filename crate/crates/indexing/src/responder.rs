use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::mix_seed;

/// What a responder sees for one attempt.
#[derive(Debug, Clone, Copy)]
pub struct TrialContext<'a> {
    pub length: usize,
    pub list_id: usize,
    pub query_id: usize,
    pub prompt: &'a str,
    pub seed: u64,
    /// 0 for the first attempt.
    pub attempt: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ResponderError {
    /// Connection, timeout or malformed response; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
}

impl ResponderError {
    /// Transport failures, rate limiting and server errors.
    pub fn is_retryable(&self) -> bool {
        match self {
            ResponderError::Transport(_) => true,
            ResponderError::Status { status, .. } => *status == 429 || *status >= 500,
        }
    }
}

pub trait Responder: Sync {
    fn respond(&self, ctx: &TrialContext<'_>) -> Result<String, ResponderError>;
}

/// Reads the array and index back out of the prompt and answers correctly.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectResponder;

impl Responder for PerfectResponder {
    fn respond(&self, ctx: &TrialContext<'_>) -> Result<String, ResponderError> {
        let malformed = || ResponderError::Transport("prompt does not follow the indexing template".into());
        let body = ctx.prompt.strip_prefix("arr = [").ok_or_else(malformed)?;
        let (list, rest) = body.split_once(']').ok_or_else(malformed)?;
        let key = rest.rsplit_once("arr[").and_then(|(_, k)| k.split_once(']')).ok_or_else(malformed)?.0;
        let index: usize = key.parse().map_err(|_| malformed())?;
        let value = list.split(", ").nth(index).ok_or_else(malformed)?;
        Ok(value.to_string())
    }
}

/// Answers a uniformly random alphabet symbol, seeded per trial.
#[derive(Debug, Clone)]
pub struct RandomResponder {
    pub seed: u64,
    pub alphabet: Vec<u32>,
}

impl RandomResponder {
    pub fn new(seed: u64) -> Self {
        RandomResponder { seed, alphabet: vec![0, 1, 2, 3] }
    }
}

impl Responder for RandomResponder {
    fn respond(&self, ctx: &TrialContext<'_>) -> Result<String, ResponderError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, ctx.seed));
        Ok(self.alphabet[rng.random_range(0..self.alphabet.len())].to_string())
    }
}

/// Always answers the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantResponder(pub u64);

impl Responder for ConstantResponder {
    fn respond(&self, _ctx: &TrialContext<'_>) -> Result<String, ResponderError> {
        Ok(self.0.to_string())
    }
}

/// Chat-completion endpoint client.
///
/// Sends `{"model", "messages": [{"role": "user", "content": prompt}],
/// "temperature": 0, "max_tokens": 64}` merged with `extra` (which may
/// override those keys), and reads `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct HttpResponder {
    pub endpoint: String,
    pub model: String,
    /// Sent as `Authorization: Bearer <token>` when present.
    pub token: Option<String>,
    pub extra: Map<String, Value>,
    agent: ureq::Agent,
}

impl HttpResponder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        HttpResponder { endpoint: endpoint.into(), model: model.into(), token: None, extra: Map::new(), agent }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_extra(mut self, extra: Map<String, Value>) -> Self {
        self.extra = extra;
        self
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": 64,
        });
        let obj = body.as_object_mut().expect("literal object");
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        body
    }
}

impl Responder for HttpResponder {
    fn respond(&self, ctx: &TrialContext<'_>) -> Result<String, ResponderError> {
        let transport = |e: ureq::Error| ResponderError::Transport(e.to_string());
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(self.request_body(ctx.prompt)).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(ResponderError::Status { status, body: text });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ResponderError::Transport(format!("invalid JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ResponderError::Transport("response lacks choices[0].message.content".into()))
    }
}
