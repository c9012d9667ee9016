//! The logit-provider abstraction: anything that maps a prompt plus a token
//! history to next-token logits, with incremental (cached) sessions.

use std::collections::HashMap;

use thiserror::Error;

pub type TokenId = u32;
/// Raw pre-softmax scores, one per vocabulary entry.
pub type Logits = Vec<f32>;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("prompt rejected: {0}")]
    BadPrompt(String),
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// Ordered token list with a designated end-of-sequence entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
}

/// Token strings recognised as end-of-sequence, in order of preference.
pub const EOS_CANDIDATES: [&str; 4] = ["<eos>", "</s>", "<|endoftext|>", "<|eot_id|>"];

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos: &str) -> Result<Self, ProviderError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            // First occurrence wins for duplicate surfaces.
            index.entry(t.clone()).or_insert(i as TokenId);
        }
        let eos = *index
            .get(eos)
            .ok_or_else(|| ProviderError::Protocol(format!("vocabulary has no {eos:?} token")))?;
        Ok(Self { tokens, index, eos })
    }

    /// Picks the first of [`EOS_CANDIDATES`] present in `tokens`.
    pub fn detect_eos(tokens: Vec<String>) -> Result<Self, ProviderError> {
        let eos = EOS_CANDIDATES
            .iter()
            .find(|c| tokens.iter().any(|t| t == *c))
            .ok_or_else(|| ProviderError::Protocol("no end-of-sequence token in vocabulary".into()))?;
        Self::new(tokens, eos)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Concatenates token surfaces, dropping end-of-sequence.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&t| t != self.eos)
            .filter_map(|&t| self.token(t))
            .collect()
    }
}

/// One incremental decoding context. Single-owner; not shared across
/// threads while stepping.
pub trait Session: Send {
    /// Ingests the prompt and returns logits for the first generated
    /// position. Called once, before any [`Session::step`].
    fn prefill(&mut self) -> Result<Logits, ProviderError>;

    /// Appends `token` to the history and returns logits for the next
    /// position.
    fn step(&mut self, token: TokenId) -> Result<Logits, ProviderError>;
}

/// A next-token scorer `f(prompt, history) -> logits`.
///
/// Contract: logits are deterministic given the session history, their
/// length equals the vocabulary size, and replaying a history token by token
/// in a fresh session reproduces the incremental logits.
pub trait LogitProvider: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn open_session(&self, prompt: &str) -> Result<Box<dyn Session>, ProviderError>;

    /// Prefills several sessions in one call. The default is sequential.
    fn prefill_batch(&self, sessions: &mut [&mut dyn Session]) -> Vec<Result<Logits, ProviderError>> {
        sessions.iter_mut().map(|s| s.prefill()).collect()
    }

    /// Steps several sessions in one call; `tokens[i]` goes to `sessions[i]`.
    fn step_batch(&self, sessions: &mut [&mut dyn Session], tokens: &[TokenId]) -> Vec<Result<Logits, ProviderError>> {
        sessions.iter_mut().zip(tokens).map(|(s, &t)| s.step(t)).collect()
    }
}

/// Logits for `history` computed from scratch in a fresh session.
pub fn recompute(provider: &dyn LogitProvider, prompt: &str, history: &[TokenId]) -> Result<Logits, ProviderError> {
    let mut s = provider.open_session(prompt)?;
    let mut z = s.prefill()?;
    for &t in history {
        z = s.step(t)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_lookup_and_decode() {
        let v = Vocabulary::new(vec!["<eos>".into(), "Yes".into(), ", ok".into()], "<eos>").unwrap();
        assert_eq!(v.eos(), 0);
        assert_eq!(v.id("Yes"), Some(1));
        assert_eq!(v.decode(&[1, 2, 0]), "Yes, ok");
        assert!(Vocabulary::new(vec!["a".into()], "<eos>").is_err());
    }

    #[test]
    fn eos_detection() {
        let v = Vocabulary::detect_eos(vec!["hi".into(), "</s>".into()]).unwrap();
        assert_eq!(v.eos(), 1);
        assert!(Vocabulary::detect_eos(vec!["hi".into()]).is_err());
    }
}
