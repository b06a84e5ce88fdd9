//! Closed vocabulary over whitespace tokens, with reserved control ids.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const SEP_TOKEN: &str = "<sep>";

/// Token id into a [`Vocabulary`]. Ids are dense in `[0, |V|)`.
pub type TokenId = u32;

/// Closed vocabulary: distinct token strings with dense ids and the three
/// reserved control tokens (BOS, EOS, SEP) always present.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
    sep: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary from word tokens. The reserved tokens are
    /// prepended automatically and must not appear in `words`.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string(), SEP_TOKEN.to_string()];
        for w in words {
            tokens.push(w.as_ref().to_string());
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::config("vocabulary", format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, id_of, bos: 0, eos: 1, sep: 2 })
    }

    /// Rebuilds from a full token list (as stored in a checkpoint); the
    /// first three entries must be the reserved tokens.
    pub fn from_full_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[0] != BOS_TOKEN
            || tokens[1] != EOS_TOKEN
            || tokens[2] != SEP_TOKEN
        {
            return Err(Error::Checkpoint("vocabulary missing reserved tokens".into()));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Checkpoint(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, id_of, bos: 0, eos: 1, sep: 2 })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn sep(&self) -> TokenId {
        self.sep
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Whitespace tokenization; out-of-vocabulary words are rejected.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            match self.id_of(word) {
                Some(id) => ids.push(id),
                None => {
                    return Err(Error::InvalidSample(format!("out-of-vocabulary token `{word}`")))
                }
            }
        }
        Ok(TokenSequence::new(ids))
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.ids().iter().map(|&id| self.token(id)).collect::<Vec<_>>().join(" ")
    }
}

/// Shared immutable vocabulary handle.
pub type VocabRef = Arc<Vocabulary>;

/// Ordered list of token ids. Empty only as a generation-failure sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence { ids }
    }

    pub fn empty() -> Self {
        TokenSequence { ids: Vec::new() }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.ids.push(id);
    }

    /// Concatenation `self ++ other`.
    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        TokenSequence { ids }
    }

    /// Checks every id against the vocabulary.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for &id in &self.ids {
            if !vocab.contains_id(id) {
                return Err(Error::InvalidSample(format!("token id {id} out of range")));
            }
        }
        Ok(())
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence { ids }
    }
}
