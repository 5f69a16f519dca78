//! Shared text normalization and the closed vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;

const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<unk>"];

/// Lowercases, drops punctuation and collapses whitespace.
///
/// Apostrophes and other punctuation are removed rather than replaced, so
/// "can't" becomes "cant".
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        let cleaned: String = word
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if cleaned.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&cleaned);
    }
    out
}

pub fn is_special(id: u32) -> bool {
    id <= UNK
}

/// Ordered token list. Ids 0, 1 and 2 are BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect())
            .expect("specials form a valid vocabulary")
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[..3] != SPECIALS {
            return Err(Error::invalid(
                "vocabulary must start with <bos>, <eos>, <unk>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary from normalized texts in first-appearance order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::default();
        for text in texts {
            for word in normalize(text).split(' ').filter(|w| !w.is_empty()) {
                vocab.insert(word);
            }
        }
        vocab
    }

    fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex digest of the ordered token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex16(&h.finalize())
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Normalized text plus its token ids. Tokens always end with EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    text: String,
    tokens: Vec<u32>,
}

impl Utterance {
    pub fn encode(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let text = normalize(text);
        if text.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        let mut tokens: Vec<u32> = text.split(' ').map(|w| vocab.id(w)).collect();
        tokens.push(EOS);
        Ok(Self { text, tokens })
    }

    /// Rebuilds text from ids. A missing trailing EOS is appended.
    pub fn from_tokens(mut tokens: Vec<u32>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.last() != Some(&EOS) {
            tokens.push(EOS);
        }
        let mut words = Vec::with_capacity(tokens.len());
        for &id in &tokens[..tokens.len() - 1] {
            let tok = vocab.token(id).ok_or(Error::TokenOutOfVocab(id))?;
            words.push(tok);
        }
        Ok(Self {
            text: words.join(" "),
            tokens,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Token ids including the trailing EOS.
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Ids without the trailing EOS.
    pub fn words(&self) -> &[u32] {
        &self.tokens[..self.tokens.len() - 1]
    }

    /// Number of word tokens (EOS excluded).
    pub fn word_len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn contains_phrase(&self, phrase: &str) -> bool {
        contains_phrase(&self.text, phrase)
    }
}

/// Whole-word phrase containment on normalized text.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let padded = format!(" {text} ");
    padded.contains(&format!(" {phrase} "))
}
