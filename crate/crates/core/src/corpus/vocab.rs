use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BasicTokenizer, StoryPair, Tokenizer};
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved tokens, always occupying ids `0..RESERVED_TOKENS.len()` in this order.
pub const RESERVED_TOKENS: [&str; 10] = [
    "[PAD]", "[UNK]", "[PRE]", "[CON1]", "[CON2]", "[CON]", "[SKE]", "[END]", "[BLANK]", "[EOE]",
];

const FORMAT: &str = "storyrewrite.vocab";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    hash: String,
    /// Config hash of the run that built the vocabulary, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    tokens: Vec<String>,
}

impl Vocab {
    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    pub const PRE: TokenId = 2;
    pub const CON1: TokenId = 3;
    pub const CON2: TokenId = 4;
    pub const CON: TokenId = 5;
    pub const SKE: TokenId = 6;
    pub const END: TokenId = 7;
    pub const BLANK: TokenId = 8;
    pub const EOE: TokenId = 9;

    /// Builds a vocabulary from regular tokens, placing reserved tokens first.
    /// Duplicates and reserved strings in `regular` are ignored.
    pub fn from_tokens<I, S>(regular: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for tok in regular {
            let tok = tok.into();
            if !index.contains_key(&tok) {
                index.insert(tok.clone(), tokens.len() as TokenId);
                tokens.push(tok);
            }
        }
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED_TOKENS.len()
    }

    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < RESERVED_TOKENS.len()
    }

    /// Ids of all non-reserved tokens.
    pub fn regular_ids(&self) -> std::ops::Range<TokenId> {
        RESERVED_TOKENS.len() as TokenId..self.tokens.len() as TokenId
    }

    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[RESERVED_TOKENS.len()..]
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `[UNK]`.
    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED_TOKENS[Self::UNK as usize])
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Content hash over the ordered token list, used to pair checkpoints
    /// with the vocabulary they were trained on.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        self.to_json_with(None)
    }

    /// Serializes with the producing run's `(config_hash, seed)` embedded.
    pub fn to_json_with(&self, provenance: Option<(&str, u64)>) -> String {
        let file = VocabFile {
            format: FORMAT.into(),
            version: VERSION,
            hash: self.hash(),
            config_hash: provenance.map(|p| p.0.to_string()),
            seed: provenance.map(|p| p.1),
            tokens: self.tokens.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text).map(|(v, _)| v)
    }

    /// Parses a vocabulary file and returns the embedded config hash, if any.
    pub fn from_json_with(text: &str) -> Result<(Self, Option<String>)> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("vocab: {e}")))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Format(format!(
                "vocab: unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let reserved_ok = file.tokens.len() >= RESERVED_TOKENS.len()
            && file.tokens.iter().zip(RESERVED_TOKENS).all(|(a, b)| a == b);
        if !reserved_ok {
            return Err(Error::Format("vocab: reserved tokens missing or reordered".into()));
        }
        let vocab = Vocab::from_tokens(file.tokens[RESERVED_TOKENS.len()..].iter().cloned());
        if vocab.len() != file.tokens.len() {
            return Err(Error::Format("vocab: duplicate tokens".into()));
        }
        if vocab.hash() != file.hash {
            return Err(Error::Format("vocab: hash does not match token list".into()));
        }
        Ok((vocab, file.config_hash))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Collects every token with frequency `>= min_count` across all story text,
/// ordered by descending frequency then lexicographically.
pub fn build_vocab(pairs: &[StoryPair], min_count: usize) -> Result<Vocab> {
    build_vocab_with(pairs, min_count, &BasicTokenizer)
}

pub fn build_vocab_with(
    pairs: &[StoryPair],
    min_count: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::Invalid("min_count must be at least 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for pair in pairs {
        let texts = [
            &pair.story.premise,
            &pair.story.condition,
            &pair.counterfactual_condition,
        ]
        .into_iter()
        .chain(pair.story.ending.iter())
        .chain(pair.reference_endings.iter().flatten());
        for text in texts {
            for tok in tokenizer.tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, n)| *n >= min_count && !RESERVED_TOKENS.contains(&tok.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_tokens(entries.into_iter().map(|(t, _)| t)))
}
