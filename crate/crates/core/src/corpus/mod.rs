//! Story data model, ingestion, tokenization, vocabulary and the special-token
//! layouts fed to the two stages.

mod dataset;
mod format;
mod tokenize;
mod vocab;

pub use dataset::{ending_from_text, load_dataset, split_sentences, write_dataset, Split};
pub use format::{DEFAULT_MAX_LEN, format_customize_input, format_sketch_input, FormattedInput, InputFormatter, Section};
pub use tokenize::{detokenize, tokenize, BasicTokenizer, Tokenizer};
pub use vocab::{build_vocab, build_vocab_with, TokenId, Vocab, RESERVED_TOKENS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A three-sentence story ending.
pub type Ending = [String; 3];

/// The factual story: premise, condition and its three-sentence ending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub premise: String,
    pub condition: String,
    pub ending: Ending,
}

/// A story together with an intervening condition and zero or more rewritten
/// endings that follow from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryPair {
    pub id: String,
    pub story: Story,
    pub counterfactual_condition: String,
    pub reference_endings: Vec<Ending>,
}

/// Which condition/ending pair of a [`StoryPair`] is being used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Original,
    Counterfactual,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Original, Side::Counterfactual];
}

impl StoryPair {
    pub fn new(
        id: impl Into<String>,
        premise: impl Into<String>,
        condition: impl Into<String>,
        ending: Ending,
        counterfactual_condition: impl Into<String>,
        reference_endings: Vec<Ending>,
    ) -> Result<Self> {
        let pair = StoryPair {
            id: id.into(),
            story: Story {
                premise: premise.into(),
                condition: condition.into(),
                ending,
            },
            counterfactual_condition: counterfactual_condition.into(),
            reference_endings,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        let blank = |s: &str| s.trim().is_empty();
        if blank(&self.story.premise) {
            return Err(Error::Invalid(format!("{}: empty premise", self.id)));
        }
        if blank(&self.story.condition) {
            return Err(Error::Invalid(format!("{}: empty condition", self.id)));
        }
        if blank(&self.counterfactual_condition) {
            return Err(Error::Invalid(format!(
                "{}: empty counterfactual condition",
                self.id
            )));
        }
        let endings = std::iter::once(&self.story.ending).chain(&self.reference_endings);
        for ending in endings {
            if ending.iter().any(|s| blank(s)) {
                return Err(Error::Invalid(format!("{}: empty ending sentence", self.id)));
            }
        }
        Ok(())
    }

    pub fn condition(&self, side: Side) -> &str {
        match side {
            Side::Original => &self.story.condition,
            Side::Counterfactual => &self.counterfactual_condition,
        }
    }

    /// The ending for `side`; the counterfactual side uses the first reference.
    pub fn ending(&self, side: Side) -> Option<&Ending> {
        match side {
            Side::Original => Some(&self.story.ending),
            Side::Counterfactual => self.reference_endings.first(),
        }
    }

    pub fn ending_tokens(&self, side: Side, tokenizer: &dyn Tokenizer) -> Option<Vec<String>> {
        self.ending(side).map(|e| ending_tokens(e, tokenizer))
    }
}

/// Tokens of the three ending sentences, concatenated.
pub fn ending_tokens(ending: &Ending, tokenizer: &dyn Tokenizer) -> Vec<String> {
    ending.iter().flat_map(|s| tokenizer.tokenize(s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Premise,
    Condition,
    CfCondition,
    Ending,
    CfEnding,
    Skeleton,
}

/// A tokenized piece of text and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub role: Role,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>, role: Role) -> Self {
        TokenSeq { tokens, role }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }
}
