//! Generated corpora with known structure, for trend checks and smoke runs.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Ending, InputFormatter, Side, StoryPair, Vocab};
use crate::error::Result;
use crate::seed::{derive_seed, rng};
use crate::skeleton::{Label, LabelSeq};
use crate::tagger::{labeled_instance, TaggerInstance};

const NAMES: [&str; 8] = ["tom", "anna", "mike", "lucy", "sam", "kate", "jack", "emma"];
const PLACES: [&str; 5] = ["store", "market", "park", "mall", "beach"];
const MOODS: [&str; 4] = ["happy", "glad", "calm", "proud"];

/// Condition word and the one slot word it implies.
pub const CONDITION_SLOTS: [(&str, &str); 8] = [
    ("hungry", "apple"),
    ("thirsty", "soda"),
    ("cold", "coat"),
    ("tired", "pillow"),
    ("bored", "book"),
    ("sick", "medicine"),
    ("wet", "towel"),
    ("sad", "flower"),
];

pub fn slot_for(condition_word: &str) -> Option<&'static str> {
    CONDITION_SLOTS.iter().find(|(c, _)| *c == condition_word).map(|(_, s)| *s)
}

pub fn is_slot_word(token: &str) -> bool {
    CONDITION_SLOTS.iter().any(|(_, s)| *s == token)
}

/// Ground truth for one templated pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFacts {
    pub story_id: String,
    pub condition_word: String,
    pub counterfactual_word: String,
    pub expected_slot: String,
}

/// Story pairs where the condition word alone decides which slot word the
/// ending mentions. Original and counterfactual endings differ only in the
/// slot word.
pub fn templated_corpus(n: usize, seed: u64) -> (Vec<StoryPair>, Vec<TemplateFacts>) {
    let mut r = rng(derive_seed(seed, &["templated"]));
    let mut pairs = Vec::with_capacity(n);
    let mut facts = Vec::with_capacity(n);
    for i in 0..n {
        let name = *NAMES.choose(&mut r).expect("non-empty");
        let place = *PLACES.choose(&mut r).expect("non-empty");
        let mood = *MOODS.choose(&mut r).expect("non-empty");
        let a = r.random_range(0..CONDITION_SLOTS.len());
        let b = (a + r.random_range(1..CONDITION_SLOTS.len())) % CONDITION_SLOTS.len();
        let (cond, slot) = CONDITION_SLOTS[a];
        let (cf, cf_slot) = CONDITION_SLOTS[b];
        let variant = r.random_range(0..2);
        let ending = |s: &str| -> Ending {
            [
                format!("{name} bought a {s}."),
                if variant == 0 {
                    format!("{name} took the {s} home.")
                } else {
                    format!("The {s} was very good.")
                },
                format!("{name} was {mood} after that."),
            ]
        };
        let id = format!("tpl-{i:05}");
        let pair = StoryPair::new(
            id.clone(),
            format!("{name} went to the {place}."),
            format!("{name} was {cond}."),
            ending(slot),
            format!("{name} was {cf}."),
            vec![ending(cf_slot)],
        )
        .expect("templated pair is well formed");
        pairs.push(pair);
        facts.push(TemplateFacts {
            story_id: id,
            condition_word: cond.into(),
            counterfactual_word: cf.into(),
            expected_slot: cf_slot.into(),
        });
    }
    (pairs, facts)
}

/// A generated ending is condition-consistent when it mentions the expected
/// slot word and no other slot word.
pub fn condition_consistent<S: AsRef<str>>(ending: &[S], expected_slot: &str) -> bool {
    let mut seen = false;
    for t in ending {
        let t = t.as_ref();
        if t == expected_slot {
            seen = true;
        } else if is_slot_word(t) {
            return false;
        }
    }
    seen
}

/// Settings for [`separable_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableConfig {
    pub pairs: usize,
    /// Share of ending positions holding an ambiguous token.
    pub noise: f64,
    /// Share of the remaining positions holding a causal token.
    pub causal_share: f64,
    pub words_per_sentence: usize,
}

impl Default for SeparableConfig {
    fn default() -> Self {
        SeparableConfig {
            pairs: 400,
            noise: 0.1,
            causal_share: 0.2,
            words_per_sentence: 5,
        }
    }
}

/// Ambiguous token types and the probability that an occurrence is labeled
/// causal.
pub const AMBIGUOUS: [(&str, f64); 4] = [("amblo1", 0.3), ("amblo2", 0.3), ("ambhi1", 0.7), ("ambhi2", 0.7)];
const CAUSAL_WORDS: usize = 10;
const BACKGROUND_WORDS: usize = 30;

/// Labeled sketch instances where causal (`cw*`) and background (`bw*`)
/// tokens are disjoint, except for a `noise` share of ambiguous tokens whose
/// labels are drawn at fixed per-type rates. Returns the pairs and the
/// labels of each original ending.
pub fn separable_corpus(
    cfg: &SeparableConfig,
    seed: u64,
) -> Result<(Vec<StoryPair>, Vec<LabelSeq>)> {
    let mut r = rng(derive_seed(seed, &["separable"]));
    let word = |prefix: &str, i: usize| format!("{prefix}{i}");
    let mut pairs = Vec::with_capacity(cfg.pairs);
    let mut labels = Vec::with_capacity(cfg.pairs);
    for i in 0..cfg.pairs {
        let mut ending: Vec<String> = Vec::with_capacity(3);
        let mut lab = Vec::new();
        for _ in 0..3 {
            let mut sentence = Vec::with_capacity(cfg.words_per_sentence);
            for _ in 0..cfg.words_per_sentence {
                if r.random_bool(cfg.noise) {
                    let (w, rate) = AMBIGUOUS[r.random_range(0..AMBIGUOUS.len())];
                    sentence.push(w.to_string());
                    lab.push(if r.random_bool(rate) { Label::Causal } else { Label::Background });
                } else if r.random_bool(cfg.causal_share) {
                    sentence.push(word("cw", r.random_range(0..CAUSAL_WORDS)));
                    lab.push(Label::Causal);
                } else {
                    sentence.push(word("bw", r.random_range(0..BACKGROUND_WORDS)));
                    lab.push(Label::Background);
                }
            }
            lab.push(Label::Background);
            ending.push(format!("{}.", sentence.join(" ")));
        }
        let premise: Vec<String> = (0..5).map(|_| word("bw", r.random_range(0..BACKGROUND_WORDS))).collect();
        let ending: Ending = [ending[0].clone(), ending[1].clone(), ending[2].clone()];
        pairs.push(StoryPair::new(
            format!("sep-{i:05}"),
            format!("{}.", premise.join(" ")),
            format!("cond{}.", r.random_range(0..4)),
            ending.clone(),
            format!("cond{}.", r.random_range(4..8)),
            vec![ending],
        )?);
        labels.push(lab);
    }
    Ok((pairs, labels))
}

/// Sketch instances for pairs with externally supplied labels.
pub fn instances_with_labels(
    pairs: &[StoryPair],
    labels: &[LabelSeq],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<TaggerInstance>> {
    let fmt = InputFormatter::new(vocab, max_len);
    pairs
        .iter()
        .zip(labels)
        .map(|(p, l)| labeled_instance(&fmt, p, Side::Original, l.clone()))
        .collect()
}
