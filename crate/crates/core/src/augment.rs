//! Noisy variants of LCS skeletons used to regularize the customize stage.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::skeleton::{Skeleton, SkeletonItem, SkeletonSource};

pub const DEFAULT_REPLACE_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub replace_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            replace_ratio: DEFAULT_REPLACE_RATIO,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn new(replace_ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&replace_ratio) {
            return Err(Error::Invalid(format!(
                "replace_ratio must lie in [0, 1], got {replace_ratio}"
            )));
        }
        Ok(AugmentConfig {
            replace_ratio,
            seed,
        })
    }

    /// Number of background tokens touched: `replace_ratio * background`
    /// rounded half up.
    pub fn touched(&self, background: usize) -> usize {
        ((self.replace_ratio * background as f64) + 0.5).floor() as usize
    }

    fn with_seed(&self, seed: u64) -> Self {
        AugmentConfig { seed, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Blank,
    Replace,
    Shuffle,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Blank, Variant::Replace, Variant::Shuffle];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Blank => "blank",
            Variant::Replace => "replace",
            Variant::Shuffle => "shuffle",
        }
    }
}

fn background_positions(k: &Skeleton) -> Vec<usize> {
    k.items()
        .iter()
        .enumerate()
        .filter(|(_, it)| !it.is_blank())
        .map(|(i, _)| i)
        .collect()
}

/// Turns `round(ratio * B)` randomly chosen background tokens into blanks.
pub fn augment_blank(k: &Skeleton, cfg: &AugmentConfig) -> Skeleton {
    let positions = background_positions(k);
    let n = cfg.touched(positions.len());
    let mut items = k.items().to_vec();
    let mut r = rng(cfg.seed);
    for pick in index::sample(&mut r, positions.len(), n) {
        items[positions[pick]] = SkeletonItem::Blank;
    }
    Skeleton::new(items, SkeletonSource::Augmented)
}

/// Replaces `round(ratio * B)` randomly chosen background tokens with
/// different regular tokens drawn uniformly from `vocab`.
pub fn augment_replace(k: &Skeleton, cfg: &AugmentConfig, vocab: &Vocab) -> Result<Skeleton> {
    let pool = vocab.regular_tokens();
    if pool.is_empty() {
        return Err(Error::Empty("vocabulary of regular tokens"));
    }
    let positions = background_positions(k);
    let n = cfg.touched(positions.len());
    let mut items = k.items().to_vec();
    let mut r = rng(cfg.seed);
    for pick in index::sample(&mut r, positions.len(), n) {
        let pos = positions[pick];
        let current = match &items[pos] {
            SkeletonItem::Token(t) => t.clone(),
            SkeletonItem::Blank => unreachable!("positions hold tokens"),
        };
        let replacement = if pool.len() == 1 {
            pool[0].clone()
        } else {
            loop {
                let cand = &pool[r.random_range(0..pool.len())];
                if *cand != current {
                    break cand.clone();
                }
            }
        };
        items[pos] = SkeletonItem::Token(replacement);
    }
    Ok(Skeleton::new(items, SkeletonSource::Augmented))
}

/// Permutes the background tokens; blanks stay between the same background
/// slots.
pub fn augment_shuffle(k: &Skeleton, cfg: &AugmentConfig) -> Skeleton {
    let positions = background_positions(k);
    let mut tokens: Vec<SkeletonItem> = positions.iter().map(|&p| k.items()[p].clone()).collect();
    tokens.shuffle(&mut rng(cfg.seed));
    let mut items = k.items().to_vec();
    for (&pos, tok) in positions.iter().zip(tokens) {
        items[pos] = tok;
    }
    Skeleton::new(items, SkeletonSource::Augmented)
}

/// The three augmented variants of `k` for one story, each seeded from
/// `(cfg.seed, story_id, variant)`.
pub fn augment_all(
    k: &Skeleton,
    cfg: &AugmentConfig,
    vocab: &Vocab,
    story_id: &str,
) -> Result<Vec<(Variant, Skeleton)>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let c = cfg.with_seed(derive_seed(cfg.seed, &[story_id, v.as_str()]));
            let out = match v {
                Variant::Blank => augment_blank(k, &c),
                Variant::Replace => augment_replace(k, &c, vocab)?,
                Variant::Shuffle => augment_shuffle(k, &c),
            };
            Ok((v, out))
        })
        .collect()
}

/// One row of the augmented-skeleton dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub story_id: String,
    pub variant: Variant,
    pub skeleton_tokens: Vec<String>,
}
