//! Causal/background labels from ending pairs, and causal skeletons.

mod lcs;

pub use lcs::{lcs, lcs_len, Alignment};

#[cfg(test)]
pub(crate) use lcs::oracle;

use serde::{Deserialize, Serialize};

use crate::corpus::{BasicTokenizer, Side, StoryPair};
use crate::error::{Error, Result};

/// Per-token label: causal content differs between the two endings,
/// background content is shared by both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Causal = 0,
    Background = 1,
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Causal),
            1 => Ok(Label::Background),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }
}

pub type LabelSeq = Vec<Label>;

/// Labels for `e` and `e_prime`: tokens on the LCS alignment are background,
/// every other token is causal.
pub fn derive_labels<S: PartialEq>(e: &[S], e_prime: &[S]) -> (LabelSeq, LabelSeq) {
    let al = lcs(e, e_prime);
    let mut left = vec![Label::Causal; e.len()];
    let mut right = vec![Label::Causal; e_prime.len()];
    for &(i, j) in &al.pairs {
        left[i] = Label::Background;
        right[j] = Label::Background;
    }
    (left, right)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkeletonItem {
    Token(String),
    Blank,
}

impl SkeletonItem {
    pub fn token(t: impl Into<String>) -> Self {
        SkeletonItem::Token(t.into())
    }

    pub fn is_blank(&self) -> bool {
        matches!(self, SkeletonItem::Blank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonSource {
    Lcs,
    Predicted,
    Augmented,
    Random,
}

/// Background tokens interleaved with blanks, never two blanks in a row and
/// never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Skeleton {
    items: Vec<SkeletonItem>,
    pub source: SkeletonSource,
}

pub const BLANK_TOKEN: &str = "[BLANK]";

impl Skeleton {
    /// Merges consecutive blanks; an empty item list becomes a single blank.
    pub fn new(items: Vec<SkeletonItem>, source: SkeletonSource) -> Self {
        let mut merged: Vec<SkeletonItem> = Vec::with_capacity(items.len());
        for item in items {
            if item.is_blank() && merged.last().is_some_and(SkeletonItem::is_blank) {
                continue;
            }
            merged.push(item);
        }
        if merged.is_empty() {
            merged.push(SkeletonItem::Blank);
        }
        Skeleton {
            items: merged,
            source,
        }
    }

    pub fn all_blank() -> Self {
        Skeleton::new(vec![SkeletonItem::Blank], SkeletonSource::Lcs)
    }

    pub fn items(&self) -> &[SkeletonItem] {
        &self.items
    }

    pub fn into_items(self) -> Vec<SkeletonItem> {
        self.items
    }

    pub fn with_source(mut self, source: SkeletonSource) -> Self {
        self.source = source;
        self
    }

    pub fn background(&self) -> Vec<&str> {
        self.items
            .iter()
            .filter_map(|it| match it {
                SkeletonItem::Token(t) => Some(t.as_str()),
                SkeletonItem::Blank => None,
            })
            .collect()
    }

    pub fn background_count(&self) -> usize {
        self.items.iter().filter(|it| !it.is_blank()).count()
    }

    pub fn blank_count(&self) -> usize {
        self.items.iter().filter(|it| it.is_blank()).count()
    }

    pub fn is_merged(&self) -> bool {
        !self.items.is_empty()
            && self
                .items
                .windows(2)
                .all(|w| !(w[0].is_blank() && w[1].is_blank()))
    }

    /// Re-applies blank merging.
    pub fn merged(&self) -> Skeleton {
        Skeleton::new(self.items.clone(), self.source)
    }

    /// Tokens with blanks written as `[BLANK]`.
    pub fn render(&self) -> Vec<String> {
        self.items
            .iter()
            .map(|it| match it {
                SkeletonItem::Token(t) => t.clone(),
                SkeletonItem::Blank => BLANK_TOKEN.to_string(),
            })
            .collect()
    }

    /// Inverse of [`Skeleton::render`].
    pub fn parse<S: AsRef<str>>(tokens: &[S], source: SkeletonSource) -> Skeleton {
        let items = tokens
            .iter()
            .map(|t| match t.as_ref() {
                BLANK_TOKEN => SkeletonItem::Blank,
                other => SkeletonItem::token(other),
            })
            .collect();
        Skeleton::new(items, source)
    }
}

impl std::fmt::Display for Skeleton {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&crate::corpus::detokenize(&self.render()))
    }
}

/// Replaces causal tokens with blanks and merges consecutive blanks.
pub fn build_skeleton<S: AsRef<str>>(
    ending: &[S],
    labels: &[Label],
    source: SkeletonSource,
) -> Result<Skeleton> {
    if ending.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "ending tokens vs labels",
            left: ending.len(),
            right: labels.len(),
        });
    }
    let items = ending
        .iter()
        .zip(labels)
        .map(|(tok, label)| match label {
            Label::Background => SkeletonItem::token(tok.as_ref()),
            Label::Causal => SkeletonItem::Blank,
        })
        .collect();
    Ok(Skeleton::new(items, source))
}

/// The LCS skeleton of an ending pair, built from the first ending's side.
pub fn lcs_skeleton<S: AsRef<str> + PartialEq>(e: &[S], e_prime: &[S]) -> Skeleton {
    let (labels, _) = derive_labels(e, e_prime);
    build_skeleton(e, &labels, SkeletonSource::Lcs).expect("labels match ending length")
}

/// LCS labels of a pair's original ending and its first reference ending.
pub fn pair_labels(pair: &StoryPair) -> Result<(LabelSeq, LabelSeq)> {
    let e = pair
        .ending_tokens(Side::Original, &BasicTokenizer)
        .expect("original ending always present");
    let e2 = pair
        .ending_tokens(Side::Counterfactual, &BasicTokenizer)
        .ok_or_else(|| Error::Invalid(format!("{}: no counterfactual ending", pair.id)))?;
    Ok(derive_labels(&e, &e2))
}

/// One row of the skeleton/label dump written by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRecord {
    pub story_id: String,
    pub labels_original: LabelSeq,
    pub labels_counterfactual: LabelSeq,
    pub skeleton_tokens: Vec<String>,
}

impl SkeletonRecord {
    /// Labels for both endings and the skeleton of the original ending.
    pub fn from_pair(pair: &StoryPair) -> Result<Self> {
        let (l, l2) = pair_labels(pair)?;
        let e = pair
            .ending_tokens(Side::Original, &BasicTokenizer)
            .expect("original ending always present");
        let k = build_skeleton(&e, &l, SkeletonSource::Lcs)?;
        Ok(SkeletonRecord {
            story_id: pair.id.clone(),
            labels_original: l,
            labels_counterfactual: l2,
            skeleton_tokens: k.render(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn causal_tokens(e: &[String], labels: &[Label]) -> Vec<String> {
        e.iter()
            .zip(labels)
            .filter(|(_, l)| **l == Label::Causal)
            .map(|(t, _)| t.clone())
            .collect()
    }

    #[test]
    fn field_building_pair() {
        let e = toks("she ran to the field and picked flowers");
        let e2 = toks("she ran to the building and bought flowers");
        assert_eq!(oracle::brute_force_len(&e, &e2), 6);
        let (l, l2) = derive_labels(&e, &e2);
        assert_eq!(causal_tokens(&e, &l), toks("field picked"));
        assert_eq!(causal_tokens(&e2, &l2), toks("building bought"));
        let k = build_skeleton(&e, &l, SkeletonSource::Lcs).unwrap();
        assert_eq!(
            k.render(),
            toks("she ran to the [BLANK] and [BLANK] flowers")
        );
    }

    #[test]
    fn identical_endings_are_all_background() {
        let e = toks("a b c");
        let (l, l2) = derive_labels(&e, &e);
        assert!(l.iter().chain(&l2).all(|x| *x == Label::Background));
    }

    #[test]
    fn disjoint_endings_are_all_causal() {
        let (l, l2) = derive_labels(&toks("a b"), &toks("c d e"));
        assert_eq!(l.len(), 2);
        assert_eq!(l2.len(), 3);
        assert!(l.iter().chain(&l2).all(|x| *x == Label::Causal));
    }

    #[test]
    fn merge_of_middle_run() {
        use Label::*;
        let k = build_skeleton(
            &toks("a b c d e"),
            &[Background, Causal, Causal, Background, Background],
            SkeletonSource::Lcs,
        )
        .unwrap();
        assert_eq!(k.render(), toks("a [BLANK] d e"));
        assert_eq!(k.blank_count(), 1);
    }

    #[test]
    fn all_causal_is_single_blank() {
        let k = build_skeleton(&toks("a b c"), &[Label::Causal; 3], SkeletonSource::Lcs).unwrap();
        assert_eq!(k.render(), vec![BLANK_TOKEN]);
        assert_eq!(Skeleton::new(vec![], SkeletonSource::Lcs).render(), vec![BLANK_TOKEN]);
    }

    #[test]
    fn length_mismatch() {
        let err = build_skeleton(&toks("a b"), &[Label::Causal], SkeletonSource::Lcs).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn render_example() {
        let k = Skeleton::new(
            vec![SkeletonItem::token("a"), SkeletonItem::Blank, SkeletonItem::token("d")],
            SkeletonSource::Lcs,
        );
        assert_eq!(k.render(), toks("a [BLANK] d"));
    }

    #[test]
    fn labels_serialize_as_integers() {
        let json = serde_json::to_string(&vec![Label::Causal, Label::Background]).unwrap();
        assert_eq!(json, "[0,1]");
        assert!(serde_json::from_str::<Vec<Label>>("[2]").is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(str::to_string)
    }

    fn item() -> impl Strategy<Value = SkeletonItem> {
        prop_oneof![
            1 => Just(SkeletonItem::Blank),
            2 => word().prop_map(SkeletonItem::Token),
        ]
    }

    proptest! {
        #[test]
        fn shared_background_symmetry(
            e in prop::collection::vec(word(), 0..25),
            e2 in prop::collection::vec(word(), 0..25),
        ) {
            let (l, l2) = derive_labels(&e, &e2);
            let k = build_skeleton(&e, &l, SkeletonSource::Lcs).unwrap();
            let k2 = build_skeleton(&e2, &l2, SkeletonSource::Lcs).unwrap();
            prop_assert_eq!(k.background(), k2.background());
            prop_assert_eq!(k.background_count(), lcs_len(&e, &e2));
            prop_assert!(k.is_merged() && k2.is_merged());
            prop_assert_eq!(&k.merged(), &k);

            let causal = l.iter().filter(|x| **x == Label::Causal).count();
            let runs = l
                .iter()
                .enumerate()
                .filter(|(i, x)| **x == Label::Causal && (*i == 0 || l[i - 1] != Label::Causal))
                .count();
            prop_assert!(k.blank_count() <= runs.max(1));
            prop_assert!(runs <= causal);
        }

        #[test]
        fn render_parse_round_trip(items in prop::collection::vec(item(), 0..20)) {
            let k = Skeleton::new(items, SkeletonSource::Random);
            let rendered = k.render();
            prop_assert!(rendered.windows(2).all(|w| !(w[0] == BLANK_TOKEN && w[1] == BLANK_TOKEN)));
            prop_assert_eq!(Skeleton::parse(&rendered, SkeletonSource::Random), k);
        }
    }
}
