use log::warn;
use serde::{Deserialize, Serialize};

use super::{BasicTokenizer, Side, StoryPair, TokenId, Tokenizer, Vocab};
use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

pub const DEFAULT_MAX_LEN: usize = 300;

/// Sections of a formatted sequence, each opened by its marker token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Section {
    Pre,
    Con1,
    Con2,
    Con,
    Ske,
    End,
}

impl Section {
    pub const COUNT: usize = 6;

    pub fn marker(self) -> TokenId {
        match self {
            Section::Pre => Vocab::PRE,
            Section::Con1 => Vocab::CON1,
            Section::Con2 => Vocab::CON2,
            Section::Con => Vocab::CON,
            Section::Ske => Vocab::SKE,
            Section::End => Vocab::END,
        }
    }

    /// Index into a segment embedding table.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A token-id sequence with its section layout.
///
/// For sketch inputs the ending occupies `ending_start..len()`. Customize
/// inputs stop right after `[END]`, so there `ending_start == len()` and the
/// ending is what gets generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedInput {
    pub ids: Vec<TokenId>,
    /// `(section, index of its marker)` in sequence order.
    pub segments: Vec<(Section, usize)>,
    pub ending_start: usize,
    /// Number of tokens dropped to respect the length limit.
    pub truncated: usize,
}

impl FormattedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ending_len(&self) -> usize {
        self.ids.len() - self.ending_start
    }

    /// Segment index of every position, for segment embeddings.
    pub fn segment_ids(&self) -> Vec<usize> {
        segment_ids(&self.segments, self.ids.len())
    }
}

pub(crate) fn segment_ids(segments: &[(Section, usize)], len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for (k, &(section, start)) in segments.iter().enumerate() {
        let end = segments.get(k + 1).map_or(len, |s| s.1).min(len);
        for slot in out.iter_mut().take(end).skip(start) {
            *slot = section.index();
        }
    }
    out
}

/// Formats story pairs into model inputs.
pub struct InputFormatter<'a> {
    pub vocab: &'a Vocab,
    pub tokenizer: &'a dyn Tokenizer,
    pub max_len: usize,
}

impl<'a> InputFormatter<'a> {
    pub fn new(vocab: &'a Vocab, max_len: usize) -> Self {
        InputFormatter {
            vocab,
            tokenizer: &BasicTokenizer,
            max_len,
        }
    }

    fn text_ids(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode(&self.tokenizer.tokenize(text))
    }

    /// `[PRE] p [CON1] c [CON2] c' [END] e` for the original side; the
    /// counterfactual side swaps roles to `[PRE] p [CON1] c' [CON2] c [END] e'`.
    pub fn sketch(&self, pair: &StoryPair, side: Side) -> Result<FormattedInput> {
        let ending = pair.ending(side).ok_or_else(|| {
            Error::Invalid(format!("{}: no reference ending for the counterfactual side", pair.id))
        })?;
        let other = match side {
            Side::Original => Side::Counterfactual,
            Side::Counterfactual => Side::Original,
        };
        let ending_ids: Vec<TokenId> = ending.iter().flat_map(|s| self.text_ids(s)).collect();
        let sections = [
            (Section::Pre, self.text_ids(&pair.story.premise)),
            (Section::Con1, self.text_ids(pair.condition(side))),
            (Section::Con2, self.text_ids(pair.condition(other))),
            (Section::End, ending_ids),
        ];
        let mut input = assemble(&sections);
        if input.ending_len() == 0 {
            return Err(Error::Invalid(format!("{}: empty ending", pair.id)));
        }
        if input.len() > self.max_len {
            let overflow = input.len() - self.max_len;
            if overflow >= input.ending_len() {
                return Err(Error::TooLong {
                    len: input.ending_start,
                    max: self.max_len,
                });
            }
            input.ids.truncate(self.max_len);
            input.truncated = overflow;
            warn!(
                "{}: sketch input truncated by {overflow} ending tokens to fit {}",
                pair.id, self.max_len
            );
        }
        Ok(input)
    }

    /// `[PRE] p [CON] x [SKE] k [END]` where `x` is the condition of `side`.
    /// The skeleton tail is dropped if the context would exceed the limit.
    pub fn customize(
        &self,
        pair: &StoryPair,
        side: Side,
        skeleton: &Skeleton,
    ) -> Result<FormattedInput> {
        let mut skeleton_ids = self.vocab.encode(&skeleton.render());
        if skeleton_ids.is_empty() {
            skeleton_ids.push(Vocab::BLANK);
        }
        let premise = self.text_ids(&pair.story.premise);
        let condition = self.text_ids(pair.condition(side));
        let fixed = 4 + premise.len() + condition.len();
        let mut truncated = 0;
        if fixed + skeleton_ids.len() > self.max_len {
            if fixed + 1 > self.max_len {
                return Err(Error::TooLong {
                    len: fixed + 1,
                    max: self.max_len,
                });
            }
            let keep = self.max_len - fixed;
            truncated = skeleton_ids.len() - keep;
            skeleton_ids.truncate(keep);
            warn!(
                "{}: customize input truncated by {truncated} skeleton tokens to fit {}",
                pair.id, self.max_len
            );
        }
        let sections = [
            (Section::Pre, premise),
            (Section::Con, condition),
            (Section::Ske, skeleton_ids),
            (Section::End, Vec::new()),
        ];
        let mut input = assemble(&sections);
        input.truncated = truncated;
        Ok(input)
    }
}

fn assemble(sections: &[(Section, Vec<TokenId>)]) -> FormattedInput {
    let mut ids = Vec::new();
    let mut segments = Vec::new();
    for (section, body) in sections {
        segments.push((*section, ids.len()));
        ids.push(section.marker());
        ids.extend_from_slice(body);
    }
    let ending_start = segments.last().map_or(0, |s| s.1 + 1);
    FormattedInput {
        ids,
        segments,
        ending_start,
        truncated: 0,
    }
}

/// Sketch-stage input with the basic tokenizer.
pub fn format_sketch_input(
    pair: &StoryPair,
    side: Side,
    vocab: &Vocab,
    max_len: usize,
) -> Result<FormattedInput> {
    InputFormatter::new(vocab, max_len).sketch(pair, side)
}

/// Customize-stage input with the basic tokenizer.
pub fn format_customize_input(
    pair: &StoryPair,
    side: Side,
    skeleton: &Skeleton,
    vocab: &Vocab,
    max_len: usize,
) -> Result<FormattedInput> {
    InputFormatter::new(vocab, max_len).customize(pair, side, skeleton)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, detokenize};
    use crate::skeleton::SkeletonItem;

    fn pair() -> StoryPair {
        let s = |x: &str| x.to_string();
        StoryPair::new(
            "p1",
            "Ann went out.",
            "It was sunny.",
            [s("She ran to the field."), s("She picked flowers."), s("She went home.")],
            "It was raining.",
            vec![[s("She ran to the building."), s("She bought flowers."), s("She went home.")]],
        )
        .unwrap()
    }

    fn decoded(input: &FormattedInput, vocab: &Vocab) -> String {
        detokenize(&vocab.decode(&input.ids))
    }

    #[test]
    fn original_side_layout() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let input = format_sketch_input(&p, Side::Original, &v, 300).unwrap();
        assert_eq!(
            decoded(&input, &v),
            "[PRE] ann went out . [CON1] it was sunny . [CON2] it was raining . \
             [END] she ran to the field . she picked flowers . she went home ."
        );
        let order: Vec<Section> = input.segments.iter().map(|s| s.0).collect();
        assert_eq!(order, vec![Section::Pre, Section::Con1, Section::Con2, Section::End]);
        let end_pos = input.ids.iter().position(|&i| i == Vocab::END).unwrap();
        assert_eq!(input.ending_start, end_pos + 1);
        assert!(input.ending_start < input.len());
    }

    #[test]
    fn counterfactual_side_swaps_conditions() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let input = format_sketch_input(&p, Side::Counterfactual, &v, 300).unwrap();
        assert_eq!(
            decoded(&input, &v),
            "[PRE] ann went out . [CON1] it was raining . [CON2] it was sunny . \
             [END] she ran to the building . she bought flowers . she went home ."
        );
    }

    #[test]
    fn counterfactual_side_needs_reference() {
        let mut p = pair();
        p.reference_endings.clear();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        assert!(format_sketch_input(&p, Side::Counterfactual, &v, 300).is_err());
    }

    #[test]
    fn one_over_limit_drops_last_ending_token() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let full = format_sketch_input(&p, Side::Original, &v, 300).unwrap();
        let limit = full.len() - 1;
        let cut = format_sketch_input(&p, Side::Original, &v, limit).unwrap();
        assert_eq!(cut.len(), limit);
        assert_eq!(cut.truncated, 1);
        assert_eq!(&cut.ids[..], &full.ids[..limit]);
    }

    #[test]
    fn conditions_never_truncated() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let full = format_sketch_input(&p, Side::Original, &v, 300).unwrap();
        let err = format_sketch_input(&p, Side::Original, &v, full.ending_start).unwrap_err();
        assert!(matches!(err, Error::TooLong { .. }));
    }

    #[test]
    fn customize_layouts_share_con_marker() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let k = Skeleton::new(
            vec![
                SkeletonItem::token("she"),
                SkeletonItem::Blank,
                SkeletonItem::token("home"),
            ],
            crate::skeleton::SkeletonSource::Lcs,
        );
        let cf = format_customize_input(&p, Side::Counterfactual, &k, &v, 300).unwrap();
        assert_eq!(
            decoded(&cf, &v),
            "[PRE] ann went out . [CON] it was raining . [SKE] she [BLANK] home [END]"
        );
        assert_eq!(cf.ending_start, cf.len());
        let orig = format_customize_input(&p, Side::Original, &k, &v, 300).unwrap();
        assert_eq!(
            decoded(&orig, &v),
            "[PRE] ann went out . [CON] it was sunny . [SKE] she [BLANK] home [END]"
        );
    }

    #[test]
    fn all_causal_skeleton_is_single_blank() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let k = Skeleton::all_blank();
        let cf = format_customize_input(&p, Side::Counterfactual, &k, &v, 300).unwrap();
        let ske = cf.segments[2].1;
        assert_eq!(&cf.ids[ske..], &[Vocab::SKE, Vocab::BLANK, Vocab::END]);
    }

    #[test]
    fn segment_ids_follow_markers() {
        let p = pair();
        let v = build_vocab(&[p.clone()], 1).unwrap();
        let input = format_sketch_input(&p, Side::Original, &v, 300).unwrap();
        let seg = input.segment_ids();
        assert_eq!(seg[0], Section::Pre.index());
        assert_eq!(seg[input.ending_start - 1], Section::End.index());
        assert_eq!(*seg.last().unwrap(), Section::End.index());
        assert_eq!(seg[input.segments[1].1], Section::Con1.index());
    }
}
