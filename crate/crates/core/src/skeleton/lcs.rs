//! Longest common subsequence in linear space.
//!
//! Among all maximum-length alignments the one returned is the
//! lexicographically smallest sequence of `(i, j)` index pairs, i.e. matches
//! are taken as early as possible in the first sequence, then in the second.

/// Matched index pairs `(i, j)` into two sequences, strictly increasing in
/// both coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn left_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn right_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.1)
    }
}

/// Canonical LCS alignment of `a` and `b` using `O(len(b))` extra space.
pub fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> Alignment {
    let mut pairs = Vec::new();
    hirschberg(a, b, 0, 0, &mut pairs);
    Alignment { pairs }
}

/// Length of the LCS only, using two DP rows.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return lcs_len(b, a);
    }
    *forward_row(a, b).last().unwrap_or(&0)
}

/// `row[k] = lcs_len(a, &b[..k])` for every `k` in `0..=b.len()`.
fn forward_row<T: PartialEq>(a: &[T], b: &[T]) -> Vec<usize> {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (k, y) in b.iter().enumerate() {
            cur[k + 1] = if x == y {
                prev[k] + 1
            } else {
                cur[k].max(prev[k + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev
}

/// `row[k] = lcs_len(a, &b[k..])` for every `k` in `0..=b.len()`.
fn backward_row<T: PartialEq>(a: &[T], b: &[T]) -> Vec<usize> {
    let n = b.len();
    let mut prev = vec![0usize; n + 1];
    let mut cur = vec![0usize; n + 1];
    for x in a.iter().rev() {
        cur[n] = 0;
        for k in (0..n).rev() {
            cur[k] = if *x == b[k] {
                prev[k + 1] + 1
            } else {
                cur[k + 1].max(prev[k])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev
}

fn hirschberg<T: PartialEq>(
    a: &[T],
    b: &[T],
    a_off: usize,
    b_off: usize,
    out: &mut Vec<(usize, usize)>,
) {
    if a.is_empty() || b.is_empty() {
        return;
    }
    if a.len() == 1 {
        if let Some(j) = b.iter().position(|y| *y == a[0]) {
            out.push((a_off, b_off + j));
        }
        return;
    }
    let mid = a.len() / 2;
    let left = forward_row(&a[..mid], b);
    let right = backward_row(&a[mid..], b);
    // The last optimal split lets the first half of `a` take its earliest
    // matches; the second half then resumes right after the last match the
    // first half used. Together this yields the lexicographically smallest
    // alignment.
    let mut split = 0;
    let mut best = 0;
    for k in 0..=b.len() {
        let total = left[k] + right[k];
        if total >= best {
            best = total;
            split = k;
        }
    }
    let before = out.len();
    hirschberg(&a[..mid], &b[..split], a_off, b_off, out);
    let resume = if out.len() > before {
        out[out.len() - 1].1 + 1 - b_off
    } else {
        0
    };
    hirschberg(&a[mid..], &b[resume..], a_off + mid, b_off + resume, out);
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classic_example_has_length_four() {
        let a: Vec<char> = "ABCBDAB".chars().collect();
        let b: Vec<char> = "BDCABA".chars().collect();
        assert_eq!(brute_force_len(&a, &b), 4);
        let al = lcs(&a, &b);
        assert_eq!(al.len(), 4);
        assert_eq!(al.pairs, canonical_alignment(&a, &b));
    }

    #[test]
    fn identical_sequences_align_fully() {
        let a = ["x", "y", "z", "y"];
        let al = lcs(&a, &a);
        assert_eq!(al.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn disjoint_and_empty() {
        assert!(lcs(&["a", "b"], &["c", "d"]).is_empty());
        assert!(lcs::<&str>(&[], &["c"]).is_empty());
        assert!(lcs::<&str>(&["c"], &[]).is_empty());
        assert_eq!(lcs_len::<u8>(&[], &[]), 0);
    }

    #[test]
    fn tie_break_prefers_early_matches_in_first() {
        // Both (0,1) and (1,0) are maximal; the first index wins.
        assert_eq!(lcs(&['x', 'y'], &['y', 'x']).pairs, vec![(0, 1)]);
        assert_eq!(lcs(&['a', 'a'], &['a']).pairs, vec![(0, 0)]);
        assert_eq!(lcs(&['a'], &['a', 'a']).pairs, vec![(0, 0)]);
    }

    #[test]
    fn long_inputs() {
        let a: Vec<u32> = (0..3000).map(|i| (i * 7) % 13).collect();
        let b: Vec<u32> = (0..2500).map(|i| (i * 5) % 11).collect();
        let al = lcs(&a, &b);
        assert_eq!(al.len(), lcs_len(&a, &b));
        for w in al.pairs.windows(2) {
            assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_canonical(
            a in prop::collection::vec(0u8..4, 0..=10),
            b in prop::collection::vec(0u8..4, 0..=10),
        ) {
            let al = lcs(&a, &b);
            prop_assert_eq!(al.len(), brute_force_len(&a, &b));
            prop_assert_eq!(al.len(), lcs_len(&a, &b));
            prop_assert_eq!(&al.pairs, &canonical_alignment(&a, &b));
            for &(i, j) in &al.pairs {
                prop_assert_eq!(a[i], b[j]);
            }
        }

        #[test]
        fn canonical_on_longer_inputs(
            a in prop::collection::vec(0u8..3, 0..40),
            b in prop::collection::vec(0u8..3, 0..40),
        ) {
            prop_assert_eq!(lcs(&a, &b).pairs, canonical_alignment(&a, &b));
        }
    }
}
