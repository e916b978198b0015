//! Segmented spoken corpora.
//!
//! A corpus is a list of utterances, each an ordered list of word segments
//! with known boundaries. Every segment carries a phonetic embedding and,
//! for evaluation only, an optional word-class label.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    /// 0-based index within the utterance.
    pub position: usize,
    pub embedding: Vec<f64>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub segments: Vec<Segment>,
}

/// Index-based reference to a segment: utterance index in the corpus and the
/// segment position within that utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentRef {
    pub utterance: usize,
    pub position: usize,
}

/// A (target, context) pair of segments from the same utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextPair {
    pub target: SegmentRef,
    pub context: SegmentRef,
}

/// An immutable, validated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedCorpus {
    utterances: Vec<Utterance>,
    dim: usize,
    /// `offsets[u]` is the flat index of the first segment of utterance `u`;
    /// the last entry is the total segment count.
    offsets: Vec<usize>,
    by_segment_id: BTreeMap<String, SegmentRef>,
    by_utterance_id: BTreeMap<String, usize>,
}

impl SegmentedCorpus {
    /// Builds a corpus, inferring the embedding dimension from the first segment.
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        let dim = utterances
            .iter()
            .flat_map(|u| u.segments.first())
            .map(|s| s.embedding.len())
            .next()
            .ok_or(Error::Empty("corpus"))?;
        Self::new(dim, utterances)
    }

    /// Builds a corpus of the given embedding dimension, validating every
    /// invariant. Segments of each utterance are reordered by position.
    pub fn new(dim: usize, mut utterances: Vec<Utterance>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be > 0".into()));
        }
        let mut by_segment_id = BTreeMap::new();
        let mut by_utterance_id = BTreeMap::new();
        let mut offsets = Vec::with_capacity(utterances.len() + 1);
        let mut total = 0;
        for (ui, utt) in utterances.iter_mut().enumerate() {
            if utt.segments.is_empty() {
                return Err(Error::EmptyUtterance(utt.utterance_id.clone()));
            }
            if by_utterance_id.insert(utt.utterance_id.clone(), ui).is_some() {
                return Err(Error::DuplicateId(utt.utterance_id.clone()));
            }
            utt.segments.sort_by_key(|s| s.position);
            for (pos, seg) in utt.segments.iter().enumerate() {
                if seg.position != pos {
                    return Err(Error::NonContiguousPositions {
                        utterance: utt.utterance_id.clone(),
                        len: utt.segments.len(),
                    });
                }
                if seg.embedding.len() != dim {
                    return Err(Error::SegmentDimension {
                        id: seg.segment_id.clone(),
                        expected: dim,
                        found: seg.embedding.len(),
                    });
                }
                if !seg.embedding.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("segment embedding"));
                }
                let r = SegmentRef {
                    utterance: ui,
                    position: pos,
                };
                if by_segment_id.insert(seg.segment_id.clone(), r).is_some() {
                    return Err(Error::DuplicateId(seg.segment_id.clone()));
                }
            }
            offsets.push(total);
            total += utt.segments.len();
        }
        offsets.push(total);
        Ok(Self {
            utterances,
            dim,
            offsets,
            by_segment_id,
            by_utterance_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn n_segments(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn segment(&self, r: SegmentRef) -> &Segment {
        &self.utterances[r.utterance].segments[r.position]
    }

    pub fn lookup(&self, segment_id: &str) -> Option<SegmentRef> {
        self.by_segment_id.get(segment_id).copied()
    }

    pub fn utterance_index(&self, utterance_id: &str) -> Option<usize> {
        self.by_utterance_id.get(utterance_id).copied()
    }

    /// Position of the segment in corpus order (utterance order, then position).
    pub fn flat_index(&self, r: SegmentRef) -> usize {
        self.offsets[r.utterance] + r.position
    }

    pub fn ref_at_flat(&self, flat: usize) -> SegmentRef {
        // offsets is sorted; find the last utterance starting at or before `flat`.
        let u = self.offsets.partition_point(|&o| o <= flat) - 1;
        SegmentRef {
            utterance: u,
            position: flat - self.offsets[u],
        }
    }

    /// All segments in corpus order.
    pub fn iter_segments(&self) -> impl Iterator<Item = (SegmentRef, &Segment)> {
        self.utterances.iter().enumerate().flat_map(|(ui, u)| {
            u.segments.iter().enumerate().map(move |(pos, s)| {
                (
                    SegmentRef {
                        utterance: ui,
                        position: pos,
                    },
                    s,
                )
            })
        })
    }

    /// Segment references grouped by label, in corpus order. Unlabelled
    /// segments are skipped.
    pub fn segments_by_label(&self) -> BTreeMap<&str, Vec<SegmentRef>> {
        let mut out: BTreeMap<&str, Vec<SegmentRef>> = BTreeMap::new();
        for (r, s) in self.iter_segments() {
            if let Some(label) = s.label.as_deref() {
                out.entry(label).or_default().push(r);
            }
        }
        out
    }

    /// The embedding matrix in corpus order, one row per segment.
    pub fn embedding_matrix(&self) -> crate::linalg::Matrix {
        let mut data = Vec::with_capacity(self.n_segments() * self.dim);
        for (_, s) in self.iter_segments() {
            data.extend_from_slice(&s.embedding);
        }
        crate::linalg::Matrix::from_vec(self.n_segments(), self.dim, data)
            .expect("validated dimensions")
    }
}

/// Every ordered (target, context) pair of distinct positions at most
/// `window` apart, in utterance order, then target position, then context
/// position.
pub fn extract_context_pairs(corpus: &SegmentedCorpus, window: usize) -> Result<Vec<ContextPair>> {
    if window == 0 {
        return Err(Error::InvalidArgument("context window must be >= 1".into()));
    }
    let mut pairs = Vec::new();
    for (ui, utt) in corpus.utterances().iter().enumerate() {
        let len = utt.segments.len();
        for i in 0..len {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(len - 1);
            for j in (lo..=hi).filter(|&j| j != i) {
                pairs.push(ContextPair {
                    target: SegmentRef {
                        utterance: ui,
                        position: i,
                    },
                    context: SegmentRef {
                        utterance: ui,
                        position: j,
                    },
                });
            }
        }
    }
    Ok(pairs)
}

/// Samples `count` negatives for `anchor`, uniformly with replacement from all
/// segments that are neither the anchor nor within `window` positions of it
/// in its own utterance.
pub fn sample_negatives<R: Rng + ?Sized>(
    corpus: &SegmentedCorpus,
    anchor: SegmentRef,
    window: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SegmentRef>> {
    let utt = corpus
        .utterances()
        .get(anchor.utterance)
        .ok_or_else(|| Error::UnknownSegment(alloc::format!("{anchor:?}")))?;
    let len = utt.segments.len();
    if anchor.position >= len {
        return Err(Error::UnknownSegment(alloc::format!("{anchor:?}")));
    }
    // The excluded block is contiguous in flat order.
    let lo = anchor.position.saturating_sub(window);
    let hi = (anchor.position + window).min(len - 1);
    let block_start = corpus.flat_index(SegmentRef {
        utterance: anchor.utterance,
        position: lo,
    });
    let block_len = hi - lo + 1;
    let eligible = corpus.n_segments() - block_len;
    if eligible == 0 {
        return Err(Error::NoEligibleNegatives(
            corpus.segment(anchor).segment_id.clone(),
        ));
    }
    Ok((0..count)
        .map(|_| {
            let mut flat = rng.random_range(0..eligible);
            if flat >= block_start {
                flat += block_len;
            }
            corpus.ref_at_flat(flat)
        })
        .collect())
}


#[cfg(test)]
mod tests {
    use super::test_support::corpus_with_lengths;
    use super::*;
    use crate::seed::rng_from_seed;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn names(c: &SegmentedCorpus, pairs: &[ContextPair]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|p| {
                (
                    c.segment(p.target).segment_id.clone(),
                    c.segment(p.context).segment_id.clone(),
                )
            })
            .collect()
    }

    fn seg(id: &str, pos: usize, emb: Vec<f64>) -> Segment {
        Segment {
            segment_id: id.into(),
            position: pos,
            embedding: emb,
            label: None,
        }
    }

    #[test]
    fn full_window_covers_all_pairs() {
        let c = corpus_with_lengths(&[3]);
        let got = names(&c, &extract_context_pairs(&c, 3).unwrap());
        let want: Vec<(String, String)> = [
            ("0", "1"),
            ("0", "2"),
            ("1", "0"),
            ("1", "2"),
            ("2", "0"),
            ("2", "1"),
        ]
        .iter()
        .map(|(a, b)| (alloc::format!("u0_{a}"), alloc::format!("u0_{b}")))
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn unit_window_is_adjacency() {
        let c = corpus_with_lengths(&[3]);
        let got = names(&c, &extract_context_pairs(&c, 1).unwrap());
        let want: Vec<(String, String)> = [("0", "1"), ("1", "0"), ("1", "2"), ("2", "1")]
            .iter()
            .map(|(a, b)| (alloc::format!("u0_{a}"), alloc::format!("u0_{b}")))
            .collect();
        assert_eq!(got, want);
        assert!(extract_context_pairs(&c, 0).is_err());
    }

    #[test]
    fn pair_count_matches_brute_force_on_large_corpus() {
        let mut rng = rng_from_seed(7);
        let lengths: Vec<usize> = (0..2000).map(|_| rng.random_range(1..=15)).collect();
        let c = corpus_with_lengths(&lengths);
        let mut expected = 0usize;
        for &len in &lengths {
            for i in 0..len {
                for j in 0..len {
                    if i != j && i.abs_diff(j) <= 3 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(extract_context_pairs(&c, 3).unwrap().len(), expected);
    }

    #[test]
    fn mismatched_dimension_names_segment() {
        let utt = Utterance {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            segments: vec![seg("a", 0, vec![0.0; 4]), seg("b", 1, vec![0.0; 5])],
        };
        match SegmentedCorpus::from_utterances(vec![utt]) {
            Err(Error::SegmentDimension { id, .. }) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let dup = vec![
            Utterance {
                utterance_id: "u".into(),
                speaker_id: "s".into(),
                segments: vec![seg("a", 0, vec![1.0])],
            },
            Utterance {
                utterance_id: "v".into(),
                speaker_id: "s".into(),
                segments: vec![seg("a", 0, vec![1.0])],
            },
        ];
        assert_eq!(
            SegmentedCorpus::from_utterances(dup),
            Err(Error::DuplicateId("a".into()))
        );
        let gap = vec![Utterance {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            segments: vec![seg("a", 0, vec![1.0]), seg("b", 2, vec![1.0])],
        }];
        assert!(matches!(
            SegmentedCorpus::from_utterances(gap),
            Err(Error::NonContiguousPositions { .. })
        ));
        let empty = vec![Utterance {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            segments: vec![],
        }];
        assert!(matches!(
            SegmentedCorpus::new(1, empty),
            Err(Error::EmptyUtterance(_))
        ));
        assert!(SegmentedCorpus::new(3, vec![]).unwrap().n_segments() == 0);
    }

    #[test]
    fn out_of_order_segments_are_sorted_by_position() {
        let utt = Utterance {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            segments: vec![seg("b", 1, vec![2.0]), seg("a", 0, vec![1.0])],
        };
        let c = SegmentedCorpus::from_utterances(vec![utt]).unwrap();
        assert_eq!(c.utterances()[0].segments[0].segment_id, "a");
        assert_eq!(
            c.lookup("b"),
            Some(SegmentRef {
                utterance: 0,
                position: 1
            })
        );
    }

    #[test]
    fn no_negatives_when_everything_is_in_context() {
        let c = corpus_with_lengths(&[2]);
        let anchor = SegmentRef {
            utterance: 0,
            position: 0,
        };
        let mut rng = rng_from_seed(1);
        assert!(matches!(
            sample_negatives(&c, anchor, 3, 20, &mut rng),
            Err(Error::NoEligibleNegatives(_))
        ));
    }

    #[test]
    fn negatives_respect_eligibility_exhaustively() {
        let c = corpus_with_lengths(&[6, 3, 1, 8]);
        let mut rng = rng_from_seed(3);
        for w in 1..4 {
            for (anchor, _) in c.iter_segments() {
                let negs = sample_negatives(&c, anchor, w, 200, &mut rng).unwrap();
                for n in negs {
                    assert_ne!(n, anchor);
                    if n.utterance == anchor.utterance {
                        assert!(n.position.abs_diff(anchor.position) > w);
                    }
                }
            }
        }
    }

    #[test]
    fn negatives_are_uniform_over_eligible_segments() {
        let c = corpus_with_lengths(&[5, 4, 3]);
        let anchor = SegmentRef {
            utterance: 0,
            position: 1,
        };
        // Excluded: u0 positions 0..=2 (w=1). Eligible: u0_3, u0_4 and all 7 others.
        let n = 10_000;
        let mut rng = rng_from_seed(11);
        let negs = sample_negatives(&c, anchor, 1, n, &mut rng).unwrap();
        let mut counts = BTreeMap::new();
        for r in &negs {
            *counts.entry(c.flat_index(*r)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 9);
        let p = 1.0 / 9.0;
        let mean = n as f64 * p;
        let sd = crate::linalg::sqrt(n as f64 * p * (1.0 - p));
        for (&flat, &k) in &counts {
            assert!(
                (k as f64 - mean).abs() <= 3.0 * sd,
                "segment {flat}: {k} draws, expected {mean}±{sd}"
            );
        }
    }

    proptest! {
        #[test]
        fn pairs_are_symmetric_and_counted(
            lengths in proptest::collection::vec(1usize..12, 1..8),
            w in 1usize..6,
        ) {
            let c = corpus_with_lengths(&lengths);
            let pairs = extract_context_pairs(&c, w).unwrap();
            let set: alloc::collections::BTreeSet<_> =
                pairs.iter().map(|p| (p.target, p.context)).collect();
            prop_assert_eq!(set.len(), pairs.len());
            for p in &pairs {
                prop_assert!(set.contains(&(p.context, p.target)));
                prop_assert_eq!(p.target.utterance, p.context.utterance);
                let d = p.target.position.abs_diff(p.context.position);
                prop_assert!(d >= 1 && d <= w);
            }
            let closed_form: usize = lengths
                .iter()
                .map(|&len| {
                    (0..len)
                        .map(|i| (i + w).min(len - 1) - i.saturating_sub(w))
                        .sum::<usize>()
                })
                .sum();
            prop_assert_eq!(pairs.len(), closed_form);
        }
    }
}
