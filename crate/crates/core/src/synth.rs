//! Synthetic segmented corpora with known semantics.
//!
//! Word classes are grouped into topics arranged on a ring. Each utterance
//! picks a topic and draws its words mostly from that topic's classes, and
//! with probability `topic_overlap` from one of the two neighbouring topics.
//! A segment's "phonetic" embedding is its class centroid (a random unit
//! vector) plus Gaussian noise plus a per-speaker offset, so phonetic
//! similarity carries no information about topics.
//!
//! Ground truth:
//! - reference similarity of two classes is the cosine similarity of their
//!   exact expected context-word distributions under the generator;
//! - QbE votes for (keyword, utterance) are 5 when the keyword occurs in the
//!   utterance and otherwise `round(5 × mean reference similarity)` between
//!   the keyword and the utterance's words.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Segment, SegmentedCorpus, Utterance};
use crate::intrinsic::ReferenceSimilarities;
use crate::linalg::{self, Matrix};
use crate::qbe::QbEJudgments;
use crate::seed::{derive_seed, rng_from_seed, StageRng};
use crate::{Error, Result};

/// Number of simulated annotators per (keyword, utterance).
pub const N_ANNOTATORS: u32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_topics: usize,
    /// Probability that a word is drawn from a neighbouring topic.
    pub topic_overlap: f64,
    pub n_utterances: usize,
    /// Utterances in the held-out search collection that carries QbE votes.
    pub n_test_utterances: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub phonetic_dim: usize,
    /// Expected norm of within-class noise relative to the unit centroid
    /// (per-coordinate deviation `phon_noise / sqrt(phonetic_dim)`).
    pub phon_noise: f64,
    pub n_speakers: usize,
    /// Expected norm of a speaker offset, scaled like `phon_noise`.
    pub speaker_offset: f64,
    /// Forbid repeated classes within an utterance.
    pub distinct_words: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 50 classes in 10 topics, 2000 training utterances, seed 42.
    fn default() -> Self {
        Self {
            n_classes: 50,
            n_topics: 10,
            topic_overlap: 0.2,
            n_utterances: 2000,
            n_test_utterances: 500,
            min_len: 5,
            max_len: 10,
            phonetic_dim: 100,
            phon_noise: 0.05,
            n_speakers: 20,
            speaker_offset: 0.05,
            distinct_words: false,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub class_labels: Vec<String>,
    /// Home topic of each class.
    pub class_topics: Vec<usize>,
    /// V×D unit class centroids.
    pub class_centroids: Matrix,
    /// V×V expected context-word distribution per class.
    pub context_distributions: Matrix,
    pub reference: ReferenceSimilarities,
    /// Votes for every (class, test utterance).
    pub judgments: QbEJudgments,
    pub train_topics: Vec<usize>,
    pub test_topics: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: SegmentedCorpus,
    pub test: SegmentedCorpus,
    pub truth: SynthTruth,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.n_topics == 0 || self.n_classes < self.n_topics {
            return bad("need n_classes >= n_topics >= 1");
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.n_utterances == 0 || self.n_test_utterances == 0 {
            return bad("need at least one training and one test utterance");
        }
        if self.phonetic_dim == 0 || self.n_speakers == 0 {
            return bad("phonetic_dim and n_speakers must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.topic_overlap) {
            return bad("topic_overlap must lie in [0, 1]");
        }
        if !(self.phon_noise >= 0.0 && self.speaker_offset >= 0.0) {
            return bad("noise scales must be >= 0");
        }
        if self.distinct_words {
            let smallest = (0..self.n_topics)
                .map(|t| self.support(t).len())
                .min()
                .unwrap_or(0);
            if smallest < self.max_len {
                return Err(Error::InvalidArgument(format!(
                    "distinct words need a topic pool of at least {} classes, smallest has {smallest}",
                    self.max_len
                )));
            }
        }
        Ok(())
    }

    fn topic_of(&self, class: usize) -> usize {
        class * self.n_topics / self.n_classes
    }

    fn pool(&self, topic: usize) -> core::ops::Range<usize> {
        // smallest class whose topic is >= t
        let start = |t: usize| (t * self.n_classes).div_ceil(self.n_topics);
        start(topic)..start(topic + 1)
    }

    /// Topics mixed into an utterance of topic `t` with their weights.
    fn topic_mixture(&self, t: usize) -> Vec<(usize, f64)> {
        let n = self.n_topics;
        let eps = self.topic_overlap;
        match n {
            1 => vec![(0, 1.0)],
            2 => vec![(t, 1.0 - eps), (1 - t, eps)],
            _ => vec![
                (t, 1.0 - eps),
                ((t + n - 1) % n, eps / 2.0),
                ((t + 1) % n, eps / 2.0),
            ],
        }
    }

    /// Word distribution of an utterance with topic `t`.
    fn word_distribution(&self, t: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.n_classes];
        for (topic, w) in self.topic_mixture(t) {
            let pool = self.pool(topic);
            let share = w / pool.len() as f64;
            for c in pool {
                q[c] += share;
            }
        }
        q
    }

    fn support(&self, t: usize) -> Vec<usize> {
        let q = self.word_distribution(t);
        (0..self.n_classes).filter(|&c| q[c] > 0.0).collect()
    }

    fn class_label(&self, c: usize) -> String {
        let width = format!("{}", self.n_classes.saturating_sub(1)).len().max(3);
        format!("w{c:0width$}")
    }
}

/// Exact context distributions: `P(ctx | c) = Σ_t P(t | c) q_t`, with a
/// uniform topic prior and `P(t | c) ∝ q_t(c)`.
fn context_distributions(config: &SynthConfig) -> Matrix {
    let v = config.n_classes;
    let q: Vec<Vec<f64>> = (0..config.n_topics)
        .map(|t| config.word_distribution(t))
        .collect();
    let mut out = Matrix::zeros(v, v);
    for c in 0..v {
        let z: f64 = q.iter().map(|qt| qt[c]).sum();
        for qt in &q {
            if qt[c] > 0.0 {
                linalg::axpy(qt[c] / z, qt, out.row_mut(c));
            }
        }
    }
    out
}

fn gaussian_vec(rng: &mut StageRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x * scale
        })
        .collect()
}

struct Draw {
    utterances: Vec<Utterance>,
    topics: Vec<usize>,
    classes: Vec<Vec<usize>>,
}

fn draw_utterances(
    config: &SynthConfig,
    prefix: &str,
    count: usize,
    centroids: &Matrix,
    speakers: &Matrix,
    rng: &mut StageRng,
) -> Draw {
    let mut utterances = Vec::with_capacity(count);
    let mut topics = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    for i in 0..count {
        let topic = rng.random_range(0..config.n_topics);
        let mixture = config.topic_mixture(topic);
        let len = rng.random_range(config.min_len..=config.max_len);
        let speaker = rng.random_range(0..config.n_speakers);
        let utterance_id = format!("{prefix}{i:05}");
        let mut words: Vec<usize> = Vec::with_capacity(len);
        while words.len() < len {
            let mut u: f64 = rng.random();
            let mut chosen = mixture[0].0;
            for &(t, w) in &mixture {
                if u < w {
                    chosen = t;
                    break;
                }
                u -= w;
            }
            let pool = config.pool(chosen);
            let class = rng.random_range(pool);
            if config.distinct_words && words.contains(&class) {
                continue;
            }
            words.push(class);
        }
        let segments = words
            .iter()
            .enumerate()
            .map(|(pos, &c)| {
                let mut embedding = gaussian_vec(rng, config.phonetic_dim, config.phon_noise / linalg::sqrt(config.phonetic_dim as f64));
                linalg::axpy(1.0, centroids.row(c), &mut embedding);
                linalg::axpy(1.0, speakers.row(speaker), &mut embedding);
                Segment {
                    segment_id: format!("{utterance_id}_{pos:02}"),
                    position: pos,
                    embedding,
                    label: Some(config.class_label(c)),
                }
            })
            .collect();
        utterances.push(Utterance {
            utterance_id,
            speaker_id: format!("spk{speaker:03}"),
            segments,
        });
        topics.push(topic);
        classes.push(words);
    }
    Draw {
        utterances,
        topics,
        classes,
    }
}

/// Generates training and test corpora with their ground truth.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let v = config.n_classes;
    let d = config.phonetic_dim;
    let per_coord = 1.0 / linalg::sqrt(d as f64);

    let mut rng = rng_from_seed(derive_seed(config.seed, "synth/centroids"));
    let mut centroids = Matrix::zeros(v, d);
    for c in 0..v {
        let unit = loop {
            if let Some(u) = linalg::normalized(&gaussian_vec(&mut rng, d, 1.0)) {
                break u;
            }
        };
        centroids.row_mut(c).copy_from_slice(&unit);
    }
    let mut rng = rng_from_seed(derive_seed(config.seed, "synth/speakers"));
    let mut speakers = Matrix::zeros(config.n_speakers, d);
    for s in 0..config.n_speakers {
        let offset = gaussian_vec(&mut rng, d, config.speaker_offset * per_coord);
        speakers.row_mut(s).copy_from_slice(&offset);
    }

    // Redraw the training corpus until every class occurs at least once.
    let mut train = None;
    for attempt in 0..100 {
        let mut rng = rng_from_seed(derive_seed(config.seed, &format!("synth/train/{attempt}")));
        let draw = draw_utterances(config, "utt", config.n_utterances, &centroids, &speakers, &mut rng);
        let mut seen = vec![false; v];
        draw.classes.iter().flatten().for_each(|&c| seen[c] = true);
        if seen.iter().all(|&s| s) {
            train = Some(draw);
            break;
        }
    }
    let train = train.ok_or_else(|| {
        Error::InvalidArgument("could not cover every class with the training utterances".into())
    })?;
    let mut rng = rng_from_seed(derive_seed(config.seed, "synth/test"));
    let test = draw_utterances(config, "test", config.n_test_utterances, &centroids, &speakers, &mut rng);

    let ctx = context_distributions(config);
    let labels: Vec<String> = (0..v).map(|c| config.class_label(c)).collect();
    let mut sim = Matrix::zeros(v, v);
    let mut reference = ReferenceSimilarities::new();
    for a in 0..v {
        for b in a..v {
            let s = linalg::cosine(ctx.row(a), ctx.row(b))?;
            sim.set(a, b, s);
            sim.set(b, a, s);
            if a < b {
                reference.insert(&labels[a], &labels[b], s)?;
            }
        }
    }

    let mut judgments = QbEJudgments::new(N_ANNOTATORS)?;
    for k in 0..v {
        for (utt, words) in test.utterances.iter().zip(&test.classes) {
            let votes = if words.contains(&k) {
                N_ANNOTATORS
            } else {
                let strength = words.iter().map(|&w| sim.get(k, w)).sum::<f64>() / words.len() as f64;
                libm::round(strength * f64::from(N_ANNOTATORS)).clamp(0.0, f64::from(N_ANNOTATORS)) as u32
            };
            judgments.insert(&labels[k], &utt.utterance_id, votes)?;
        }
    }

    Ok(SynthData {
        train: SegmentedCorpus::new(d, train.utterances)?,
        test: SegmentedCorpus::new(d, test.utterances)?,
        truth: SynthTruth {
            class_labels: labels,
            class_topics: (0..v).map(|c| config.topic_of(c)).collect(),
            class_centroids: centroids,
            context_distributions: ctx,
            reference,
            judgments,
            train_topics: train.topics,
            test_topics: test.topics,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{kmeans, KMeansParams};
    use alloc::collections::BTreeMap;

    fn small() -> SynthConfig {
        SynthConfig {
            n_classes: 12,
            n_topics: 4,
            n_utterances: 200,
            n_test_utterances: 40,
            phonetic_dim: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig {
            seed: 43,
            ..small()
        };
        assert_ne!(generate(&small()).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn noise_free_classes_are_identical() {
        let config = SynthConfig {
            phon_noise: 0.0,
            n_speakers: 1,
            speaker_offset: 0.0,
            ..small()
        };
        let data = generate(&config).unwrap();
        let mut seen: BTreeMap<&str, &Vec<f64>> = BTreeMap::new();
        for (_, s) in data.train.iter_segments() {
            let prev = seen.entry(s.label.as_deref().unwrap()).or_insert(&s.embedding);
            assert_eq!(*prev, &s.embedding);
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn single_topic_has_uniform_reference() {
        let config = SynthConfig {
            n_topics: 1,
            ..small()
        };
        let data = generate(&config).unwrap();
        assert!(data.truth.reference.iter().all(|(_, _, s)| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn infeasible_distinct_words() {
        let config = SynthConfig {
            distinct_words: true,
            topic_overlap: 0.0,
            max_len: 4,
            ..small()
        };
        assert!(matches!(generate(&config), Err(Error::InvalidArgument(_))));
        let ok = SynthConfig {
            max_len: 3,
            min_len: 2,
            ..config
        };
        let data = generate(&ok).unwrap();
        for u in data.train.utterances() {
            let mut labels: Vec<_> = u.segments.iter().map(|s| s.label.clone()).collect();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), u.segments.len());
        }
    }

    #[test]
    fn reference_and_votes_follow_topics() {
        let data = generate(&small()).unwrap();
        let t = &data.truth;
        let r = |a: usize, b: usize| t.reference.get(&t.class_labels[a], &t.class_labels[b]).unwrap();
        // classes 0..3 share topic 0; 3..6 are topic 1; 6..9 topic 2.
        assert!((r(0, 1) - 1.0).abs() < 1e-12);
        assert!(r(0, 3) < r(0, 1));
        assert!(r(0, 6) < r(0, 3));
        for (u, words) in data.test.utterances().iter().zip(0..) {
            let _ = words;
            for seg in &u.segments {
                let label = seg.label.as_deref().unwrap();
                assert_eq!(t.judgments.votes(label, &u.utterance_id), Some(N_ANNOTATORS));
            }
        }
        for c in 0..12 {
            assert_eq!(t.class_topics[c], c / 3);
        }
    }

    #[test]
    fn every_class_occurs() {
        let data = generate(&small()).unwrap();
        assert_eq!(data.train.segments_by_label().len(), 12);
    }

    #[test]
    fn kmeans_recovers_classes() {
        let config = SynthConfig::default();
        let data = generate(&config).unwrap();
        let points = data.train.embedding_matrix();
        let fit = kmeans(
            &points,
            &KMeansParams {
                k: config.n_classes,
                seed: 1,
                ..KMeansParams::default()
            },
        )
        .unwrap();
        // purity: each cluster votes for its majority label
        let labels: Vec<&str> = data
            .train
            .iter_segments()
            .map(|(_, s)| s.label.as_deref().unwrap())
            .collect();
        let mut counts: BTreeMap<(usize, &str), usize> = BTreeMap::new();
        for (c, l) in fit.assignments.iter().zip(&labels) {
            *counts.entry((*c, l)).or_default() += 1;
        }
        let mut best = vec![0usize; config.n_classes];
        for ((c, _), n) in counts {
            best[c] = best[c].max(n);
        }
        let purity = best.iter().sum::<usize>() as f64 / labels.len() as f64;
        assert!(purity >= 0.95, "purity {purity}");
    }
}
