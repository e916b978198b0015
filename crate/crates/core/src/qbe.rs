//! Query-by-example search over segmented utterances.
//!
//! A query embedding is scored against every utterance of a search
//! collection (maximum cosine over the utterance's segments) and the ranking
//! is judged against annotator votes: an utterance is relevant to a keyword
//! when a strict majority of annotators marked it so.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::intrinsic::spearman_rho;
use crate::linalg;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSegment {
    pub label: Option<String>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchUtterance {
    pub utterance_id: String,
    pub segments: Vec<SearchSegment>,
}

/// Annotator votes per (keyword, utterance).
#[derive(Debug, Clone, PartialEq)]
pub struct QbEJudgments {
    n_annotators: u32,
    votes: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QbEJudgments {
    pub fn new(n_annotators: u32) -> Result<Self> {
        if n_annotators == 0 {
            return Err(Error::InvalidArgument("n_annotators must be >= 1".into()));
        }
        Ok(Self {
            n_annotators,
            votes: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, keyword: &str, utterance_id: &str, votes: u32) -> Result<()> {
        if votes > self.n_annotators {
            return Err(Error::InvalidArgument(alloc::format!(
                "{votes} votes for ({keyword}, {utterance_id}) exceeds {} annotators",
                self.n_annotators
            )));
        }
        let prev = self
            .votes
            .entry(keyword.into())
            .or_default()
            .insert(utterance_id.into(), votes);
        match prev {
            Some(_) => Err(Error::DuplicateId(alloc::format!("{keyword},{utterance_id}"))),
            None => Ok(()),
        }
    }

    pub fn n_annotators(&self) -> u32 {
        self.n_annotators
    }

    /// Smallest vote count that is a strict majority.
    pub fn majority(&self) -> u32 {
        self.n_annotators / 2 + 1
    }

    pub fn votes(&self, keyword: &str, utterance_id: &str) -> Option<u32> {
        self.votes.get(keyword)?.get(utterance_id).copied()
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.votes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.votes.iter().flat_map(|(k, m)| {
            m.iter()
                .map(move |(u, &v)| (k.as_str(), u.as_str(), v))
        })
    }
}

/// Maximum cosine similarity between the query and any segment.
pub fn score_utterance(query: &[f64], segments: &[&[f64]]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::Empty("utterance segments"));
    }
    segments
        .iter()
        .map(|s| linalg::cosine(query, s))
        .try_fold(f64::NEG_INFINITY, |best, s| s.map(|s| best.max(s)))
}

/// Utterances by descending score; equal scores are ordered by id.
pub fn rank_collection(query: &[f64], collection: &[SearchUtterance]) -> Result<Vec<(String, f64)>> {
    if collection.is_empty() {
        return Err(Error::Empty("search collection"));
    }
    let unit_query = linalg::normalized(query).ok_or(Error::ZeroNorm("query"))?;
    let mut ranked = collection
        .iter()
        .map(|u| {
            let segs: Vec<&[f64]> = u.segments.iter().map(|s| s.embedding.as_slice()).collect();
            score_utterance(&unit_query, &segs).map(|s| (u.utterance_id.clone(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Equal error rate of a detector.
///
/// Operating points are taken at every distinct score (accept `score ≥ θ`)
/// plus the reject-all point. The EER is read where the false-rejection and
/// false-acceptance curves cross, interpolating linearly between the two
/// operating points that bracket the crossing.
pub fn equal_error_rate(relevant: &[f64], non_relevant: &[f64]) -> Result<f64> {
    if relevant.is_empty() || non_relevant.is_empty() {
        return Err(Error::Empty("EER needs relevant and non-relevant scores"));
    }
    let mut scored: Vec<(f64, bool)> = relevant
        .iter()
        .map(|&s| (s, true))
        .chain(non_relevant.iter().map(|&s| (s, false)))
        .collect();
    if scored.iter().any(|s| s.0.is_nan()) {
        return Err(Error::NonFinite("EER scores"));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_pos, n_neg) = (relevant.len() as f64, non_relevant.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev = (0.0, 1.0); // (FAR, FRR) with nothing accepted
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let far = fp as f64 / n_neg;
        let frr = 1.0 - tp as f64 / n_pos;
        let d_prev = prev.1 - prev.0;
        let d = frr - far;
        if d <= 0.0 {
            if d == 0.0 {
                return Ok(far);
            }
            let t = d_prev / (d_prev - d);
            return Ok(prev.0 + t * (far - prev.0));
        }
        prev = (far, frr);
    }
    unreachable!("accepting everything gives FAR = 1, FRR = 0")
}

/// Metrics of a single ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMetrics {
    pub p_at_10: f64,
    pub p_at_n: f64,
    /// `None` when every ranked utterance is relevant.
    pub eer: Option<f64>,
    /// `None` when scores or votes are constant.
    pub spearman_rho_votes: Option<f64>,
}

/// Metrics for one ranked list, or `None` when no ranked utterance is relevant.
pub fn ranking_metrics(
    keyword: &str,
    ranking: &[(String, f64)],
    judgments: &QbEJudgments,
) -> Result<Option<InstanceMetrics>> {
    let majority = judgments.majority();
    let votes: Vec<u32> = ranking
        .iter()
        .map(|(u, _)| {
            judgments
                .votes(keyword, u)
                .ok_or_else(|| Error::MissingVotes {
                    keyword: keyword.into(),
                    utterance: u.clone(),
                })
        })
        .collect::<Result<_>>()?;
    let relevant: Vec<bool> = votes.iter().map(|&v| v >= majority).collect();
    let n_relevant = relevant.iter().filter(|&&r| r).count();
    if n_relevant == 0 {
        return Ok(None);
    }
    let hits_at = |k: usize| relevant.iter().take(k).filter(|&&r| r).count() as f64;
    let (rel_scores, non_scores): (Vec<(f64, bool)>, Vec<(f64, bool)>) = ranking
        .iter()
        .zip(&relevant)
        .map(|((_, s), &r)| (*s, r))
        .partition(|(_, r)| *r);
    let rel_scores: Vec<f64> = rel_scores.into_iter().map(|x| x.0).collect();
    let non_scores: Vec<f64> = non_scores.into_iter().map(|x| x.0).collect();
    let eer = if non_scores.is_empty() {
        None
    } else {
        Some(equal_error_rate(&rel_scores, &non_scores)?)
    };
    let scores: Vec<f64> = ranking.iter().map(|(_, s)| *s).collect();
    let vote_values: Vec<f64> = votes.iter().map(|&v| f64::from(v)).collect();
    let spearman_rho_votes = match spearman_rho(&scores, &vote_values) {
        Ok(r) => Some(r),
        Err(Error::ZeroVariance(_) | Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Some(InstanceMetrics {
        p_at_10: hits_at(10) / 10.0,
        p_at_n: hits_at(n_relevant) / n_relevant as f64,
        eer,
        spearman_rho_votes,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordMetrics {
    pub keyword: String,
    pub n_queries: usize,
    pub p_at_10: f64,
    pub p_at_n: f64,
    pub eer: Option<f64>,
    pub spearman_rho_votes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QbEResult {
    pub p_at_10: f64,
    pub p_at_n: f64,
    pub eer: f64,
    pub spearman_rho_votes: Option<f64>,
    pub per_keyword: Vec<KeywordMetrics>,
    /// Keywords without any relevant utterance in their rankings.
    pub excluded_keywords: Vec<String>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages per-ranking metrics within each keyword, then across keywords.
pub fn qbe_metrics(
    rankings: &BTreeMap<String, Vec<Vec<(String, f64)>>>,
    judgments: &QbEJudgments,
) -> Result<QbEResult> {
    let mut per_keyword = Vec::new();
    let mut excluded_keywords = Vec::new();
    for (keyword, instances) in rankings {
        let mut metrics = Vec::new();
        for ranking in instances {
            if let Some(m) = ranking_metrics(keyword, ranking, judgments)? {
                metrics.push(m);
            }
        }
        if metrics.is_empty() {
            excluded_keywords.push(keyword.clone());
            continue;
        }
        per_keyword.push(KeywordMetrics {
            keyword: keyword.clone(),
            n_queries: metrics.len(),
            p_at_10: mean_of(metrics.iter().map(|m| m.p_at_10)).unwrap_or(0.0),
            p_at_n: mean_of(metrics.iter().map(|m| m.p_at_n)).unwrap_or(0.0),
            eer: mean_of(metrics.iter().filter_map(|m| m.eer)),
            spearman_rho_votes: mean_of(metrics.iter().filter_map(|m| m.spearman_rho_votes)),
        });
    }
    if per_keyword.is_empty() {
        return Err(Error::Empty("keywords with relevant utterances"));
    }
    Ok(QbEResult {
        p_at_10: mean_of(per_keyword.iter().map(|k| k.p_at_10)).unwrap_or(0.0),
        p_at_n: mean_of(per_keyword.iter().map(|k| k.p_at_n)).unwrap_or(0.0),
        eer: mean_of(per_keyword.iter().filter_map(|k| k.eer)).ok_or(Error::Empty(
            "keywords with both relevant and non-relevant utterances",
        ))?,
        spearman_rho_votes: mean_of(per_keyword.iter().filter_map(|k| k.spearman_rho_votes)),
        per_keyword,
        excluded_keywords,
    })
}

/// Removes every segment labelled `query_class`. Returns the masked
/// collection and the ids of utterances that were emptied and dropped.
pub fn mask_exact_matches(
    collection: &[SearchUtterance],
    query_class: &str,
) -> (Vec<SearchUtterance>, Vec<String>) {
    let mut kept = Vec::with_capacity(collection.len());
    let mut dropped = Vec::new();
    for utt in collection {
        let segments: Vec<SearchSegment> = utt
            .segments
            .iter()
            .filter(|s| s.label.as_deref() != Some(query_class))
            .cloned()
            .collect();
        if segments.is_empty() {
            dropped.push(utt.utterance_id.clone());
        } else {
            kept.push(SearchUtterance {
                utterance_id: utt.utterance_id.clone(),
                segments,
            });
        }
    }
    (kept, dropped)
}

/// Full QbE evaluation: every query instance of every keyword is ranked
/// against the collection (optionally with exact matches of the keyword
/// masked out), and the rankings are scored with [`qbe_metrics`].
pub fn run_qbe(
    queries: &BTreeMap<String, Vec<Vec<f64>>>,
    collection: &[SearchUtterance],
    judgments: &QbEJudgments,
    mask: bool,
) -> Result<QbEResult> {
    let mut rankings = BTreeMap::new();
    for (keyword, instances) in queries {
        let masked;
        let searched = if mask {
            masked = mask_exact_matches(collection, keyword).0;
            masked.as_slice()
        } else {
            collection
        };
        let ranked = instances
            .iter()
            .map(|q| rank_collection(q, searched))
            .collect::<Result<Vec<_>>>()?;
        rankings.insert(keyword.clone(), ranked);
    }
    qbe_metrics(&rankings, judgments)
}
