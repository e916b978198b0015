//! Intrinsic word-similarity evaluation.
//!
//! Embedding-space cosine similarities between word classes are compared to
//! reference similarities with Spearman's rank correlation, either on
//! class-mean embeddings (`avg`) or on one randomly drawn instance per class
//! (`single`, averaged over repeats).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg;
use crate::seed::rng_from_seed;
use crate::{Error, Result};

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("rank input"));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    Ok(ranks)
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    linalg::check_dim(xs.len(), ys.len())?;
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 2 observations".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::ZeroVariance("correlation input"));
    }
    Ok((cov / linalg::sqrt(vx * vy)).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    linalg::check_dim(xs.len(), ys.len())?;
    pearson(&average_ranks(xs)?, &average_ranks(ys)?)
}

/// Symmetric word-pair similarity scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSimilarities {
    scores: BTreeMap<(String, String), f64>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.into(), b.into())
    } else {
        (b.into(), a.into())
    }
}

impl ReferenceSimilarities {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a score for the unordered pair `{a, b}`. A conflicting
    /// earlier score for the same pair is an error.
    pub fn insert(&mut self, a: &str, b: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite("reference similarity"));
        }
        match self.scores.get(&key(a, b)) {
            Some(&old) if old != score => Err(Error::InvalidArgument(alloc::format!(
                "conflicting reference scores for ({a}, {b}): {old} and {score}"
            ))),
            _ => {
                self.scores.insert(key(a, b), score);
                Ok(())
            }
        }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.scores.get(&key(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Stored pairs with `a <= b`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.scores
            .iter()
            .map(|((a, b), &s)| (a.as_str(), b.as_str(), s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMode {
    Avg,
    Single,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub rho_single: f64,
    pub rho_avg: f64,
    pub n_repeats: usize,
    pub per_repeat: Vec<f64>,
    pub n_classes: usize,
    pub n_pairs: usize,
}

fn rho_for_vectors(
    classes: &[&str],
    vectors: &[&[f64]],
    reference: &ReferenceSimilarities,
) -> Result<f64> {
    let mut model = Vec::new();
    let mut truth = Vec::new();
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            let r = reference
                .get(classes[i], classes[j])
                .ok_or_else(|| Error::MissingReference(classes[i].into(), classes[j].into()))?;
            model.push(linalg::cosine(vectors[i], vectors[j])?);
            truth.push(r);
        }
    }
    spearman_rho(&model, &truth)
}

fn check_classes(embeddings: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<()> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidArgument(
            "word similarity needs at least 2 classes".into(),
        ));
    }
    if let Some((class, _)) = embeddings.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidArgument(alloc::format!(
            "class `{class}` has no instances"
        )));
    }
    Ok(())
}

/// Spearman ρ of class-mean embeddings against the reference.
pub fn rho_avg(
    embeddings: &BTreeMap<String, Vec<Vec<f64>>>,
    reference: &ReferenceSimilarities,
) -> Result<f64> {
    check_classes(embeddings)?;
    let classes: Vec<&str> = embeddings.keys().map(String::as_str).collect();
    let means: Vec<Vec<f64>> = embeddings
        .values()
        .map(|instances| {
            let mut mean = vec![0.0; instances[0].len()];
            for v in instances {
                linalg::check_dim(mean.len(), v.len())?;
                linalg::axpy(1.0, v, &mut mean);
            }
            mean.iter_mut().for_each(|x| *x /= instances.len() as f64);
            Ok(mean)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = means.iter().map(Vec::as_slice).collect();
    rho_for_vectors(&classes, &refs, reference)
}

/// Per-repeat Spearman ρ with one uniformly drawn instance per class.
pub fn rho_single_repeats(
    embeddings: &BTreeMap<String, Vec<Vec<f64>>>,
    reference: &ReferenceSimilarities,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_classes(embeddings)?;
    if n_repeats == 0 {
        return Err(Error::InvalidArgument("n_repeats must be >= 1".into()));
    }
    let classes: Vec<&str> = embeddings.keys().map(String::as_str).collect();
    let mut rng = rng_from_seed(seed);
    (0..n_repeats)
        .map(|_| {
            let picks: Vec<&[f64]> = embeddings
                .values()
                .map(|instances| instances[rng.random_range(0..instances.len())].as_slice())
                .collect();
            rho_for_vectors(&classes, &picks, reference)
        })
        .collect()
}

/// Score for one mode: ρ_avg, or the mean of the single-instance repeats.
pub fn eval_word_similarity(
    embeddings: &BTreeMap<String, Vec<Vec<f64>>>,
    reference: &ReferenceSimilarities,
    mode: SimilarityMode,
    n_repeats: usize,
    seed: u64,
) -> Result<f64> {
    match mode {
        SimilarityMode::Avg => rho_avg(embeddings, reference),
        SimilarityMode::Single => {
            let reps = rho_single_repeats(embeddings, reference, n_repeats, seed)?;
            Ok(reps.iter().sum::<f64>() / reps.len() as f64)
        }
    }
}

/// Both ρ_single and ρ_avg.
pub fn similarity_report(
    embeddings: &BTreeMap<String, Vec<Vec<f64>>>,
    reference: &ReferenceSimilarities,
    n_repeats: usize,
    seed: u64,
) -> Result<SimilarityReport> {
    let rho_avg = rho_avg(embeddings, reference)?;
    let per_repeat = rho_single_repeats(embeddings, reference, n_repeats, seed)?;
    let n = embeddings.len();
    Ok(SimilarityReport {
        rho_single: per_repeat.iter().sum::<f64>() / per_repeat.len() as f64,
        rho_avg,
        n_repeats,
        per_repeat,
        n_classes: n,
        n_pairs: n * (n - 1) / 2,
    })
}
