//! K-means over phonetic embeddings and soft pseudo-word labels.
//!
//! Each segment's soft label is a softmax over its cosine similarities to the
//! cluster centroids, sharpened by `1/σ²`:
//!
//! ```text
//! v_k ∝ exp(cos(z, c_k) / σ²)
//! ```
//!
//! so the most similar centroid receives the most mass. With small σ the
//! logits are huge, so the softmax is always max-subtracted. Entries that
//! underflow to exactly zero are not stored.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::SegmentedCorpus;
use crate::linalg::{self, Matrix};
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// K-means hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest objective wins.
    pub n_init: usize,
    /// Unit-normalize points before clustering.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 5000,
            max_iters: 100,
            tol: 1e-6,
            n_init: 10,
            normalize: true,
            seed: 0,
        }
    }
}

/// Outcome of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// K×D matrix of cluster means.
    pub means: Matrix,
    pub assignments: Vec<usize>,
    /// Σ‖x − c_assigned‖² over the (possibly normalized) points.
    pub objective: f64,
    /// Objective after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

/// Cluster centres plus the soft-label bandwidth σ.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    means: Matrix,
    sigma: f64,
    normalized: bool,
}

impl Centroids {
    pub fn new(means: Matrix, sigma: f64, normalized: bool) -> Result<Self> {
        if means.rows() == 0 {
            return Err(Error::Empty("centroids"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "sigma must be positive and finite, got {sigma}"
            )));
        }
        if !means.is_finite() {
            return Err(Error::NonFinite("centroids"));
        }
        Ok(Self {
            means,
            sigma,
            normalized,
        })
    }

    pub fn k(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Whether the points were unit-normalized before clustering.
    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }
}

/// A K-dimensional probability vector, stored sparsely (exact zeros omitted).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    k: usize,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl SoftLabel {
    /// Validates a dense probability vector.
    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        if dense.is_empty() {
            return Err(Error::Empty("soft label"));
        }
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        let mut total = 0.0;
        for (i, &w) in dense.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite("soft label"));
            }
            if w < 0.0 {
                return Err(Error::InvalidArgument("negative soft-label weight".into()));
            }
            if w > 0.0 {
                indices.push(i as u32);
                weights.push(w);
                total += w;
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(alloc::format!(
                "soft label sums to {total}, not 1"
            )));
        }
        Ok(Self {
            k: dense.len(),
            indices,
            weights,
        })
    }

    /// The one-hot label on class `index`.
    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k, "one-hot index {index} out of range for K={k}");
        Self {
            k,
            indices: vec![index as u32],
            weights: vec![1.0],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Non-zero entries as `(class, weight)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| (i as usize, w))
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (i, w) in self.iter() {
            out[i] = w;
        }
        out
    }

    pub fn get(&self, k: usize) -> f64 {
        self.indices
            .binary_search(&(k as u32))
            .map_or(0.0, |pos| self.weights[pos])
    }

    /// Index of the largest weight (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, w) in self.iter() {
            if w > best.1 {
                best = (i, w);
            }
        }
        best.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], means: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in means.iter_rows().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[cfg(feature = "parallel")]
fn assign(points: &Matrix, means: &Matrix) -> Vec<(usize, f64)> {
    use rayon::prelude::*;
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest(points.row(i), means))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn assign(points: &Matrix, means: &Matrix) -> Vec<(usize, f64)> {
    points.iter_rows().map(|p| nearest(p, means)).collect()
}

fn kmeans_plus_plus<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.rows();
    let mut means = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    means.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| sq_dist(p, means.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // Rounding can run past the end; fall back to the last positive weight.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        means.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, means.row(c)));
        }
    }
    means
}

/// Moves points into empty clusters: each empty cluster takes the point that
/// is farthest from its current centroid among clusters with ≥ 2 members.
fn reseed_empty(assigned: &mut [(usize, f64)], k: usize) {
    let mut sizes = vec![0usize; k];
    for &(c, _) in assigned.iter() {
        sizes[c] += 1;
    }
    for empty in 0..k {
        if sizes[empty] != 0 {
            continue;
        }
        let donor = assigned
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| sizes[*c] >= 2)
            .fold(None, |best: Option<(usize, f64)>, (i, &(_, d))| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = donor {
            sizes[assigned[i].0] -= 1;
            sizes[empty] += 1;
            assigned[i] = (empty, 0.0);
        }
    }
}

fn update_means(points: &Matrix, assigned: &[(usize, f64)], means: &mut Matrix) {
    let k = means.rows();
    let mut counts = vec![0usize; k];
    let mut sums = Matrix::zeros(k, points.cols());
    for (p, &(c, _)) in points.iter_rows().zip(assigned) {
        counts[c] += 1;
        linalg::axpy(1.0, p, sums.row_mut(c));
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = counts[c] as f64;
            for (m, s) in means.row_mut(c).iter_mut().zip(sums.row(c)) {
                *m = s / inv;
            }
        }
    }
}

fn centroids_of(points: &Matrix, assignments: &[usize], counts: &[usize], means: &mut Matrix) {
    let mut sums = Matrix::zeros(means.rows(), points.cols());
    for (p, &c) in points.iter_rows().zip(assignments) {
        linalg::axpy(1.0, p, sums.row_mut(c));
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            for (m, s) in means.row_mut(c).iter_mut().zip(sums.row(c)) {
                *m = s / n as f64;
            }
        }
    }
}

fn objective_of(points: &Matrix, assignments: &[usize], means: &Matrix) -> f64 {
    points
        .iter_rows()
        .zip(assignments)
        .map(|(p, &c)| sq_dist(p, means.row(c)))
        .sum()
}

/// Hartigan refinement: moves single points between clusters whenever the
/// exact change in the objective is negative, which escapes many fixed
/// points of Lloyd's iteration. Appends the objective after every pass.
fn hartigan(
    points: &Matrix,
    assignments: &mut [usize],
    counts: &mut [usize],
    means: &mut Matrix,
    max_passes: usize,
    history: &mut Vec<f64>,
) {
    let k = means.rows();
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, x) in points.iter_rows().enumerate() {
            let from = assignments[i];
            if counts[from] < 2 {
                continue;
            }
            let n_from = counts[from] as f64;
            let removal = n_from / (n_from - 1.0) * sq_dist(x, means.row(from));
            let mut best = (from, removal);
            for to in (0..k).filter(|&c| c != from) {
                let n_to = counts[to] as f64;
                let addition = n_to / (n_to + 1.0) * sq_dist(x, means.row(to));
                if addition < best.1 {
                    best = (to, addition);
                }
            }
            let (to, addition) = best;
            if to == from || addition >= removal * (1.0 - 1e-12) {
                continue;
            }
            let n_to = counts[to] as f64;
            for (m, &v) in means.row_mut(from).iter_mut().zip(x) {
                *m = (*m * n_from - v) / (n_from - 1.0);
            }
            for (m, &v) in means.row_mut(to).iter_mut().zip(x) {
                *m = (*m * n_to + v) / (n_to + 1.0);
            }
            counts[from] -= 1;
            counts[to] += 1;
            assignments[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
        centroids_of(points, assignments, counts, means);
        history.push(objective_of(points, assignments, means));
    }
}

fn lloyd<R: Rng>(points: &Matrix, params: &KMeansParams, rng: &mut R) -> KMeansFit {
    let mut means = kmeans_plus_plus(points, params.k, rng);
    let mut assigned = assign(points, &means);
    let mut objective: f64 = assigned.iter().map(|a| a.1).sum();
    let mut history = vec![objective];
    for _ in 0..params.max_iters {
        reseed_empty(&mut assigned, params.k);
        update_means(points, &assigned, &mut means);
        let next = assign(points, &means);
        let next_objective: f64 = next.iter().map(|a| a.1).sum();
        history.push(next_objective);
        let changed = next.iter().zip(&assigned).any(|(a, b)| a.0 != b.0);
        let decrease = objective - next_objective;
        assigned = next;
        objective = next_objective;
        if !changed || decrease < params.tol {
            break;
        }
    }
    let mut assignments: Vec<usize> = assigned.into_iter().map(|a| a.0).collect();
    let mut counts = vec![0usize; params.k];
    assignments.iter().for_each(|&c| counts[c] += 1);
    centroids_of(points, &assignments, &counts, &mut means);
    let settled = objective_of(points, &assignments, &means);
    if settled < objective {
        history.push(settled);
    }
    hartigan(points, &mut assignments, &mut counts, &mut means, params.max_iters, &mut history);
    let objective = *history.last().expect("history is never empty");
    KMeansFit {
        means,
        assignments,
        objective,
        history,
    }
}

/// Lloyd's algorithm with k-means++ seeding, then Hartigan single-point
/// moves until no move lowers the objective.
///
/// Each restart draws from its own seed derived from `params.seed`, so the
/// result only depends on the inputs and the parameters.
pub fn kmeans(points: &Matrix, params: &KMeansParams) -> Result<KMeansFit> {
    let n = points.rows();
    if params.k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if n < params.k {
        return Err(Error::InvalidArgument(alloc::format!(
            "K = {} exceeds the number of points ({n})",
            params.k
        )));
    }
    if params.max_iters == 0 || params.n_init == 0 {
        return Err(Error::InvalidArgument(
            "max_iters and n_init must be >= 1".into(),
        ));
    }
    if !(params.tol >= 0.0) {
        return Err(Error::InvalidArgument("tol must be >= 0".into()));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input"));
    }
    let normalized;
    let points = if params.normalize {
        let mut m = points.clone();
        for i in 0..n {
            let unit = linalg::normalized(points.row(i)).ok_or(Error::ZeroNorm("k-means input"))?;
            m.row_mut(i).copy_from_slice(&unit);
        }
        normalized = m;
        &normalized
    } else {
        points
    };

    let mut best: Option<KMeansFit> = None;
    for restart in 0..params.n_init {
        let mut rng = rng_from_seed(derive_seed(params.seed, &alloc::format!("kmeans/{restart}")));
        let fit = lloyd(points, params, &mut rng);
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Softmax of `similarities / σ²`, max-subtracted.
pub fn soft_labels_from_similarities(similarities: &[f64], sigma: f64) -> Result<SoftLabel> {
    if similarities.is_empty() {
        return Err(Error::Empty("similarities"));
    }
    if !similarities.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("similarities"));
    }
    let inv = 1.0 / (sigma * sigma);
    let mut logits: Vec<f64> = similarities.iter().map(|s| s * inv).collect();
    linalg::softmax_in_place(&mut logits);
    SoftLabel::from_dense(&logits)
}

/// Soft pseudo-word label of one phonetic embedding.
pub fn soft_labels(embedding: &[f64], centroids: &Centroids) -> Result<SoftLabel> {
    SoftLabeler::new(centroids)?.label(embedding)
}

/// Soft labels of every segment, in corpus order.
pub fn soft_labels_batch(corpus: &SegmentedCorpus, centroids: &Centroids) -> Result<Vec<SoftLabel>> {
    let labeler = SoftLabeler::new(centroids)?;
    corpus
        .iter_segments()
        .map(|(_, s)| labeler.label(&s.embedding))
        .collect()
}

/// Pre-normalized centroids for repeated labelling.
#[derive(Debug, Clone)]
pub struct SoftLabeler {
    unit_means: Matrix,
    sigma: f64,
}

impl SoftLabeler {
    pub fn new(centroids: &Centroids) -> Result<Self> {
        let mut unit_means = centroids.means().clone();
        for k in 0..unit_means.rows() {
            let unit = linalg::normalized(centroids.means().row(k)).ok_or(Error::ZeroNorm("centroid"))?;
            unit_means.row_mut(k).copy_from_slice(&unit);
        }
        Ok(Self {
            unit_means,
            sigma: centroids.sigma(),
        })
    }

    pub fn label(&self, embedding: &[f64]) -> Result<SoftLabel> {
        linalg::check_dim(self.unit_means.cols(), embedding.len())?;
        let unit = linalg::normalized(embedding).ok_or(Error::ZeroNorm("embedding"))?;
        let mut sims = vec![0.0; self.unit_means.rows()];
        self.unit_means.mul_vec(&unit, &mut sims);
        soft_labels_from_similarities(&sims, self.sigma)
    }
}
