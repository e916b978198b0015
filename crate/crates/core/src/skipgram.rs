//! Skipgram over soft pseudo-word labels.
//!
//! The model is the usual log-linear skipgram with a full softmax, except that
//! the input and the target are probability vectors over K pseudo-words
//! rather than word indices:
//!
//! ```text
//! h    = Eᵀ v_target              (d)
//! p    = softmax(Wᵀ h)            (K)
//! loss = −Σ_k v_context[k] log p[k]
//! ```
//!
//! With one-hot labels this is exactly the classical full-softmax skipgram,
//! which is how text reference embeddings are trained.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::clustering::SoftLabel;
use crate::corpus::SegmentedCorpus;
use crate::linalg::{self, Matrix};
use crate::optim::{Optimizer, OptimizerState};
use crate::seed::rng_from_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramModel {
    /// K×d input embedding table.
    pub input: Matrix,
    /// d×K output projection.
    pub output: Matrix,
}

/// Gradients with the same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramGrads {
    pub input: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Embedding dimension d.
    pub dim: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            dim: 100,
            optimizer: Optimizer::adam(),
        }
    }
}

/// A trained model and its mean training loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramFit {
    pub model: SkipgramModel,
    pub epoch_losses: Vec<f64>,
}

impl SkipgramModel {
    /// Input table uniform in `[-0.5/d, 0.5/d]`, output projection zero, so
    /// the initial loss is exactly `ln K` for any target.
    pub fn init<R: Rng + ?Sized>(k: usize, dim: usize, rng: &mut R) -> Self {
        let half = 0.5 / dim as f64;
        let data = (0..k * dim).map(|_| rng.random_range(-half..=half)).collect();
        Self {
            input: Matrix::from_vec(k, dim, data).expect("shape"),
            output: Matrix::zeros(dim, k),
        }
    }

    pub fn from_parts(input: Matrix, output: Matrix) -> Result<Self> {
        linalg::check_dim(input.rows(), output.cols())?;
        linalg::check_dim(input.cols(), output.rows())?;
        if !input.is_finite() || !output.is_finite() {
            return Err(Error::NonFinite("skipgram model"));
        }
        Ok(Self { input, output })
    }

    pub fn k(&self) -> usize {
        self.input.rows()
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }
}

/// Scratch buffers reused across examples.
struct Scratch {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    grad_hidden: Vec<f64>,
}

impl Scratch {
    fn new(k: usize, d: usize) -> Self {
        Self {
            hidden: vec![0.0; d],
            probs: vec![0.0; k],
            grad_hidden: vec![0.0; d],
        }
    }
}

fn check_shapes(model: &SkipgramModel, target: &SoftLabel, context: &SoftLabel) -> Result<()> {
    linalg::check_dim(model.k(), target.k())?;
    linalg::check_dim(model.k(), context.k())
}

/// Loss of one pair, adding `scale ×` its gradients into `grads`.
fn accumulate(
    model: &SkipgramModel,
    target: &SoftLabel,
    context: &SoftLabel,
    scratch: &mut Scratch,
    grads: &mut SkipgramGrads,
    scale: f64,
) -> f64 {
    let Scratch {
        hidden,
        probs,
        grad_hidden,
    } = scratch;
    hidden.iter_mut().for_each(|x| *x = 0.0);
    for (k, w) in target.iter() {
        linalg::axpy(w, model.input.row(k), hidden);
    }
    // logits = Wᵀ h, accumulated row by row of the d×K output matrix.
    probs.iter_mut().for_each(|x| *x = 0.0);
    for (j, &hj) in hidden.iter().enumerate() {
        if hj != 0.0 {
            linalg::axpy(hj, model.output.row(j), probs);
        }
    }
    let lse = linalg::log_sum_exp(probs);
    let mut loss = 0.0;
    for (k, w) in context.iter() {
        loss -= w * (probs[k] - lse);
    }
    for p in probs.iter_mut() {
        *p = linalg::exp(*p - lse);
    }
    // δ = p − v_context is the gradient w.r.t. the logits.
    for (k, w) in context.iter() {
        probs[k] -= w;
    }
    let delta = &*probs;
    for (j, &hj) in hidden.iter().enumerate() {
        grad_hidden[j] = linalg::dot(model.output.row(j), delta);
        if hj != 0.0 {
            linalg::axpy(scale * hj, delta, grads.output.row_mut(j));
        }
    }
    for (k, w) in target.iter() {
        linalg::axpy(scale * w, grad_hidden, grads.input.row_mut(k));
    }
    loss
}

/// Loss and exact gradients for one (target, context) pair.
pub fn skipgram_loss_grad(
    model: &SkipgramModel,
    target: &SoftLabel,
    context: &SoftLabel,
) -> Result<(f64, SkipgramGrads)> {
    check_shapes(model, target, context)?;
    if !model.input.is_finite() || !model.output.is_finite() {
        return Err(Error::NonFinite("skipgram model"));
    }
    let mut grads = SkipgramGrads {
        input: Matrix::zeros(model.k(), model.dim()),
        output: Matrix::zeros(model.dim(), model.k()),
    };
    let mut scratch = Scratch::new(model.k(), model.dim());
    let loss = accumulate(model, target, context, &mut scratch, &mut grads, 1.0);
    Ok((loss, grads))
}

/// Trains on (target, context) soft-label pairs with seeded mini-batches.
pub fn train_skipgram(pairs: &[(&SoftLabel, &SoftLabel)], config: &TrainConfig) -> Result<SkipgramFit> {
    let (first, _) = pairs.first().ok_or(Error::Empty("training pairs"))?;
    let k = first.k();
    if config.dim == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "dim and batch_size must be >= 1".into(),
        ));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
    }
    for (t, c) in pairs {
        linalg::check_dim(k, t.k())?;
        linalg::check_dim(k, c.k())?;
    }

    let mut rng = rng_from_seed(config.seed);
    let mut model = SkipgramModel::init(k, config.dim, &mut rng);
    let mut opt_in = OptimizerState::new(config.optimizer, config.learning_rate, k * config.dim);
    let mut opt_out = OptimizerState::new(config.optimizer, config.learning_rate, k * config.dim);
    let mut grads = SkipgramGrads {
        input: Matrix::zeros(k, config.dim),
        output: Matrix::zeros(config.dim, k),
    };
    let mut scratch = Scratch::new(k, config.dim);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.input.as_mut_slice().fill(0.0);
            grads.output.as_mut_slice().fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (t, c) = pairs[i];
                batch_loss += accumulate(&model, t, c, &mut scratch, &mut grads, scale);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            total += batch_loss;
            opt_in.step(model.input.as_mut_slice(), grads.input.as_slice());
            opt_out.step(model.output.as_mut_slice(), grads.output.as_slice());
        }
        epoch_losses.push(total / pairs.len() as f64);
    }
    if !model.input.is_finite() || !model.output.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs.saturating_sub(1),
            batch: 0,
        });
    }
    Ok(SkipgramFit {
        model,
        epoch_losses,
    })
}

/// Semantic embedding `Eᵀ v` of one segment.
pub fn embed_segment(model: &SkipgramModel, label: &SoftLabel) -> Result<Vec<f64>> {
    linalg::check_dim(model.k(), label.k())?;
    let mut out = vec![0.0; model.dim()];
    for (k, w) in label.iter() {
        linalg::axpy(w, model.input.row(k), &mut out);
    }
    Ok(out)
}

/// Mean semantic embedding per word class. `labels` are the corpus soft
/// labels in corpus order.
pub fn embed_class_average(
    corpus: &SegmentedCorpus,
    labels: &[SoftLabel],
    model: &SkipgramModel,
) -> Result<BTreeMap<String, Vec<f64>>> {
    linalg::check_dim(corpus.n_segments(), labels.len())?;
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for ((_, seg), label) in corpus.iter_segments().zip(labels) {
        let class = seg
            .label
            .as_ref()
            .ok_or_else(|| Error::MissingLabel(seg.segment_id.clone()))?;
        let z = embed_segment(model, label)?;
        let entry = sums
            .entry(class.clone())
            .or_insert_with(|| (vec![0.0; model.dim()], 0));
        linalg::axpy(1.0, &z, &mut entry.0);
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(class, (mut sum, n))| {
            sum.iter_mut().for_each(|x| *x /= n as f64);
            (class, sum)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use alloc::vec::Vec;

    fn random_label(rng: &mut impl Rng, k: usize) -> SoftLabel {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        SoftLabel::from_dense(&raw.iter().map(|x| x / total).collect::<Vec<_>>()).unwrap()
    }

    fn random_model(rng: &mut impl Rng, k: usize, d: usize) -> SkipgramModel {
        let e = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        SkipgramModel::from_parts(
            Matrix::from_vec(k, d, e).unwrap(),
            Matrix::from_vec(d, k, w).unwrap(),
        )
        .unwrap()
    }

    /// Classical skipgram on word indices: h = E[a], loss = lse(Wᵀh) − (Wᵀh)[b].
    fn classical(model: &SkipgramModel, a: usize, b: usize) -> (f64, Matrix, Matrix) {
        let (k, d) = (model.k(), model.dim());
        let h: Vec<f64> = model.input.row(a).to_vec();
        let scores: Vec<f64> = (0..k)
            .map(|c| (0..d).map(|j| model.output.get(j, c) * h[j]).sum())
            .collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        let loss = m + z.ln() - scores[b];
        let p: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
        let mut ge = Matrix::zeros(k, d);
        let mut gw = Matrix::zeros(d, k);
        for j in 0..d {
            for c in 0..k {
                let err = p[c] - if c == b { 1.0 } else { 0.0 };
                gw.set(j, c, h[j] * err);
                ge.set(a, j, ge.get(a, j) + model.output.get(j, c) * err);
            }
        }
        (loss, ge, gw)
    }

    #[test]
    fn single_class_has_zero_loss() {
        let mut rng = rng_from_seed(1);
        let model = random_model(&mut rng, 1, 3);
        let v = SoftLabel::one_hot(1, 0);
        assert_eq!(skipgram_loss_grad(&model, &v, &v).unwrap().0, 0.0);
    }

    #[test]
    fn zero_output_gives_log_k() {
        let mut rng = rng_from_seed(2);
        let model = SkipgramModel::init(7, 4, &mut rng);
        let t = random_label(&mut rng, 7);
        let c = random_label(&mut rng, 7);
        let (loss, _) = skipgram_loss_grad(&model, &t, &c).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_two_class_loss() {
        let model = SkipgramModel::from_parts(
            Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let (loss, grads) = skipgram_loss_grad(
            &model,
            &SoftLabel::one_hot(2, 0),
            &SoftLabel::one_hot(2, 1),
        )
        .unwrap();
        let e2 = core::f64::consts::E * core::f64::consts::E;
        assert!((loss - (e2 + 1.0).ln()).abs() < 1e-14);
        assert!((loss - 2.1269).abs() < 1e-4);
        // δ = p − v = [e²/(e²+1), −e²/(e²+1)], h = 1
        let p0 = e2 / (e2 + 1.0);
        assert!((grads.output.get(0, 0) - p0).abs() < 1e-14);
        assert!((grads.output.get(0, 1) + p0).abs() < 1e-14);
        assert!((grads.input.get(0, 0) - 2.0 * p0).abs() < 1e-14);
        assert_eq!(grads.input.get(1, 0), 0.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut rng = rng_from_seed(3);
        let model = random_model(&mut rng, 3, 2);
        let v = SoftLabel::one_hot(4, 0);
        assert!(skipgram_loss_grad(&model, &v, &v).is_err());
        assert!(embed_segment(&model, &v).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(4);
        for _ in 0..20 {
            let k = rng.random_range(1..=10);
            let d = rng.random_range(1..=5);
            let model = random_model(&mut rng, k, d);
            let t = random_label(&mut rng, k);
            let c = random_label(&mut rng, k);
            let (_, g) = skipgram_loss_grad(&model, &t, &c).unwrap();
            let h = 1e-5;
            let loss_at = |m: &SkipgramModel| skipgram_loss_grad(m, &t, &c).unwrap().0;
            for idx in 0..k * d {
                let mut plus = model.clone();
                plus.input.as_mut_slice()[idx] += h;
                let mut minus = model.clone();
                minus.input.as_mut_slice()[idx] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = g.input.as_slice()[idx];
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-4);

                let mut plus = model.clone();
                plus.output.as_mut_slice()[idx] += h;
                let mut minus = model.clone();
                minus.output.as_mut_slice()[idx] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = g.output.as_slice()[idx];
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn one_hot_matches_classical_skipgram() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let k = rng.random_range(1..=8);
            let d = rng.random_range(1..=5);
            let model = random_model(&mut rng, k, d);
            let a = rng.random_range(0..k);
            let b = rng.random_range(0..k);
            let (loss, g) =
                skipgram_loss_grad(&model, &SoftLabel::one_hot(k, a), &SoftLabel::one_hot(k, b))
                    .unwrap();
            let (want, ge, gw) = classical(&model, a, b);
            assert!((loss - want).abs() < 1e-10);
            for (x, y) in g.input.as_slice().iter().zip(ge.as_slice()) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in g.output.as_slice().iter().zip(gw.as_slice()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = rng_from_seed(6);
        for _ in 0..100 {
            let k = rng.random_range(1..=6);
            let model = random_model(&mut rng, k, 3);
            let t = random_label(&mut rng, k);
            let c = random_label(&mut rng, k);
            assert!(skipgram_loss_grad(&model, &t, &c).unwrap().0 >= 0.0);
        }
    }

    #[test]
    fn memorizes_a_single_association() {
        let a = SoftLabel::one_hot(2, 0);
        let b = SoftLabel::one_hot(2, 1);
        let pairs = vec![(&a, &b); 32];
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 8,
            dim: 4,
            ..TrainConfig::default()
        };
        let fit = train_skipgram(&pairs, &config).unwrap();
        let loss = skipgram_loss_grad(&fit.model, &a, &b).unwrap().0;
        assert!((-loss).exp() > 0.99, "p(b|a) = {}", (-loss).exp());
        assert!((fit.epoch_losses[0] - 2f64.ln()).abs() < 0.1);
    }

    #[test]
    fn empty_pairs_error() {
        assert_eq!(
            train_skipgram(&[], &TrainConfig::default()),
            Err(Error::Empty("training pairs"))
        );
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let a = SoftLabel::one_hot(3, 0);
        let config = TrainConfig {
            epochs: 0,
            dim: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let fit = train_skipgram(&[(&a, &a)], &config).unwrap();
        let init = SkipgramModel::init(3, 2, &mut rng_from_seed(9));
        assert_eq!(fit.model, init);
        assert!(fit.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let mut rng = rng_from_seed(10);
        let labels: Vec<SoftLabel> = (0..20).map(|_| random_label(&mut rng, 5)).collect();
        let pairs: Vec<(&SoftLabel, &SoftLabel)> =
            labels.windows(2).map(|w| (&w[0], &w[1])).collect();
        let config = TrainConfig {
            epochs: 3,
            dim: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train_skipgram(&pairs, &config).unwrap();
        let b = train_skipgram(&pairs, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embeddings_are_weighted_rows() {
        let mut rng = rng_from_seed(11);
        let model = random_model(&mut rng, 2, 3);
        assert_eq!(
            embed_segment(&model, &SoftLabel::one_hot(2, 1)).unwrap(),
            model.input.row(1).to_vec()
        );
        let v = SoftLabel::from_dense(&[0.7311, 0.2689]).unwrap();
        let z = embed_segment(&model, &v).unwrap();
        for j in 0..3 {
            let want = 0.7311 * model.input.get(0, j) + 0.2689 * model.input.get(1, j);
            assert!((z[j] - want).abs() < 1e-15);
        }
        let uniform = SoftLabel::from_dense(&[0.5, 0.5]).unwrap();
        let z = embed_segment(&model, &uniform).unwrap();
        for j in 0..3 {
            let mean = (model.input.get(0, j) + model.input.get(1, j)) / 2.0;
            assert!((z[j] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn class_average_matches_direct_summation() {
        let corpus = crate::corpus::test_support::corpus_with_lengths(&[5, 5, 5]);
        let mut rng = rng_from_seed(12);
        let model = random_model(&mut rng, 4, 3);
        let labels: Vec<SoftLabel> = (0..corpus.n_segments())
            .map(|_| random_label(&mut rng, 4))
            .collect();
        let avg = embed_class_average(&corpus, &labels, &model).unwrap();
        // corpus_with_lengths labels segment p of every utterance as "w{p}".
        assert_eq!(avg.len(), 5);
        for p in 0..5 {
            let mut want = [0.0; 3];
            for u in 0..3 {
                let label = &labels[u * 5 + p];
                for (k, w) in label.iter() {
                    for j in 0..3 {
                        want[j] += w * model.input.get(k, j) / 3.0;
                    }
                }
            }
            let got = &avg[&alloc::format!("w{p}")];
            for j in 0..3 {
                assert!((got[j] - want[j]).abs() < 1e-12);
            }
        }
    }
}
