//! Contrastive projection from phonetic to semantic embedding space.
//!
//! A two-layer feed-forward network is trained so that projected context
//! words land close together. For an anchor `a`, positive `p` and negatives
//! `n_1..n_N` the objective is
//!
//! ```text
//! J = −log( exp(cos(a,p)/τ) / Σ_{j ∈ {p, n_1..n_N}} exp(cos(a,z_j)/τ) )
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{sample_negatives, ContextPair, SegmentedCorpus};
use crate::linalg::{self, Matrix};
use crate::optim::{Optimizer, OptimizerState};
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    /// hidden × input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// output × hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub n_negatives: usize,
    /// Negatives are drawn outside this window around the anchor.
    pub window: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Pairs visited per epoch after shuffling; `None` visits all of them.
    pub pairs_per_epoch: Option<usize>,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            n_negatives: 20,
            window: 3,
            hidden: 1024,
            out_dim: 100,
            activation: Activation::Relu,
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 64,
            pairs_per_epoch: None,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFit {
    pub model: ProjectionModel,
    pub epoch_losses: Vec<f64>,
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

impl ProjectionModel {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let b_in = 1.0 / linalg::sqrt(input as f64);
        let b_hidden = 1.0 / linalg::sqrt(hidden as f64);
        let w1 = uniform_matrix(hidden, input, b_in, rng);
        let b1 = (0..hidden).map(|_| rng.random_range(-b_in..=b_in)).collect();
        let w2 = uniform_matrix(output, hidden, b_hidden, rng);
        let b2 = (0..output)
            .map(|_| rng.random_range(-b_hidden..=b_hidden))
            .collect();
        Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        linalg::check_dim(self.w1.rows(), self.b1.len())?;
        linalg::check_dim(self.w1.rows(), self.w2.cols())?;
        linalg::check_dim(self.w2.rows(), self.b2.len())?;
        let finite = self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("projection model"))
        }
    }

    fn zero_grads(&self) -> ProjectionGrads {
        ProjectionGrads {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }
}

/// Forward pass intermediates for one input.
struct Trace {
    pre: Vec<f64>,
    out: Vec<f64>,
}

fn forward(model: &ProjectionModel, x: &[f64]) -> Trace {
    let mut pre = vec![0.0; model.hidden_dim()];
    model.w1.mul_vec(x, &mut pre);
    for (p, b) in pre.iter_mut().zip(&model.b1) {
        *p += b;
    }
    let act: Vec<f64> = match model.activation {
        Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Identity => pre.clone(),
    };
    let mut out = model.b2.clone();
    for (o, row) in out.iter_mut().zip(model.w2.iter_rows()) {
        *o += linalg::dot(row, &act);
    }
    Trace { pre, out }
}

fn backward(
    model: &ProjectionModel,
    x: &[f64],
    trace: &Trace,
    grad_out: &[f64],
    scale: f64,
    grads: &mut ProjectionGrads,
) {
    let relu = model.activation == Activation::Relu;
    let act = |v: f64| if relu { v.max(0.0) } else { v };
    let mut grad_pre = vec![0.0; model.hidden_dim()];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let g = g * scale;
        grads.b2[o] += g;
        let gw2 = grads.w2.row_mut(o);
        for (h, &p) in trace.pre.iter().enumerate() {
            gw2[h] += g * act(p);
        }
        linalg::axpy(g, model.w2.row(o), &mut grad_pre);
    }
    for (h, gp) in grad_pre.iter_mut().enumerate() {
        if relu && trace.pre[h] <= 0.0 {
            *gp = 0.0;
        }
    }
    for (h, &g) in grad_pre.iter().enumerate() {
        if g != 0.0 {
            grads.b1[h] += g;
            linalg::axpy(g, x, grads.w1.row_mut(h));
        }
    }
}

/// Forward pass: `layer2(activation(layer1(z)))`.
pub fn project(model: &ProjectionModel, z: &[f64]) -> Result<Vec<f64>> {
    linalg::check_dim(model.input_dim(), z.len())?;
    Ok(forward(model, z).out)
}

/// Gradient of cos(a, b) with respect to `a`, scaled by `coef`, added to `out`.
fn add_cosine_grad(a: &[f64], b: &[f64], na: f64, nb: f64, sim: f64, coef: f64, out: &mut [f64]) {
    let inv = 1.0 / (na * nb);
    let self_term = sim / (na * na);
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += coef * (bi * inv - self_term * ai);
    }
}

/// Contrastive loss and its gradients with respect to every input vector.
/// Returns `(J, ∂J/∂anchor, ∂J/∂positive, ∂J/∂negatives)`.
pub fn contrastive_loss_grad(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    if negatives.is_empty() {
        return Err(Error::Empty("negatives"));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be > 0".into()));
    }
    let d = anchor.len();
    let others: Vec<&[f64]> = core::iter::once(positive)
        .chain(negatives.iter().copied())
        .collect();
    for z in &others {
        linalg::check_dim(d, z.len())?;
    }
    let na = linalg::norm(anchor);
    if na == 0.0 {
        return Err(Error::ZeroNorm("contrastive anchor"));
    }
    let mut norms = Vec::with_capacity(others.len());
    let mut logits = Vec::with_capacity(others.len());
    for z in &others {
        let nz = linalg::norm(z);
        if nz == 0.0 {
            return Err(Error::ZeroNorm("contrastive candidate"));
        }
        norms.push(nz);
        logits.push(linalg::dot(anchor, z) / (na * nz) / tau);
    }
    let lse = linalg::log_sum_exp(&logits);
    let loss = lse - logits[0];

    let mut grad_anchor = vec![0.0; d];
    let mut grad_others = Vec::with_capacity(others.len());
    for (j, z) in others.iter().enumerate() {
        let q = linalg::exp(logits[j] - lse);
        let coef = (q - if j == 0 { 1.0 } else { 0.0 }) / tau;
        let sim = logits[j] * tau;
        add_cosine_grad(anchor, z, na, norms[j], sim, coef, &mut grad_anchor);
        let mut gz = vec![0.0; d];
        add_cosine_grad(z, anchor, norms[j], na, sim, coef, &mut gz);
        grad_others.push(gz);
    }
    let grad_positive = grad_others.remove(0);
    Ok((loss, grad_anchor, grad_positive, grad_others))
}

/// The contrastive loss with cosine similarity and temperature `tau`,
/// evaluated through a max-subtracted log-sum-exp.
pub fn contrastive_loss(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    contrastive_loss_grad(anchor, positive, negatives, tau).map(|r| r.0)
}

/// Loss of one training example pushed through the network, adding
/// `scale ×` the parameter gradients into `grads`.
fn accumulate_example(
    model: &ProjectionModel,
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
    scale: f64,
    grads: &mut ProjectionGrads,
) -> Result<f64> {
    let ta = forward(model, anchor);
    let tp = forward(model, positive);
    let tn: Vec<Trace> = negatives.iter().map(|x| forward(model, x)).collect();
    let outs: Vec<&[f64]> = tn.iter().map(|t| t.out.as_slice()).collect();
    let (loss, ga, gp, gn) = contrastive_loss_grad(&ta.out, &tp.out, &outs, tau)?;
    backward(model, anchor, &ta, &ga, scale, grads);
    backward(model, positive, &tp, &gp, scale, grads);
    for ((x, t), g) in negatives.iter().zip(&tn).zip(&gn) {
        backward(model, x, t, g, scale, grads);
    }
    Ok(loss)
}

/// Loss and parameter gradients of a single (anchor, positive, negatives)
/// example given in the network's input space.
pub fn example_loss_grad(
    model: &ProjectionModel,
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<(f64, ProjectionGrads)> {
    model.validate()?;
    for x in core::iter::once(anchor)
        .chain(core::iter::once(positive))
        .chain(negatives.iter().copied())
    {
        linalg::check_dim(model.input_dim(), x.len())?;
    }
    let mut grads = model.zero_grads();
    let loss = accumulate_example(model, anchor, positive, negatives, tau, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Trains the projection on context pairs: the target's phonetic embedding is
/// the anchor, the context's is the positive, and negatives are sampled from
/// outside the target's window.
pub fn train_projection(
    corpus: &SegmentedCorpus,
    pairs: &[ContextPair],
    config: &ContrastiveConfig,
) -> Result<ProjectionFit> {
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if !(config.tau > 0.0) || config.n_negatives == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "tau, n_negatives and batch_size must be positive".into(),
        ));
    }
    if config.hidden == 0 || config.out_dim == 0 {
        return Err(Error::InvalidArgument("layer sizes must be >= 1".into()));
    }
    let mut init_rng = rng_from_seed(derive_seed(config.seed, "projection/init"));
    let mut model = ProjectionModel::init(
        corpus.dim(),
        config.hidden,
        config.out_dim,
        config.activation,
        &mut init_rng,
    );
    let mut rng = rng_from_seed(derive_seed(config.seed, "projection/batches"));
    let lr = config.learning_rate;
    let mut opt_w1 = OptimizerState::new(config.optimizer, lr, model.w1.as_slice().len());
    let mut opt_b1 = OptimizerState::new(config.optimizer, lr, model.b1.len());
    let mut opt_w2 = OptimizerState::new(config.optimizer, lr, model.w2.as_slice().len());
    let mut opt_b2 = OptimizerState::new(config.optimizer, lr, model.b2.len());
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let per_epoch = config.pairs_per_epoch.unwrap_or(pairs.len()).min(pairs.len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order[..per_epoch].chunks(config.batch_size).enumerate() {
            grads.w1.as_mut_slice().fill(0.0);
            grads.b1.fill(0.0);
            grads.w2.as_mut_slice().fill(0.0);
            grads.b2.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let pair = pairs[i];
                let negs = sample_negatives(
                    corpus,
                    pair.target,
                    config.window,
                    config.n_negatives,
                    &mut rng,
                )?;
                let neg_vecs: Vec<&[f64]> = negs
                    .iter()
                    .map(|r| corpus.segment(*r).embedding.as_slice())
                    .collect();
                batch_loss += accumulate_example(
                    &model,
                    &corpus.segment(pair.target).embedding,
                    &corpus.segment(pair.context).embedding,
                    &neg_vecs,
                    config.tau,
                    scale,
                    &mut grads,
                )
                .map_err(|e| match e {
                    Error::ZeroNorm(_) => Error::Diverged { epoch, batch },
                    other => other,
                })?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            total += batch_loss;
            opt_w1.step(model.w1.as_mut_slice(), grads.w1.as_slice());
            opt_b1.step(&mut model.b1, &grads.b1);
            opt_w2.step(model.w2.as_mut_slice(), grads.w2.as_slice());
            opt_b2.step(&mut model.b2, &grads.b2);
        }
        epoch_losses.push(total / per_epoch.max(1) as f64);
    }
    model.validate().map_err(|_| Error::Diverged {
        epoch: config.epochs.saturating_sub(1),
        batch: 0,
    })?;
    Ok(ProjectionFit {
        model,
        epoch_losses,
    })
}
