//! The `sawe` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use sawe_core::clustering::{kmeans, soft_labels_batch, Centroids, KMeansParams, SoftLabel, SoftLabeler};
use sawe_core::corpus::{extract_context_pairs, SegmentedCorpus};
use sawe_core::intrinsic::{rho_avg, rho_single_repeats};
use sawe_core::linalg::Matrix;
use sawe_core::optim::Optimizer;
use sawe_core::pca::{nearest_neighbors, pca_2d};
use sawe_core::projection::{project, train_projection, Activation, ContrastiveConfig};
use sawe_core::qbe::{run_qbe, QbEResult, SearchSegment, SearchUtterance};
use sawe_core::seed::{derive_seed, rng_from_seed};
use sawe_core::skipgram::{embed_segment, train_skipgram, SkipgramModel, TrainConfig};
use sawe_core::synth::{generate, SynthConfig};

use crate::binary::EmbeddingTable;
use crate::config::{config_path, merge_into_args, ConfigFile};
use crate::corpus_io::{read_corpus, write_corpus};
use crate::error::{CliError, CliResult};
use crate::store::{activation_name, read_centroids, write_centroids, SavedModel};
use crate::tables::{read_judgments, read_reference, write_judgments, write_reference};

#[derive(Debug, Parser)]
#[command(name = "sawe", version, about = "Semantic acoustic word embeddings from phonetic ones")]
pub struct Cli {
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (wall time only, results do not change).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic topic corpus with ground truth.
    GenSynth(GenSynthArgs),
    /// K-means over phonetic embeddings; writes centroids.
    Cluster(ClusterArgs),
    /// Train a semantic model.
    Train(TrainArgs),
    /// Write one embedding per segment (phonetic when no model is given).
    Embed(EmbedArgs),
    /// Word-similarity evaluation against reference scores.
    EvalSim(EvalSimArgs),
    /// Query-by-example search evaluation.
    EvalQbe(EvalQbeArgs),
    /// Two-dimensional PCA of class-averaged embeddings.
    ExportPca(ExportPcaArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 10)]
    pub n_topics: usize,
    #[arg(long, default_value_t = 0.2)]
    pub topic_overlap: f64,
    #[arg(long, default_value_t = 2000)]
    pub n_utterances: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test_utterances: usize,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 100)]
    pub phonetic_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub phon_noise: f64,
    #[arg(long, default_value_t = 20)]
    pub n_speakers: usize,
    #[arg(long, default_value_t = 0.05)]
    pub speaker_offset: f64,
    #[arg(long)]
    pub distinct_words: bool,
}

#[derive(Debug, clap::Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Centroid file; the `.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub k: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10)]
    pub n_init: usize,
    /// Length-normalise embeddings before clustering and labelling.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    ClusterSkipgram,
    TextSkipgram,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationName {
    Relu,
    Identity,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: TrainMode,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Required for cluster-skipgram.
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Model sidecar; weight blocks are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Semantic embedding size.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = OptimizerName::Adam)]
    pub optimizer: OptimizerName,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 20)]
    pub negatives: usize,
    #[arg(long, default_value_t = 1024)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = ActivationName::Relu)]
    pub activation: ActivationName,
    /// Projection pairs visited per epoch (default: all).
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Avg,
    Single,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct EvalSimArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Corpus supplying the class label of each embedded segment.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, value_enum, default_value_t = SimMode::Both)]
    pub mode: SimMode,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Drop classes with fewer instances.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalQbeArgs {
    /// Embeddings of the search collection.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// The search collection.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub judgments: PathBuf,
    /// Corpus from which spoken query instances are drawn.
    #[arg(long)]
    pub queries_corpus: PathBuf,
    #[arg(long)]
    pub queries_embeddings: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub queries_per_keyword: usize,
    /// Remove exact occurrences of the keyword from the collection.
    #[arg(long)]
    pub mask: bool,
    #[arg(long, default_value_t = 5)]
    pub annotators: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-keyword metrics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ExportPcaArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated probe classes; all classes when omitted.
    #[arg(long)]
    pub classes: Option<String>,
    /// Nearest neighbours per probe class, added to the plot.
    #[arg(long, default_value_t = 0)]
    pub neighbors: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub neighbors_out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    match parse(args) {
        Ok(Some(cli)) => match run(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code() as i32
            }
        },
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as i32
        }
    }
}

/// `Ok(None)` when help or version output was requested and printed.
pub fn parse(args: Vec<OsString>) -> CliResult<Option<Cli>> {
    let cmd = Cli::command();
    let args = match config_path(&args) {
        Some(path) => merge_into_args(&cmd, args, &ConfigFile::read(Path::new(&path))?)?,
        None => args,
    };
    match cmd.try_get_matches_from(args) {
        Ok(m) => Cli::from_arg_matches(&m).map(Some).map_err(|e| CliError::usage(e.to_string().trim_end())),
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                Ok(None)
            } else {
                Err(CliError::usage(e.to_string().trim_end().trim_start_matches("error: ")))
            }
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be >= 1"));
        }
        // Fails only if a pool already exists, e.g. on a second call in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cli.seed;
    match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&a, seed),
        Command::Cluster(a) => cmd_cluster(&a, seed),
        Command::Train(a) => cmd_train(&a, seed),
        Command::Embed(a) => cmd_embed(&a),
        Command::EvalSim(a) => cmd_eval_sim(&a, seed),
        Command::EvalQbe(a) => cmd_eval_qbe(&a, seed),
        Command::ExportPca(a) => cmd_export_pca(&a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn cmd_gen_synth(a: &GenSynthArgs, seed: u64) -> CliResult<()> {
    let config = SynthConfig {
        n_classes: a.n_classes,
        n_topics: a.n_topics,
        topic_overlap: a.topic_overlap,
        n_utterances: a.n_utterances,
        n_test_utterances: a.n_test_utterances,
        min_len: a.min_len,
        max_len: a.max_len,
        phonetic_dim: a.phonetic_dim,
        phon_noise: a.phon_noise,
        n_speakers: a.n_speakers,
        speaker_offset: a.speaker_offset,
        distinct_words: a.distinct_words,
        seed,
    };
    config.validate().map_err(CliError::usage)?;
    let data = generate(&config)?;
    create_dir(&a.out_dir)?;
    write_corpus(&data.train, &a.out_dir.join("corpus.jsonl"))?;
    write_corpus(&data.test, &a.out_dir.join("test.jsonl"))?;
    write_reference(&data.truth.reference, &a.out_dir.join("reference.csv"))?;
    write_judgments(&data.truth.judgments, &a.out_dir.join("judgments.csv"))?;
    let topics = |corpus: &SegmentedCorpus, t: &[usize]| -> BTreeMap<String, usize> {
        corpus
            .utterances()
            .iter()
            .zip(t)
            .map(|(u, &t)| (u.utterance_id.clone(), t))
            .collect()
    };
    let truth = json!({
        "config": {
            "n_classes": config.n_classes,
            "n_topics": config.n_topics,
            "topic_overlap": config.topic_overlap,
            "n_utterances": config.n_utterances,
            "n_test_utterances": config.n_test_utterances,
            "min_len": config.min_len,
            "max_len": config.max_len,
            "phonetic_dim": config.phonetic_dim,
            "phon_noise": config.phon_noise,
            "n_speakers": config.n_speakers,
            "speaker_offset": config.speaker_offset,
            "distinct_words": config.distinct_words,
            "seed": config.seed,
        },
        "class_topics": data.truth.class_labels.iter().zip(&data.truth.class_topics)
            .map(|(l, &t)| (l.clone(), t)).collect::<BTreeMap<_, _>>(),
        "train_topics": topics(&data.train, &data.truth.train_topics),
        "test_topics": topics(&data.test, &data.truth.test_topics),
    });
    write_json(&a.out_dir.join("truth.json"), &truth)?;
    println!(
        "wrote {} training and {} test utterances ({} classes, {} topics) to {}",
        data.train.utterances().len(),
        data.test.utterances().len(),
        config.n_classes,
        config.n_topics,
        a.out_dir.display()
    );
    Ok(())
}

pub fn cmd_cluster(a: &ClusterArgs, seed: u64) -> CliResult<()> {
    if !(a.sigma > 0.0) {
        return Err(CliError::usage("--sigma must be positive"));
    }
    let corpus = read_corpus(&a.corpus)?;
    let params = KMeansParams {
        k: a.k,
        max_iters: a.max_iters,
        tol: a.tol,
        n_init: a.n_init,
        normalize: a.normalize,
        seed: derive_seed(seed, "cluster"),
    };
    let fit = kmeans(&corpus.embedding_matrix(), &params)?;
    let centroids = Centroids::new(fit.means, a.sigma, a.normalize)?;
    write_centroids(&centroids, &a.out)?;
    println!(
        "K = {}, objective {:.6} after {} iterations, wrote {}",
        centroids.k(),
        fit.objective,
        fit.history.len(),
        a.out.display()
    );
    Ok(())
}

fn optimizer(name: OptimizerName) -> Optimizer {
    match name {
        OptimizerName::Adam => Optimizer::adam(),
        OptimizerName::Sgd => Optimizer::Sgd,
    }
}

fn optimizer_label(name: OptimizerName) -> &'static str {
    match name {
        OptimizerName::Adam => "adam",
        OptimizerName::Sgd => "sgd",
    }
}

fn skipgram_config(a: &TrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: derive_seed(seed, "train/skipgram"),
        dim: a.dim,
        optimizer: optimizer(a.optimizer),
    }
}

/// One-hot labels over the sorted gold vocabulary.
fn gold_labels(corpus: &SegmentedCorpus) -> CliResult<(Vec<String>, Vec<SoftLabel>)> {
    let vocab: Vec<String> = corpus.segments_by_label().keys().map(|s| s.to_string()).collect();
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let labels = corpus
        .iter_segments()
        .map(|(_, s)| {
            let l = s
                .label
                .as_deref()
                .ok_or_else(|| CliError::data(format!("segment `{}` has no label", s.segment_id)))?;
            Ok(SoftLabel::one_hot(vocab.len(), index[l]))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((vocab, labels))
}

fn fit_skipgram(corpus: &SegmentedCorpus, labels: &[SoftLabel], window: usize, config: &TrainConfig) -> CliResult<(SkipgramModel, Vec<f64>)> {
    let pairs = extract_context_pairs(corpus, window)?;
    let refs: Vec<(&SoftLabel, &SoftLabel)> = pairs
        .iter()
        .map(|p| (&labels[corpus.flat_index(p.target)], &labels[corpus.flat_index(p.context)]))
        .collect();
    let fit = train_skipgram(&refs, config)?;
    Ok((fit.model, fit.epoch_losses))
}

pub fn cmd_train(a: &TrainArgs, seed: u64) -> CliResult<()> {
    if a.mode == TrainMode::ClusterSkipgram && a.centroids.is_none() {
        return Err(CliError::usage("--centroids is required for --mode cluster-skipgram"));
    }
    if a.window == 0 {
        return Err(CliError::usage("--window must be >= 1"));
    }
    let corpus = read_corpus(&a.corpus)?;
    let mut config = json!({
        "window": a.window,
        "epochs": a.epochs,
        "learning_rate": a.learning_rate,
        "batch_size": a.batch_size,
        "dim": a.dim,
        "optimizer": optimizer_label(a.optimizer),
        "seed": seed,
    });
    let (saved, losses) = match a.mode {
        TrainMode::ClusterSkipgram => {
            let centroids = read_centroids(a.centroids.as_deref().unwrap_or(Path::new("")))?;
            let labels = soft_labels_batch(&corpus, &centroids)?;
            let (model, losses) = fit_skipgram(&corpus, &labels, a.window, &skipgram_config(a, seed))?;
            (SavedModel::ClusterSkipgram { model, centroids, config }, losses)
        }
        TrainMode::TextSkipgram => {
            let (vocab, labels) = gold_labels(&corpus)?;
            let (model, losses) = fit_skipgram(&corpus, &labels, a.window, &skipgram_config(a, seed))?;
            (SavedModel::TextSkipgram { model, vocab, config }, losses)
        }
        TrainMode::Projection => {
            let activation = match a.activation {
                ActivationName::Relu => Activation::Relu,
                ActivationName::Identity => Activation::Identity,
            };
            let cc = ContrastiveConfig {
                tau: a.tau,
                n_negatives: a.negatives,
                window: a.window,
                hidden: a.hidden,
                out_dim: a.dim,
                activation,
                epochs: a.epochs,
                learning_rate: a.learning_rate,
                batch_size: a.batch_size,
                pairs_per_epoch: a.pairs_per_epoch,
                optimizer: optimizer(a.optimizer),
                seed: derive_seed(seed, "train/projection"),
            };
            let obj = config.as_object_mut().expect("object literal");
            obj.insert("tau".into(), json!(a.tau));
            obj.insert("negatives".into(), json!(a.negatives));
            obj.insert("hidden".into(), json!(a.hidden));
            obj.insert("activation".into(), json!(activation_name(activation)));
            obj.insert("pairs_per_epoch".into(), json!(a.pairs_per_epoch));
            let pairs = extract_context_pairs(&corpus, a.window)?;
            let fit = train_projection(&corpus, &pairs, &cc)?;
            (SavedModel::Projection { model: fit.model, config }, fit.epoch_losses)
        }
    };
    for (epoch, loss) in losses.iter().enumerate() {
        println!("epoch {} loss {loss:.6}", epoch + 1);
    }
    saved.write(&a.out)?;
    println!("wrote {} model to {}", saved.kind(), a.out.display());
    Ok(())
}

/// One embedding per corpus segment, in corpus order.
pub fn embed_corpus(model: Option<&SavedModel>, corpus: &SegmentedCorpus) -> CliResult<EmbeddingTable> {
    let ids: Vec<String> = corpus.iter_segments().map(|(_, s)| s.segment_id.clone()).collect();
    let rows: Vec<Vec<f64>> = match model {
        None => corpus.iter_segments().map(|(_, s)| s.embedding.clone()).collect(),
        Some(SavedModel::ClusterSkipgram { model, centroids, .. }) => {
            let labeler = SoftLabeler::new(centroids)?;
            corpus
                .iter_segments()
                .map(|(_, s)| Ok(embed_segment(model, &labeler.label(&s.embedding)?)?))
                .collect::<CliResult<_>>()?
        }
        Some(SavedModel::TextSkipgram { model, vocab, .. }) => {
            let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            corpus
                .iter_segments()
                .map(|(_, s)| {
                    let label = s
                        .label
                        .as_deref()
                        .ok_or_else(|| CliError::data(format!("segment `{}` has no label", s.segment_id)))?;
                    let row = index
                        .get(label)
                        .ok_or_else(|| CliError::data(format!("label `{label}` is not in the model vocabulary")))?;
                    Ok(model.input.row(*row).to_vec())
                })
                .collect::<CliResult<_>>()?
        }
        Some(SavedModel::Projection { model, .. }) => corpus
            .iter_segments()
            .map(|(_, s)| Ok(project(model, &s.embedding)?))
            .collect::<CliResult<_>>()?,
    };
    let dim = rows.first().map_or(0, Vec::len);
    EmbeddingTable::from_rows(ids, &rows, dim)
}

pub fn cmd_embed(a: &EmbedArgs) -> CliResult<()> {
    let model = a.model.as_deref().map(SavedModel::read).transpose()?;
    let corpus = read_corpus(&a.corpus)?;
    let table = embed_corpus(model.as_ref(), &corpus)?;
    table.write(&a.out)?;
    println!(
        "wrote {} embeddings of dimension {} to {}",
        table.len(),
        table.dim(),
        a.out.display()
    );
    Ok(())
}

/// Looks up each labelled corpus segment's row in `table`.
fn labelled_rows<'a>(table: &'a EmbeddingTable, corpus: &SegmentedCorpus) -> CliResult<Vec<(String, &'a [f64])>> {
    let index = table.index()?;
    let mut out = Vec::new();
    for (_, s) in corpus.iter_segments() {
        let Some(label) = &s.label else { continue };
        let row = index.get(s.segment_id.as_str()).ok_or_else(|| {
            CliError::data(format!("no embedding for segment `{}`", s.segment_id))
        })?;
        out.push((label.clone(), table.rows.row(*row)));
    }
    Ok(out)
}

fn by_class(rows: &[(String, &[f64])]) -> BTreeMap<String, Vec<Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (label, v) in rows {
        out.entry(label.clone()).or_default().push(v.to_vec());
    }
    out
}

pub fn cmd_eval_sim(a: &EvalSimArgs, seed: u64) -> CliResult<()> {
    let table = EmbeddingTable::read(&a.embeddings)?;
    let corpus = read_corpus(&a.corpus)?;
    let reference = read_reference(&a.reference)?;
    let mut classes = by_class(&labelled_rows(&table, &corpus)?);
    let before = classes.len();
    classes.retain(|_, v| v.len() >= a.min_count);
    let n = classes.len();
    let mut report = json!({
        "n_classes": n,
        "n_dropped_classes": before - n,
        "n_pairs": n * n.saturating_sub(1) / 2,
    });
    let obj = report.as_object_mut().expect("object literal");
    if matches!(a.mode, SimMode::Avg | SimMode::Both) {
        let rho = rho_avg(&classes, &reference)?;
        println!("rho_avg    {rho:.4}");
        obj.insert("rho_avg".into(), json!(rho));
    }
    if matches!(a.mode, SimMode::Single | SimMode::Both) {
        let reps = rho_single_repeats(&classes, &reference, a.repeats, derive_seed(seed, "eval-sim"))?;
        let rho = reps.iter().sum::<f64>() / reps.len() as f64;
        println!("rho_single {rho:.4} (mean of {} repeats)", reps.len());
        obj.insert("rho_single".into(), json!(rho));
        obj.insert("n_repeats".into(), json!(a.repeats));
        obj.insert("per_repeat".into(), json!(reps));
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn search_collection(table: &EmbeddingTable, corpus: &SegmentedCorpus) -> CliResult<Vec<SearchUtterance>> {
    let index = table.index()?;
    corpus
        .utterances()
        .iter()
        .map(|u| {
            let segments = u
                .segments
                .iter()
                .map(|s| {
                    let row = index.get(s.segment_id.as_str()).ok_or_else(|| {
                        CliError::data(format!("no embedding for segment `{}`", s.segment_id))
                    })?;
                    Ok(SearchSegment {
                        label: s.label.clone(),
                        embedding: table.rows.row(*row).to_vec(),
                    })
                })
                .collect::<CliResult<_>>()?;
            Ok(SearchUtterance {
                utterance_id: u.utterance_id.clone(),
                segments,
            })
        })
        .collect()
}

/// Up to `n` instances per keyword, chosen with a keyword-specific seed and
/// kept in corpus order.
fn sample_queries(
    rows: &[(String, &[f64])],
    keywords: &[String],
    n: usize,
    seed: u64,
) -> (BTreeMap<String, Vec<Vec<f64>>>, Vec<String>) {
    let instances = by_class(rows);
    let mut queries = BTreeMap::new();
    let mut missing = Vec::new();
    for k in keywords {
        match instances.get(k) {
            Some(all) if !all.is_empty() => {
                let picked = if all.len() <= n {
                    all.clone()
                } else {
                    let mut rng = rng_from_seed(derive_seed(seed, &format!("eval-qbe/queries/{k}")));
                    let mut idx = rand::seq::index::sample(&mut rng, all.len(), n).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| all[i].clone()).collect()
                };
                queries.insert(k.clone(), picked);
            }
            _ => missing.push(k.clone()),
        }
    }
    (queries, missing)
}

fn qbe_report(result: &QbEResult, mask: bool, without_queries: &[String]) -> Value {
    json!({
        "mask": mask,
        "p_at_10": result.p_at_10,
        "p_at_n": result.p_at_n,
        "eer": result.eer,
        "spearman_rho_votes": result.spearman_rho_votes,
        "n_keywords": result.per_keyword.len(),
        "excluded_keywords": result.excluded_keywords,
        "keywords_without_queries": without_queries,
        "per_keyword": result.per_keyword.iter().map(|k| json!({
            "keyword": k.keyword,
            "n_queries": k.n_queries,
            "p_at_10": k.p_at_10,
            "p_at_n": k.p_at_n,
            "eer": k.eer,
            "spearman_rho_votes": k.spearman_rho_votes,
        })).collect::<Vec<_>>(),
    })
}

fn opt_cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn cmd_eval_qbe(a: &EvalQbeArgs, seed: u64) -> CliResult<()> {
    if a.queries_per_keyword == 0 {
        return Err(CliError::usage("--queries-per-keyword must be >= 1"));
    }
    let judgments = read_judgments(&a.judgments, a.annotators)?;
    let corpus = read_corpus(&a.corpus)?;
    let collection = search_collection(&EmbeddingTable::read(&a.embeddings)?, &corpus)?;
    let q_table = EmbeddingTable::read(&a.queries_embeddings)?;
    let q_corpus = read_corpus(&a.queries_corpus)?;
    let keywords: Vec<String> = judgments.keywords().map(str::to_owned).collect();
    let rows = labelled_rows(&q_table, &q_corpus)?;
    let (queries, without) = sample_queries(&rows, &keywords, a.queries_per_keyword, seed);
    if queries.is_empty() {
        return Err(CliError::data("no keyword has a query instance in the query corpus"));
    }
    let result = run_qbe(&queries, &collection, &judgments, a.mask)?;
    println!("{:<8} {:>7} {:>7} {:>7} {:>7}", "mask", "P@10", "P@N", "EER", "rho");
    println!(
        "{:<8} {:>7.4} {:>7.4} {:>7.4} {:>7}",
        a.mask,
        result.p_at_10,
        result.p_at_n,
        result.eer,
        result.spearman_rho_votes.map_or("n/a".into(), |r| format!("{r:.4}"))
    );
    if !without.is_empty() {
        eprintln!("warning: {} keywords have no query instance", without.len());
    }
    if let Some(out) = &a.out {
        write_json(out, &qbe_report(&result, a.mask, &without))?;
    }
    if let Some(path) = &a.csv {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let io = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
        w.write_record(["keyword", "n_queries", "p_at_10", "p_at_n", "eer", "spearman_rho_votes"]).map_err(io)?;
        for k in &result.per_keyword {
            w.write_record([
                k.keyword.clone(),
                k.n_queries.to_string(),
                k.p_at_10.to_string(),
                k.p_at_n.to_string(),
                opt_cell(k.eer),
                opt_cell(k.spearman_rho_votes),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

pub fn cmd_export_pca(a: &ExportPcaArgs) -> CliResult<()> {
    let table = EmbeddingTable::read(&a.embeddings)?;
    let corpus = read_corpus(&a.corpus)?;
    let classes = by_class(&labelled_rows(&table, &corpus)?);
    let names: Vec<&String> = classes.keys().collect();
    let dim = table.dim();
    let mut means = Matrix::zeros(names.len(), dim);
    for (i, inst) in classes.values().enumerate() {
        for v in inst {
            for (m, x) in means.row_mut(i).iter_mut().zip(v) {
                *m += x / inst.len() as f64;
            }
        }
    }
    let position: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let probes: Vec<usize> = match &a.classes {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|c| position.get(c).copied().ok_or_else(|| CliError::data(format!("unknown class `{c}`"))))
            .collect::<CliResult<_>>()?,
        None => (0..names.len()).collect(),
    };
    let mut plotted: Vec<usize> = probes.clone();
    let mut neighbour_rows = Vec::new();
    if a.neighbors > 0 {
        for &p in &probes {
            for (rank, n) in nearest_neighbors(&means, p, a.neighbors)?.into_iter().enumerate() {
                let cos = sawe_core::linalg::cosine(means.row(p), means.row(n))?;
                neighbour_rows.push((names[p].clone(), rank + 1, names[n].clone(), cos));
                plotted.push(n);
            }
        }
    }
    plotted.sort_unstable();
    plotted.dedup();
    let rows: Vec<Vec<f64>> = plotted.iter().map(|&i| means.row(i).to_vec()).collect();
    let pca = pca_2d(&Matrix::from_rows(&rows)?)?;
    if pca.degenerate {
        eprintln!("warning: second principal component carries no variance");
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
    let io = |e: csv::Error| CliError::data(e.to_string());
    w.write_record(["label", "pc1", "pc2", "probe"]).map_err(io)?;
    for (&i, xy) in plotted.iter().zip(&pca.coords) {
        w.write_record([
            names[i].clone(),
            xy[0].to_string(),
            xy[1].to_string(),
            probes.contains(&i).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    if let Some(path) = &a.neighbors_out {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        w.write_record(["probe", "rank", "neighbor", "cosine"]).map_err(io)?;
        for (p, rank, n, cos) in &neighbour_rows {
            w.write_record([p.clone(), rank.to_string(), n.clone(), cos.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    } else {
        for (p, rank, n, cos) in &neighbour_rows {
            println!("{p} {rank} {n} {cos:.4}");
        }
    }
    println!(
        "variance explained {:.6} {:.6}, wrote {} points to {}",
        pca.variances[0],
        pca.variances[1],
        plotted.len(),
        a.out.display()
    );
    Ok(())
}
