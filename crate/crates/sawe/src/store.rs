//! Centroid and model files: SAWE blocks next to a JSON sidecar.
//!
//! Centroids live in `NAME.sawe` with `NAME.json` holding
//! `{"K", "sigma", "normalized"}`. A model is a sidecar `NAME.json` whose
//! `blocks` map names each weight block stored as `NAME.<block>.sawe` in the
//! same directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sawe_core::clustering::Centroids;
use sawe_core::linalg::Matrix;
use sawe_core::projection::{Activation, ProjectionModel};
use sawe_core::skipgram::SkipgramModel;

use crate::binary::EmbeddingTable;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidMeta {
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub normalized: bool,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn centroid_table(c: &Centroids) -> CliResult<EmbeddingTable> {
    EmbeddingTable::new(numbered("c", c.k()), c.means().clone())
}

/// Writes `path` (binary means) and its `.json` sidecar.
pub fn write_centroids(c: &Centroids, path: &Path) -> CliResult<()> {
    centroid_table(c)?.write(path)?;
    let meta = CentroidMeta {
        k: c.k(),
        sigma: c.sigma(),
        normalized: c.normalized(),
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_centroids(path: &Path) -> CliResult<Centroids> {
    let table = EmbeddingTable::read(path)?;
    let meta: CentroidMeta = read_json(&sidecar_path(path))?;
    if meta.k != table.len() {
        return Err(CliError::data(format!(
            "{}: sidecar says K = {}, file has {} rows",
            path.display(),
            meta.k,
            table.len()
        )));
    }
    Ok(Centroids::new(table.rows, meta.sigma, meta.normalized)?)
}

/// A trained model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    /// Skipgram over soft labels from the bundled centroids.
    ClusterSkipgram {
        model: SkipgramModel,
        centroids: Centroids,
        config: Value,
    },
    /// Skipgram over one-hot gold labels; `vocab[i]` names row `i` of E.
    TextSkipgram {
        model: SkipgramModel,
        vocab: Vec<String>,
        config: Value,
    },
    Projection {
        model: ProjectionModel,
        config: Value,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSidecar {
    kind: String,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    d: usize,
    config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    centroids: Option<CentroidMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    blocks: BTreeMap<String, String>,
}

fn block_file(sidecar: &Path, block: &str) -> CliResult<String> {
    let stem = sidecar
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::usage(format!("bad model path {}", sidecar.display())))?;
    Ok(format!("{stem}.{block}.sawe"))
}

fn dir_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn row_table(id: &str, values: &[f64]) -> CliResult<EmbeddingTable> {
    EmbeddingTable::from_rows(vec![id.into()], &[values.to_vec()], values.len())
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

pub fn parse_activation(name: &str) -> Option<Activation> {
    match name {
        "relu" => Some(Activation::Relu),
        "identity" => Some(Activation::Identity),
        _ => None,
    }
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::ClusterSkipgram { .. } => "cluster-skipgram",
            SavedModel::TextSkipgram { .. } => "text-skipgram",
            SavedModel::Projection { .. } => "projection",
        }
    }

    /// Writes the sidecar at `path` and every block beside it.
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut blocks: Vec<(&str, EmbeddingTable)> = Vec::new();
        let (k, d, config, centroids, activation) = match self {
            SavedModel::ClusterSkipgram {
                model,
                centroids,
                config,
            } => {
                blocks.push(("E", EmbeddingTable::new(numbered("c", model.k()), model.input.clone())?));
                blocks.push(("W", EmbeddingTable::new(numbered("d", model.dim()), model.output.clone())?));
                blocks.push(("centroids", centroid_table(centroids)?));
                let meta = CentroidMeta {
                    k: centroids.k(),
                    sigma: centroids.sigma(),
                    normalized: centroids.normalized(),
                };
                (Some(model.k()), model.dim(), config, Some(meta), None)
            }
            SavedModel::TextSkipgram { model, vocab, config } => {
                blocks.push(("E", EmbeddingTable::new(vocab.clone(), model.input.clone())?));
                blocks.push(("W", EmbeddingTable::new(numbered("d", model.dim()), model.output.clone())?));
                (Some(model.k()), model.dim(), config, None, None)
            }
            SavedModel::Projection { model, config } => {
                blocks.push(("w1", EmbeddingTable::new(numbered("h", model.hidden_dim()), model.w1.clone())?));
                blocks.push(("b1", row_table("b1", &model.b1)?));
                blocks.push(("w2", EmbeddingTable::new(numbered("o", model.output_dim()), model.w2.clone())?));
                blocks.push(("b2", row_table("b2", &model.b2)?));
                let act = activation_name(model.activation).to_owned();
                (None, model.output_dim(), config, None, Some(act))
            }
        };
        let mut names = BTreeMap::new();
        for (name, table) in &blocks {
            let file = block_file(path, name)?;
            table.write(&dir_of(path).join(&file))?;
            names.insert((*name).to_owned(), file);
        }
        let sidecar = ModelSidecar {
            kind: self.kind().into(),
            k,
            d,
            config: config.clone(),
            centroids,
            activation,
            blocks: names,
        };
        write_json(path, &sidecar)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let meta: ModelSidecar = read_json(path)?;
        let block = |name: &str| -> CliResult<EmbeddingTable> {
            let file = meta
                .blocks
                .get(name)
                .ok_or_else(|| CliError::data(format!("{}: missing block `{name}`", path.display())))?;
            EmbeddingTable::read(&dir_of(path).join(file))
        };
        let skipgram = || -> CliResult<(SkipgramModel, Vec<String>)> {
            let e = block("E")?;
            let w = block("W")?;
            if meta.k != Some(e.len()) || e.dim() != meta.d {
                return Err(CliError::data(format!(
                    "{}: E is {}x{}, sidecar says K = {:?}, d = {}",
                    path.display(),
                    e.len(),
                    e.dim(),
                    meta.k,
                    meta.d
                )));
            }
            Ok((SkipgramModel::from_parts(e.rows, w.rows)?, e.ids))
        };
        match meta.kind.as_str() {
            "cluster-skipgram" => {
                let (model, _) = skipgram()?;
                let cm = meta
                    .centroids
                    .ok_or_else(|| CliError::data(format!("{}: missing centroid metadata", path.display())))?;
                let means = block("centroids")?;
                if means.len() != model.k() || cm.k != model.k() {
                    return Err(CliError::data(format!(
                        "{}: centroid count does not match K",
                        path.display()
                    )));
                }
                Ok(SavedModel::ClusterSkipgram {
                    centroids: Centroids::new(means.rows, cm.sigma, cm.normalized)?,
                    model,
                    config: meta.config,
                })
            }
            "text-skipgram" => {
                let (model, vocab) = skipgram()?;
                Ok(SavedModel::TextSkipgram {
                    model,
                    vocab,
                    config: meta.config,
                })
            }
            "projection" => {
                let activation = meta
                    .activation
                    .as_deref()
                    .and_then(parse_activation)
                    .ok_or_else(|| CliError::data(format!("{}: bad or missing activation", path.display())))?;
                let single_row = |name: &str| -> CliResult<Vec<f64>> {
                    let t = block(name)?;
                    if t.len() != 1 {
                        return Err(CliError::data(format!("block `{name}` must have one row")));
                    }
                    Ok(t.rows.row(0).to_vec())
                };
                let model = ProjectionModel {
                    w1: block("w1")?.rows,
                    b1: single_row("b1")?,
                    w2: block("w2")?.rows,
                    b2: single_row("b2")?,
                    activation,
                };
                model.validate()?;
                if model.output_dim() != meta.d {
                    return Err(CliError::data(format!("{}: output dimension mismatch", path.display())));
                }
                Ok(SavedModel::Projection {
                    model,
                    config: meta.config,
                })
            }
            other => Err(CliError::data(format!(
                "{}: unknown model kind `{other}`",
                path.display()
            ))),
        }
    }
}

/// Rounds every entry to `f32`, the precision of stored blocks.
pub fn to_stored_precision(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|x| *x = f64::from(*x as f32));
    out
}
