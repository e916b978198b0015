//! CSV tables: reference similarities and QbE judgments.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use sawe_core::intrinsic::ReferenceSimilarities;
use sawe_core::qbe::QbEJudgments;

use crate::error::{CliError, CliResult};

/// Annotators per judgment in the synthetic and default setting.
pub const DEFAULT_ANNOTATORS: u32 = 5;

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceRow {
    word_a: String,
    word_b: String,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct JudgmentRow {
    keyword: String,
    utterance_id: String,
    votes: u32,
}

fn row_error(line: Option<u64>, err: impl std::fmt::Display) -> CliError {
    match line {
        Some(l) => CliError::data(format!("line {l}: {err}")),
        None => CliError::data(err),
    }
}

fn csv_error(err: csv::Error) -> CliError {
    let line = err.position().map(|p| p.line());
    row_error(line, err)
}

/// Reads `word_a,word_b,score`. Both orders of a pair refer to one entry;
/// conflicting duplicates are an error.
pub fn parse_reference(reader: impl Read) -> CliResult<ReferenceSimilarities> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = ReferenceSimilarities::new();
    for rec in rdr.deserialize::<ReferenceRow>() {
        let row = rec.map_err(csv_error)?;
        out.insert(&row.word_a, &row.word_b, row.score)
            .map_err(CliError::data)?;
    }
    Ok(out)
}

pub fn write_reference_to(reference: &ReferenceSimilarities, out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for (a, b, score) in reference.iter() {
        w.serialize(ReferenceRow {
            word_a: a.into(),
            word_b: b.into(),
            score,
        })
        .map_err(csv_error)?;
    }
    w.flush().map_err(CliError::data)
}

/// Reads `keyword,utterance_id,votes`; votes must not exceed `n_annotators`.
pub fn parse_judgments(reader: impl Read, n_annotators: u32) -> CliResult<QbEJudgments> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = QbEJudgments::new(n_annotators).map_err(CliError::usage)?;
    for rec in rdr.deserialize::<JudgmentRow>() {
        let row = rec.map_err(csv_error)?;
        out.insert(&row.keyword, &row.utterance_id, row.votes)
            .map_err(CliError::data)?;
    }
    Ok(out)
}

pub fn write_judgments_to(judgments: &QbEJudgments, out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for (keyword, utterance_id, votes) in judgments.iter() {
        w.serialize(JudgmentRow {
            keyword: keyword.into(),
            utterance_id: utterance_id.into(),
            votes,
        })
        .map_err(csv_error)?;
    }
    w.flush().map_err(CliError::data)
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| CliError::io(path, e))
}

pub fn read_reference(path: &Path) -> CliResult<ReferenceSimilarities> {
    parse_reference(open(path)?).map_err(|e| e.context(path.display()))
}

pub fn write_reference(reference: &ReferenceSimilarities, path: &Path) -> CliResult<()> {
    write_reference_to(reference, create(path)?).map_err(|e| e.context(path.display()))
}

pub fn read_judgments(path: &Path, n_annotators: u32) -> CliResult<QbEJudgments> {
    parse_judgments(open(path)?, n_annotators).map_err(|e| e.context(path.display()))
}

pub fn write_judgments(judgments: &QbEJudgments, path: &Path) -> CliResult<()> {
    write_judgments_to(judgments, create(path)?).map_err(|e| e.context(path.display()))
}
