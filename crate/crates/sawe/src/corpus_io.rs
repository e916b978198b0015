//! Corpus JSONL: one utterance object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use sawe_core::corpus::{Segment, SegmentedCorpus, Utterance};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    utterance_id: String,
    speaker_id: String,
    segments: Vec<SegmentRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    segment_id: String,
    position: usize,
    label: Option<String>,
    embedding: Vec<f64>,
}

pub fn parse_corpus(reader: impl BufRead) -> CliResult<SegmentedCorpus> {
    let mut utterances = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("line {}: {e}", n + 1)))?;
        utterances.push(Utterance {
            utterance_id: rec.utterance_id,
            speaker_id: rec.speaker_id,
            segments: rec
                .segments
                .into_iter()
                .map(|s| Segment {
                    segment_id: s.segment_id,
                    position: s.position,
                    embedding: s.embedding,
                    label: s.label,
                })
                .collect(),
        });
    }
    // Loading problems are data errors even when the core calls them numerical.
    SegmentedCorpus::from_utterances(utterances).map_err(CliError::data)
}

pub fn read_corpus(path: &Path) -> CliResult<SegmentedCorpus> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_corpus(BufReader::new(file)).map_err(|e| e.context(path.display()))
}

pub fn write_corpus_to(corpus: &SegmentedCorpus, mut out: impl Write) -> std::io::Result<()> {
    for utt in corpus.utterances() {
        let rec = UtteranceRecord {
            utterance_id: utt.utterance_id.clone(),
            speaker_id: utt.speaker_id.clone(),
            segments: utt
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    segment_id: s.segment_id.clone(),
                    position: s.position,
                    label: s.label.clone(),
                    embedding: s.embedding.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_corpus(corpus: &SegmentedCorpus, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_corpus_to(corpus, BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"utterance_id":"u1","speaker_id":"s","segments":[{"segment_id":"b","position":1,"label":null,"embedding":[0.5,1]},{"segment_id":"a","position":0,"label":"x","embedding":[1,2]}]}

{"utterance_id":"u2","speaker_id":"s","segments":[{"segment_id":"c","position":0,"label":"y","embedding":[3,4]}]}
"#;

    #[test]
    fn parses_and_orders_segments() {
        let c = parse_corpus(TWO.as_bytes()).unwrap();
        assert_eq!(c.n_segments(), 3);
        assert_eq!(c.utterances()[0].segments[0].segment_id, "a");
        assert_eq!(c.utterances()[0].segments[1].label, None);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = parse_corpus(TWO.as_bytes()).unwrap();
        let mut first = Vec::new();
        write_corpus_to(&c, &mut first).unwrap();
        let again = parse_corpus(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_corpus_to(&again, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(again, c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = TWO.replace("\"c\",\"position\":0", "\"c\",\"position\":\"zero\"");
        let err = parse_corpus(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.starts_with("line 3:"), "{err}");
        let dup = TWO.replace("\"segment_id\":\"c\"", "\"segment_id\":\"a\"");
        assert!(matches!(parse_corpus(dup.as_bytes()), Err(CliError::Data(_))));
        let dims = TWO.replace("[3,4]", "[3]");
        assert!(parse_corpus(dims.as_bytes()).is_err());
        assert!(parse_corpus("".as_bytes()).is_err());
    }
}
