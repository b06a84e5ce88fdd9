//! Line-delimited JSON records for generated pools and selected training
//! sets. Field order is fixed by struct declaration, so serialization is
//! byte-stable for a given pool.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::GeneratedSample;
use crate::vocab::{TokenSequence, Vocabulary};

/// One serialized sample: token ids plus detokenized text for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: u64,
    pub label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_seq: Option<TokenSequence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_text: Option<String>,
    pub generated: TokenSequence,
    pub generated_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl SampleRecord {
    pub fn from_sample(sample: &GeneratedSample, vocab: &Vocabulary) -> Result<Self> {
        Ok(SampleRecord {
            id: sample.id,
            label: sample.label,
            first_seq: sample.first_seq.clone(),
            first_text: sample.first_seq.as_ref().map(|seq| vocab.decode(seq)),
            generated: sample.generated.clone(),
            generated_text: vocab.decode(&sample.generated),
            score: sample.score,
        })
    }

    pub fn into_sample(self) -> GeneratedSample {
        GeneratedSample {
            id: self.id,
            first_seq: self.first_seq,
            generated: self.generated,
            label: self.label,
            score: self.score,
        }
    }
}

/// Writes one JSON object per line, in pool order.
pub fn write_records(path: &Path, samples: &[GeneratedSample], vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for sample in samples {
        let record = SampleRecord::from_sample(sample, vocab)?;
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Checkpoint(format!("record serialization: {e}")))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<GeneratedSample>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Checkpoint(format!("record parse at line {}: {e}", lineno + 1))
        })?;
        out.push(record.into_sample());
    }
    Ok(out)
}
