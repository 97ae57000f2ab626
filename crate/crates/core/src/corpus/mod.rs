//! Note collections: ICD-10 derived labels, synthetic generation, file
//! ingestion/export and the frozen-test / supervised / pretrain split.

mod icd10;
mod split;
mod synth;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use icd10::{label_of, parse_icd10, Icd10Code, TraumaLabel, NON_TRAUMA_LETTERS, TRAUMA_LETTERS};
pub use split::{make_splits, SplitManifest};
pub use synth::generate_synthetic_corpus;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalNote {
    pub id: String,
    pub text: String,
    pub code: Option<Icd10Code>,
    pub label: Option<TraumaLabel>,
}

impl ClinicalNote {
    /// Builds a note, deriving the label from `code` when present.
    pub fn new(id: impl Into<String>, text: impl Into<String>, code: Option<Icd10Code>) -> Self {
        let label = code.as_ref().map(label_of);
        Self {
            id: id.into(),
            text: text.into(),
            code,
            label,
        }
    }

    /// `Some(true)` for trauma, `Some(false)` for non-trauma, `None` otherwise.
    pub fn binary_label(&self) -> Option<bool> {
        self.label.and_then(TraumaLabel::as_binary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected jsonl or csv)")),
        }
    }
}

impl Format {
    /// Guesses from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Deserialize)]
struct InRecord {
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    code: Option<String>,
}

#[derive(Debug, Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    code: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'static str>,
}

fn record_to_note(path: &Path, line: usize, rec: InRecord) -> Result<ClinicalNote> {
    let err = |message: String| Error::Record {
        path: path.to_path_buf(),
        line,
        message,
    };
    let text = rec.text.ok_or_else(|| err("missing text field".into()))?;
    if text.is_empty() {
        return Err(err("empty text field".into()));
    }
    let id = rec.id.unwrap_or_else(|| format!("line-{line}"));
    let code = match rec.code.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(raw) => Some(parse_icd10(raw).map_err(|e| err(e.to_string()))?),
    };
    Ok(ClinicalNote::new(id, text, code))
}

/// Reads notes from JSONL (`{"id","text","code"?}` per line) or CSV
/// (`id,text,code` header). Exact duplicate texts keep their first occurrence.
pub fn ingest(path: &Path, format: Format) -> Result<Vec<ClinicalNote>> {
    read_notes(path, format).map(dedup)
}

/// Like [`ingest`] but keeps every record, duplicates included.
pub fn read_notes(path: &Path, format: Format) -> Result<Vec<ClinicalNote>> {
    let mut notes = Vec::new();
    match format {
        Format::Jsonl => {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: InRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })?;
                notes.push(record_to_note(path, line_no, rec)?);
            }
        }
        Format::Csv => {
            let mut reader = csv::Reader::from_path(path)?;
            for rec in reader.deserialize::<InRecord>() {
                let rec = rec.map_err(|e| Error::Record {
                    path: path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                // header is line 1
                let line_no = notes.len() + 2;
                notes.push(record_to_note(path, line_no, rec)?);
            }
        }
    }
    Ok(notes)
}

/// Drops notes whose text exactly equals an earlier note's text.
pub fn dedup(notes: Vec<ClinicalNote>) -> Vec<ClinicalNote> {
    let mut seen = HashSet::new();
    notes
        .into_iter()
        .filter(|n| seen.insert(n.text.clone()))
        .collect()
}

/// Writes notes as JSONL with an added `label` field.
pub fn export_jsonl(notes: &[ClinicalNote], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for n in notes {
        let rec = OutRecord {
            id: &n.id,
            text: &n.text,
            code: n.code.as_ref().map(Icd10Code::raw),
            label: n.label.map(TraumaLabel::as_str),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Notes carrying a trauma or non-trauma label.
pub fn labeled(notes: &[ClinicalNote]) -> impl Iterator<Item = &ClinicalNote> {
    notes.iter().filter(|n| n.binary_label().is_some())
}
