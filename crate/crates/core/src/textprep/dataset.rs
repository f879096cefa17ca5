//! Canonical JSONL dataset format and the WIKI-727k-style text converter.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the canonical dataset: `{"id", "sentences", "labels"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub id: String,
    pub sentences: Vec<String>,
    pub labels: Vec<u8>,
}

impl LabeledDocument {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.sentences.len() {
            return Err(Error::Input(format!(
                "document {:?}: {} labels for {} sentences",
                self.id,
                self.labels.len(),
                self.sentences.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y > 1) {
            return Err(Error::Input(format!("document {:?}: label {bad} is not 0 or 1", self.id)));
        }
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: LabeledDocument = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl(path: &Path, docs: &[LabeledDocument]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut w, doc).map_err(|e| Error::json("serializing document", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Converts a plain-text export where lines beginning with `========` open a
/// new gold paragraph. Every other non-blank line is a sentence; the last
/// sentence of each paragraph gets label 1. Returns `None` for documents with
/// no sentences.
pub fn convert_wiki727k(id: &str, text: &str) -> Option<LabeledDocument> {
    let mut sentences = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for line in text.lines() {
        if line.starts_with("========") {
            if let Some(last) = labels.last_mut() {
                *last = 1;
            }
            continue;
        }
        let line = line.trim();
        if !line.is_empty() {
            sentences.push(line.to_string());
            labels.push(0);
        }
    }
    let last = labels.last_mut()?;
    *last = 1;
    Some(LabeledDocument { id: id.to_string(), sentences, labels })
}
