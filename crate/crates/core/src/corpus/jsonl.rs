//! JSONL interchange format: one JSON document object per line, UTF-8.
//!
//! Keys: `doc_id`, `tokens`, `mentions` (`{id,start,end}`), `clusters`
//! (list of lists of mention ids), `split_anaphors` (map id -> list of
//! ids), `bridging` (`{anaphor,antecedent,relation}`), `crowd`
//! (`{annotator,anaphor,antecedents}`). Missing `bridging`/`crowd` mean
//! empty, and empty ones are omitted on save, so saving a canonical line
//! reproduces it byte for byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::{validate_document_opts, Corpus, Document, QualityTier, ValidateOpts};
use crate::{Error, Result};

/// Options for [`load_corpus_opts`].
#[derive(Debug, Clone)]
pub struct LoadOpts {
    /// Corpus name; defaults to the file stem.
    pub name: Option<String>,
    pub quality_tier: QualityTier,
    /// Accept one-antecedent training items (auxiliary corpora).
    pub allow_single_antecedent: bool,
}

impl Default for LoadOpts {
    fn default() -> Self {
        LoadOpts {
            name: None,
            quality_tier: QualityTier::Gold,
            allow_single_antecedent: false,
        }
    }
}

/// Loads and validates a corpus from a JSONL file, preserving document order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    load_corpus_opts(path, LoadOpts::default())
}

pub fn load_corpus_opts(path: impl AsRef<Path>, opts: LoadOpts) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = opts.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".to_string())
    });
    let mut corpus = Corpus::new(name, opts.quality_tier);
    let validate = ValidateOpts {
        allow_single_antecedent: opts.allow_single_antecedent,
    };

    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let violations = validate_document_opts(&doc, validate);
        if !violations.is_empty() {
            return Err(Error::Validation {
                doc_id: doc.doc_id,
                violations,
            });
        }
        if corpus.documents.iter().any(|d| d.doc_id == doc.doc_id) {
            return Err(Error::DuplicateDocId { doc_id: doc.doc_id });
        }
        corpus.documents.push(doc);
    }
    Ok(corpus)
}

/// Writes a corpus as JSONL, one compact document object per line.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for doc in &corpus.documents {
        let line = serde_json::to_string(doc).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}
