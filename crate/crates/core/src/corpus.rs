//! Evaluation data types, phrase normalization and dataset IO.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stem::porter_stem;

/// Separator between keyphrases in dataset files.
pub const PHRASE_SEPARATOR: &str = ";";

/// A keyphrase with its normalized forms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phrase {
    raw: String,
    tokens: Vec<String>,
    stems: Vec<String>,
    stem_key: String,
}

impl Phrase {
    /// Lowercase, tokenize and Porter-stem `raw`.
    pub fn new(raw: &str) -> Result<Self> {
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            return Err(Error::EmptyPhrase(raw.to_string()));
        }
        let stems: Vec<String> = tokens.iter().map(|t| porter_stem(t)).collect();
        let stem_key = stems.join(" ");
        Ok(Phrase {
            raw: raw.to_string(),
            tokens,
            stems,
            stem_key,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    /// Stems joined by a single space.
    pub fn stem_key(&self) -> &str {
        &self.stem_key
    }
}

/// Convenience wrapper for [`Phrase::new`].
pub fn normalize_phrase(raw: &str) -> Result<Phrase> {
    Phrase::new(raw)
}

/// Split on Unicode whitespace, lowercase, and strip leading/trailing
/// punctuation from every token. Interior punctuation (hyphens, apostrophes,
/// dots) is kept. Tokens that end up empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Tokenize and stem free text (documents and retrieval queries).
pub fn stem_tokens(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| porter_stem(t)).collect()
}

/// Keep at most `budget` whitespace-delimited tokens of `text`, re-joined by
/// single spaces.
pub fn truncate_tokens(text: &str, budget: usize) -> String {
    text.split_whitespace()
        .take(budget)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse a `;`-separated phrase list. Blank segments are ignored; segments
/// that contain no word characters are dropped and returned separately.
pub fn parse_phrase_list(field: &str) -> (Vec<Phrase>, Vec<String>) {
    let mut phrases = Vec::new();
    let mut dropped = Vec::new();
    for segment in field.split(PHRASE_SEPARATOR) {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        match Phrase::new(segment) {
            Ok(p) => phrases.push(p),
            Err(_) => dropped.push(segment.to_string()),
        }
    }
    (phrases, dropped)
}

/// Join phrases back into the dataset field format.
pub fn join_phrases(phrases: &[Phrase]) -> String {
    phrases
        .iter()
        .map(Phrase::raw)
        .collect::<Vec<_>>()
        .join(" ; ")
}

/// One document with its reference keyphrases and a system's ranked
/// predictions. Prediction order is the system's rank order and is never
/// re-sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub title: String,
    pub body: String,
    pub references: Vec<Phrase>,
    pub predictions: Vec<Phrase>,
}

impl EvalInstance {
    /// Title and body joined by a single space.
    pub fn document_text(&self) -> String {
        join_title_body(&self.title, &self.body)
    }
}

fn join_title_body(title: &str, body: &str) -> String {
    format!("{title} {body}")
}

/// A corpus document used as a retrieval target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
}

/// Evaluation instances plus the retrieval corpus they are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<EvalInstance>,
    pub corpus_docs: Vec<CorpusDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    id: Option<String>,
    title: Option<String>,
    #[serde(alias = "body")]
    r#abstract: Option<String>,
    references: Option<String>,
    predictions: Option<String>,
}

impl Dataset {
    /// Build a dataset, checking id uniqueness and that every instance has a
    /// corpus document.
    pub fn new(instances: Vec<EvalInstance>, corpus_docs: Option<Vec<CorpusDoc>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
        }
        let corpus_docs = match corpus_docs {
            Some(docs) => {
                let mut corpus_ids = HashSet::new();
                for doc in &docs {
                    if !corpus_ids.insert(doc.id.as_str()) {
                        return Err(Error::DuplicateId(doc.id.clone()));
                    }
                }
                if let Some(missing) = instances
                    .iter()
                    .find(|i| !corpus_ids.contains(i.id.as_str()))
                {
                    return Err(Error::MissingDoc(missing.id.clone()));
                }
                docs
            }
            None => instances
                .iter()
                .map(|i| CorpusDoc {
                    id: i.id.clone(),
                    text: i.document_text(),
                })
                .collect(),
        };
        Ok(Dataset {
            instances,
            corpus_docs,
        })
    }

    pub fn instance(&self, id: &str) -> Option<&EvalInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Write the instances file in the same line-delimited format
    /// [`load_dataset`] reads.
    pub fn write_instances(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for inst in &self.instances {
            let record = InstanceRecord {
                id: Some(inst.id.clone()),
                title: Some(inst.title.clone()),
                r#abstract: Some(inst.body.clone()),
                references: Some(join_phrases(&inst.references)),
                predictions: Some(join_phrases(&inst.predictions)),
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_corpus(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for doc in &self.corpus_docs {
            let line = serde_json::to_string(doc).expect("doc serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((idx + 1, line));
    }
    Ok(lines)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Load a line-delimited instances file and an optional corpus file.
///
/// Without a corpus file the corpus is the instances themselves
/// (title + " " + abstract).
pub fn load_dataset(instances_path: &Path, corpus_path: Option<&Path>) -> Result<Dataset> {
    let mut instances = Vec::new();
    for (line_no, line) in read_lines(instances_path)? {
        let record: InstanceRecord = serde_json::from_str(&line)
            .map_err(|e| parse_error(instances_path, line_no, e.to_string()))?;
        let missing =
            |field: &str| parse_error(instances_path, line_no, format!("missing field {field:?}"));
        let id = record.id.ok_or_else(|| missing("id"))?;
        let title = record.title.ok_or_else(|| missing("title"))?;
        let body = record.r#abstract.ok_or_else(|| missing("abstract"))?;
        let references = record.references.ok_or_else(|| missing("references"))?;
        let predictions = record.predictions.ok_or_else(|| missing("predictions"))?;

        let (references, dropped_refs) = parse_phrase_list(&references);
        let (predictions, dropped_preds) = parse_phrase_list(&predictions);
        for dropped in dropped_refs.iter().chain(&dropped_preds) {
            log::warn!(
                "{}:{line_no}: dropping phrase {dropped:?} with no word characters",
                instances_path.display()
            );
        }
        instances.push(EvalInstance {
            id,
            title,
            body,
            references,
            predictions,
        });
    }

    let corpus = match corpus_path {
        Some(path) => Some(load_corpus(path)?),
        None => None,
    };
    Dataset::new(instances, corpus)
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusDoc>> {
    read_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            serde_json::from_str::<CorpusDoc>(&line)
                .map_err(|e| parse_error(path, line_no, e.to_string()))
        })
        .collect()
}

/// Drop later predictions whose stem key was already seen, keeping
/// first-occurrence order.
pub fn dedupe_predictions(predictions: &[Phrase]) -> Vec<Phrase> {
    let mut seen = HashSet::new();
    predictions
        .iter()
        .filter(|p| seen.insert(p.stem_key()))
        .cloned()
        .collect()
}
