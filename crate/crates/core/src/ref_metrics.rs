//! Reference-based saliency and coverage metrics.
//!
//! Lexical baselines (exact, substring, R-precision, Rouge-L) operate on
//! Porter-stemmed phrases. Semantic matching credits each phrase with its best
//! cosine similarity against the other set, zeroing similarities at or below
//! the threshold `alpha`.

use serde::Serialize;

use crate::corpus::Phrase;
use crate::embedding::{cos_sim, union, Embedder};
use crate::error::{Error, Result};

/// Default similarity threshold.
pub const DEFAULT_ALPHA: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Prf {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    Exact,
    Substring,
    Semantic,
}

/// The best match for one phrase against a set, with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDecision {
    pub source_phrase: Phrase,
    pub best_match: Option<Phrase>,
    pub score: f64,
    pub strategy: MatchStrategy,
}

fn exact_match(a: &Phrase, b: &Phrase) -> bool {
    a.stem_key() == b.stem_key()
}

/// True when `needle`'s stems occur as a contiguous run of `haystack`'s stems.
/// This is substring containment on the stem keys restricted to token
/// boundaries.
fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

fn substring_match(a: &Phrase, b: &Phrase) -> bool {
    contains_tokens(a.stems(), b.stems()) || contains_tokens(b.stems(), a.stems())
}

fn lexical_prf(
    predictions: &[Phrase],
    references: &[Phrase],
    matches: impl Fn(&Phrase, &Phrase) -> bool,
) -> Result<Prf> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let matched_preds = predictions
        .iter()
        .filter(|p| references.iter().any(|y| matches(p, y)))
        .count();
    let matched_refs = references
        .iter()
        .filter(|y| predictions.iter().any(|p| matches(p, y)))
        .count();
    let precision = if predictions.is_empty() {
        0.0
    } else {
        matched_preds as f64 / predictions.len() as f64
    };
    let recall = matched_refs as f64 / references.len() as f64;
    Ok(Prf::new(precision, recall))
}

/// Precision/recall over stemmed exact matches.
pub fn exact_match_prf(predictions: &[Phrase], references: &[Phrase]) -> Result<Prf> {
    lexical_prf(predictions, references, exact_match)
}

/// Precision/recall where two phrases match if either stemmed phrase is a
/// token-aligned substring of the other.
pub fn substring_match_prf(predictions: &[Phrase], references: &[Phrase]) -> Result<Prf> {
    lexical_prf(predictions, references, substring_match)
}

/// Fraction of the top `|Y|` predictions that approximately (substring) match
/// some reference. Missing ranks count as non-matches.
pub fn r_precision(predictions: &[Phrase], references: &[Phrase]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let r = references.len();
    let hits = predictions
        .iter()
        .take(r)
        .filter(|p| references.iter().any(|y| substring_match(p, y)))
        .count();
    Ok(hits as f64 / r as f64)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L over the concatenated stems of predictions (rank order) and
/// references (dataset order).
pub fn rouge_l_prf(predictions: &[Phrase], references: &[Phrase]) -> Result<Prf> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let flatten = |ps: &[Phrase]| -> Vec<String> {
        ps.iter().flat_map(|p| p.stems().iter().cloned()).collect()
    };
    let pred_tokens = flatten(predictions);
    let ref_tokens = flatten(references);
    let lcs = lcs_len(&pred_tokens, &ref_tokens) as f64;
    let precision = if pred_tokens.is_empty() {
        0.0
    } else {
        lcs / pred_tokens.len() as f64
    };
    let recall = lcs / ref_tokens.len() as f64;
    Ok(Prf::new(precision, recall))
}

/// Pairwise similarities between a prediction set (rows) and a reference set
/// (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Build from explicit rows. All rows must have the same length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::LengthMismatch(bad.len(), n_cols));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity".into()));
        }
        Ok(SimilarityMatrix {
            rows: n_rows,
            cols: n_cols,
            values,
        })
    }

    /// Cosine similarities between embedded phrases.
    pub fn from_embeddings(
        predictions: &[Phrase],
        references: &[Phrase],
        embedder: &Embedder,
    ) -> Result<Self> {
        let texts: Vec<&str> = predictions
            .iter()
            .chain(references)
            .map(Phrase::raw)
            .collect();
        let vectors = embedder.embed(&texts)?;
        let (pv, rv) = vectors.split_at(predictions.len());
        let mut values = Vec::with_capacity(pv.len() * rv.len());
        for p in pv {
            for r in rv {
                values.push(cos_sim(p, r)?);
            }
        }
        Ok(SimilarityMatrix {
            rows: pv.len(),
            cols: rv.len(),
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                values.push(self.get(r, c));
            }
        }
        SimilarityMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }

    /// Thresholded best score for each row: max over columns of
    /// `1(sim > alpha) * sim`. Empty rows of candidates give 0.
    pub fn row_best(&self, alpha: f64) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| gated(self.get(r, c), alpha))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn col_best(&self, alpha: f64) -> Vec<f64> {
        (0..self.cols)
            .map(|c| {
                (0..self.rows)
                    .map(|r| gated(self.get(r, c), alpha))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Semantic precision/recall/F1 with predictions as rows.
    pub fn sem_prf(&self, alpha: f64) -> Result<Prf> {
        if self.cols == 0 {
            return Err(Error::EmptyReferences);
        }
        let precision = mean_or_zero(&self.row_best(alpha));
        let recall = mean_or_zero(&self.col_best(alpha));
        Ok(Prf::new(precision, recall))
    }
}

fn gated(sim: f64, alpha: f64) -> f64 {
    if sim > alpha {
        sim
    } else {
        0.0
    }
}

fn mean_or_zero(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Semantic precision, recall and F1.
///
/// With no predictions, SemP is 0 and every reference's best match is 0.
pub fn sem_prf(
    predictions: &[Phrase],
    references: &[Phrase],
    embedder: &Embedder,
    alpha: f64,
) -> Result<Prf> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    SimilarityMatrix::from_embeddings(predictions, references, embedder)?.sem_prf(alpha)
}

/// Cosine similarity between the max-pooled representations of the two sets.
pub fn sem_cov(predictions: &[Phrase], references: &[Phrase], embedder: &Embedder) -> Result<f64> {
    if predictions.is_empty() || references.is_empty() {
        return Err(Error::EmptySet);
    }
    let pred_texts: Vec<&str> = predictions.iter().map(Phrase::raw).collect();
    let ref_texts: Vec<&str> = references.iter().map(Phrase::raw).collect();
    let pv = embedder.embed(&pred_texts)?;
    let rv = embedder.embed(&ref_texts)?;
    let pu = union(&pv.iter().map(|v| v.as_ref()).collect::<Vec<_>>())?;
    let ru = union(&rv.iter().map(|v| v.as_ref()).collect::<Vec<_>>())?;
    cos_sim(&pu, &ru)
}

/// Match one phrase against a set under `strategy`. Ties go to the earliest
/// candidate. `embedder` is required only for the semantic strategy.
pub fn match_phrase_to_set(
    phrase: &Phrase,
    candidates: &[Phrase],
    strategy: MatchStrategy,
    embedder: Option<&Embedder>,
    alpha: f64,
) -> Result<MatchDecision> {
    if candidates.is_empty() {
        return Err(Error::EmptySet);
    }
    let scores: Vec<f64> = match strategy {
        MatchStrategy::Exact => candidates
            .iter()
            .map(|c| if exact_match(phrase, c) { 1.0 } else { 0.0 })
            .collect(),
        MatchStrategy::Substring => candidates
            .iter()
            .map(|c| if substring_match(phrase, c) { 1.0 } else { 0.0 })
            .collect(),
        MatchStrategy::Semantic => {
            let embedder = embedder.ok_or_else(|| {
                Error::Config("semantic matching needs an embedding provider".into())
            })?;
            let m = SimilarityMatrix::from_embeddings(
                std::slice::from_ref(phrase),
                candidates,
                embedder,
            )?;
            (0..m.cols()).map(|c| gated(m.get(0, c), alpha)).collect()
        }
    };

    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    Ok(MatchDecision {
        source_phrase: phrase.clone(),
        best_match: best.map(|(i, _)| candidates[i].clone()),
        score: best.map_or(0.0, |(_, s)| s),
        strategy,
    })
}
