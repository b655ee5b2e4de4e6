//! Retrieval-based utility: keyphrases are used as queries against the corpus
//! and scored by how well (RR@k) and how early (Spare) they find their own
//! document.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{stem_tokens, truncate_tokens, CorpusDoc, EvalInstance, Phrase};
use crate::embedding::{cos_sim, Embedder, EmbeddingVector};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_BASE: usize = 5;
/// Dense candidates handed to the cross-encoder re-ranker.
pub const RERANK_DEPTH: usize = 100;
const INDEX_FORMAT: &str = "kpeval-index";
const INDEX_VERSION: u32 = 1;

/// Documents ordered by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    fn from_scores(mut scored: Vec<(String, f64)>, k: usize) -> Self {
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        RankedList { entries: scored }
    }

    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(id, _)| id == doc_id)
            .map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A searchable index over the corpus.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;

    fn contains(&self, doc_id: &str) -> bool;

    /// Top-`k` documents for `query`.
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList>;
}

/// Hash of corpus ids and texts, used to invalidate cached indexes.
pub fn corpus_hash(docs: &[CorpusDoc]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update(d.id.as_bytes());
        h.update([0u8]);
        h.update(d.text.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over Porter-stemmed tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<usize>,
    avg_len: f64,
    doc_freq: BTreeMap<String, usize>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    corpus_hash: String,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    kind: String,
    corpus_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Bm25Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provider: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Bm25DocRecord {
    id: String,
    len: usize,
    terms: BTreeMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct DenseDocRecord {
    id: String,
    vector: Vec<f64>,
}

impl Bm25Index {
    pub fn build(corpus: &[CorpusDoc]) -> Result<Self> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &[CorpusDoc], params: Bm25Params) -> Result<Self> {
        let docs = corpus
            .iter()
            .map(|d| {
                let mut terms = BTreeMap::new();
                let tokens = stem_tokens(&d.text);
                for t in &tokens {
                    *terms.entry(t.clone()).or_insert(0u32) += 1;
                }
                Bm25DocRecord {
                    id: d.id.clone(),
                    len: tokens.len(),
                    terms,
                }
            })
            .collect();
        Self::from_records(docs, params, corpus_hash(corpus))
    }

    fn from_records(docs: Vec<Bm25DocRecord>, params: Bm25Params, hash: String) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut doc_freq = BTreeMap::new();
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (idx, doc) in docs.into_iter().enumerate() {
            if !seen.insert(doc.id.clone()) {
                return Err(Error::DuplicateId(doc.id));
            }
            for (term, tf) in doc.terms {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
                postings.entry(term).or_default().push((idx, tf));
            }
            doc_ids.push(doc.id);
            doc_lens.push(doc.len);
        }
        let total: usize = doc_lens.iter().sum();
        // Guard against a corpus of empty documents.
        let avg_len = (total as f64 / doc_lens.len() as f64).max(f64::MIN_POSITIVE);
        Ok(Bm25Index {
            params,
            doc_ids,
            doc_lens,
            avg_len,
            doc_freq,
            postings,
            corpus_hash: hash,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<usize> {
        let idx = self.doc_ids.iter().position(|d| d == doc_id)?;
        Some(self.doc_lens[idx])
    }

    /// Number of documents containing the stemmed term.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 scores for every document that shares at least one term with the
    /// query. Each query token occurrence contributes its own term score.
    pub fn score_terms(&self, query_terms: &[String]) -> BTreeMap<usize, f64> {
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in query_terms {
            let Some(posting) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in posting {
                let tf = tf as f64;
                let norm = 1.0 - b + b * self.doc_lens[doc] as f64 / self.avg_len;
                *scores.entry(doc).or_insert(0.0) += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
            }
        }
        scores
    }

    /// Score of one document for a free-text query.
    pub fn score(&self, query: &str, doc_id: &str) -> Option<f64> {
        let idx = self.doc_ids.iter().position(|d| d == doc_id)?;
        Some(
            self.score_terms(&stem_tokens(query))
                .get(&idx)
                .copied()
                .unwrap_or(0.0),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            kind: "bm25".into(),
            corpus_hash: self.corpus_hash.clone(),
            params: Some(self.params),
            provider: None,
        };
        let mut lines = vec![serde_json::to_string(&header).expect("header serializes")];
        let mut per_doc: Vec<BTreeMap<String, u32>> = vec![BTreeMap::new(); self.num_docs()];
        for (term, posting) in &self.postings {
            for &(doc, tf) in posting {
                per_doc[doc].insert(term.clone(), tf);
            }
        }
        for (idx, terms) in per_doc.into_iter().enumerate() {
            let record = Bm25DocRecord {
                id: self.doc_ids[idx].clone(),
                len: self.doc_lens[idx],
                terms,
            };
            lines.push(serde_json::to_string(&record).expect("record serializes"));
        }
        for line in lines {
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a cached index, rejecting it when it was built for a different
    /// corpus.
    pub fn load(path: &Path, expected_corpus_hash: &str) -> Result<Self> {
        let (header, records) = read_index_file(path, "bm25", expected_corpus_hash)?;
        let docs = records
            .into_iter()
            .map(|(line, text)| {
                serde_json::from_str::<Bm25DocRecord>(&text).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(docs, header.params.unwrap_or_default(), header.corpus_hash)
    }
}

fn read_index_file(
    path: &Path,
    kind: &str,
    expected_hash: &str,
) -> Result<(IndexHeader, Vec<(usize, String)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty index file".into()))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: IndexHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
        return Err(parse_err(
            1,
            format!(
                "unsupported index format {} v{}",
                header.format, header.version
            ),
        ));
    }
    if header.kind != kind {
        return Err(parse_err(
            1,
            format!("expected {kind} index, found {}", header.kind),
        ));
    }
    if header.corpus_hash != expected_hash {
        return Err(Error::StaleIndex {
            expected: header.corpus_hash,
            actual: expected_hash.to_string(),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            records.push((idx + 1, line));
        }
    }
    Ok((header, records))
}

impl Retriever for Bm25Index {
    fn name(&self) -> &str {
        "bm25"
    }

    fn contains(&self, doc_id: &str) -> bool {
        self.doc_ids.iter().any(|d| d == doc_id)
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList> {
        let terms = stem_tokens(query);
        if terms.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let scored = self
            .score_terms(&terms)
            .into_iter()
            .map(|(doc, s)| (self.doc_ids[doc].clone(), s))
            .collect();
        Ok(RankedList::from_scores(scored, k))
    }
}

/// Exact cosine search over document embeddings.
pub struct DenseIndex {
    embedder: Arc<Embedder>,
    doc_ids: Vec<String>,
    vectors: Vec<Arc<EmbeddingVector>>,
    corpus_hash: String,
}

impl DenseIndex {
    /// Embed each document's text, truncated to `token_budget` whitespace
    /// tokens.
    pub fn build(
        corpus: &[CorpusDoc],
        embedder: Arc<Embedder>,
        token_budget: usize,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = corpus.iter().find(|d| !seen.insert(d.id.as_str())) {
            return Err(Error::DuplicateId(dup.id.clone()));
        }
        let texts: Vec<String> = corpus
            .iter()
            .map(|d| truncate_tokens(&d.text, token_budget))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = embedder.embed(&refs)?;
        Ok(DenseIndex {
            embedder,
            doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
            vectors,
            corpus_hash: corpus_hash(corpus),
        })
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, doc_id: &str) -> Option<&EmbeddingVector> {
        let idx = self.doc_ids.iter().position(|d| d == doc_id)?;
        Some(&self.vectors[idx])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            kind: "dense".into(),
            corpus_hash: self.corpus_hash.clone(),
            params: None,
            provider: Some(self.embedder.identity()),
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&header).expect("header serializes")
        )
        .map_err(|e| Error::io(path, e))?;
        for (id, v) in self.doc_ids.iter().zip(&self.vectors) {
            let record = DenseDocRecord {
                id: id.clone(),
                vector: v.components().to_vec(),
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string(&record).expect("record serializes")
            )
            .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Load cached document vectors. The cache is also rejected when it was
    /// produced by a different embedding provider.
    pub fn load(path: &Path, expected_corpus_hash: &str, embedder: Arc<Embedder>) -> Result<Self> {
        let (header, records) = read_index_file(path, "dense", expected_corpus_hash)?;
        let identity = embedder.identity();
        if header.provider.as_deref() != Some(identity.as_str()) {
            return Err(Error::StaleIndex {
                expected: header.provider.unwrap_or_default(),
                actual: identity,
            });
        }
        let mut doc_ids = Vec::new();
        let mut vectors = Vec::new();
        for (line, text) in records {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let record: DenseDocRecord =
                serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
            doc_ids.push(record.id);
            vectors.push(Arc::new(
                EmbeddingVector::new(record.vector).map_err(|e| parse_err(e.to_string()))?,
            ));
        }
        if doc_ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(DenseIndex {
            embedder,
            doc_ids,
            vectors,
            corpus_hash: header.corpus_hash,
        })
    }

    fn score_all(&self, query: &str) -> Result<Vec<(String, f64)>> {
        if query.trim().is_empty() {
            return Err(Error::EmptyQuery);
        }
        let q = self.embedder.embed_one(query)?;
        self.doc_ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| Ok((id.clone(), cos_sim(&q, v)?)))
            .collect()
    }
}

impl Retriever for DenseIndex {
    fn name(&self) -> &str {
        "dense"
    }

    fn contains(&self, doc_id: &str) -> bool {
        self.doc_ids.iter().any(|d| d == doc_id)
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList> {
        Ok(RankedList::from_scores(self.score_all(query)?, k))
    }
}

/// Cross-encoder scoring of (query, document) pairs, supplied by the model
/// sidecar.
pub trait Reranker: Send + Sync {
    fn identity(&self) -> String;

    /// Re-score `candidates` (id, text) against `query`; returns (id, score)
    /// pairs in any order.
    fn rerank(&self, query: &str, candidates: &[(String, String)]) -> Result<Vec<(String, f64)>>;
}

/// Dense retrieval followed by cross-encoder re-ranking of the top
/// [`RERANK_DEPTH`] candidates.
pub struct RerankRetriever {
    dense: Arc<DenseIndex>,
    reranker: Arc<dyn Reranker>,
    texts: HashMap<String, String>,
    depth: usize,
}

impl RerankRetriever {
    pub fn new(
        dense: Arc<DenseIndex>,
        reranker: Arc<dyn Reranker>,
        corpus: &[CorpusDoc],
        token_budget: usize,
    ) -> Self {
        let texts = corpus
            .iter()
            .map(|d| (d.id.clone(), truncate_tokens(&d.text, token_budget)))
            .collect();
        RerankRetriever {
            dense,
            reranker,
            texts,
            depth: RERANK_DEPTH,
        }
    }
}

impl Retriever for RerankRetriever {
    fn name(&self) -> &str {
        "rerank"
    }

    fn contains(&self, doc_id: &str) -> bool {
        self.dense.contains(doc_id)
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList> {
        let first_stage = self.dense.retrieve(query, self.depth)?;
        let candidates: Vec<(String, String)> = first_stage
            .entries
            .iter()
            .map(|(id, _)| (id.clone(), self.texts.get(id).cloned().unwrap_or_default()))
            .collect();
        let rescored = self.reranker.rerank(query, &candidates)?;
        let expected: HashSet<&str> = candidates.iter().map(|c| c.0.as_str()).collect();
        let returned: HashSet<&str> = rescored.iter().map(|c| c.0.as_str()).collect();
        if rescored.len() != candidates.len() || expected != returned {
            return Err(Error::Protocol(
                "re-ranker response is not a permutation of its candidates".into(),
            ));
        }
        Ok(RankedList::from_scores(rescored, k))
    }
}

/// Reciprocal rank of `doc_id` in `list`, 0 outside the top `k`.
pub fn reciprocal_rank(list: &RankedList, doc_id: &str, k: usize) -> f64 {
    match list.rank_of(doc_id) {
        Some(rank) if rank <= k => 1.0 / rank as f64,
        _ => 0.0,
    }
}

/// Join predictions into a retrieval query.
pub fn build_query(predictions: &[Phrase]) -> String {
    predictions
        .iter()
        .map(Phrase::raw)
        .collect::<Vec<_>>()
        .join(" ; ")
}

fn check_indexed(instance: &EvalInstance, retrievers: &[&dyn Retriever]) -> Result<()> {
    match retrievers.iter().find(|r| !r.contains(&instance.id)) {
        Some(_) => Err(Error::MissingDoc(instance.id.clone())),
        None => Ok(()),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean over retrievers of the reciprocal rank of the instance's own document
/// when queried with all its predictions. An empty prediction set retrieves
/// nothing and scores 0.
pub fn rr_at_k(instance: &EvalInstance, retrievers: &[&dyn Retriever], k: usize) -> Result<f64> {
    if retrievers.is_empty() {
        return Err(Error::Config("no retrievers configured".into()));
    }
    check_indexed(instance, retrievers)?;
    if instance.predictions.is_empty() {
        return Ok(0.0);
    }
    let query = build_query(&instance.predictions);
    let mut rrs = Vec::with_capacity(retrievers.len());
    for r in retrievers {
        rrs.push(rr_or_zero(*r, &query, &instance.id, k)?);
    }
    Ok(mean(&rrs))
}

fn rr_or_zero(retriever: &dyn Retriever, query: &str, doc_id: &str, k: usize) -> Result<f64> {
    match retriever.retrieve(query, k) {
        Ok(list) => Ok(reciprocal_rank(&list, doc_id, k)),
        // The query has no indexable terms.
        Err(Error::EmptyQuery) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// `1 - min(base, j) / base`; `None` (never retrieved) scores 0.
pub fn spare_score(prefix_len: Option<usize>, base: usize) -> f64 {
    match prefix_len {
        Some(j) => 1.0 - j.min(base) as f64 / base as f64,
        None => 0.0,
    }
}

/// Smallest prefix length `j` (scanning up from 1, at most `limit`) whose
/// query retrieves the instance's document within the top `k`.
pub fn minimal_prefix(
    instance: &EvalInstance,
    retriever: &dyn Retriever,
    k: usize,
    limit: usize,
) -> Result<Option<usize>> {
    for j in 1..=limit.min(instance.predictions.len()) {
        let query = build_query(&instance.predictions[..j]);
        if rr_or_zero(retriever, &query, &instance.id, k)? > 0.0 {
            return Ok(Some(j));
        }
    }
    Ok(None)
}

/// Retrieval efficiency: mean over retrievers of `1 - min(base, j)/base`.
pub fn spare(
    instance: &EvalInstance,
    retrievers: &[&dyn Retriever],
    k: usize,
    base: usize,
) -> Result<f64> {
    if base == 0 {
        return Err(Error::Config("spare base must be at least 1".into()));
    }
    if retrievers.is_empty() {
        return Err(Error::Config("no retrievers configured".into()));
    }
    check_indexed(instance, retrievers)?;
    let mut scores = Vec::with_capacity(retrievers.len());
    for r in retrievers {
        // Any j >= base scores 0, so prefixes longer than base need no query.
        let j = minimal_prefix(instance, *r, k, base)?;
        scores.push(spare_score(j, base));
    }
    Ok(mean(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FileProvider;

    fn doc(id: &str, text: &str) -> CorpusDoc {
        CorpusDoc {
            id: id.into(),
            text: text.into(),
        }
    }

    fn inst(id: &str, preds: &[&str]) -> EvalInstance {
        EvalInstance {
            id: id.into(),
            title: String::new(),
            body: String::new(),
            references: vec![],
            predictions: preds.iter().map(|p| Phrase::new(p).unwrap()).collect(),
        }
    }

    #[test]
    fn bm25_counts() {
        let idx = Bm25Index::build(&[doc("d1", "a b"), doc("d2", "a c")]).unwrap();
        assert_eq!(idx.num_docs(), 2);
        assert_eq!(idx.doc_freq("a"), 2);
        assert_eq!(idx.doc_freq("b"), 1);
        assert_eq!(idx.doc_freq("zzz"), 0);
        assert_eq!(idx.avg_len(), 2.0);
        let again = Bm25Index::build(&[doc("d1", "a b"), doc("d2", "a c")]).unwrap();
        assert_eq!(idx, again);
    }

    #[test]
    fn bm25_unique_term_ranks_first() {
        let idx = Bm25Index::build(&[
            doc("d1", "apple pie"),
            doc("d2", "banana split"),
            doc("d3", "cherry tart"),
        ])
        .unwrap();
        let list = idx.retrieve("banana", 5).unwrap();
        assert_eq!(list.entries.len(), 1);
        assert_eq!(list.rank_of("d2"), Some(1));
        assert!(matches!(idx.retrieve(" ; ", 5), Err(Error::EmptyQuery)));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Bm25Index::build(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn ranked_list_tie_break_by_id() {
        let list = RankedList::from_scores(
            vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)],
            3,
        );
        let ids: Vec<&str> = list.entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    fn dense_fixture() -> (Arc<Embedder>, Vec<CorpusDoc>) {
        let provider = FileProvider::from_pairs([
            ("doc one", vec![1.0, 0.0]),
            ("doc two", vec![0.0, 1.0]),
            ("doc three", vec![1.0, 1.0]),
            ("q", vec![0.0, 1.0]),
        ])
        .unwrap();
        let corpus = vec![
            doc("d1", "doc one"),
            doc("d2", "doc two"),
            doc("d3", "doc three"),
        ];
        (Arc::new(Embedder::new(Box::new(provider))), corpus)
    }

    #[test]
    fn dense_query_equal_to_doc_vector_ranks_first() {
        let (e, corpus) = dense_fixture();
        let idx = DenseIndex::build(&corpus, e, 512).unwrap();
        let list = idx.retrieve("q", 3).unwrap();
        assert_eq!(list.entries[0], ("d2".into(), 1.0));
        assert_eq!(list.rank_of("d3"), Some(2));
        assert!(matches!(idx.retrieve("   ", 3), Err(Error::EmptyQuery)));
    }

    #[test]
    fn rr_definitions() {
        let list = RankedList {
            entries: vec![("x".into(), 3.0), ("y".into(), 2.0)],
        };
        assert_eq!(reciprocal_rank(&list, "x", 5), 1.0);
        assert_eq!(reciprocal_rank(&list, "y", 5), 0.5);
        assert_eq!(reciprocal_rank(&list, "y", 1), 0.0);
        assert_eq!(reciprocal_rank(&list, "z", 5), 0.0);
    }

    struct Fixed(&'static str, Vec<(&'static str, f64)>);

    impl Retriever for Fixed {
        fn name(&self) -> &str {
            self.0
        }
        fn contains(&self, doc_id: &str) -> bool {
            doc_id.starts_with('d')
        }
        fn retrieve(&self, _query: &str, k: usize) -> Result<RankedList> {
            Ok(RankedList::from_scores(
                self.1.iter().map(|(i, s)| (i.to_string(), *s)).collect(),
                k,
            ))
        }
    }

    #[test]
    fn rr_averages_over_retrievers() {
        let first = Fixed("a", vec![("d1", 2.0), ("d2", 1.0)]);
        let both = [&first as &dyn Retriever, &first];
        assert_eq!(rr_at_k(&inst("d1", &["p"]), &both, 5).unwrap(), 1.0);

        let second = Fixed("b", vec![("d0", 2.0), ("d1", 1.0)]);
        let absent = Fixed("c", vec![("d0", 2.0), ("d2", 1.0)]);
        let rs = [&second as &dyn Retriever, &absent];
        assert_eq!(rr_at_k(&inst("d1", &["p"]), &rs, 5).unwrap(), 0.25);

        let deep = Fixed("d", vec![("d0", 3.0), ("d2", 2.0), ("d1", 1.0)]);
        assert_eq!(
            rr_at_k(&inst("d1", &["p"]), &[&deep as &dyn Retriever], 2).unwrap(),
            0.0
        );

        assert!(matches!(
            rr_at_k(&inst("x1", &["p"]), &[&deep as &dyn Retriever], 2),
            Err(Error::MissingDoc(_))
        ));
        assert_eq!(
            rr_at_k(&inst("d1", &[]), &[&deep as &dyn Retriever], 5).unwrap(),
            0.0
        );
    }

    #[test]
    fn spare_formula() {
        assert_eq!(spare_score(Some(1), 5), 0.8);
        assert_eq!(spare_score(Some(5), 5), 0.0);
        assert_eq!(spare_score(Some(7), 5), 0.0);
        assert_eq!(spare_score(None, 5), 0.0);
    }

    #[test]
    fn spare_first_phrase_hits() {
        let idx = Bm25Index::build(&[
            doc("d1", "graph neural network"),
            doc("d2", "protein folding"),
        ])
        .unwrap();
        let r = [&idx as &dyn Retriever];
        assert_eq!(
            spare(&inst("d1", &["graph", "protein"]), &r, 5, 5).unwrap(),
            0.8
        );
        // Needs the second phrase before d2 is retrieved at all.
        assert_eq!(
            spare(&inst("d2", &["graph", "folding"]), &r, 1, 5).unwrap(),
            0.6
        );
        assert_eq!(spare(&inst("d2", &["graph"]), &r, 1, 5).unwrap(), 0.0);
        assert!(spare(&inst("d2", &["graph"]), &r, 1, 0).is_err());
    }

    #[test]
    fn bm25_roundtrip_and_stale_cache() {
        let corpus = vec![doc("d1", "a b b"), doc("d2", "a c")];
        let idx = Bm25Index::build(&corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.jsonl");
        idx.save(&path).unwrap();
        let loaded = Bm25Index::load(&path, &corpus_hash(&corpus)).unwrap();
        assert_eq!(loaded, idx);

        let changed = vec![doc("d1", "a b"), doc("d2", "a c")];
        assert!(matches!(
            Bm25Index::load(&path, &corpus_hash(&changed)),
            Err(Error::StaleIndex { .. })
        ));
    }

    #[test]
    fn dense_roundtrip() {
        let (e, corpus) = dense_fixture();
        let idx = DenseIndex::build(&corpus, Arc::clone(&e), 512).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.jsonl");
        idx.save(&path).unwrap();
        let loaded = DenseIndex::load(&path, &corpus_hash(&corpus), e).unwrap();
        assert_eq!(loaded.doc_ids(), idx.doc_ids());
        assert_eq!(loaded.vector("d3"), idx.vector("d3"));
        assert!(matches!(
            Bm25Index::load(&path, &corpus_hash(&corpus)),
            Err(Error::Parse { .. })
        ));
    }

    struct Reverse;

    impl Reranker for Reverse {
        fn identity(&self) -> String {
            "reverse".into()
        }
        fn rerank(&self, _q: &str, candidates: &[(String, String)]) -> Result<Vec<(String, f64)>> {
            Ok(candidates
                .iter()
                .enumerate()
                .map(|(i, (id, _))| (id.clone(), i as f64))
                .collect())
        }
    }

    #[test]
    fn rerank_reorders_dense_candidates() {
        let (e, corpus) = dense_fixture();
        let dense = Arc::new(DenseIndex::build(&corpus, e, 512).unwrap());
        let rr = RerankRetriever::new(dense, Arc::new(Reverse), &corpus, 512);
        let list = rr.retrieve("q", 3).unwrap();
        // dense order d2, d3, d1 reversed
        let ids: Vec<&str> = list.entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(ids, ["d1", "d3", "d2"]);
    }
}
