//! Orchestration of evaluation, meta-evaluation and embedding diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{dedupe_predictions, load_dataset, Dataset, EvalInstance};
use crate::diversity::{dup_token_ratio, emb_sim};
use crate::embedding::{Embedder, FileProvider};
use crate::error::{Error, Result};
use crate::meta_eval::{
    alignment, bootstrap_ci, uniformity, CorrelationResult, CorrelationStat, PairedItem,
    PairedScores,
};
use crate::quality::{score_dimension, QualityDimension, ScoreProvider, StubScorer};
use crate::ref_metrics::{
    exact_match_prf, r_precision, rouge_l_prf, sem_cov, sem_prf, substring_match_prf,
};
use crate::report::{metric, DimensionReport, NoteKind, ReportMetadata, ReportNote};
use crate::sidecar::SidecarClient;
use crate::utility::{
    corpus_hash, rr_at_k, spare, Bm25Index, DenseIndex, RerankRetriever, Reranker, Retriever,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The six evaluation dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Naturalness,
    Faithfulness,
    Saliency,
    Coverage,
    Diversity,
    Utility,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Naturalness,
        Dimension::Faithfulness,
        Dimension::Saliency,
        Dimension::Coverage,
        Dimension::Diversity,
        Dimension::Utility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Naturalness => "naturalness",
            Dimension::Faithfulness => "faithfulness",
            Dimension::Saliency => "saliency",
            Dimension::Coverage => "coverage",
            Dimension::Diversity => "diversity",
            Dimension::Utility => "utility",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dimension {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Bm25,
    Dense,
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    None,
    File { path: PathBuf },
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerSource {
    None,
    Stub,
    Http,
}

/// Everything that determines an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub instances: PathBuf,
    pub corpus: Option<PathBuf>,
    pub system: String,
    pub dimensions: BTreeSet<Dimension>,
    /// Also report exact/substring/R-precision/Rouge-L.
    pub baselines: bool,
    pub alpha: f64,
    pub k: usize,
    pub base: usize,
    pub retrievers: BTreeSet<RetrieverKind>,
    pub embeddings: EmbeddingSource,
    pub scorer: ScorerSource,
    pub doc_token_budget: usize,
    pub dedupe: bool,
    pub seed: u64,
    /// Provider endpoint (from the environment); not part of the config hash.
    #[serde(skip)]
    pub sidecar_url: Option<String>,
    #[serde(skip)]
    pub sidecar_token: Option<String>,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub index_dir: Option<PathBuf>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub timestamp: bool,
}

impl EvalConfig {
    pub fn new(instances: impl Into<PathBuf>) -> Self {
        EvalConfig {
            instances: instances.into(),
            corpus: None,
            system: "system".into(),
            dimensions: Dimension::ALL.into_iter().collect(),
            baselines: true,
            alpha: crate::ref_metrics::DEFAULT_ALPHA,
            k: crate::utility::DEFAULT_K,
            base: crate::utility::DEFAULT_BASE,
            retrievers: [RetrieverKind::Bm25, RetrieverKind::Dense]
                .into_iter()
                .collect(),
            embeddings: EmbeddingSource::None,
            scorer: ScorerSource::None,
            doc_token_budget: crate::quality::DEFAULT_DOC_TOKEN_BUDGET,
            dedupe: false,
            seed: 0,
            sidecar_url: None,
            sidecar_token: None,
            workers: 4,
            index_dir: None,
            output_dir: PathBuf::from("kpeval-out"),
            timestamp: false,
        }
    }

    /// SHA-256 of the canonical JSON of all result-affecting fields.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn needs_embeddings(&self) -> bool {
        let dims = &self.dimensions;
        dims.contains(&Dimension::Saliency)
            || dims.contains(&Dimension::Coverage)
            || dims.contains(&Dimension::Diversity)
            || (dims.contains(&Dimension::Utility)
                && (self.retrievers.contains(&RetrieverKind::Dense)
                    || self.retrievers.contains(&RetrieverKind::Rerank)))
    }

    fn needs_scorer(&self) -> bool {
        self.dimensions.contains(&Dimension::Naturalness)
            || self.dimensions.contains(&Dimension::Faithfulness)
    }

    /// Fail fast on configurations that cannot produce the requested output.
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() && !self.baselines {
            return Err(Error::Config("nothing to compute".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        if self.k == 0 || self.base == 0 {
            return Err(Error::Config("k and base must be at least 1".into()));
        }
        if self.doc_token_budget == 0 {
            return Err(Error::Config("token budget must be at least 1".into()));
        }
        if self.needs_embeddings() && self.embeddings == EmbeddingSource::None {
            let semantic: Vec<&str> = self
                .dimensions
                .iter()
                .filter(|d| !matches!(d, Dimension::Naturalness | Dimension::Faithfulness))
                .map(|d| d.as_str())
                .collect();
            return Err(Error::Config(format!(
                "dimensions [{}] need an embedding provider (--embeddings-file or --embeddings http)",
                semantic.join(", ")
            )));
        }
        if self.needs_scorer() && self.scorer == ScorerSource::None {
            return Err(Error::Config(
                "naturalness/faithfulness need a score provider (--scorer stub|http)".into(),
            ));
        }
        if self.dimensions.contains(&Dimension::Utility) && self.retrievers.is_empty() {
            return Err(Error::Config("utility needs at least one retriever".into()));
        }
        let uses_http = (self.needs_embeddings() && self.embeddings == EmbeddingSource::Http)
            || (self.needs_scorer() && self.scorer == ScorerSource::Http)
            || (self.dimensions.contains(&Dimension::Utility)
                && self.retrievers.contains(&RetrieverKind::Rerank));
        if uses_http && self.sidecar_url.is_none() {
            return Err(Error::Config(
                "an http provider is configured but KPEVAL_SIDECAR_URL is not set".into(),
            ));
        }
        Ok(())
    }
}

/// Model-backed services used by a run.
#[derive(Clone, Default)]
pub struct Providers {
    pub embedder: Option<Arc<Embedder>>,
    pub scorer: Option<Arc<dyn ScoreProvider>>,
    pub reranker: Option<Arc<dyn Reranker>>,
}

impl Providers {
    /// Instantiate the providers a validated config asks for.
    pub fn from_config(config: &EvalConfig) -> Result<Self> {
        let sidecar = match &config.sidecar_url {
            Some(url) => Some(Arc::new(SidecarClient::new(
                url,
                config.sidecar_token.clone(),
            )?)),
            None => None,
        };
        let need_sidecar = || {
            sidecar
                .clone()
                .ok_or_else(|| Error::Config("KPEVAL_SIDECAR_URL is not set".into()))
        };
        let embedder = match &config.embeddings {
            EmbeddingSource::None => None,
            EmbeddingSource::File { path } => {
                Some(Arc::new(Embedder::new(Box::new(FileProvider::load(path)?))))
            }
            EmbeddingSource::Http => {
                let client = need_sidecar()?;
                Some(Arc::new(Embedder::new(Box::new((*client).clone()))))
            }
        };
        let scorer: Option<Arc<dyn ScoreProvider>> = match config.scorer {
            ScorerSource::None => None,
            ScorerSource::Stub => Some(Arc::new(StubScorer)),
            ScorerSource::Http => Some(need_sidecar()? as Arc<dyn ScoreProvider>),
        };
        let reranker: Option<Arc<dyn Reranker>> =
            if config.retrievers.contains(&RetrieverKind::Rerank)
                && config.dimensions.contains(&Dimension::Utility)
            {
                Some(need_sidecar()? as Arc<dyn Reranker>)
            } else {
                None
            };
        Ok(Providers {
            embedder,
            scorer,
            reranker,
        })
    }

    fn identities(&self) -> BTreeMap<String, String> {
        let mut ids = BTreeMap::new();
        if let Some(e) = &self.embedder {
            ids.insert("embedding".into(), e.identity());
        }
        if let Some(s) = &self.scorer {
            ids.insert("quality".into(), s.identity());
        }
        if let Some(r) = &self.reranker {
            ids.insert("rerank".into(), r.identity());
        }
        ids
    }
}

fn index_path(dir: &Path, kind: &str) -> PathBuf {
    dir.join(format!("{kind}.index.jsonl"))
}

/// Build (or load from `index_dir` when the cache matches the corpus) the
/// configured retrievers.
pub fn build_retrievers(
    config: &EvalConfig,
    dataset: &Dataset,
    providers: &Providers,
) -> Result<Vec<Box<dyn Retriever>>> {
    let hash = corpus_hash(&dataset.corpus_docs);
    let mut retrievers: Vec<Box<dyn Retriever>> = Vec::new();
    let mut dense: Option<Arc<DenseIndex>> = None;
    for kind in &config.retrievers {
        match kind {
            RetrieverKind::Bm25 => {
                let cached = config.index_dir.as_ref().map(|d| index_path(d, "bm25"));
                let index = match cached.as_deref().filter(|p| p.exists()) {
                    Some(path) => match Bm25Index::load(path, &hash) {
                        Ok(idx) => idx,
                        Err(e) => {
                            log::warn!("ignoring cached bm25 index: {e}");
                            Bm25Index::build(&dataset.corpus_docs)?
                        }
                    },
                    None => Bm25Index::build(&dataset.corpus_docs)?,
                };
                retrievers.push(Box::new(index));
            }
            RetrieverKind::Dense | RetrieverKind::Rerank => {
                let idx = match &dense {
                    Some(d) => Arc::clone(d),
                    None => {
                        let d = Arc::new(build_dense(config, dataset, providers, &hash)?);
                        dense = Some(Arc::clone(&d));
                        d
                    }
                };
                if *kind == RetrieverKind::Dense {
                    retrievers.push(Box::new(DenseRef(idx)));
                } else {
                    let reranker = providers.reranker.clone().ok_or_else(|| {
                        Error::Config("rerank retriever needs the sidecar".into())
                    })?;
                    retrievers.push(Box::new(RerankRetriever::new(
                        idx,
                        reranker,
                        &dataset.corpus_docs,
                        config.doc_token_budget,
                    )));
                }
            }
        }
    }
    Ok(retrievers)
}

fn build_dense(
    config: &EvalConfig,
    dataset: &Dataset,
    providers: &Providers,
    hash: &str,
) -> Result<DenseIndex> {
    let embedder = providers
        .embedder
        .clone()
        .ok_or_else(|| Error::Config("dense retrieval needs an embedding provider".into()))?;
    if let Some(path) = config.index_dir.as_ref().map(|d| index_path(d, "dense")) {
        if path.exists() {
            match DenseIndex::load(&path, hash, Arc::clone(&embedder)) {
                Ok(idx) => return Ok(idx),
                Err(e) => log::warn!("ignoring cached dense index: {e}"),
            }
        }
    }
    DenseIndex::build(&dataset.corpus_docs, embedder, config.doc_token_budget)
}

/// Shared dense index used directly as a retriever.
struct DenseRef(Arc<DenseIndex>);

impl Retriever for DenseRef {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn contains(&self, doc_id: &str) -> bool {
        self.0.contains(doc_id)
    }
    fn retrieve(&self, query: &str, k: usize) -> Result<crate::utility::RankedList> {
        self.0.retrieve(query, k)
    }
}

/// Build retrievers for the `index` command and write them to `dir`.
pub fn write_indexes(config: &EvalConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let dataset = load_dataset(&config.instances, config.corpus.as_deref())?;
    let providers = Providers::from_config(config)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if config.retrievers.contains(&RetrieverKind::Bm25) {
        let path = index_path(dir, "bm25");
        Bm25Index::build(&dataset.corpus_docs)?.save(&path)?;
        written.push(path);
    }
    if config.retrievers.contains(&RetrieverKind::Dense)
        || config.retrievers.contains(&RetrieverKind::Rerank)
    {
        let embedder = providers
            .embedder
            .ok_or_else(|| Error::Config("dense index needs an embedding provider".into()))?;
        let path = index_path(dir, "dense");
        DenseIndex::build(&dataset.corpus_docs, embedder, config.doc_token_budget)?.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Default)]
struct DocOutcome {
    metrics: BTreeMap<String, f64>,
    notes: Vec<ReportNote>,
}

impl DocOutcome {
    fn set(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn note(&mut self, id: &str, group: &str, kind: NoteKind, reason: &str) {
        self.notes.push(ReportNote {
            id: id.to_string(),
            group: group.to_string(),
            kind,
            reason: reason.to_string(),
        });
    }
}

fn evaluate_document(
    config: &EvalConfig,
    instance: &EvalInstance,
    providers: &Providers,
    retrievers: &[&dyn Retriever],
) -> Result<DocOutcome> {
    let mut out = DocOutcome::default();
    let id = instance.id.as_str();
    let preds = &instance.predictions;
    let refs = &instance.references;
    let dims = &config.dimensions;
    out.set(metric::NUM_KP, preds.len() as f64);

    if config.baselines {
        if refs.is_empty() {
            out.note(id, "baselines", NoteKind::Skip, "EMPTY_REFERENCES");
        } else {
            let stage = |e: Error| e.in_stage("baselines");
            let exact = exact_match_prf(preds, refs).map_err(stage)?;
            let sub = substring_match_prf(preds, refs).map_err(stage)?;
            let rouge = rouge_l_prf(preds, refs).map_err(stage)?;
            out.set(metric::EXACT_P, exact.precision);
            out.set(metric::EXACT_R, exact.recall);
            out.set(metric::EXACT_F1, exact.f1);
            out.set(metric::SUBSTRING_P, sub.precision);
            out.set(metric::SUBSTRING_R, sub.recall);
            out.set(metric::SUBSTRING_F1, sub.f1);
            out.set(
                metric::R_PRECISION,
                r_precision(preds, refs).map_err(stage)?,
            );
            out.set(metric::ROUGE_L_P, rouge.precision);
            out.set(metric::ROUGE_L_R, rouge.recall);
            out.set(metric::ROUGE_L_F1, rouge.f1);
        }
    }

    let embedder = || {
        providers
            .embedder
            .as_deref()
            .ok_or_else(|| Error::Config("no embedding provider".into()))
    };

    if dims.contains(&Dimension::Saliency) {
        if refs.is_empty() {
            out.note(id, "saliency", NoteKind::Skip, "EMPTY_REFERENCES");
        } else {
            let prf = sem_prf(preds, refs, embedder()?, config.alpha)
                .map_err(|e| e.in_stage("saliency"))?;
            if preds.is_empty() {
                out.note(
                    id,
                    "saliency",
                    NoteKind::Flag,
                    "EMPTY_PREDICTIONS_SEMR_ZERO",
                );
            }
            out.set(metric::SEM_P, prf.precision);
            out.set(metric::SEM_R, prf.recall);
            out.set(metric::SEM_F1, prf.f1);
        }
    }

    if dims.contains(&Dimension::Coverage) {
        if refs.is_empty() {
            out.note(id, "coverage", NoteKind::Skip, "EMPTY_REFERENCES");
        } else if preds.is_empty() {
            out.note(id, "coverage", NoteKind::Skip, "EMPTY_PREDICTIONS");
        } else {
            let v = sem_cov(preds, refs, embedder()?).map_err(|e| e.in_stage("coverage"))?;
            out.set(metric::SEM_COV, v);
        }
    }

    if dims.contains(&Dimension::Diversity) {
        let total_stems: usize = preds.iter().map(|p| p.stems().len()).sum();
        if total_stems <= 1 {
            out.note(
                id,
                "diversity",
                NoteKind::Flag,
                "DEGENERATE_DUP_TOKEN_RATIO",
            );
        }
        if preds.len() < 2 {
            out.note(id, "diversity", NoteKind::Flag, "DEGENERATE_EMB_SIM");
        }
        out.set(metric::DUP_TOKEN_RATIO, dup_token_ratio(preds));
        out.set(
            metric::EMB_SIM,
            emb_sim(preds, embedder()?).map_err(|e| e.in_stage("diversity"))?,
        );
    }

    if dims.contains(&Dimension::Utility) {
        if preds.is_empty() {
            out.note(
                id,
                "utility",
                NoteKind::Flag,
                "EMPTY_PREDICTIONS_SCORED_ZERO",
            );
        }
        let stage = |e: Error| e.in_stage("utility");
        out.set(
            metric::RR_AT_K,
            rr_at_k(instance, retrievers, config.k).map_err(stage)?,
        );
        out.set(
            metric::SPARE,
            spare(instance, retrievers, config.k, config.base).map_err(stage)?,
        );
    }

    for (dim, name, qdim) in [
        (
            Dimension::Naturalness,
            metric::NATURALNESS,
            QualityDimension::Naturalness,
        ),
        (
            Dimension::Faithfulness,
            metric::FAITHFULNESS,
            QualityDimension::Faithfulness,
        ),
    ] {
        if !dims.contains(&dim) {
            continue;
        }
        if preds.is_empty() {
            out.note(id, dim.as_str(), NoteKind::Skip, "EMPTY_PREDICTIONS");
            continue;
        }
        let scorer = providers
            .scorer
            .as_deref()
            .ok_or_else(|| Error::Config("no score provider".into()))?;
        let stage: &'static str = dim.as_str();
        let v = score_dimension(instance, qdim, scorer, config.doc_token_budget)
            .map_err(|e| e.in_stage(stage))?;
        out.set(name, v);
    }
    Ok(out)
}

/// Evaluate every document of the configured dataset.
pub fn run_eval(config: &EvalConfig, providers: &Providers) -> Result<DimensionReport> {
    config.validate()?;
    let mut dataset = load_dataset(&config.instances, config.corpus.as_deref())
        .map_err(|e| e.in_stage("load"))?;
    if config.dedupe {
        for inst in &mut dataset.instances {
            inst.predictions = dedupe_predictions(&inst.predictions);
        }
    }
    let retrievers = if config.dimensions.contains(&Dimension::Utility) {
        build_retrievers(config, &dataset, providers).map_err(|e| e.in_stage("index"))?
    } else {
        Vec::new()
    };
    let retriever_refs: Vec<&dyn Retriever> = retrievers.iter().map(|r| r.as_ref()).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let outcomes: Vec<(String, Result<DocOutcome>)> = pool.install(|| {
        dataset
            .instances
            .par_iter()
            .map(|inst| {
                (
                    inst.id.clone(),
                    evaluate_document(config, inst, providers, &retriever_refs),
                )
            })
            .collect()
    });

    let mut per_document = BTreeMap::new();
    let mut notes = Vec::new();
    let mut sorted: Vec<_> = outcomes.into_iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (id, outcome) in sorted {
        let outcome = outcome?;
        for n in &outcome.notes {
            if n.kind == NoteKind::Skip {
                log::info!("{id}: skipped {} ({})", n.group, n.reason);
            }
        }
        notes.extend(outcome.notes);
        per_document.insert(id, outcome.metrics);
    }

    let metadata = ReportMetadata {
        system: config.system.clone(),
        config_hash: config.hash(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        providers: providers.identities(),
        k: config.k,
        base: config.base,
        alpha: config.alpha,
        timestamp_unix: config.timestamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }),
    };
    Ok(DimensionReport::new(per_document, notes, metadata))
}

/// One human judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub input_id: String,
    pub system_id: String,
    pub dimension: String,
    pub value: f64,
}

pub fn load_human_judgments(path: &Path) -> Result<Vec<HumanJudgment>> {
    read_jsonl(path)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A metric compared against one human-judged dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPair {
    pub metric: String,
    pub dimension: String,
}

impl MetricPair {
    /// Parse `metric:dimension`.
    pub fn parse(s: &str) -> Result<Self> {
        let (metric, dimension) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected metric:dimension, got {s:?}")))?;
        Ok(MetricPair {
            metric: metric.trim().to_string(),
            dimension: dimension.trim().to_string(),
        })
    }
}

/// Metric values keyed by document id, then metric name.
pub type MetricRows = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone)]
pub struct MetaEvalConfig {
    /// (system id, per-document metric rows) for each evaluated system.
    pub systems: Vec<(String, MetricRows)>,
    pub human: Vec<HumanJudgment>,
    pub pairs: Vec<MetricPair>,
    pub stat: CorrelationStat,
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaEvalRow {
    pub metric: String,
    pub dimension: String,
    #[serde(flatten)]
    pub result: CorrelationResult,
}

/// Pair metric values with human judgments and bootstrap the correlation for
/// each requested (metric, dimension).
pub fn run_meta_eval(config: &MetaEvalConfig) -> Result<Vec<MetaEvalRow>> {
    let systems: BTreeMap<&str, &MetricRows> = config
        .systems
        .iter()
        .map(|(name, rows)| (name.as_str(), rows))
        .collect();

    let orphans: BTreeSet<String> = config
        .human
        .iter()
        .filter(|h| {
            systems
                .get(h.system_id.as_str())
                .is_none_or(|rows| !rows.contains_key(&h.input_id))
        })
        .map(|h| format!("{}/{}", h.system_id, h.input_id))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::UnmatchedIds(orphans.into_iter().collect()));
    }

    let mut rows = Vec::new();
    for pair in &config.pairs {
        let mut items = Vec::new();
        for h in config
            .human
            .iter()
            .filter(|h| h.dimension == pair.dimension)
        {
            let doc = &systems[h.system_id.as_str()][&h.input_id];
            match doc.get(&pair.metric) {
                Some(&m) => items.push(PairedItem {
                    input_id: h.input_id.clone(),
                    system_id: Some(h.system_id.clone()),
                    metric_value: m,
                    human_value: h.value,
                }),
                None => log::info!(
                    "{}/{}: no {} value, excluded from {}",
                    h.system_id,
                    h.input_id,
                    pair.metric,
                    pair.dimension
                ),
            }
        }
        let paired = PairedScores::new(items).map_err(|e| e.in_stage("meta-eval pairing"))?;
        let result = bootstrap_ci(
            &paired,
            config.stat,
            config.n_resamples,
            config.level,
            config.seed,
        )
        .map_err(|e| e.in_stage("bootstrap"))?;
        rows.push(MetaEvalRow {
            metric: pair.metric.clone(),
            dimension: pair.dimension.clone(),
            result,
        });
    }
    Ok(rows)
}

/// Alignment/uniformity summary of an embedding space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub alignment: f64,
    pub uniformity: f64,
    /// `alignment - uniformity`.
    pub delta: f64,
    pub n_variation_pairs: usize,
    pub n_phrases: usize,
    pub n_uniformity_pairs: usize,
    pub seed: u64,
}

#[derive(Deserialize)]
struct VariationRecord {
    phrase: String,
    variant: String,
}

pub fn load_variation_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_jsonl::<VariationRecord>(path)?
        .into_iter()
        .map(|r| (r.phrase, r.variant))
        .collect())
}

pub fn run_diagnostics(
    pairs: &[(String, String)],
    phrases: &[String],
    embedder: &Embedder,
    n_pairs: usize,
    seed: u64,
) -> Result<Diagnostics> {
    let a = alignment(pairs, embedder).map_err(|e| e.in_stage("alignment"))?;
    let u = uniformity(phrases, embedder, n_pairs, seed).map_err(|e| e.in_stage("uniformity"))?;
    Ok(Diagnostics {
        alignment: a,
        uniformity: u,
        delta: a - u,
        n_variation_pairs: pairs.len(),
        n_phrases: phrases.len(),
        n_uniformity_pairs: n_pairs,
        seed,
    })
}
