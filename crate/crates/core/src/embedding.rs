//! Phrase embeddings: the vector type, similarity algebra, and pluggable
//! providers with a per-run memo cache.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use crate::error::{Error, Result};

/// A finite, non-zero, fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidVector("zero-dimensional vector".into()));
        }
        if let Some(bad) = components.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidVector(format!("non-finite component {bad}")));
        }
        let v = EmbeddingVector(components);
        if v.norm() == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity, clamped to [-1, 1].
///
/// The result is bitwise symmetric in its arguments.
pub fn cos_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Set representation by elementwise max pooling.
pub fn union(vectors: &[&EmbeddingVector]) -> Result<EmbeddingVector> {
    let (first, rest) = vectors.split_first().ok_or(Error::EmptySet)?;
    let mut pooled = first.0.clone();
    for v in rest {
        check_dims(first, v)?;
        for (acc, &x) in pooled.iter_mut().zip(&v.0) {
            *acc = acc.max(x);
        }
    }
    // Max pooling can produce an all-zero vector (e.g. [0,-1] and [-1,0]).
    EmbeddingVector::new(pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    File,
    Http,
}

/// A source of phrase embeddings.
///
/// Implementations return one vector per input text, in order, and must be
/// deterministic within a run.
pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Human-readable identity recorded in report metadata.
    fn identity(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;
}

/// Memoizing front end over an [`EmbeddingProvider`]. Cache keys are the
/// exact raw texts.
pub struct Embedder {
    provider: Box<dyn EmbeddingProvider>,
    cache: Mutex<HashMap<String, Arc<EmbeddingVector>>>,
    dim: Mutex<Option<usize>>,
}

impl Embedder {
    pub fn new(provider: Box<dyn EmbeddingProvider>) -> Self {
        Embedder {
            provider,
            cache: Mutex::new(HashMap::new()),
            dim: Mutex::new(None),
        }
    }

    pub fn identity(&self) -> String {
        self.provider.identity()
    }

    pub fn kind(&self) -> ProviderKind {
        self.provider.kind()
    }

    /// Embed `texts`, fetching only cache misses from the provider (one
    /// batch, first-occurrence order).
    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Arc<EmbeddingVector>>> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut missing = Vec::new();
            for &t in texts {
                if !cache.contains_key(t) && !missing.contains(&t) {
                    missing.push(t);
                }
            }
            missing
        };

        if !missing.is_empty() {
            let fetched = self.provider.embed_batch(&missing)?;
            if fetched.len() != missing.len() {
                return Err(Error::Protocol(format!(
                    "provider returned {} vectors for {} texts",
                    fetched.len(),
                    missing.len()
                )));
            }
            self.check_dim(&fetched)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (text, v) in missing.into_iter().zip(fetched) {
                // A concurrent caller may have inserted the same text; keep the
                // first so repeated lookups stay bitwise identical.
                cache.entry(text.to_string()).or_insert_with(|| Arc::new(v));
            }
        }

        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| Arc::clone(&cache[*t])).collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<Arc<EmbeddingVector>> {
        Ok(self.embed(&[text])?.remove(0))
    }

    fn check_dim(&self, fetched: &[EmbeddingVector]) -> Result<()> {
        let mut dim = self.dim.lock().expect("dim lock poisoned");
        for v in fetched {
            match *dim {
                None => *dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(Error::DimMismatch {
                        left: d,
                        right: v.dim(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct FileRecord {
    phrase: String,
    vector: Vec<f64>,
}

/// Embeddings read from a line-delimited file of
/// `{"phrase": ..., "vector": [...]}` records.
#[derive(Debug, Clone)]
pub struct FileProvider {
    source: String,
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let record: FileRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let v = EmbeddingVector::new(record.vector).map_err(|e| parse_err(e.to_string()))?;
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(parse_err(format!(
                        "vector has dim {}, expected {d}",
                        v.dim()
                    )))
                }
                Some(_) => {}
            }
            if vectors.insert(record.phrase.clone(), v).is_some() {
                return Err(parse_err(format!("duplicate phrase {:?}", record.phrase)));
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no vectors in file".into(),
        })?;
        Ok(FileProvider {
            source: path.display().to_string(),
            dim,
            vectors,
        })
    }

    /// Build from in-memory pairs (used by tests and tooling).
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (phrase, components) in pairs {
            let v = EmbeddingVector::new(components)?;
            if let Some(d) = dim {
                if d != v.dim() {
                    return Err(Error::DimMismatch {
                        left: d,
                        right: v.dim(),
                    });
                }
            }
            dim = Some(v.dim());
            vectors.insert(phrase.into(), v);
        }
        Ok(FileProvider {
            source: "memory".into(),
            dim: dim.ok_or(Error::EmptySet)?,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::File
    }

    fn identity(&self) -> String {
        format!("file:{} (dim {})", self.source, self.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| Error::MissingEmbedding(t.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn v(c: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn cos_identical_orthogonal_diagonal() {
        assert_eq!(cos_sim(&v(&[0.3, -2.0]), &v(&[0.3, -2.0])).unwrap(), 1.0);
        assert_eq!(cos_sim(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cos_sim(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cos_errors() {
        assert!(matches!(
            cos_sim(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![0.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn union_examples() {
        assert_eq!(union(&[&v(&[2.0, -3.0])]).unwrap(), v(&[2.0, -3.0]));
        assert_eq!(
            union(&[&v(&[1.0, 0.0]), &v(&[0.0, 1.0])]).unwrap(),
            v(&[1.0, 1.0])
        );
        assert_eq!(
            union(&[&v(&[2.0, -3.0]), &v(&[-1.0, 5.0])]).unwrap(),
            v(&[2.0, 5.0])
        );
        assert!(matches!(union(&[]), Err(Error::EmptySet)));
        assert!(matches!(
            union(&[&v(&[1.0]), &v(&[1.0, 2.0])]),
            Err(Error::DimMismatch { .. })
        ));
    }

    fn provider() -> FileProvider {
        FileProvider::from_pairs([("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]).unwrap()
    }

    #[test]
    fn file_provider_returns_stored_vector() {
        let p = provider();
        assert_eq!(p.embed_batch(&["b"]).unwrap(), vec![v(&[0.0, 1.0])]);
        assert!(matches!(
            p.embed_batch(&["zzz"]),
            Err(Error::MissingEmbedding(s)) if s == "zzz"
        ));
    }

    #[test]
    fn file_provider_loads_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        std::fs::write(
            &path,
            "{\"phrase\":\"word recognition\",\"vector\":[0.25,-1.5,3]}\n\n{\"phrase\":\"online\",\"vector\":[1,0,0]}\n",
        )
        .unwrap();
        let p = FileProvider::load(&path).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(
            p.embed_batch(&["word recognition"]).unwrap()[0].components(),
            &[0.25, -1.5, 3.0]
        );

        std::fs::write(
            &path,
            "{\"phrase\":\"x\",\"vector\":[1,0]}\n{\"phrase\":\"y\",\"vector\":[1]}\n",
        )
        .unwrap();
        assert!(matches!(
            FileProvider::load(&path),
            Err(Error::Parse { line: 2, .. })
        ));

        std::fs::write(&path, "{\"phrase\":\"x\",\"vector\":[0,0]}\n").unwrap();
        assert!(matches!(
            FileProvider::load(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    struct Counting {
        inner: FileProvider,
        calls: AtomicUsize,
        texts: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn kind(&self) -> ProviderKind {
            ProviderKind::File
        }
        fn identity(&self) -> String {
            "counting".into()
        }
        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed_batch(texts)
        }
    }

    #[test]
    fn memo_cache_dedupes_and_is_stable() {
        let counting = Arc::new(Counting {
            inner: provider(),
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        });
        struct Shared(Arc<Counting>);
        impl EmbeddingProvider for Shared {
            fn kind(&self) -> ProviderKind {
                self.0.kind()
            }
            fn identity(&self) -> String {
                self.0.identity()
            }
            fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
                self.0.embed_batch(texts)
            }
        }
        let e = Embedder::new(Box::new(Shared(Arc::clone(&counting))));
        let out = e.embed(&["a", "b", "a"]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert_eq!(counting.texts.load(Ordering::SeqCst), 2);
        let again = e.embed(&["a"]).unwrap();
        assert_eq!(again[0].components(), out[0].components());
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("non-zero", |c| c.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cos_symmetric_and_scale_invariant(
            (a, b) in (1usize..12).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
            scale in 1e-3f64..1e3,
        ) {
            let (va, vb) = (v(&a), v(&b));
            let ab = cos_sim(&va, &vb).unwrap();
            prop_assert_eq!(ab, cos_sim(&vb, &va).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            let scaled = v(&a.iter().map(|x| x * scale).collect::<Vec<_>>());
            prop_assert!((cos_sim(&scaled, &vb).unwrap() - ab).abs() < 1e-9);
        }

        #[test]
        fn union_dominates_and_is_order_invariant(
            set in (1usize..8).prop_flat_map(|d| prop::collection::vec(vec_strategy(d), 1..6))
        ) {
            let vs: Vec<EmbeddingVector> = set.iter().map(|c| v(c)).collect();
            let refs: Vec<&EmbeddingVector> = vs.iter().collect();
            let Ok(u) = union(&refs) else { return Ok(()); };
            for m in &vs {
                for (x, y) in u.components().iter().zip(m.components()) {
                    prop_assert!(x >= y);
                }
            }
            let mut rev = refs.clone();
            rev.reverse();
            prop_assert_eq!(&union(&rev).unwrap(), &u);
            let doubled: Vec<&EmbeddingVector> = refs.iter().chain(refs.iter()).copied().collect();
            prop_assert_eq!(&union(&doubled).unwrap(), &u);
        }
    }
}
