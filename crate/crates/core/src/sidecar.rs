//! HTTP client for the model sidecar (`/embed`, `/score`, `/rerank`,
//! `/health`). Plain JSON over HTTP.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, EmbeddingVector, ProviderKind};
use crate::error::{Error, Result};
use crate::quality::{QualityPrompt, ScoreProvider, YesNo};
use crate::utility::Reranker;

/// Requests are split so no batch exceeds this many items.
pub const DEFAULT_MAX_BATCH: usize = 64;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedRequest {
    pub phrases: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreItem {
    pub dimension: String,
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub scores: Vec<YesNo>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RerankCandidate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RerankRequest {
    pub query: String,
    pub candidates: Vec<RerankCandidate>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankedDoc {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RerankResponse {
    pub ranked: Vec<RankedDoc>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HealthResponse {
    pub ready: bool,
    pub models: Vec<String>,
}

/// Connection to a running sidecar.
#[derive(Debug, Clone)]
pub struct SidecarClient {
    base_url: String,
    token: Option<String>,
    max_batch: usize,
    client: Client,
}

impl SidecarClient {
    pub fn new(base_url: &str, token: Option<String>) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        Ok(SidecarClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
            max_batch: DEFAULT_MAX_BATCH,
            client,
        })
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn authorize(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn send<T: for<'de> Deserialize<'de>>(&self, endpoint: &str, req: RequestBuilder) -> Result<T> {
        let resp = self
            .authorize(req)
            .send()
            .map_err(|e| Error::ProviderUnavailable(format!("{}{endpoint}: {e}", self.base_url)))?;
        let status = resp.status();
        if status == StatusCode::SERVICE_UNAVAILABLE {
            return Err(Error::ProviderUnavailable(format!(
                "{}{endpoint}: model not loaded (503)",
                self.base_url
            )));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Error::Protocol(format!(
                "{endpoint} returned {status}: {body}"
            )));
        }
        resp.json::<T>()
            .map_err(|e| Error::Protocol(format!("{endpoint}: malformed response: {e}")))
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(
        &self,
        endpoint: &str,
        body: &B,
    ) -> Result<T> {
        let req = self
            .client
            .post(format!("{}{endpoint}", self.base_url))
            .json(body);
        self.send(endpoint, req)
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let req = self.client.get(format!("{}/health", self.base_url));
        self.send("/health", req)
    }

    pub fn embed(&self, phrases: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(phrases.len());
        for chunk in phrases.chunks(self.max_batch) {
            let request = EmbedRequest {
                phrases: chunk.iter().map(|s| s.to_string()).collect(),
            };
            let resp: EmbedResponse = self.post("/embed", &request)?;
            if resp.vectors.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/embed returned {} vectors for {} phrases",
                    resp.vectors.len(),
                    chunk.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != resp.dim {
                    return Err(Error::DimMismatch {
                        left: resp.dim,
                        right: v.len(),
                    });
                }
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }

    pub fn score(&self, prompts: &[QualityPrompt]) -> Result<Vec<YesNo>> {
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(self.max_batch) {
            let request = ScoreRequest {
                items: chunk
                    .iter()
                    .map(|p| ScoreItem {
                        dimension: p.dimension.as_str().to_string(),
                        prompt: p.text.clone(),
                    })
                    .collect(),
            };
            let resp: ScoreResponse = self.post("/score", &request)?;
            if resp.scores.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/score returned {} scores for {} prompts",
                    resp.scores.len(),
                    chunk.len()
                )));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }

    pub fn rerank(
        &self,
        query: &str,
        candidates: &[(String, String)],
    ) -> Result<Vec<(String, f64)>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let request = RerankRequest {
            query: query.to_string(),
            candidates: candidates
                .iter()
                .map(|(id, text)| RerankCandidate {
                    id: id.clone(),
                    text: text.clone(),
                })
                .collect(),
        };
        let resp: RerankResponse = self.post("/rerank", &request)?;
        Ok(resp.ranked.into_iter().map(|r| (r.id, r.score)).collect())
    }
}

impl EmbeddingProvider for SidecarClient {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Http
    }

    fn identity(&self) -> String {
        format!("http:{}/embed", self.base_url)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        self.embed(texts)
    }
}

impl ScoreProvider for SidecarClient {
    fn identity(&self) -> String {
        format!("http:{}/score", self.base_url)
    }

    fn score(&self, prompts: &[QualityPrompt]) -> Result<Vec<YesNo>> {
        SidecarClient::score(self, prompts)
    }
}

impl Reranker for SidecarClient {
    fn identity(&self) -> String {
        format!("http:{}/rerank", self.base_url)
    }

    fn rerank(&self, query: &str, candidates: &[(String, String)]) -> Result<Vec<(String, f64)>> {
        SidecarClient::rerank(self, query, candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_is_provider_unavailable() {
        // Port 9 (discard) on localhost is almost never listening.
        let c = SidecarClient::new("http://127.0.0.1:9", None).unwrap();
        assert!(matches!(
            c.embed(&["x"]),
            Err(Error::ProviderUnavailable(_))
        ));
        assert!(matches!(c.health(), Err(Error::ProviderUnavailable(_))));
    }

    #[test]
    fn wire_shapes() {
        let req = ScoreRequest {
            items: vec![ScoreItem {
                dimension: "naturalness".into(),
                prompt: "p".into(),
            }],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"items":[{"dimension":"naturalness","prompt":"p"}]}"#
        );
        let resp: RerankResponse =
            serde_json::from_str(r#"{"ranked":[{"id":"d1","score":0.5}]}"#).unwrap();
        assert_eq!(resp.ranked[0].id, "d1");
    }
}
