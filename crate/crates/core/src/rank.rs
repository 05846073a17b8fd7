//! Passage reranking and nearest-neighbour exemplar selection.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Passage, PassagePool};
use crate::text;

pub const EMBEDDING_DIM: usize = 256;
pub const DEFAULT_SHOTS: usize = 5;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("text has no embeddable terms")]
    EmptyQuery,
    #[error("exemplar store is empty")]
    EmptyExemplarStore,
    #[error("invalid exemplar {index}: {message}")]
    InvalidExemplar { index: usize, message: String },
    #[error("remote scorer: {0}")]
    Remote(String),
    #[error("exemplar store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("exemplar store format: {0}")]
    Format(#[from] serde_json::Error),
}

/// A gold disambiguation inside an exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarPair {
    pub dq: String,
    pub answers: Vec<String>,
}

/// A solved training instance used as a few-shot demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub disambiguations: Vec<ExemplarPair>,
    pub long_answer: String,
}

impl Exemplar {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.disambiguations.is_empty() {
            return Err("no disambiguations".into());
        }
        for (i, d) in self.disambiguations.iter().enumerate() {
            if d.answers.iter().all(|a| a.trim().is_empty()) {
                return Err(format!("disambiguation {i} has no answers"));
            }
        }
        Ok(())
    }
}

/// Reads and validates an exemplar store (a JSON array).
pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>, RankError> {
    let store: Vec<Exemplar> = serde_json::from_slice(&fs::read(path)?)?;
    for (index, ex) in store.iter().enumerate() {
        ex.validate().map_err(|message| RankError::InvalidExemplar { index, message })?;
    }
    Ok(store)
}

/// Unit-norm hashed bag-of-words vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of normalized tokens, then L2 normalization.
pub fn embed(text: &str) -> Result<EmbeddingVector, RankError> {
    let toks = text::tokens(text);
    if toks.is_empty() {
        return Err(RankError::EmptyQuery);
    }
    let mut v = vec![0.0f64; EMBEDDING_DIM];
    for t in &toks {
        let h = fnv1a(t.as_bytes());
        let bucket = (h % EMBEDDING_DIM as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every token cancelled out against another; fall back to the first bucket
        let mut e = vec![0.0; EMBEDDING_DIM];
        e[(fnv1a(toks[0].as_bytes()) % EMBEDDING_DIM as u64) as usize] = 1.0;
        return Ok(EmbeddingVector(e));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(EmbeddingVector(v))
}

pub fn cosine(a: &str, b: &str) -> Result<f64, RankError> {
    Ok(embed(a)?.dot(&embed(b)?))
}

/// Scores candidate texts against a query; higher is more relevant.
pub trait PassageScorer: Send + Sync {
    fn score(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, RankError>;
}

/// Cosine similarity of hashed embeddings.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedCosineScorer;

impl PassageScorer for HashedCosineScorer {
    fn score(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, RankError> {
        let q = embed(query)?;
        Ok(candidates
            .iter()
            .map(|c| embed(c).map(|e| q.dot(&e)).unwrap_or(0.0))
            .collect())
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Remote scorer: `POST {"query","candidates"}` → `{"scores"}`.
pub struct RemoteScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, RankError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RankError::Remote(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl PassageScorer for RemoteScorer {
    fn score(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, RankError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&ScoreRequest { query, candidates })
            .send()
            .map_err(|e| RankError::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RankError::Remote(format!("status {}", resp.status())));
        }
        let body: ScoreResponse = resp.json().map_err(|e| RankError::Remote(e.to_string()))?;
        if body.scores.len() != candidates.len() {
            return Err(RankError::Remote(format!(
                "expected {} scores, got {}",
                candidates.len(),
                body.scores.len()
            )));
        }
        if body.scores.iter().any(|s| !s.is_finite()) {
            return Err(RankError::Remote("non-finite score".into()));
        }
        Ok(body.scores)
    }
}

fn passage_repr(p: &Passage) -> String {
    format!("{} {}", p.title, p.text)
}

/// Ranks `passages` against `query`: score descending, then id ascending.
pub fn rerank_passages(
    scorer: &dyn PassageScorer,
    query: &str,
    passages: &[Passage],
    k: usize,
) -> Result<Vec<Passage>, RankError> {
    if passages.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let reprs: Vec<String> = passages.iter().map(passage_repr).collect();
    let scores = scorer.score(query, &reprs)?;
    let mut order: Vec<usize> = (0..passages.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| passages[a].id.cmp(&passages[b].id))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| passages[i].clone().with_score(scores[i]))
        .collect())
}

pub fn rerank(
    scorer: &dyn PassageScorer,
    query: &str,
    pool: &PassagePool,
    k: usize,
) -> Result<Vec<Passage>, RankError> {
    rerank_passages(scorer, query, &pool.passages, k)
}

/// The `k` exemplars whose questions are closest to `question`; ties keep store order.
pub fn select_exemplars<'a>(
    question: &str,
    store: &'a [Exemplar],
    k: usize,
) -> Result<Vec<&'a Exemplar>, RankError> {
    if store.is_empty() {
        return Err(RankError::EmptyExemplarStore);
    }
    let q = embed(question)?;
    let sims: Vec<f64> = store
        .iter()
        .map(|e| embed(&e.question).map(|v| q.dot(&v)).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(k).map(|i| &store[i]).collect())
}
