//! Passage corpus: ingestion, BM25 lexical search, web search and pool merging.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::text;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_PASSAGE_TOKENS: usize = 120;
pub const DEFAULT_POOL_CAP: usize = 250;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("malformed record at offset {offset}: {message}")]
    MalformedRecord { offset: usize, message: String },
    #[error("query has no searchable terms")]
    EmptyQuery,
    #[error("retrieval unavailable{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    RetrievalUnavailable { status: Option<u16>, message: String },
    #[error("index i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("index format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassageSource {
    LocalIndex,
    WebSearch,
    Fixture,
}

/// A retrieved evidence unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
    pub source: PassageSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Passage {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        source: PassageSource,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
            source,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

/// The merged retrieval set for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassagePool {
    pub passages: Vec<Passage>,
    pub origin_query: String,
}

impl PassagePool {
    pub fn new(origin_query: impl Into<String>, passages: Vec<Passage>) -> Self {
        Self {
            passages,
            origin_query: origin_query.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.id == id)
    }
}

/// One input document before splitting into passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            text: text.into(),
        }
    }
}

/// Reads a JSON Lines corpus. Blank lines are skipped; offsets are 1-based line numbers.
pub fn read_jsonl<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Document, CorpusError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let offset = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(CorpusError::MalformedRecord {
                        offset,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                return None;
            }
            Some(
                serde_json::from_str::<Document>(&line).map_err(|e| CorpusError::MalformedRecord {
                    offset,
                    message: e.to_string(),
                }),
            )
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    passage: usize,
    tf: u32,
}

/// Immutable BM25 index over split passages.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    passages: Vec<Passage>,
    lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    avg_len: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredIndex {
    version: u32,
    passages: Vec<Passage>,
}

const INDEX_FILE: &str = "index.json";

impl CorpusIndex {
    /// Splits and indexes documents. Any document that fails to read aborts ingestion.
    pub fn ingest<I>(documents: I, max_tokens: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = Result<Document, CorpusError>>,
    {
        let max_tokens = max_tokens.max(1);
        let mut seen = HashSet::new();
        let mut passages = Vec::new();
        let mut read_any = false;
        for (offset, doc) in documents.into_iter().enumerate() {
            let doc = doc?;
            read_any = true;
            if doc.text.trim().is_empty() {
                return Err(CorpusError::MalformedRecord {
                    offset: offset + 1,
                    message: "document text is empty".into(),
                });
            }
            if !seen.insert((doc.title.clone(), doc.text.clone())) {
                continue;
            }
            let words: Vec<&str> = doc.text.split_whitespace().collect();
            for chunk in words.chunks(max_tokens) {
                let id = format!("p{:07}", passages.len());
                passages.push(Passage::new(
                    id,
                    doc.title.clone(),
                    chunk.join(" "),
                    PassageSource::LocalIndex,
                ));
            }
        }
        if !read_any {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self::from_passages(passages))
    }

    fn from_passages(passages: Vec<Passage>) -> Self {
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut lengths = Vec::with_capacity(passages.len());
        for (idx, p) in passages.iter().enumerate() {
            let toks = text::tokens(&p.text);
            lengths.push(toks.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { passage: idx, tf });
            }
        }
        for list in postings.values_mut() {
            list.sort_by_key(|p| p.passage);
        }
        let total: u64 = lengths.iter().map(|&l| l as u64).sum();
        let avg_len = if passages.is_empty() {
            0.0
        } else {
            total as f64 / passages.len() as f64
        };
        Self {
            passages,
            lengths,
            postings,
            avg_len,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.passages.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Lucene-style BM25 idf, always positive.
    fn idf(&self, df: usize) -> f64 {
        let n = self.passages.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` passages by BM25. Only passages sharing at least one term with the
    /// query are returned; ties break on ascending passage id.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<Passage>, CorpusError> {
        let mut terms = text::tokens(query);
        if terms.is_empty() {
            return Err(CorpusError::EmptyQuery);
        }
        let mut uniq = HashSet::new();
        terms.retain(|t| uniq.insert(t.clone()));

        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for posting in list {
                let tf = posting.tf as f64;
                let dl = self.lengths[posting.passage] as f64;
                let norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_len);
                *scores.entry(posting.passage).or_default() += idf * (tf * (BM25_K1 + 1.0)) / norm;
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.passages[a.0].id.cmp(&self.passages[b.0].id))
        });
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(i, s)| self.passages[i].clone().with_score(s))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        let stored = StoredIndex {
            version: 1,
            passages: self.passages.clone(),
        };
        fs::write(dir.join(INDEX_FILE), serde_json::to_vec(&stored)?)?;
        Ok(())
    }

    /// Loads a saved index; term statistics are rebuilt from the stored passages.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let bytes = fs::read(dir.join(INDEX_FILE))?;
        let stored: StoredIndex = serde_json::from_slice(&bytes)?;
        Ok(Self::from_passages(stored.passages))
    }
}

/// Splits each document into passages of at most `max_tokens` whitespace tokens and indexes them.
pub fn ingest_corpus<I>(documents: I, max_tokens: usize) -> Result<CorpusIndex, CorpusError>
where
    I: IntoIterator<Item = Result<Document, CorpusError>>,
{
    CorpusIndex::ingest(documents, max_tokens)
}

pub fn local_search(index: &CorpusIndex, query: &str, k: usize) -> Result<Vec<Passage>, CorpusError> {
    index.search(query, k)
}

/// Response body of the search service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    #[serde(default)]
    pub results: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

/// A source of web passages.
pub trait WebSearch: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<Passage>, CorpusError>;
}

/// Converts a search response into passages, dropping results with empty snippets.
pub fn passages_from_response(query: &str, response: &SearchResponse, k: usize) -> Vec<Passage> {
    let key = text::content_hash(query);
    let tag = &key[..8];
    response
        .results
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.snippet.trim().is_empty())
        .take(k)
        .map(|(i, r)| {
            Passage::new(
                format!("w{tag}-{i:03}"),
                r.title.clone(),
                r.snippet.trim(),
                PassageSource::WebSearch,
            )
        })
        .collect()
}

fn fixture_path(dir: &Path, query: &str) -> PathBuf {
    dir.join(format!("{}.json", text::content_hash(query)))
}

/// HTTP search client: `GET endpoint?q=..&count=k`.
pub struct HttpSearch {
    endpoint: String,
    client: reqwest::blocking::Client,
    record_dir: Option<PathBuf>,
}

impl HttpSearch {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, CorpusError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| CorpusError::RetrievalUnavailable {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
            record_dir: None,
        })
    }

    /// Persist every response under `dir`, keyed by the query hash, for later replay.
    pub fn recording_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.record_dir = Some(dir.into());
        self
    }
}

impl WebSearch for HttpSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<Passage>, CorpusError> {
        let unavailable = |status: Option<u16>, message: String| CorpusError::RetrievalUnavailable { status, message };
        let resp = self
            .client
            .get(&self.endpoint)
            .query(&[("q", query), ("count", &k.to_string())])
            .send()
            .map_err(|e| unavailable(None, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(unavailable(Some(status.as_u16()), format!("search endpoint returned {status}")));
        }
        let body: SearchResponse = resp.json().map_err(|e| unavailable(Some(status.as_u16()), e.to_string()))?;
        if let Some(dir) = &self.record_dir {
            fs::create_dir_all(dir)?;
            fs::write(fixture_path(dir, query), serde_json::to_vec_pretty(&body)?)?;
        }
        Ok(passages_from_response(query, &body, k))
    }
}

/// Replays recorded search responses from a fixture directory.
pub struct FixtureSearch {
    dir: PathBuf,
}

impl FixtureSearch {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl WebSearch for FixtureSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<Passage>, CorpusError> {
        let path = fixture_path(&self.dir, query);
        let bytes = fs::read(&path).map_err(|e| CorpusError::RetrievalUnavailable {
            status: None,
            message: format!("no search fixture {}: {e}", path.display()),
        })?;
        let body: SearchResponse = serde_json::from_slice(&bytes)?;
        Ok(passages_from_response(query, &body, k))
    }
}

/// Runs a web search, degrading to an empty result when the service is unavailable.
pub fn web_search_or_empty(search: &dyn WebSearch, query: &str, k: usize) -> Vec<Passage> {
    match search.search(query, k) {
        Ok(p) => p,
        Err(e) => {
            warn!(error = %e, "web search unavailable, continuing with local passages only");
            Vec::new()
        }
    }
}

/// Union of `a` then `b`, dropping passages whose normalized text (or id) was already taken.
pub fn combine_pools(origin_query: &str, a: Vec<Passage>, b: Vec<Passage>, cap: usize) -> PassagePool {
    let mut seen_text = HashSet::new();
    let mut seen_id = HashSet::new();
    let mut out = Vec::new();
    for p in a.into_iter().chain(b) {
        if out.len() >= cap {
            break;
        }
        let norm = text::normalize(&p.text);
        if seen_text.contains(&norm) || seen_id.contains(&p.id) {
            debug!(id = %p.id, "dropping duplicate passage");
            continue;
        }
        seen_text.insert(norm);
        seen_id.insert(p.id.clone());
        out.push(p);
    }
    PassagePool::new(origin_query, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(items: &[(&str, &str)]) -> Vec<Result<Document, CorpusError>> {
        items.iter().map(|(t, x)| Ok(Document::new(*t, *x))).collect()
    }

    #[test]
    fn three_docs_three_passages() {
        let idx = ingest_corpus(docs(&[("a", "one."), ("b", "two."), ("c", "three.")]), 120).unwrap();
        assert_eq!(idx.doc_count(), 3);
    }

    #[test]
    fn long_doc_splits_at_token_limit() {
        let body: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let idx = ingest_corpus(docs(&[("long", &body.join(" "))]), 120).unwrap();
        assert_eq!(idx.doc_count(), 3);
        let lens: Vec<usize> = idx.passages().iter().map(|p| p.text.split_whitespace().count()).collect();
        assert_eq!(lens, vec![120, 120, 60]);
        assert!(idx.passages()[1].text.starts_with("w120 "));
        assert!(idx.passages()[2].text.ends_with(" w299"));
    }

    #[test]
    fn duplicate_documents_are_idempotent() {
        let idx = ingest_corpus(docs(&[("t", "same text"), ("t", "same text")]), 120).unwrap();
        assert_eq!(idx.doc_count(), 1);
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert!(matches!(ingest_corpus(Vec::new(), 120), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn malformed_jsonl_names_line() {
        let input = "{\"title\":\"a\",\"text\":\"b\"}\n\n{not json}\n";
        let err = ingest_corpus(read_jsonl(input.as_bytes()), 120).unwrap_err();
        match err {
            CorpusError::MalformedRecord { offset, .. } => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bm25_prefers_higher_tf() {
        let idx = ingest_corpus(docs(&[("", "a b"), ("", "a a"), ("", "c")]), 120).unwrap();
        let hits = local_search(&idx, "a", 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].text, "a a");
        assert_eq!(hits[1].text, "a b");
        // idf = ln(1.6), avgdl = 5/3
        let idf = 1.6f64.ln();
        let expect_aa = idf * 2.0 * 2.2 / (2.0 + 1.2 * (0.25 + 0.75 * 2.0 / (5.0 / 3.0)));
        assert!((hits[0].score.unwrap() - expect_aa).abs() < 1e-12);
    }

    #[test]
    fn absent_term_and_small_corpus() {
        let idx = ingest_corpus(docs(&[("", "a b"), ("", "a a"), ("", "c")]), 120).unwrap();
        assert!(local_search(&idx, "zzz", 5).unwrap().is_empty());
        assert_eq!(local_search(&idx, "a c", 10).unwrap().len(), 3);
        assert!(matches!(local_search(&idx, " ?! ", 3), Err(CorpusError::EmptyQuery)));
    }

    #[test]
    fn index_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let idx = ingest_corpus(docs(&[("x", "alpha beta"), ("y", "beta gamma")]), 120).unwrap();
        idx.save(dir.path()).unwrap();
        let back = CorpusIndex::load(dir.path()).unwrap();
        assert_eq!(back.passages(), idx.passages());
        assert_eq!(back.search("beta", 5).unwrap(), idx.search("beta", 5).unwrap());
    }

    #[test]
    fn combine_dedups_first_wins() {
        let p = |id: &str, t: &str| Passage::new(id, "", t, PassageSource::Fixture);
        let pool = combine_pools(
            "q",
            vec![p("1", "Alpha beta."), p("2", "gamma")],
            vec![p("2b", "GAMMA!"), p("3", "delta")],
            250,
        );
        let ids: Vec<&str> = pool.passages.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3"]);
        assert!(combine_pools("q", vec![], vec![], 5).is_empty());
    }

    #[test]
    fn combine_respects_cap() {
        let local: Vec<Passage> = (0..150)
            .map(|i| Passage::new(format!("l{i}"), "", format!("local {i}"), PassageSource::LocalIndex))
            .collect();
        let web: Vec<Passage> = (0..100)
            .map(|i| Passage::new(format!("w{i}"), "", format!("web {i}"), PassageSource::WebSearch))
            .collect();
        let pool = combine_pools("q", local, web, 250);
        assert!(pool.len() >= 150 && pool.len() <= 250);
        assert_eq!(pool.len(), 250);
        let capped = combine_pools("q", pool.passages.clone(), vec![], 200);
        assert_eq!(capped.len(), 200);
    }

    #[test]
    fn fixture_search_drops_empty_snippets() {
        let dir = tempfile::tempdir().unwrap();
        let resp = SearchResponse {
            results: vec![
                SearchResult { title: "A".into(), snippet: "first".into() },
                SearchResult { title: "B".into(), snippet: "   ".into() },
                SearchResult { title: "C".into(), snippet: "third".into() },
            ],
        };
        fs::write(fixture_path(dir.path(), "q"), serde_json::to_vec(&resp).unwrap()).unwrap();
        let hits = FixtureSearch::new(dir.path()).search("q", 5).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|p| p.source == PassageSource::WebSearch));
        assert_eq!(hits[1].title, "C");
        assert!(FixtureSearch::new(dir.path()).search("other", 5).is_err());
    }
}
