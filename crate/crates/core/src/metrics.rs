//! Long-form QA metrics: token F1, Answer-F1, Disambig-F1, ROUGE-L, DR and
//! retrieval answer coverage.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::text;

pub const DEFAULT_AC_KS: [usize; 3] = [10, 30, 100];
pub const MAX_EXTRACT_WINDOW: usize = 6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("remote extractor: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldDisambiguation {
    pub dq: String,
    pub answers: Vec<String>,
}

/// A gold record: the ambiguous question, its disambiguations and two reference answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    #[serde(default)]
    pub id: String,
    pub aq: String,
    pub gold_disambiguations: Vec<GoldDisambiguation>,
    pub gold_long_answers: Vec<String>,
}

impl EvalExample {
    /// Returns the offending field name and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.aq.trim().is_empty() {
            return Err(("aq", "empty question".into()));
        }
        if self.gold_disambiguations.is_empty() {
            return Err(("gold_disambiguations", "at least one disambiguation required".into()));
        }
        for (i, d) in self.gold_disambiguations.iter().enumerate() {
            if d.answers.iter().all(|a| a.trim().is_empty()) {
                return Err(("gold_disambiguations", format!("disambiguation {i} has no answers")));
            }
        }
        if self.gold_long_answers.len() != 2 {
            return Err((
                "gold_long_answers",
                format!("exactly two references required, found {}", self.gold_long_answers.len()),
            ));
        }
        Ok(())
    }
}

/// SQuAD-style normalization: lowercase, drop punctuation and articles, split on whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut common = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best bag-of-tokens F1 of `pred` against any of `golds`, in [0, 1].
pub fn token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let p = normalize_answer(pred);
    golds
        .iter()
        .map(|g| f1_tokens(&p, &normalize_answer(g.as_ref())))
        .fold(0.0, f64::max)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_single(pred: &[&str], reference: &[&str]) -> f64 {
    let lcs = lcs_len(pred, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / pred.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Maximum LCS F-measure of `pred` against the references, over lowercased whitespace tokens.
pub fn rouge_l<S: AsRef<str>>(pred: &str, refs: &[S]) -> f64 {
    let lower = pred.to_lowercase();
    let p: Vec<&str> = lower.split_whitespace().collect();
    refs.iter()
        .map(|r| {
            let lr = r.as_ref().to_lowercase();
            let rt: Vec<&str> = lr.split_whitespace().collect();
            rouge_l_single(&p, &rt)
        })
        .fold(0.0, f64::max)
}

/// Geometric mean of D-F1 and ROUGE-L.
pub fn dr(d_f1: f64, rouge_l: f64) -> f64 {
    (d_f1 * rouge_l).sqrt()
}

/// Best token F1 over all (prediction, gold) pairs, ×100.
pub fn answer_f1<S: AsRef<str>, T: AsRef<str>>(pred_answers: &[S], gold_answers: &[T]) -> f64 {
    pred_answers
        .iter()
        .map(|p| token_f1(p.as_ref(), gold_answers))
        .fold(0.0, f64::max)
        * 100.0
}

/// Finds the short answer to a question inside a long-form answer.
pub trait AnswerExtractor: Send + Sync {
    fn extract(&self, long_answer: &str, dq: &str, gold_answers: &[String]) -> Result<String, MetricsError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Windows are scored against the gold answers.
    Oracle,
    /// Windows are scored against the question text only.
    Blind,
}

/// Picks the 1–6 token window with the highest token F1 against the target; earliest wins ties.
#[derive(Debug, Clone, Copy)]
pub struct WindowExtractor {
    pub mode: ExtractionMode,
    pub max_window: usize,
}

impl WindowExtractor {
    pub fn oracle() -> Self {
        Self {
            mode: ExtractionMode::Oracle,
            max_window: MAX_EXTRACT_WINDOW,
        }
    }

    pub fn blind() -> Self {
        Self {
            mode: ExtractionMode::Blind,
            max_window: MAX_EXTRACT_WINDOW,
        }
    }
}

impl AnswerExtractor for WindowExtractor {
    fn extract(&self, long_answer: &str, dq: &str, gold_answers: &[String]) -> Result<String, MetricsError> {
        let words: Vec<&str> = long_answer.split_whitespace().collect();
        let targets: Vec<&str> = match self.mode {
            ExtractionMode::Oracle => gold_answers.iter().map(String::as_str).collect(),
            ExtractionMode::Blind => vec![dq],
        };
        let mut best = (0.0f64, String::new());
        for start in 0..words.len() {
            for len in 1..=self.max_window.min(words.len() - start) {
                let window = words[start..start + len].join(" ");
                let score = token_f1(&window, &targets);
                if score > best.0 {
                    best = (score, window);
                }
            }
        }
        Ok(best
            .1
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_string())
    }
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    question: &'a str,
    context: &'a str,
}

#[derive(Deserialize)]
struct ExtractResponse {
    answer: String,
}

/// Reading-comprehension service: `POST {"question","context"}` → `{"answer"}`.
pub struct RemoteExtractor {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteExtractor {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, MetricsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| MetricsError::Remote(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl AnswerExtractor for RemoteExtractor {
    fn extract(&self, long_answer: &str, dq: &str, _gold: &[String]) -> Result<String, MetricsError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&ExtractRequest {
                question: dq,
                context: long_answer,
            })
            .send()
            .map_err(|e| MetricsError::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(MetricsError::Remote(format!("status {}", resp.status())));
        }
        Ok(resp
            .json::<ExtractResponse>()
            .map_err(|e| MetricsError::Remote(e.to_string()))?
            .answer)
    }
}

pub fn extract_answer(
    long_answer: &str,
    dq: &GoldDisambiguation,
    extractor: &dyn AnswerExtractor,
) -> Result<String, MetricsError> {
    if long_answer.trim().is_empty() {
        return Ok(String::new());
    }
    extractor.extract(long_answer, &dq.dq, &dq.answers)
}

/// Mean over gold DQs of the token F1 of the extracted short answer, ×100.
pub fn disambig_f1(
    long_answer: &str,
    example: &EvalExample,
    extractor: &dyn AnswerExtractor,
) -> Result<f64, MetricsError> {
    if example.gold_disambiguations.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for dq in &example.gold_disambiguations {
        let extracted = extract_answer(long_answer, dq, extractor)?;
        if !extracted.is_empty() {
            total += token_f1(&extracted, &dq.answers);
        }
    }
    Ok(total / example.gold_disambiguations.len() as f64 * 100.0)
}

/// AC@k for each cutoff, ×100.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub ac_at: BTreeMap<usize, f64>,
}

impl RetrievalReport {
    /// Mean of per-question proportions. Cutoffs missing from some reports are averaged over
    /// the reports that have them.
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a RetrievalReport>) -> RetrievalReport {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in reports {
            for (k, v) in &r.ac_at {
                let e = sums.entry(*k).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        RetrievalReport {
            ac_at: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        }
    }
}

/// Share of gold DQs with at least one answer contained in the top-k passages.
pub fn answer_coverage(ranked: &[Passage], example: &EvalExample, ks: &[usize]) -> RetrievalReport {
    let bodies: Vec<String> = ranked.iter().map(|p| text::normalize(&p.text)).collect();
    // rank of the first passage that covers each DQ
    let first_hit: Vec<Option<usize>> = example
        .gold_disambiguations
        .iter()
        .map(|d| {
            let answers: Vec<String> = d
                .answers
                .iter()
                .map(|a| text::normalize(a))
                .filter(|a| !a.is_empty())
                .collect();
            bodies.iter().position(|b| answers.iter().any(|a| b.contains(a.as_str())))
        })
        .collect();
    let n = first_hit.len().max(1) as f64;
    let ac_at = ks
        .iter()
        .map(|&k| {
            let covered = first_hit.iter().filter(|h| h.is_some_and(|r| r < k)).count();
            (k, covered as f64 / n * 100.0)
        })
        .collect();
    RetrievalReport { ac_at }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageSource;

    fn example(dqs: &[(&str, &[&str])]) -> EvalExample {
        EvalExample {
            id: "q".into(),
            aq: "aq?".into(),
            gold_disambiguations: dqs
                .iter()
                .map(|(dq, a)| GoldDisambiguation {
                    dq: dq.to_string(),
                    answers: a.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
            gold_long_answers: vec!["r1".into(), "r2".into()],
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Yankees!"), ["yankees"]);
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("New York  Yankees"), ["new", "york", "yankees"]);
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("Yogi Berra", &["Yogi Berra"]), 1.0);
        assert!((token_f1("the Yankees", &["New York Yankees"]) - 0.5).abs() < 1e-12);
        assert_eq!(token_f1("Paris", &["London"]), 0.0);
        assert_eq!(token_f1("", &[""]), 1.0);
        assert_eq!(token_f1("the", &["x"]), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("a b c", &["a b c"]), 1.0);
        let f = rouge_l("a b c d", &["a c d"]);
        assert!((f - 2.0 * 0.75 / 1.75).abs() < 1e-12);
        assert_eq!(rouge_l("x y", &["p q", "X Y"]), 1.0);
        assert_eq!(rouge_l("", &["a"]), 0.0);
    }

    #[test]
    fn dr_examples() {
        assert!((dr(31.1, 39.6) - 35.1).abs() <= 0.05);
        assert!((dr(32.4, 40.0) - 36.0).abs() <= 0.05);
        assert_eq!(dr(0.0, 40.0), 0.0);
    }

    #[test]
    fn answer_f1_examples() {
        assert_eq!(answer_f1(&["Yogi Berra"], &["Yogi Berra", "Frankie Crosetti"]), 100.0);
        assert_eq!(answer_f1::<&str, &str>(&[], &["x"]), 0.0);
        assert!((answer_f1(&["Berra", "Ruth"], &["Yogi Berra"]) - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_extraction_finds_exact_span() {
        let ex = example(&[("Which country has the most gold medals in the Winter Olympics?", &["Norway"])]);
        let long = "The United States has the most gold medals overall, while Norway has won the most gold medals in the Winter Olympics.";
        let got = extract_answer(long, &ex.gold_disambiguations[0], &WindowExtractor::oracle()).unwrap();
        assert_eq!(got, "Norway");
        let none = extract_answer("nothing relevant here", &ex.gold_disambiguations[0], &WindowExtractor::oracle()).unwrap();
        assert_eq!(token_f1(&none, &ex.gold_disambiguations[0].answers), 0.0);
    }

    #[test]
    fn disambig_f1_examples() {
        let ex = example(&[("q1?", &["Norway"]), ("q2?", &["United States"])]);
        let oracle = WindowExtractor::oracle();
        assert_eq!(disambig_f1("Norway and the United States.", &ex, &oracle).unwrap(), 100.0);
        assert_eq!(disambig_f1("", &ex, &oracle).unwrap(), 0.0);
        assert_eq!(disambig_f1("Only Norway here.", &ex, &oracle).unwrap(), 50.0);
    }

    #[test]
    fn coverage_cutoffs() {
        let mut ranked: Vec<Passage> = (0..20)
            .map(|i| Passage::new(format!("p{i}"), "", format!("filler {i}"), PassageSource::Fixture))
            .collect();
        ranked[14].text = "Yogi Berra won ten rings".into();
        let ex = example(&[("q?", &["Yogi Berra"])]);
        let r = answer_coverage(&ranked, &ex, &[10, 30]);
        assert_eq!(r.ac_at[&10], 0.0);
        assert_eq!(r.ac_at[&30], 100.0);

        ranked[0].text = "Yogi Berra".into();
        assert_eq!(answer_coverage(&ranked, &ex, &[10]).ac_at[&10], 100.0);

        let two = example(&[("q?", &["Yogi Berra"]), ("r?", &["nowhere"])]);
        assert_eq!(answer_coverage(&ranked, &two, &[10]).ac_at[&10], 50.0);
    }
}
