use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::record::RunRecord;
use super::HarnessError;
use crate::metrics::{self, AnswerExtractor, EvalExample, RetrievalReport, DEFAULT_AC_KS};
use crate::tree::NodeStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScores {
    pub question_id: String,
    pub ok: bool,
    pub d_f1: f64,
    pub rouge_l: f64,
    pub dr: f64,
    pub answer_f1: Option<f64>,
    pub ac_at: BTreeMap<usize, f64>,
}

/// Aggregate long-form scores, all on a 0–100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub d_f1: f64,
    pub rouge_l: f64,
    pub dr: f64,
    pub answer_f1: Option<f64>,
    pub per_question: Vec<QuestionScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub retrieval: RetrievalReport,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Answer-F1 of the record's valid nodes, each matched to the gold DQ with the most
/// similar question text.
fn record_answer_f1(record: &RunRecord, gold: &EvalExample) -> Option<f64> {
    let tree = record.tree.as_ref()?;
    let scores = tree.nodes.iter().filter(|n| n.status == NodeStatus::Valid).map(|n| {
        let best = gold
            .gold_disambiguations
            .iter()
            .map(|g| metrics::token_f1(&n.question, &[g.dq.as_str()]))
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc })
            .0;
        metrics::answer_f1(&n.answers, &gold.gold_disambiguations[best].answers)
    });
    mean(scores)
}

/// Scores every record against its gold example. Records are processed in question-id
/// order so the result does not depend on how the batch was scheduled.
pub fn evaluate(
    records: &[RunRecord],
    gold: &[EvalExample],
    extractor: &dyn AnswerExtractor,
) -> Result<Evaluation, HarnessError> {
    let by_id: HashMap<&str, &EvalExample> = gold.iter().map(|g| (g.id.as_str(), g)).collect();
    let mut missing: Vec<String> = records
        .iter()
        .filter(|r| !by_id.contains_key(r.question_id.as_str()))
        .map(|r| r.question_id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(HarnessError::MissingGold(missing));
    }

    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let mut rows = Vec::with_capacity(sorted.len());
    let mut coverage = Vec::with_capacity(sorted.len());
    for r in sorted {
        let g = by_id[r.question_id.as_str()];
        let answer = r.answer_text();
        let d_f1 = metrics::disambig_f1(answer, g, extractor)?;
        let rouge_l = metrics::rouge_l(answer, &g.gold_long_answers) * 100.0;
        let ac = metrics::answer_coverage(&r.retrieval, g, &DEFAULT_AC_KS);
        rows.push(QuestionScores {
            question_id: r.question_id.clone(),
            ok: r.is_ok(),
            d_f1,
            rouge_l,
            dr: metrics::dr(d_f1, rouge_l),
            answer_f1: record_answer_f1(r, g),
            ac_at: ac.ac_at.clone(),
        });
        coverage.push(ac);
    }

    let d_f1 = mean(rows.iter().map(|r| r.d_f1)).unwrap_or(0.0);
    let rouge_l = mean(rows.iter().map(|r| r.rouge_l)).unwrap_or(0.0);
    let report = EvalReport {
        questions: rows.len(),
        d_f1,
        rouge_l,
        dr: metrics::dr(d_f1, rouge_l),
        answer_f1: mean(rows.iter().filter_map(|r| r.answer_f1)),
        per_question: rows,
    };
    Ok(Evaluation {
        report,
        retrieval: RetrievalReport::mean(&coverage),
    })
}
