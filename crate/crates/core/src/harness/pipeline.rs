use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::record::{BudgetLedger, RunRecord, RunStatus};
use crate::answer::generate_answer;
use crate::config::PipelineConfig;
use crate::corpus::{combine_pools, CorpusIndex, CorpusError, Passage, WebSearch};
use crate::llm::{CompletionBackend, LlmSession};
use crate::rank::{self, Exemplar, PassageScorer};
use crate::tree::{build_tree, Services};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub aq: String,
}

impl Question {
    pub fn new(id: impl Into<String>, aq: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            aq: aq.into(),
        }
    }
}

/// Shared, read-only services for a batch.
pub struct Engine<'a> {
    pub index: Option<&'a CorpusIndex>,
    pub web: Option<&'a dyn WebSearch>,
    pub backend: &'a dyn CompletionBackend,
    pub scorer: &'a dyn PassageScorer,
    pub exemplars: &'a [Exemplar],
    pub config: PipelineConfig,
}

#[derive(Debug, Clone)]
pub struct TimedRecord {
    pub record: RunRecord,
    pub elapsed: Duration,
}

fn retrieve(engine: &Engine<'_>, aq: &str) -> Result<(Vec<Passage>, Vec<Passage>, bool), String> {
    let cfg = &engine.config;
    let local = match engine.index {
        Some(idx) => match idx.search(aq, cfg.local_top_k) {
            Ok(p) => p,
            Err(CorpusError::EmptyQuery) => return Err("question has no searchable terms".into()),
            Err(e) => return Err(e.to_string()),
        },
        None => Vec::new(),
    };
    let (web, degraded) = match engine.web {
        Some(w) => match w.search(aq, cfg.web_top_k) {
            Ok(p) => (p, false),
            Err(e) => {
                warn!(error = %e, "web search unavailable, continuing with local passages only");
                (Vec::new(), true)
            }
        },
        None => (Vec::new(), false),
    };
    Ok((local, web, degraded))
}

/// Retrieve → combine → build tree → answer, for a single question.
pub fn run_question(engine: &Engine<'_>, question: &Question) -> TimedRecord {
    let start = Instant::now();
    let cfg = &engine.config;
    let session = LlmSession::new(engine.backend, cfg.call_cap, cfg.generation());
    let services = Services {
        llm: &session,
        scorer: engine.scorer,
        exemplars: engine.exemplars,
    };
    let mut record = RunRecord {
        question_id: question.id.clone(),
        aq: question.aq.clone(),
        status: RunStatus::Ok,
        config: cfg.clone(),
        web_search_degraded: false,
        retrieval: Vec::new(),
        tree: None,
        answer: None,
        exchanges: Vec::new(),
        ledger: BudgetLedger {
            cap: cfg.call_cap,
            spent: 0,
        },
    };

    let outcome = (|| -> Result<(), String> {
        let (local, web, degraded) = retrieve(engine, &question.aq)?;
        record.web_search_degraded = degraded;
        let pool = combine_pools(&question.aq, local, web, cfg.pool_cap);
        if pool.is_empty() {
            return Err("retrieval returned no passages".into());
        }
        record.retrieval = rank::rerank(engine.scorer, &question.aq, &pool, pool.len()).map_err(|e| e.to_string())?;
        let mut tree = build_tree(&question.aq, &pool, cfg, &services).map_err(|e| e.to_string())?;
        let answer = generate_answer(&question.aq, &mut tree, &pool, cfg, &services);
        record.tree = Some(tree);
        record.answer = Some(answer.map_err(|e| e.to_string())?);
        Ok(())
    })();

    if let Err(message) = outcome {
        warn!(question = %question.id, error = %message, "question failed");
        record.status = RunStatus::Error { message };
    }
    record.exchanges = session.transcript();
    record.ledger.spent = session.budget().spent();
    let elapsed = start.elapsed();
    info!(question = %question.id, calls = record.ledger.spent, ok = record.is_ok(), "question done");
    TimedRecord { record, elapsed }
}

/// Runs every question, up to `parallel` at a time. Output order follows input order,
/// and a failing question only affects its own record.
pub fn run_pipeline(engine: &Engine<'_>, questions: &[Question], parallel: usize) -> Vec<TimedRecord> {
    if parallel <= 1 {
        return questions.iter().map(|q| run_question(engine, q)).collect();
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(parallel).build() {
        Ok(p) => p,
        Err(e) => {
            warn!(error = %e, "thread pool unavailable, running sequentially");
            return questions.iter().map(|q| run_question(engine, q)).collect();
        }
    };
    pool.install(|| questions.par_iter().map(|q| run_question(engine, q)).collect())
}
