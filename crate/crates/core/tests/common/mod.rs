#![allow(dead_code)]

pub mod suites;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clarify_core::config::PipelineConfig;
use clarify_core::corpus::{read_jsonl, CorpusIndex, Passage, PassagePool, PassageSource};
use clarify_core::harness::{run_question, Engine, Question, RunRecord};
use clarify_core::llm::{CompletionBackend, ScriptRule, ScriptedBackend};
use clarify_core::metrics::EvalExample;
use clarify_core::rank::{load_exemplars, Exemplar, HashedCosineScorer};

pub const MEDALS_AQ: &str = "what country has the most medals in olympic history?";
pub const MEDALS_ID: &str = "medals";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn medals_dir() -> PathBuf {
    fixture_dir().join("medals")
}

pub fn medals_index() -> CorpusIndex {
    let f = File::open(medals_dir().join("corpus.jsonl")).unwrap();
    CorpusIndex::ingest(read_jsonl(BufReader::new(f)), 120).unwrap()
}

pub fn medals_backend() -> ScriptedBackend {
    ScriptedBackend::load(&medals_dir().join("script.json")).unwrap()
}

pub fn medals_exemplars() -> Vec<Exemplar> {
    load_exemplars(&medals_dir().join("exemplars.json")).unwrap()
}

pub fn medals_gold() -> Vec<EvalExample> {
    clarify_core::harness::load_dataset(&medals_dir().join("gold.json"), None)
        .unwrap()
        .eval_examples()
}

pub fn engine<'a>(
    index: &'a CorpusIndex,
    backend: &'a dyn CompletionBackend,
    exemplars: &'a [Exemplar],
    config: PipelineConfig,
) -> Engine<'a> {
    Engine {
        index: Some(index),
        web: None,
        backend,
        scorer: &HashedCosineScorer,
        exemplars,
        config,
    }
}

/// One full scripted run of the medals question.
pub fn run_medals(config: PipelineConfig) -> RunRecord {
    let index = medals_index();
    let backend = medals_backend();
    let exemplars = medals_exemplars();
    let e = engine(&index, &backend, &exemplars, config);
    run_question(&e, &Question::new(MEDALS_ID, MEDALS_AQ)).record
}

pub fn passage(id: &str, title: &str, text: &str) -> Passage {
    Passage::new(id, title, text, PassageSource::Fixture)
}

pub fn pool(aq: &str, items: &[(&str, &str)]) -> PassagePool {
    let passages = items
        .iter()
        .enumerate()
        .map(|(i, (t, x))| passage(&format!("f{i:03}"), t, x))
        .collect();
    PassagePool::new(aq, passages)
}

/// Clarification output in the `DQ i:` / `DA i:` line format.
pub fn dq_block(pairs: &[(&str, &[&str])]) -> String {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (q, a))| format!("DQ {n}: {q}\nDA {n}: {}\n", a.join("; "), n = i + 1))
        .collect()
}

/// A backend whose clarification rule for `question` returns `reply`.
pub fn clarify_rule(question: &str, reply: impl Into<String>) -> ScriptRule {
    ScriptRule::ends_with(format!("Question: {question}"), reply)
}

pub fn verdict_rule(answer: &str, verdict: bool) -> ScriptRule {
    ScriptRule::ends_with(
        format!("Proposed Answer: {answer}"),
        if verdict { "True" } else { "False" },
    )
}
