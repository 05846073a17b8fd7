use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::TimedRecord;
use super::HarnessError;
use crate::answer::LongFormAnswer;
use crate::config::PipelineConfig;
use crate::corpus::Passage;
use crate::llm::Exchange;
use crate::tree::{ClarificationTree, NodeId, NodeStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Error { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub cap: u32,
    pub spent: u32,
}

/// Everything produced for one question. Wall-clock timing is kept in the batch
/// manifest so that replaying fixtures reproduces this record byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    pub aq: String,
    pub status: RunStatus,
    pub config: PipelineConfig,
    /// True when the web search service failed and only local passages were used.
    #[serde(default)]
    pub web_search_degraded: bool,
    /// The retrieval pool ranked against the question.
    pub retrieval: Vec<Passage>,
    pub tree: Option<ClarificationTree>,
    pub answer: Option<LongFormAnswer>,
    pub exchanges: Vec<Exchange>,
    pub ledger: BudgetLedger,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn answer_text(&self) -> &str {
        self.answer.as_ref().map_or("", |a| a.text.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub question_id: String,
    pub file: String,
    pub ok: bool,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub records: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn file_name_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Writes one file per record plus `manifest.json`.
pub fn write_records(dir: &Path, config: &PipelineConfig, records: &[TimedRecord]) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let file = file_name_for(&r.record.question_id);
        fs::write(dir.join(&file), r.record.to_json())?;
        entries.push(ManifestEntry {
            question_id: r.record.question_id.clone(),
            file,
            ok: r.record.is_ok(),
            elapsed_ms: r.elapsed.as_millis() as u64,
        });
    }
    let manifest = Manifest {
        config: config.clone(),
        records: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_record(path: &Path) -> Result<RunRecord, HarnessError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Loads every record in a run directory, via the manifest when present.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let manifest = dir.join(MANIFEST_FILE);
    let files: Vec<PathBuf> = if manifest.exists() {
        let m: Manifest = serde_json::from_slice(&fs::read(&manifest)?)?;
        m.records.into_iter().map(|e| dir.join(e.file)).collect()
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    };
    files.iter().map(|f| read_record(f)).collect()
}

fn marker(status: NodeStatus) -> &'static str {
    match status {
        NodeStatus::Root => "?",
        NodeStatus::Valid => "+",
        NodeStatus::PrunedDuplicate => "=",
        NodeStatus::PrunedVerification => "x",
        NodeStatus::Restored => "~",
    }
}

/// Indented text view of a tree: `[+]` valid, `[x]` pruned by verification,
/// `[=]` duplicate, `[~]` restored.
pub fn render_tree(tree: &ClarificationTree) -> String {
    fn walk(tree: &ClarificationTree, id: NodeId, out: &mut String) {
        let n = tree.node(id).expect("node in tree");
        let indent = "  ".repeat(n.depth);
        let _ = write!(out, "{indent}[{}] {} {}", marker(n.status), n.id, n.question);
        if !n.answers.is_empty() {
            let _ = write!(out, " => {}", n.answers.join("; "));
        }
        out.push('\n');
        for c in tree.children(id) {
            walk(tree, c.id, out);
        }
    }
    let mut out = String::new();
    walk(tree, NodeId::ROOT, &mut out);
    let c = &tree.counters;
    let _ = writeln!(
        out,
        "valid={} calls={} expansions={} termination={}",
        c.valid_count,
        c.llm_calls,
        c.expansions,
        tree.termination
            .map(|t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
            .unwrap_or_else(|| "-".into())
    );
    out
}
