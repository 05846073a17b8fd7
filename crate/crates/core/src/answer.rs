//! Long-form answer generation from a finished clarification tree.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::config::PipelineConfig;
use crate::corpus::{Passage, PassagePool};
use crate::llm::{CallKind, LlmError};
use crate::prompts::{self, Disambiguation, PromptError};
use crate::rank::{self, PassageScorer, RankError};
use crate::text;
use crate::tree::{Ambiguity, ClarificationTree, NodeId, NodeStatus, Services};

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("tree holds no interpretations")]
    NoInterpretations,
    #[error("no passages available for the answer prompt")]
    NoPassages,
    #[error("model returned an empty answer")]
    EmptyAnswer,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongFormAnswer {
    #[serde(rename = "answer")]
    pub text: String,
    pub ambiguity: Ambiguity,
    pub used_disambiguations: Vec<NodeId>,
    pub used_passages: Vec<String>,
    /// Nodes un-pruned to obtain at least one interpretation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restored: Vec<NodeId>,
    /// Set when no interpretation was available and the direct prompt was used.
    #[serde(default)]
    pub fallback: bool,
}

/// Valid nodes in BFS order, up to `max`. With no valid node, the shallowest pruned
/// node is restored first.
pub fn select_disambiguations(
    tree: &mut ClarificationTree,
    max: usize,
) -> Result<(Vec<Disambiguation>, Vec<NodeId>), AnswerError> {
    if !tree.has_interpretations() {
        return Err(AnswerError::NoInterpretations);
    }
    let restored = if tree.count(NodeStatus::Valid) == 0 {
        tree.restore_pruned(1)
    } else {
        Vec::new()
    };
    let selected = tree
        .iter_bfs()
        .filter(|n| matches!(n.status, NodeStatus::Valid | NodeStatus::Restored))
        .take(max)
        .map(|n| n.to_disambiguation())
        .collect();
    Ok((selected, restored))
}

/// Answer-containing passages first, each partition reranked against the question.
pub fn select_evidence(
    scorer: &dyn PassageScorer,
    pool: &PassagePool,
    selected: &[Disambiguation],
    aq: &str,
    max: usize,
) -> Result<Vec<Passage>, AnswerError> {
    let answers: Vec<String> = selected
        .iter()
        .flat_map(|d| d.answers.iter())
        .map(|a| text::normalize(a))
        .filter(|a| !a.is_empty())
        .collect();
    let (hits, rest): (Vec<Passage>, Vec<Passage>) = pool.passages.iter().cloned().partition(|p| {
        let body = text::normalize(&p.text);
        answers.iter().any(|a| body.contains(a.as_str()))
    });
    let mut out = rank::rerank_passages(scorer, aq, &hits, max)?;
    if out.len() < max {
        out.extend(rank::rerank_passages(scorer, aq, &rest, max - out.len())?);
    }
    Ok(out)
}

/// Renders the answer prompt (or the direct fallback) and spends exactly one call.
pub fn generate_answer(
    aq: &str,
    tree: &mut ClarificationTree,
    pool: &PassagePool,
    config: &PipelineConfig,
    services: &Services<'_>,
) -> Result<LongFormAnswer, AnswerError> {
    let ambiguity = tree.classify_ambiguity();
    let shots = services.exemplars_for(aq, config.k_shots)?;

    let (selected, restored) = match select_disambiguations(tree, config.answer_max_disambiguations) {
        Ok(s) => s,
        Err(AnswerError::NoInterpretations) => (Vec::new(), Vec::new()),
        Err(e) => return Err(e),
    };

    let (prompt, passages, fallback) = if selected.is_empty() {
        info!("no interpretations available, using the direct answer prompt");
        let passages = rank::rerank(services.scorer, aq, pool, config.answer_max_passages)?;
        if passages.is_empty() {
            return Err(AnswerError::NoPassages);
        }
        (prompts::render_direct_answer_prompt(&shots, &passages, aq)?, passages, true)
    } else {
        let passages = select_evidence(services.scorer, pool, &selected, aq, config.answer_max_passages)?;
        if passages.is_empty() {
            return Err(AnswerError::NoPassages);
        }
        (
            prompts::render_answer_prompt(&shots, &passages, aq, &selected)?,
            passages,
            false,
        )
    };

    let reply = services.llm.complete(CallKind::Answer, prompt, 0)?;
    let text = prompts::parse_long_answer(&reply);
    if text.is_empty() {
        return Err(AnswerError::EmptyAnswer);
    }
    Ok(LongFormAnswer {
        text,
        ambiguity,
        used_disambiguations: selected.iter().filter_map(|d| d.source_node).collect(),
        used_passages: passages.into_iter().map(|p| p.id).collect(),
        restored,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageSource;
    use crate::rank::HashedCosineScorer;

    fn tree(valid: usize, pruned: usize) -> ClarificationTree {
        let mut json = serde_json::json!({
            "aq": "aq?", "nodes": [{"id":0,"parent":null,"depth":0,"question":"aq?","answers":[],"status":"root","evidence":null}],
            "bfs_order": [0], "counters": {"valid_count": valid, "consecutive_failures": 0, "llm_calls": 0, "expansions": 1},
            "termination": null
        });
        for i in 0..valid + pruned {
            let status = if i < valid { "valid" } else { "pruned_verification" };
            json["nodes"].as_array_mut().unwrap().push(serde_json::json!({
                "id": i + 1, "parent": 0, "depth": 1, "question": format!("dq {i}?"),
                "answers": [format!("ans{i}")], "status": status, "evidence": null
            }));
            json["bfs_order"].as_array_mut().unwrap().push((i + 1).into());
        }
        serde_json::from_value(json).unwrap()
    }

    #[test]
    fn first_ten_of_twelve() {
        let mut t = tree(12, 0);
        let (sel, restored) = select_disambiguations(&mut t, 10).unwrap();
        assert!(restored.is_empty());
        assert_eq!(sel.len(), 10);
        let ids: Vec<u32> = sel.iter().map(|d| d.source_node.unwrap().0).collect();
        assert_eq!(ids, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn all_three() {
        let mut t = tree(3, 0);
        assert_eq!(select_disambiguations(&mut t, 10).unwrap().0.len(), 3);
    }

    #[test]
    fn restores_when_nothing_valid() {
        let mut t = tree(0, 1);
        let (sel, restored) = select_disambiguations(&mut t, 10).unwrap();
        assert_eq!(restored, vec![NodeId(1)]);
        assert_eq!(sel.len(), 1);
        assert_eq!(t.nodes[1].status, NodeStatus::Restored);
    }

    #[test]
    fn root_only_has_no_interpretations() {
        let mut t = ClarificationTree::new("q");
        assert!(matches!(select_disambiguations(&mut t, 10), Err(AnswerError::NoInterpretations)));
    }

    #[test]
    fn evidence_prioritizes_answer_passages() {
        let mut passages: Vec<Passage> = (0..50)
            .map(|i| Passage::new(format!("p{i:02}"), "", format!("filler text number {i} about aq"), PassageSource::Fixture))
            .collect();
        passages[30].text = "Norway leads the winter table".into();
        passages[41].text = "the United States leads overall".into();
        let pool = PassagePool::new("aq", passages);
        let sel = vec![Disambiguation::new("w?", ["Norway"]), Disambiguation::new("s?", ["United States"])];
        let out = select_evidence(&HashedCosineScorer, &pool, &sel, "aq", 5).unwrap();
        assert_eq!(out.len(), 5);
        let top: Vec<&str> = out[..2].iter().map(|p| p.id.as_str()).collect();
        assert!(top.contains(&"p30") && top.contains(&"p41"));
    }
}
