//! Breadth-first construction of the clarification tree.
//!
//! The root holds the ambiguous question. Each expansion reranks the pool against the
//! node's question, prompts for disambiguations and commits the candidates in parse
//! order: duplicate check first, then self-verification against the root question.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::config::PipelineConfig;
use crate::corpus::{Passage, PassagePool};
use crate::llm::{CallKind, LlmError, LlmSession};
use crate::prompts::{self, Disambiguation, PromptError};
use crate::rank::{self, Exemplar, PassageScorer, RankError};
use crate::text;

/// Calls kept back during exploration so answer generation can always run.
pub const ANSWER_CALL_RESERVE: u32 = 1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("ambiguous question is empty")]
    EmptyQuestion,
    #[error("passage pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl TreeError {
    fn is_budget(&self) -> bool {
        matches!(self, TreeError::Llm(LlmError::BudgetExceeded { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Root,
    Valid,
    PrunedDuplicate,
    PrunedVerification,
    Restored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub question: String,
    pub answers: Vec<String>,
    pub status: NodeStatus,
    /// Id of the passage shown to the verifier.
    pub evidence: Option<String>,
}

impl TreeNode {
    pub fn to_disambiguation(&self) -> Disambiguation {
        Disambiguation {
            dq: self.question.clone(),
            answers: self.answers.clone(),
            source_node: Some(self.id),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub valid_count: usize,
    pub consecutive_failures: usize,
    pub llm_calls: u32,
    pub expansions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxValidNodes,
    FailureLimit,
    DepthLimit,
    FrontierExhausted,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ambiguity {
    Ambiguous,
    Unambiguous,
}

/// Candidate counts at each pruning stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningStats {
    pub candidates: usize,
    pub after_dedup: usize,
    pub after_verification: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationTree {
    pub aq: String,
    pub nodes: Vec<TreeNode>,
    pub bfs_order: Vec<NodeId>,
    pub counters: Counters,
    pub termination: Option<Termination>,
}

impl ClarificationTree {
    pub fn new(aq: impl Into<String>) -> Self {
        let aq = aq.into();
        Self {
            nodes: vec![TreeNode {
                id: NodeId::ROOT,
                parent: None,
                depth: 0,
                question: aq.clone(),
                answers: Vec::new(),
                status: NodeStatus::Root,
                evidence: None,
            }],
            aq,
            bfs_order: vec![NodeId::ROOT],
            counters: Counters::default(),
            termination: None,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.index())
    }

    /// Nodes in BFS order.
    pub fn iter_bfs(&self) -> impl Iterator<Item = &TreeNode> {
        self.bfs_order.iter().map(|id| &self.nodes[id.index()])
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = &TreeNode> {
        self.iter_bfs().filter(move |n| n.parent == Some(id))
    }

    pub fn count(&self, status: NodeStatus) -> usize {
        self.nodes.iter().filter(|n| n.status == status).count()
    }

    pub fn has_interpretations(&self) -> bool {
        self.nodes.len() > 1
    }

    fn insert(&mut self, parent: NodeId, cand: &Disambiguation, status: NodeStatus, evidence: Option<String>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let depth = self.nodes[parent.index()].depth + 1;
        self.nodes.push(TreeNode {
            id,
            parent: Some(parent),
            depth,
            question: cand.dq.clone(),
            answers: cand.answers.clone(),
            status,
            evidence,
        });
        self.bfs_order.push(id);
        if status == NodeStatus::Valid {
            self.counters.valid_count += 1;
        }
        id
    }

    pub fn pruning_stats(&self) -> PruningStats {
        let non_root = self.nodes.iter().filter(|n| n.status != NodeStatus::Root);
        let mut s = PruningStats::default();
        for n in non_root {
            s.candidates += 1;
            if n.status != NodeStatus::PrunedDuplicate {
                s.after_dedup += 1;
            }
            if n.status == NodeStatus::Valid {
                s.after_verification += 1;
            }
        }
        s
    }

    /// Flips pruned-by-verification nodes to `Restored`, shallowest then earliest first,
    /// until valid + restored reaches `needed`. Duplicates are never restored.
    pub fn restore_pruned(&mut self, needed: usize) -> Vec<NodeId> {
        let mut have = self.count(NodeStatus::Valid) + self.count(NodeStatus::Restored);
        let mut order: Vec<NodeId> = self
            .bfs_order
            .iter()
            .copied()
            .filter(|id| self.nodes[id.index()].status == NodeStatus::PrunedVerification)
            .collect();
        order.sort_by_key(|id| (self.nodes[id.index()].depth, *id));
        let mut restored = Vec::new();
        for id in order {
            if have >= needed {
                break;
            }
            self.nodes[id.index()].status = NodeStatus::Restored;
            restored.push(id);
            have += 1;
        }
        restored
    }

    /// Unambiguous iff exploration kept no valid node. Restoration does not count.
    pub fn classify_ambiguity(&self) -> Ambiguity {
        if self.counters.valid_count == 0 {
            Ambiguity::Unambiguous
        } else {
            Ambiguity::Ambiguous
        }
    }

    /// True if `candidate` repeats the question of any node, including the root.
    pub fn is_duplicate(&self, candidate: &Disambiguation) -> bool {
        let norm = text::normalize(&candidate.dq);
        self.nodes.iter().any(|n| text::normalize(&n.question) == norm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }
}

pub fn restore_pruned(tree: &mut ClarificationTree, needed: usize) -> Vec<NodeId> {
    tree.restore_pruned(needed)
}

pub fn classify_ambiguity(tree: &ClarificationTree) -> Ambiguity {
    tree.classify_ambiguity()
}

pub fn is_duplicate(candidate: &Disambiguation, tree: &ClarificationTree) -> bool {
    tree.is_duplicate(candidate)
}

/// The model and retrieval services a question is processed with.
#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub llm: &'a LlmSession<'a>,
    pub scorer: &'a dyn PassageScorer,
    pub exemplars: &'a [Exemplar],
}

impl<'a> Services<'a> {
    pub fn exemplars_for(&self, question: &str, k: usize) -> Result<Vec<&'a Exemplar>, RankError> {
        if self.exemplars.is_empty() {
            return Ok(Vec::new());
        }
        rank::select_exemplars(question, self.exemplars, k)
    }
}

/// One clarification call for `question`. Unparseable output yields an empty list.
pub fn expand_node(
    question: &str,
    pool: &PassagePool,
    config: &PipelineConfig,
    services: &Services<'_>,
) -> Result<Vec<Disambiguation>, TreeError> {
    let passages = rank::rerank(services.scorer, question, pool, config.top_k_passages)?;
    let shots = services.exemplars_for(question, config.k_shots)?;
    let prompt = prompts::render_clarification_prompt(&shots, &passages, question)?;
    let reply = services.llm.complete(CallKind::Clarify, prompt, ANSWER_CALL_RESERVE)?;
    match prompts::parse_disambiguations(&reply) {
        Ok(c) => Ok(c),
        Err(PromptError::NoDisambiguations) => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub verdict: bool,
    pub evidence: Option<Passage>,
    pub model_called: bool,
}

/// Self-verification of a candidate's first answer against the root question.
pub fn verify_candidate(
    candidate: &Disambiguation,
    aq: &str,
    pool: &PassagePool,
    services: &Services<'_>,
) -> Result<Verification, TreeError> {
    let Some(answer) = candidate.answers.first() else {
        return Ok(Verification {
            verdict: false,
            evidence: None,
            model_called: false,
        });
    };
    let containing: Vec<Passage> = pool
        .passages
        .iter()
        .filter(|p| text::contains_normalized(&p.text, answer))
        .cloned()
        .collect();
    let evidence = rank::rerank_passages(services.scorer, aq, &containing, 1)?.into_iter().next();
    let Some(evidence) = evidence else {
        debug!(answer = %answer, "no passage contains the answer; pruning without a call");
        return Ok(Verification {
            verdict: false,
            evidence: None,
            model_called: false,
        });
    };
    let prompt = prompts::render_verification_prompt(aq, answer, &evidence)?;
    let reply = services.llm.complete(CallKind::Verify, prompt, ANSWER_CALL_RESERVE)?;
    let verdict = prompts::parse_verdict(&reply).unwrap_or_else(|_| {
        warn!(reply = %reply, "unparseable verdict treated as False");
        false
    });
    Ok(Verification {
        verdict,
        evidence: Some(evidence),
        model_called: true,
    })
}

/// Builds the tree breadth-first until a termination condition holds.
///
/// A node whose expansion yields no parseable candidates goes back to the end of the
/// frontier; it is attempted at most `failure_limit` times.
pub fn build_tree(
    aq: &str,
    pool: &PassagePool,
    config: &PipelineConfig,
    services: &Services<'_>,
) -> Result<ClarificationTree, TreeError> {
    if aq.trim().is_empty() {
        return Err(TreeError::EmptyQuestion);
    }
    if pool.is_empty() {
        return Err(TreeError::EmptyPool);
    }
    let spent_before = services.llm.budget().spent();
    let mut tree = ClarificationTree::new(aq);
    let mut frontier: VecDeque<(NodeId, usize)> = VecDeque::from([(NodeId::ROOT, 0)]);
    let mut depth_blocked = false;

    let result = (|| -> Result<Termination, TreeError> {
        loop {
            if tree.counters.valid_count >= config.max_valid_nodes {
                return Ok(Termination::MaxValidNodes);
            }
            if tree.counters.consecutive_failures >= config.failure_limit {
                return Ok(Termination::FailureLimit);
            }
            let Some((id, attempts)) = frontier.pop_front() else {
                return Ok(if depth_blocked {
                    Termination::DepthLimit
                } else {
                    Termination::FrontierExhausted
                });
            };
            let question = tree.nodes[id.index()].question.clone();
            let candidates = match expand_node(&question, pool, config, services) {
                Ok(c) => c,
                Err(e) if e.is_budget() => return Ok(Termination::BudgetExhausted),
                Err(e) => return Err(e),
            };
            tree.counters.expansions += 1;
            debug!(node = %id, candidates = candidates.len(), "expanded");

            let mut valid_children = 0;
            for cand in &candidates {
                if tree.counters.valid_count >= config.max_valid_nodes {
                    break;
                }
                if config.dedup && tree.is_duplicate(cand) {
                    tree.insert(id, cand, NodeStatus::PrunedDuplicate, None);
                    continue;
                }
                let (status, evidence) = if config.verify {
                    let v = match verify_candidate(cand, aq, pool, services) {
                        Ok(v) => v,
                        Err(e) if e.is_budget() => return Ok(Termination::BudgetExhausted),
                        Err(e) => return Err(e),
                    };
                    let status = if v.verdict {
                        NodeStatus::Valid
                    } else {
                        NodeStatus::PrunedVerification
                    };
                    (status, v.evidence.map(|p| p.id))
                } else {
                    (NodeStatus::Valid, None)
                };
                let child = tree.insert(id, cand, status, evidence);
                if status == NodeStatus::Valid {
                    valid_children += 1;
                    if tree.nodes[child.index()].depth < config.max_depth {
                        frontier.push_back((child, 0));
                    } else {
                        depth_blocked = true;
                    }
                }
            }

            if valid_children == 0 {
                tree.counters.consecutive_failures += 1;
                if candidates.is_empty() && attempts + 1 < config.failure_limit {
                    frontier.push_back((id, attempts + 1));
                }
            } else {
                tree.counters.consecutive_failures = 0;
            }
        }
    })();

    tree.counters.llm_calls = services.llm.budget().spent() - spent_before;
    tree.termination = Some(result?);
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(q: &str) -> Disambiguation {
        Disambiguation::new(q, ["x"])
    }

    fn tree_with(statuses: &[(usize, NodeStatus)]) -> ClarificationTree {
        let mut t = ClarificationTree::new("root question?");
        for (i, (parent, status)) in statuses.iter().enumerate() {
            t.insert(NodeId(*parent as u32), &cand(&format!("q{i}?")), *status, None);
        }
        t
    }

    #[test]
    fn duplicate_detection_normalizes() {
        let t = tree_with(&[(0, NodeStatus::Valid)]);
        assert!(t.is_duplicate(&cand("Root question")));
        assert!(t.is_duplicate(&cand("  Q0 ")));
        assert!(!t.is_duplicate(&cand("fresh?")));
    }

    #[test]
    fn restore_earliest_shallowest() {
        let mut t = tree_with(&[(0, NodeStatus::PrunedVerification), (0, NodeStatus::PrunedVerification)]);
        assert_eq!(t.restore_pruned(1), vec![NodeId(1)]);
        assert_eq!(t.nodes[1].status, NodeStatus::Restored);
        assert_eq!(t.nodes[2].status, NodeStatus::PrunedVerification);
        let snapshot = t.clone();
        assert!(t.restore_pruned(1).is_empty());
        assert_eq!(t, snapshot);
    }

    #[test]
    fn restore_skips_duplicates() {
        let mut t = tree_with(&[(0, NodeStatus::PrunedDuplicate), (0, NodeStatus::PrunedDuplicate)]);
        assert!(t.restore_pruned(1).is_empty());
        assert_eq!(t.count(NodeStatus::PrunedDuplicate), 2);
    }

    #[test]
    fn restore_prefers_shallow_over_early() {
        // node 2 sits deeper than node 3 even though it was created first
        let mut t = tree_with(&[
            (0, NodeStatus::Valid),
            (1, NodeStatus::PrunedVerification),
            (0, NodeStatus::PrunedVerification),
        ]);
        assert_eq!(t.restore_pruned(2), vec![NodeId(3)]);
    }

    #[test]
    fn ambiguity_classification() {
        assert_eq!(ClarificationTree::new("q").classify_ambiguity(), Ambiguity::Unambiguous);
        let t = tree_with(&[(0, NodeStatus::Valid), (0, NodeStatus::Valid), (0, NodeStatus::Valid)]);
        assert_eq!(t.classify_ambiguity(), Ambiguity::Ambiguous);
        let mut t = tree_with(&[(0, NodeStatus::PrunedVerification), (0, NodeStatus::PrunedVerification)]);
        assert_eq!(t.classify_ambiguity(), Ambiguity::Unambiguous);
        t.restore_pruned(1);
        assert_eq!(t.classify_ambiguity(), Ambiguity::Unambiguous);
    }

    #[test]
    fn serialization_round_trips() {
        let t = tree_with(&[(0, NodeStatus::Valid), (1, NodeStatus::PrunedDuplicate)]);
        let back: ClarificationTree = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        for key in ["aq", "nodes", "bfs_order", "counters"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["nodes"][2]["status"], "pruned_duplicate");
    }
}
