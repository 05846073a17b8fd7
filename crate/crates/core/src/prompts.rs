//! Prompt rendering for clarification, self-verification and answer generation,
//! and parsing of the model's replies.
//!
//! Template texts live in `templates/` and are compiled in, so tests pin the exact bytes.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::Passage;
use crate::rank::Exemplar;
use crate::tree::NodeId;

pub const CLARIFY_INSTRUCTION: &str = include_str!("../templates/clarify_instruction.txt");
pub const FORMAT_BLOCK: &str = include_str!("../templates/format.txt");
pub const VERIFY_INSTRUCTION: &str = include_str!("../templates/verify_instruction.txt");
pub const DIRECT_INSTRUCTION: &str = include_str!("../templates/direct_instruction.txt");

pub const MAX_PROMPT_PASSAGES: usize = 5;
pub const MAX_PROMPT_EXEMPLARS: usize = 5;
pub const MAX_PROMPT_DISAMBIGUATIONS: usize = 10;

const SECTION_RULE: &str = "\n\n---\n\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt needs at least one context passage")]
    MissingContext,
    #[error("too many {what}: {got} > {max}")]
    TooMany { what: &'static str, got: usize, max: usize },
    #[error("answer prompt needs at least one disambiguation")]
    MissingDisambiguations,
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("model output contains no DQ/DA pairs")]
    NoDisambiguations,
    #[error("model output contains neither True nor False")]
    UnparseableVerdict,
}

/// A disambiguated question with its short answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disambiguation {
    pub dq: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_node: Option<NodeId>,
}

impl Disambiguation {
    pub fn new<S: Into<String>>(dq: impl Into<String>, answers: impl IntoIterator<Item = S>) -> Self {
        Self {
            dq: dq.into(),
            answers: answers.into_iter().map(Into::into).collect(),
            source_node: None,
        }
    }
}

/// The sections of a few-shot prompt in rendering order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub instruction: String,
    pub format_block: String,
    pub exemplar_blocks: Vec<String>,
    pub context_block: String,
    pub question_block: String,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction);
        if !self.format_block.is_empty() {
            out.push_str("\n\n");
            out.push_str(&self.format_block);
        }
        for block in &self.exemplar_blocks {
            out.push_str(SECTION_RULE);
            out.push_str(block);
        }
        out.push_str(SECTION_RULE);
        out.push_str(&self.context_block);
        out.push_str("\n\n");
        out.push_str(&self.question_block);
        out
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_pairs<'a>(pairs: impl Iterator<Item = (&'a str, &'a [String])>) -> String {
    let mut out = String::from("Disambiguations:");
    for (i, (dq, answers)) in pairs.enumerate() {
        let answers: Vec<String> = answers.iter().map(|a| one_line(a)).collect();
        out.push_str(&format!("\nDQ {n}: {}\nDA {n}: {}", one_line(dq), answers.join("; "), n = i + 1));
    }
    out
}

fn exemplar_block(ex: &Exemplar, with_disambiguations: bool) -> String {
    let mut out = format!("Question: {}", one_line(&ex.question));
    if with_disambiguations {
        out.push_str("\n\n");
        out.push_str(&render_pairs(
            ex.disambiguations.iter().map(|d| (d.dq.as_str(), d.answers.as_slice())),
        ));
    }
    out.push_str("\n\nAnswer: ");
    out.push_str(&one_line(&ex.long_answer));
    out
}

fn context_block(passages: &[Passage]) -> String {
    let mut out = String::from("Context:");
    for (i, p) in passages.iter().enumerate() {
        out.push_str(&format!("\n[{}] {} | {}", i + 1, one_line(&p.title), one_line(&p.text)));
    }
    out
}

fn check_counts(exemplars: &[&Exemplar], passages: &[Passage]) -> Result<(), PromptError> {
    if passages.is_empty() {
        return Err(PromptError::MissingContext);
    }
    if passages.len() > MAX_PROMPT_PASSAGES {
        return Err(PromptError::TooMany {
            what: "passages",
            got: passages.len(),
            max: MAX_PROMPT_PASSAGES,
        });
    }
    if exemplars.len() > MAX_PROMPT_EXEMPLARS {
        return Err(PromptError::TooMany {
            what: "exemplars",
            got: exemplars.len(),
            max: MAX_PROMPT_EXEMPLARS,
        });
    }
    Ok(())
}

pub fn clarification_bundle(
    exemplars: &[&Exemplar],
    passages: &[Passage],
    question: &str,
) -> Result<PromptBundle, PromptError> {
    check_counts(exemplars, passages)?;
    if question.trim().is_empty() {
        return Err(PromptError::EmptyInput("question"));
    }
    Ok(PromptBundle {
        instruction: CLARIFY_INSTRUCTION.to_string(),
        format_block: FORMAT_BLOCK.to_string(),
        exemplar_blocks: exemplars.iter().map(|e| exemplar_block(e, true)).collect(),
        context_block: context_block(passages),
        question_block: format!("Question: {}\n", one_line(question)),
    })
}

/// Few-shot clarification prompt. The last line is `Question: <question>`; the model
/// continues with the disambiguations.
pub fn render_clarification_prompt(
    exemplars: &[&Exemplar],
    passages: &[Passage],
    question: &str,
) -> Result<String, PromptError> {
    Ok(clarification_bundle(exemplars, passages, question)?.render())
}

/// Answer-generation prompt: the clarification layout with the disambiguations filled in,
/// ending at `Answer:`.
pub fn render_answer_prompt(
    exemplars: &[&Exemplar],
    passages: &[Passage],
    aq: &str,
    disambiguations: &[Disambiguation],
) -> Result<String, PromptError> {
    if disambiguations.is_empty() {
        return Err(PromptError::MissingDisambiguations);
    }
    if disambiguations.len() > MAX_PROMPT_DISAMBIGUATIONS {
        return Err(PromptError::TooMany {
            what: "disambiguations",
            got: disambiguations.len(),
            max: MAX_PROMPT_DISAMBIGUATIONS,
        });
    }
    let mut bundle = clarification_bundle(exemplars, passages, aq)?;
    bundle.question_block = format!(
        "Question: {}\n\n{}\n\nAnswer:",
        one_line(aq),
        render_pairs(disambiguations.iter().map(|d| (d.dq.as_str(), d.answers.as_slice())))
    );
    Ok(bundle.render())
}

/// Clarification-free prompt used when the tree produced no interpretations.
pub fn render_direct_answer_prompt(
    exemplars: &[&Exemplar],
    passages: &[Passage],
    aq: &str,
) -> Result<String, PromptError> {
    check_counts(exemplars, passages)?;
    if aq.trim().is_empty() {
        return Err(PromptError::EmptyInput("question"));
    }
    Ok(PromptBundle {
        instruction: DIRECT_INSTRUCTION.to_string(),
        format_block: String::new(),
        exemplar_blocks: exemplars.iter().map(|e| exemplar_block(e, false)).collect(),
        context_block: context_block(passages),
        question_block: format!("Question: {}\n\nAnswer:", one_line(aq)),
    }
    .render())
}

/// Zero-shot verification prompt over a single passage.
pub fn render_verification_prompt(aq: &str, proposed_answer: &str, passage: &Passage) -> Result<String, PromptError> {
    if aq.trim().is_empty() {
        return Err(PromptError::EmptyInput("question"));
    }
    if proposed_answer.trim().is_empty() {
        return Err(PromptError::EmptyInput("proposed answer"));
    }
    if passage.text.trim().is_empty() {
        return Err(PromptError::EmptyInput("passage"));
    }
    Ok(format!(
        "{VERIFY_INSTRUCTION}\n\nContext:\n{} | {}\n\nQuestion: {}\n\nProposed Answer: {}\n",
        one_line(&passage.title),
        one_line(&passage.text),
        one_line(aq),
        one_line(proposed_answer)
    ))
}

static DQ_LINE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*\**\s*DQ\s*(\d+)\s*\**\s*:\s*\**\s*(.*?)\s*$").unwrap());
static DA_LINE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*\**\s*DA\s*(\d+)\s*\**\s*:\s*\**\s*(.*?)\s*$").unwrap());
static STOP_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\s*(\**\s*(Answer|Question|Context)\s*\**\s*:|---)").unwrap());

/// Extracts the `DQ n:` / `DA n:` pairs from a model reply, in index order.
///
/// Parsing stops at the long-form `Answer:` block (or anything that starts a new
/// example). A DQ without its matching DA is dropped.
pub fn parse_disambiguations(model_text: &str) -> Result<Vec<Disambiguation>, PromptError> {
    let mut pairs: Vec<(u64, Disambiguation)> = Vec::new();
    let mut pending: Option<(u64, String)> = None;
    let mut seen_pair_syntax = false;

    for line in model_text.lines() {
        if STOP_LINE.is_match(line) {
            if seen_pair_syntax {
                break;
            }
            continue;
        }
        if let Some(c) = DQ_LINE.captures(line) {
            seen_pair_syntax = true;
            if let Some((n, dq)) = pending.take() {
                warn!(index = n, dq = %dq, "DQ without matching DA dropped");
            }
            let n: u64 = c[1].parse().unwrap_or(u64::MAX);
            pending = Some((n, c[2].to_string()));
        } else if let Some(c) = DA_LINE.captures(line) {
            seen_pair_syntax = true;
            let n: u64 = c[1].parse().unwrap_or(u64::MAX);
            match pending.take() {
                Some((m, dq)) if m == n => {
                    let answers: Vec<String> = c[2]
                        .split(';')
                        .map(|a| a.trim().to_string())
                        .filter(|a| !a.is_empty())
                        .collect();
                    if dq.trim().is_empty() || answers.is_empty() {
                        warn!(index = n, "disambiguation with empty question or answers dropped");
                        continue;
                    }
                    pairs.push((n, Disambiguation::new(dq, answers)));
                }
                Some((m, dq)) => {
                    warn!(dq_index = m, da_index = n, dq = %dq, "mismatched DQ/DA indices, pair dropped");
                }
                None => warn!(index = n, "DA without preceding DQ ignored"),
            }
        }
    }
    if let Some((n, dq)) = pending {
        warn!(index = n, dq = %dq, "DQ without matching DA dropped");
    }
    if pairs.is_empty() {
        return Err(PromptError::NoDisambiguations);
    }
    pairs.sort_by_key(|(n, _)| *n);
    Ok(pairs.into_iter().map(|(_, d)| d).collect())
}

/// First standalone `true`/`false` token, case-insensitive.
pub fn parse_verdict(model_text: &str) -> Result<bool, PromptError> {
    model_text
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|tok| {
            if tok.eq_ignore_ascii_case("true") {
                Some(true)
            } else if tok.eq_ignore_ascii_case("false") {
                Some(false)
            } else {
                None
            }
        })
        .ok_or(PromptError::UnparseableVerdict)
}

/// Long-form answer text from an answer-generation reply.
pub fn parse_long_answer(model_text: &str) -> String {
    let mut t = model_text.trim();
    // a reply that echoes the disambiguations keeps its answer after the first `Answer:` line
    if let Some(pos) = t.find("\nAnswer:") {
        if t[..pos].lines().any(|l| DQ_LINE.is_match(l)) {
            t = t[pos + 1..].trim();
        }
    }
    let t = t
        .strip_prefix("Answer:")
        .or_else(|| t.strip_prefix("**Answer**:"))
        .unwrap_or(t);
    // drop anything the model wrote after finishing the answer, e.g. a new example
    let t = t.split("\n---").next().unwrap_or(t);
    t.trim().to_string()
}
