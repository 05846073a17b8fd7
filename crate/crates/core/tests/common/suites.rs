//! Small scripted scenarios that drive tree construction into specific shapes.

use clarify_core::config::PipelineConfig;
use clarify_core::corpus::PassagePool;
use clarify_core::llm::{LlmSession, ScriptRule, ScriptedBackend};
use clarify_core::rank::HashedCosineScorer;
use clarify_core::tree::{build_tree, ClarificationTree, Services};

use super::{clarify_rule, dq_block, pool, verdict_rule};

pub const NATO: [&str; 12] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett", "kilo", "lima",
];

pub struct Suite {
    pub name: &'static str,
    pub aq: String,
    pub pool: PassagePool,
    pub backend: ScriptedBackend,
    pub config: PipelineConfig,
}

impl Suite {
    pub fn build(&self) -> (ClarificationTree, u32) {
        let session = LlmSession::new(&self.backend, self.config.call_cap, self.config.generation());
        let services = Services {
            llm: &session,
            scorer: &HashedCosineScorer,
            exemplars: &[],
        };
        let tree = build_tree(&self.aq, &self.pool, &self.config, &services).unwrap();
        (tree, session.budget().spent())
    }
}

fn nato_pool(aq: &str) -> PassagePool {
    let items: Vec<(String, String)> = NATO
        .iter()
        .map(|w| (format!("Code word {w}"), format!("The code word {w} is an accepted reply to the call.")))
        .collect();
    let refs: Vec<(&str, &str)> = items.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    pool(aq, &refs)
}

fn nato_questions(n: usize) -> Vec<(String, Vec<&'static str>)> {
    NATO.iter()
        .take(n)
        .map(|w| (format!("Which code word follows the {w} signal?"), vec![*w]))
        .collect()
}

fn block(qs: &[(String, Vec<&str>)]) -> String {
    let pairs: Vec<(&str, &[&str])> = qs.iter().map(|(q, a)| (q.as_str(), a.as_slice())).collect();
    dq_block(&pairs)
}

fn always_true() -> ScriptRule {
    ScriptRule::contains("Proposed Answer:", "True")
}

fn nothing_more() -> ScriptRule {
    ScriptRule::contains("Question:", "Nothing further to clarify.")
}

/// Root yields 12 verified candidates; exploration must stop at exactly 10 valid nodes.
pub fn ten_valid() -> Suite {
    let aq = "which code word is used on the radio?".to_string();
    let backend = ScriptedBackend::new(vec![
        clarify_rule(&aq, block(&nato_questions(12))),
        always_true(),
        nothing_more(),
    ]);
    Suite {
        name: "ten-valid",
        pool: nato_pool(&aq),
        aq,
        backend,
        config: PipelineConfig::default(),
    }
}

/// Root yields 4 valid children, each of which fails to expand.
pub fn three_failures() -> Suite {
    let aq = "which code word opens the channel?".to_string();
    let backend = ScriptedBackend::new(vec![
        clarify_rule(&aq, block(&nato_questions(4))),
        always_true(),
        nothing_more(),
    ]);
    Suite {
        name: "three-failures",
        pool: nato_pool(&aq),
        aq,
        backend,
        config: PipelineConfig::default(),
    }
}

/// Enough verified candidates that the call budget runs out first.
pub fn budget() -> Suite {
    let aq = "which code word closes the channel?".to_string();
    let backend = ScriptedBackend::new(vec![
        clarify_rule(&aq, block(&nato_questions(12))),
        always_true(),
        nothing_more(),
    ]);
    let config = PipelineConfig {
        call_cap: 10,
        max_valid_nodes: 50,
        ..PipelineConfig::default()
    };
    Suite {
        name: "budget",
        pool: nato_pool(&aq),
        aq,
        backend,
        config,
    }
}

/// Duplicates, rejected verdicts and unsupported answers at two levels.
pub fn mixed() -> Suite {
    let aq = "which code word starts the drill?".to_string();
    let root = dq_block(&[
        ("Which code word follows the alpha signal?", &["alpha"]),
        ("Which code word starts the drill?", &["bravo"]),
        ("Which code word follows the charlie signal?", &["charlie"]),
        ("Which code word is never transmitted?", &["zulu"]),
        ("Which code word follows the delta signal?", &["delta"]),
    ]);
    let child = dq_block(&[
        ("Which code word follows the alpha signal?", &["alpha"]),
        ("Which code word follows the alpha signal at night?", &["echo"]),
        ("Which code word follows the alpha signal by day?", &["foxtrot"]),
    ]);
    let backend = ScriptedBackend::new(vec![
        clarify_rule(&aq, root),
        clarify_rule("Which code word follows the alpha signal?", child),
        verdict_rule("charlie", false),
        verdict_rule("foxtrot", false),
        always_true(),
        nothing_more(),
    ]);
    Suite {
        name: "mixed",
        pool: nato_pool(&aq),
        aq,
        backend,
        config: PipelineConfig::default(),
    }
}

/// Every child of the root is pruned: one duplicate, then two rejected verdicts.
pub fn all_pruned() -> Suite {
    let aq = "which code word ends the drill?".to_string();
    let root = dq_block(&[
        ("Which code word ends the drill?", &["alpha"]),
        ("Which code word ends the morning drill?", &["bravo"]),
        ("Which code word ends the evening drill?", &["charlie"]),
    ]);
    let backend = ScriptedBackend::new(vec![
        clarify_rule(&aq, root),
        ScriptRule::contains("Proposed Answer:", "False"),
        ScriptRule::ends_with(
            "Answer:",
            "Answer: The morning drill ends with the code word bravo.",
        ),
        nothing_more(),
    ]);
    Suite {
        name: "all-pruned",
        pool: nato_pool(&aq),
        aq,
        backend,
        config: PipelineConfig::default(),
    }
}

pub fn all() -> Vec<Suite> {
    vec![ten_valid(), three_failures(), budget(), mixed(), all_pruned()]
}
