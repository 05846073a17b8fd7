use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::GenerationParams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config i/o: {0}")]
    Io(String),
}

/// Every knob of the clarification pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k_shots: usize,
    pub top_k_passages: usize,
    pub max_valid_nodes: usize,
    pub max_depth: usize,
    pub failure_limit: usize,
    pub call_cap: u32,
    pub pool_cap: usize,
    pub answer_max_disambiguations: usize,
    pub answer_max_passages: usize,
    /// Passages requested from the local index per question.
    pub local_top_k: usize,
    /// Results requested from web search per question.
    pub web_top_k: usize,
    /// Whitespace-token limit used when splitting documents at ingestion.
    pub passage_tokens: usize,
    pub max_tokens: u32,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Prune candidates whose question repeats an existing node.
    pub dedup: bool,
    /// Prune candidates rejected by self-verification.
    pub verify: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_shots: 5,
            top_k_passages: 5,
            max_valid_nodes: 10,
            max_depth: 3,
            failure_limit: 3,
            call_cap: 20,
            pool_cap: 250,
            answer_max_disambiguations: 10,
            answer_max_passages: 5,
            local_top_k: 150,
            web_top_k: 100,
            passage_tokens: 120,
            max_tokens: 300,
            top_p: 1.0,
            temperature: None,
            dedup: true,
            verify: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
    })
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("k_shots", self.k_shots),
            ("top_k_passages", self.top_k_passages),
            ("max_valid_nodes", self.max_valid_nodes),
            ("max_depth", self.max_depth),
            ("failure_limit", self.failure_limit),
            ("call_cap", self.call_cap as usize),
            ("pool_cap", self.pool_cap),
            ("answer_max_disambiguations", self.answer_max_disambiguations),
            ("answer_max_passages", self.answer_max_passages),
            ("local_top_k", self.local_top_k),
            ("web_top_k", self.web_top_k),
            ("passage_tokens", self.passage_tokens),
            ("max_tokens", self.max_tokens as usize),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{k} must be positive")));
        }
        if (self.call_cap as usize) < self.max_valid_nodes {
            return Err(ConfigError::Invalid(format!(
                "call_cap {} is below max_valid_nodes {}",
                self.call_cap, self.max_valid_nodes
            )));
        }
        let limits = [
            ("k_shots", self.k_shots, crate::prompts::MAX_PROMPT_EXEMPLARS),
            ("top_k_passages", self.top_k_passages, crate::prompts::MAX_PROMPT_PASSAGES),
            ("answer_max_passages", self.answer_max_passages, crate::prompts::MAX_PROMPT_PASSAGES),
            (
                "answer_max_disambiguations",
                self.answer_max_disambiguations,
                crate::prompts::MAX_PROMPT_DISAMBIGUATIONS,
            ),
        ];
        for (k, v, max) in limits {
            if v > max {
                return Err(ConfigError::Invalid(format!("{k} {v} exceeds {max}")));
            }
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ConfigError::Invalid(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }

    pub fn generation(&self) -> GenerationParams {
        GenerationParams {
            max_tokens: self.max_tokens,
            top_p: self.top_p,
            temperature: self.temperature,
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bool_val = || match value {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(ConfigError::InvalidValue {
                key: key.into(),
                value: value.into(),
            }),
        };
        match key {
            "k_shots" => self.k_shots = parse_num(key, value)?,
            "top_k_passages" => self.top_k_passages = parse_num(key, value)?,
            "max_valid_nodes" => self.max_valid_nodes = parse_num(key, value)?,
            "max_depth" => self.max_depth = parse_num(key, value)?,
            "failure_limit" => self.failure_limit = parse_num(key, value)?,
            "call_cap" => self.call_cap = parse_num(key, value)?,
            "pool_cap" => self.pool_cap = parse_num(key, value)?,
            "answer_max_disambiguations" => self.answer_max_disambiguations = parse_num(key, value)?,
            "answer_max_passages" => self.answer_max_passages = parse_num(key, value)?,
            "local_top_k" => self.local_top_k = parse_num(key, value)?,
            "web_top_k" => self.web_top_k = parse_num(key, value)?,
            "passage_tokens" => self.passage_tokens = parse_num(key, value)?,
            "max_tokens" => self.max_tokens = parse_num(key, value)?,
            "top_p" => self.top_p = parse_num(key, value)?,
            "temperature" => {
                self.temperature = match value {
                    "" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "dedup" => self.dedup = bool_val()?,
            "verify" => self.verify = bool_val()?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey(_) | ConfigError::InvalidValue { .. } => ConfigError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the same `key = value` format `apply_str` reads.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("k_shots", self.k_shots.to_string());
        line("top_k_passages", self.top_k_passages.to_string());
        line("max_valid_nodes", self.max_valid_nodes.to_string());
        line("max_depth", self.max_depth.to_string());
        line("failure_limit", self.failure_limit.to_string());
        line("call_cap", self.call_cap.to_string());
        line("pool_cap", self.pool_cap.to_string());
        line("answer_max_disambiguations", self.answer_max_disambiguations.to_string());
        line("answer_max_passages", self.answer_max_passages.to_string());
        line("local_top_k", self.local_top_k.to_string());
        line("web_top_k", self.web_top_k.to_string());
        line("passage_tokens", self.passage_tokens.to_string());
        line("max_tokens", self.max_tokens.to_string());
        line("top_p", self.top_p.to_string());
        line("temperature", self.temperature.map_or("none".into(), |t| t.to_string()));
        line("dedup", self.dedup.to_string());
        line("verify", self.verify.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k_shots, c.top_k_passages, c.max_valid_nodes), (5, 5, 10));
        assert_eq!((c.failure_limit, c.call_cap, c.pool_cap), (3, 20, 250));
        assert_eq!((c.max_tokens, c.top_p), (300, 1.0));
    }

    #[test]
    fn file_format_round_trips() {
        let mut c = PipelineConfig::default();
        c.apply_str("# tuned\nmax_depth = 2\nverify = false  # ablation\ntemperature = 0.7\n").unwrap();
        assert_eq!(c.max_depth, 2);
        assert!(!c.verify);
        assert_eq!(c.temperature, Some(0.7));
        let mut back = PipelineConfig::default();
        back.apply_str(&c.to_config_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let mut c = PipelineConfig::default();
        assert!(matches!(c.apply_str("max_depth = 2\nnonsense\n"), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(c.apply_str("colour = red"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(c.apply_str("max_depth = -1"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn invariants_enforced() {
        let c = PipelineConfig { call_cap: 5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { max_depth: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { top_k_passages: 6, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
