//! Gold dataset loading.
//!
//! The canonical file is either a JSON array of records (each optionally carrying a
//! `"split"` field, defaulting to dev) or an object keyed by split name whose values
//! are arrays of records or objects mapping record id to record. Upstream releases
//! with other field names are read through a [`FieldMapping`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HarnessError;
use crate::metrics::{EvalExample, GoldDisambiguation};
use crate::rank::{Exemplar, ExemplarPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "dev" | "validation" | "val" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Source field names for each canonical field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub id: String,
    pub split: String,
    pub aq: String,
    pub gold_disambiguations: String,
    pub dq: String,
    pub answers: String,
    pub gold_long_answers: String,
    /// Field read when a long-answer entry is an object rather than a string.
    pub long_answer: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            id: "id".into(),
            split: "split".into(),
            aq: "aq".into(),
            gold_disambiguations: "gold_disambiguations".into(),
            dq: "dq".into(),
            answers: "answers".into(),
            gold_long_answers: "gold_long_answers".into(),
            long_answer: "long_answer".into(),
        }
    }
}

impl FieldMapping {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<EvalExample>,
    pub dev: Vec<EvalExample>,
    pub test: Vec<EvalExample>,
}

impl Dataset {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }

    /// Dev then test examples.
    pub fn eval_examples(&self) -> Vec<EvalExample> {
        self.dev.iter().chain(&self.test).cloned().collect()
    }

    pub fn split(&self, split: Split) -> &[EvalExample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Train records as few-shot exemplars, using the first reference as the long answer.
    pub fn exemplars(&self) -> Vec<Exemplar> {
        self.train
            .iter()
            .map(|e| Exemplar {
                question: e.aq.clone(),
                disambiguations: e
                    .gold_disambiguations
                    .iter()
                    .map(|d| ExemplarPair {
                        dq: d.dq.clone(),
                        answers: d.answers.clone(),
                    })
                    .collect(),
                long_answer: e.gold_long_answers.first().cloned().unwrap_or_default(),
            })
            .collect()
    }

    fn push(&mut self, split: Split, e: EvalExample) {
        match split {
            Split::Train => self.train.push(e),
            Split::Dev => self.dev.push(e),
            Split::Test => self.test.push(e),
        }
    }
}

struct RecordCtx<'a> {
    split: Split,
    index: usize,
    map: &'a FieldMapping,
}

impl RecordCtx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> HarnessError {
        HarnessError::Schema {
            split: self.split.to_string(),
            index: self.index,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn string(&self, obj: &Value, field: &str) -> Result<String, HarnessError> {
        match obj.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.err(field, "expected a string")),
            None => Err(self.err(field, "missing field")),
        }
    }

    fn strings(&self, v: &Value, field: &str) -> Result<Vec<String>, HarnessError> {
        match v {
            Value::String(s) => Ok(vec![s.clone()]),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => Ok(s.clone()),
                    Value::Object(_) => self.string(i, &self.map.long_answer),
                    _ => Err(self.err(field, "expected strings")),
                })
                .collect(),
            _ => Err(self.err(field, "expected a list of strings")),
        }
    }

    fn parse(&self, record: &Value, key_id: Option<&str>) -> Result<EvalExample, HarnessError> {
        let m = self.map;
        if !record.is_object() {
            return Err(self.err("<record>", "expected an object"));
        }
        let id = match record.get(&m.id) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => key_id
                .map(str::to_string)
                .unwrap_or_else(|| format!("{}-{:05}", self.split, self.index)),
        };
        let aq = self.string(record, &m.aq)?;
        let pairs = match record.get(&m.gold_disambiguations) {
            Some(Value::Array(a)) => a,
            Some(_) => return Err(self.err(&m.gold_disambiguations, "expected an array")),
            None => return Err(self.err(&m.gold_disambiguations, "missing field")),
        };
        let mut gold = Vec::with_capacity(pairs.len());
        for p in pairs {
            let dq = self.string(p, &m.dq).map_err(|_| self.err(&m.dq, "missing or non-string dq"))?;
            let answers = match p.get(&m.answers) {
                Some(v) => self.strings(v, &m.answers)?,
                None => return Err(self.err(&m.answers, "missing field")),
            };
            gold.push(GoldDisambiguation { dq, answers });
        }
        let long = match record.get(&m.gold_long_answers) {
            Some(v) => self.strings(v, &m.gold_long_answers)?,
            None => return Err(self.err(&m.gold_long_answers, "missing field")),
        };
        let example = EvalExample {
            id,
            aq,
            gold_disambiguations: gold,
            gold_long_answers: long,
        };
        match example.validate() {
            Ok(()) => Ok(example),
            // train records only feed exemplars, which need a single reference
            Err(("gold_long_answers", _)) if self.split == Split::Train && !example.gold_long_answers.is_empty() => {
                Ok(example)
            }
            Err((field, msg)) => Err(self.err(
                if field == "gold_long_answers" {
                    &m.gold_long_answers
                } else if field == "gold_disambiguations" {
                    &m.gold_disambiguations
                } else {
                    &m.aq
                },
                msg,
            )),
        }
    }
}

fn records_of(v: &Value) -> Result<Vec<(Option<String>, &Value)>, String> {
    match v {
        Value::Array(a) => Ok(a.iter().map(|r| (None, r)).collect()),
        Value::Object(o) => {
            let sorted: BTreeMap<&String, &Value> = o.iter().collect();
            Ok(sorted.into_iter().map(|(k, r)| (Some(k.clone()), r)).collect())
        }
        _ => Err("expected an array or an object of records".into()),
    }
}

/// Parses a dataset already read into memory.
pub fn parse_dataset(root: &Value, mapping: &FieldMapping) -> Result<Dataset, HarnessError> {
    let mut ds = Dataset::default();
    match root {
        Value::Array(items) => {
            let mut per_split: BTreeMap<Split, usize> = BTreeMap::new();
            for item in items {
                let split = match item.get(&mapping.split) {
                    Some(Value::String(s)) => Split::parse(s).ok_or_else(|| HarnessError::Schema {
                        split: s.clone(),
                        index: per_split.values().sum(),
                        field: mapping.split.clone(),
                        message: format!("unknown split `{s}`"),
                    })?,
                    _ => Split::Dev,
                };
                let index = per_split.entry(split).or_default();
                let ctx = RecordCtx {
                    split,
                    index: *index,
                    map: mapping,
                };
                *index += 1;
                ds.push(split, ctx.parse(item, None)?);
            }
        }
        Value::Object(obj) => {
            for (name, value) in obj {
                let split = Split::parse(name).ok_or_else(|| HarnessError::Schema {
                    split: name.clone(),
                    index: 0,
                    field: "<split>".into(),
                    message: format!("unknown split `{name}`"),
                })?;
                let records = records_of(value).map_err(|message| HarnessError::Schema {
                    split: name.clone(),
                    index: 0,
                    field: "<split>".into(),
                    message,
                })?;
                for (index, (key, record)) in records.into_iter().enumerate() {
                    let ctx = RecordCtx {
                        split,
                        index,
                        map: mapping,
                    };
                    ds.push(split, ctx.parse(record, key.as_deref())?);
                }
            }
        }
        _ => {
            return Err(HarnessError::Schema {
                split: "-".into(),
                index: 0,
                field: "<root>".into(),
                message: "expected an array or an object keyed by split".into(),
            })
        }
    }
    Ok(ds)
}

pub fn load_dataset(path: &Path, mapping: Option<&FieldMapping>) -> Result<Dataset, HarnessError> {
    let root: Value = serde_json::from_slice(&fs::read(path)?)?;
    let default = FieldMapping::default();
    let ds = parse_dataset(&root, mapping.unwrap_or(&default))?;
    let c = ds.counts();
    tracing::info!(train = c.train, dev = c.dev, test = c.test, "dataset loaded");
    Ok(ds)
}
