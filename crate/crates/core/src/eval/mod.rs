//! Benchmark harness: datasets, prompt scaffolds, answer extraction,
//! self-consistency voting, metrics and report tables.

pub mod clients;
pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod prompt;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, write_dataset, DatasetError};
pub use harness::{evaluate_item, run_eval, self_consistency, HarnessConfig, RunFailure, Strategy};
pub use metrics::{accuracy, rouge_l, AccuracyTable};
pub use prompt::{build_prompt, extract_answer, majority_vote};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MultipleChoice,
    Binary,
    Description,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::MultipleChoice => "multiple_choice",
            Task::Binary => "binary",
            Task::Description => "description",
        })
    }
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalItem {
    pub id: String,
    pub video_ref: String,
    pub total_frames: usize,
    pub task: Task,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    /// Answer letter, `yes`/`no`, or a reference caption.
    pub reference: String,
    pub category: String,
}

pub const MAX_OPTIONS: usize = 4;

impl EvalItem {
    /// The first violated rule as `(field, message)`.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.id.trim().is_empty() {
            return Err(("id", "must not be empty".into()));
        }
        if self.video_ref.trim().is_empty() {
            return Err(("video_ref", "must not be empty".into()));
        }
        if self.total_frames == 0 {
            return Err(("total_frames", "must be at least 1".into()));
        }
        if self.task != Task::Description && self.question.trim().is_empty() {
            return Err(("question", "must not be empty".into()));
        }
        match (self.task, &self.options) {
            (Task::MultipleChoice, None) => {
                return Err(("options", "required for multiple_choice".into()));
            }
            (Task::MultipleChoice, Some(opts)) if !(2..=MAX_OPTIONS).contains(&opts.len()) => {
                return Err(("options", format!("needs 2 to {MAX_OPTIONS} entries, got {}", opts.len())));
            }
            (Task::Binary | Task::Description, Some(_)) => {
                return Err(("options", format!("only allowed for multiple_choice, task is {}", self.task)));
            }
            _ => {}
        }
        match self.task {
            Task::MultipleChoice => {
                let n = self.options.as_ref().map_or(0, Vec::len);
                let letters: Vec<String> = (0..n).map(|i| option_letter(i).to_string()).collect();
                if !letters.contains(&self.reference) {
                    return Err(("reference", format!("`{}` is not one of {}", self.reference, letters.join(", "))));
                }
            }
            Task::Binary => {
                if self.reference != "yes" && self.reference != "no" {
                    return Err(("reference", format!("`{}` must be `yes` or `no`", self.reference)));
                }
            }
            Task::Description => {
                if self.reference.trim().is_empty() {
                    return Err(("reference", "caption must not be empty".into()));
                }
            }
        }
        Ok(())
    }
}

pub fn option_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// The decoding method a result was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Baseline,
    Vps(usize),
    SelfConsistency(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Method {
    pub kind: MethodKind,
    #[serde(default)]
    pub tcd: bool,
    #[serde(default)]
    pub ritual: bool,
}

impl Method {
    pub fn baseline() -> Self {
        Self {
            kind: MethodKind::Baseline,
            tcd: false,
            ritual: false,
        }
    }

    pub fn vps(streams: usize) -> Self {
        Self {
            kind: MethodKind::Vps(streams),
            ..Self::baseline()
        }
    }

    pub fn self_consistency(streams: usize) -> Self {
        Self {
            kind: MethodKind::SelfConsistency(streams),
            ..Self::baseline()
        }
    }

    pub fn streams(&self) -> usize {
        match self.kind {
            MethodKind::Baseline => 1,
            MethodKind::Vps(j) | MethodKind::SelfConsistency(j) => j,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MethodKind::Baseline => f.write_str("baseline")?,
            MethodKind::Vps(j) => write!(f, "vps({j})")?,
            MethodKind::SelfConsistency(j) => write!(f, "self_consistency({j})")?,
        }
        if self.tcd {
            f.write_str("+tcd")?;
        }
        if self.ritual {
            f.write_str("+ritual")?;
        }
        Ok(())
    }
}

/// Accepts `baseline`, `vps:J`, `sc:J` (or `self_consistency:J`), the display
/// forms `vps(J)` / `self_consistency(J)`, and `+tcd` / `+ritual` suffixes.
impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.trim().split('+');
        let head = parts.next().unwrap_or("").trim();
        let count = |rest: &str| -> Result<usize, String> {
            let j: usize = rest
                .trim_start_matches([':', '('])
                .trim_end_matches(')')
                .parse()
                .map_err(|_| format!("bad stream count in `{s}`"))?;
            if j == 0 {
                return Err(format!("stream count must be at least 1 in `{s}`"));
            }
            Ok(j)
        };
        let kind = if head == "baseline" {
            MethodKind::Baseline
        } else if let Some(rest) = head.strip_prefix("vps") {
            MethodKind::Vps(count(rest)?)
        } else if let Some(rest) = head
            .strip_prefix("self_consistency")
            .or_else(|| head.strip_prefix("sc"))
        {
            MethodKind::SelfConsistency(count(rest)?)
        } else {
            return Err(format!("unknown method `{head}`"));
        };
        let mut m = Method {
            kind,
            tcd: false,
            ritual: false,
        };
        for flag in parts {
            match flag.trim() {
                "tcd" => m.tcd = true,
                "ritual" => m.ritual = true,
                other => return Err(format!("unknown modifier `+{other}`")),
            }
        }
        if matches!(m.kind, MethodKind::SelfConsistency(_)) && (m.tcd || m.ritual) {
            return Err("self-consistency takes no modifiers".into());
        }
        Ok(m)
    }
}

/// The outcome of one method on one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub item_id: String,
    pub method: String,
    pub task: Task,
    pub category: String,
    pub raw_output: String,
    /// `None` when nothing well-formed could be extracted.
    pub extracted: Option<String>,
    /// Choice and binary tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    /// Metrics that could not be computed for this item.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unavailable: Vec<String>,
    /// Backend calls spent on this item.
    pub calls: usize,
    /// Tokens emitted (summed over independent decodes).
    pub tokens: usize,
    /// Decode traces, kept only when the harness is asked to.
    #[serde(skip)]
    pub traces: Vec<crate::decode::DecodeTrace>,
}
