//! Comma-separated report tables and the machine-readable run summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, AccuracyTable};
use super::{Method, MethodResult};

fn fmt_value(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

/// `method,<category>...,overall`, one row per method.
pub fn accuracy_csv(table: &AccuracyTable) -> String {
    let mut out = String::from("method");
    for c in &table.categories {
        out.push(',');
        out.push_str(c);
    }
    out.push_str(",overall\n");
    for row in &table.rows {
        out.push_str(&row.method);
        for c in &table.categories {
            out.push(',');
            out.push_str(&row.by_category.get(c).map_or(String::new(), |t| fmt_value(t.accuracy())));
        }
        out.push(',');
        out.push_str(&fmt_value(row.overall.accuracy()));
        out.push('\n');
    }
    out
}

/// Mean of each free-form metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeformRow {
    pub method: String,
    pub frames_per_stream: usize,
    pub items: usize,
    /// Metric name to `(mean, items with the metric)`.
    pub metrics: BTreeMap<String, (f64, usize)>,
}

pub const FREEFORM_METRICS: [&str; 4] = ["rouge_l", "sts", "sts_x100", "judge"];

/// Per-method means over description results.
pub fn freeform_rows(results: &[MethodResult], frames_per_stream: usize) -> Vec<FreeformRow> {
    let mut rows: Vec<FreeformRow> = Vec::new();
    let mut sums: Vec<BTreeMap<String, (f64, usize)>> = Vec::new();
    for r in results.iter().filter(|r| r.task == super::Task::Description) {
        let idx = match rows.iter().position(|x| x.method == r.method) {
            Some(i) => i,
            None => {
                rows.push(FreeformRow {
                    method: r.method.clone(),
                    frames_per_stream,
                    items: 0,
                    metrics: BTreeMap::new(),
                });
                sums.push(BTreeMap::new());
                rows.len() - 1
            }
        };
        rows[idx].items += 1;
        for m in FREEFORM_METRICS {
            if let Some(v) = r.scores.get(m) {
                let e = sums[idx].entry(m.to_string()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    for (row, s) in rows.iter_mut().zip(sums) {
        row.metrics = s.into_iter().map(|(k, (sum, n))| (k, (sum / n as f64, n))).collect();
    }
    rows
}

/// `method,frames,rouge_l,sts,sts_x100,judge,items`; blank where unavailable.
pub fn freeform_csv(rows: &[FreeformRow]) -> String {
    let mut out = String::from("method,frames,rouge_l,sts,sts_x100,judge,items\n");
    for row in rows {
        out.push_str(&format!("{},{}", row.method, row.frames_per_stream));
        for m in FREEFORM_METRICS {
            out.push(',');
            out.push_str(&row.metrics.get(m).map_or(String::new(), |(v, _)| fmt_value(*v)));
        }
        out.push_str(&format!(",{}\n", row.items));
    }
    out
}

/// `method,streams,frames_per_stream,accuracy,correct,total`: accuracy
/// against stream count, for sweeps over `vps:J`.
pub fn sweep_csv(table: &AccuracyTable, frames_per_stream: usize) -> String {
    let mut out = String::from("method,streams,frames_per_stream,accuracy,correct,total\n");
    for row in &table.rows {
        let streams = row.method.parse::<Method>().map_or(0, |m| m.streams());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.method,
            streams,
            frames_per_stream,
            fmt_value(row.overall.accuracy()),
            row.overall.correct,
            row.overall.total
        ));
    }
    out
}

pub fn results_jsonl(results: &[MethodResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("results serialize"));
        out.push('\n');
    }
    out
}

/// Backend calls and emitted tokens per method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAudit {
    pub items: usize,
    pub calls: usize,
    pub tokens: usize,
}

pub fn call_audit(results: &[MethodResult]) -> BTreeMap<String, CallAudit> {
    let mut out: BTreeMap<String, CallAudit> = BTreeMap::new();
    for r in results {
        let a = out.entry(r.method.clone()).or_default();
        a.items += 1;
        a.calls += r.calls;
        a.tokens += r.tokens;
    }
    out
}

/// Everything a downstream plotting step needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub items: usize,
    pub methods: Vec<String>,
    pub frames_per_stream: usize,
    pub strategy: String,
    pub seed: u64,
    pub accuracy: AccuracyTable,
    pub freeform: Vec<FreeformRow>,
    pub calls: BTreeMap<String, CallAudit>,
    /// Metric-unavailability counts per method.
    pub unavailable: BTreeMap<String, usize>,
    /// Set when the run stopped early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunSummary {
    pub fn build(
        results: &[MethodResult],
        items: usize,
        methods: &[Method],
        frames_per_stream: usize,
        strategy: &str,
        seed: u64,
    ) -> Self {
        let mut unavailable = BTreeMap::new();
        for r in results.iter().filter(|r| !r.unavailable.is_empty()) {
            *unavailable.entry(r.method.clone()).or_default() += r.unavailable.len();
        }
        Self {
            items,
            methods: methods.iter().map(ToString::to_string).collect(),
            frames_per_stream,
            strategy: strategy.to_string(),
            seed,
            accuracy: accuracy(results),
            freeform: freeform_rows(results, frames_per_stream),
            calls: call_audit(results),
            unavailable,
            error: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Task;

    fn res(method: &str, task: Task, cat: &str, correct: Option<bool>, scores: &[(&str, f64)]) -> MethodResult {
        MethodResult {
            item_id: "i".into(),
            method: method.into(),
            task,
            category: cat.into(),
            raw_output: String::new(),
            extracted: Some("A".into()),
            correct,
            scores: scores.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            unavailable: vec![],
            calls: 2,
            tokens: 1,
            traces: vec![],
        }
    }

    #[test]
    fn accuracy_table_layout() {
        let rs = vec![
            res("baseline", Task::MultipleChoice, "long", Some(false), &[]),
            res("baseline", Task::MultipleChoice, "short", Some(true), &[]),
            res("vps(4)", Task::MultipleChoice, "short", Some(true), &[]),
        ];
        let csv = accuracy_csv(&accuracy(&rs));
        assert_eq!(
            csv,
            "method,long,short,overall\nbaseline,0.000000,1.000000,0.500000\nvps(4),,1.000000,1.000000\n"
        );
        let sweep = sweep_csv(&accuracy(&rs), 4);
        assert!(sweep.contains("vps(4),4,4,1.000000,1,1"));
    }

    #[test]
    fn freeform_means_skip_missing() {
        let rs = vec![
            res("vps(2)", Task::Description, "mix", None, &[("rouge_l", 0.5), ("judge", 4.0)]),
            res("vps(2)", Task::Description, "mix", None, &[("rouge_l", 1.0)]),
        ];
        let rows = freeform_rows(&rs, 8);
        assert_eq!(rows[0].metrics["rouge_l"], (0.75, 2));
        assert_eq!(rows[0].metrics["judge"], (4.0, 1));
        let csv = freeform_csv(&rows);
        assert_eq!(csv.lines().nth(1).unwrap(), "vps(2),8,0.750000,,,4.000000,2");
    }
}
