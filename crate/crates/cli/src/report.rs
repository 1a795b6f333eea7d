use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use vps_core::eval::report::{accuracy_csv, freeform_csv, results_jsonl, sweep_csv, RunSummary};
use vps_core::eval::{Method, MethodResult};

use crate::{read_input, runtime, usage, write_output, CliResult};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// results.jsonl from a previous run.
    #[arg(long)]
    results: PathBuf,
    /// Output directory for the rebuilt tables.
    #[arg(long)]
    out: PathBuf,
    /// Frames per stream. Defaults to the summary.json next to the results.
    #[arg(long, short = 'k')]
    frames: Option<usize>,
}

/// Writes results.jsonl, accuracy.csv, freeform.csv, sweep.csv, summary.json
/// and, when asked, traces.jsonl.
pub fn write_reports(dir: &Path, results: &[MethodResult], summary: &RunSummary, traces: bool) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_output(&dir.join("results.jsonl"), &results_jsonl(results))?;
    write_output(&dir.join("accuracy.csv"), &accuracy_csv(&summary.accuracy))?;
    write_output(&dir.join("freeform.csv"), &freeform_csv(&summary.freeform))?;
    write_output(
        &dir.join("sweep.csv"),
        &sweep_csv(&summary.accuracy, summary.frames_per_stream),
    )?;
    let mut json = serde_json::to_string_pretty(summary).map_err(|e| runtime(e.to_string()))?;
    json.push('\n');
    write_output(&dir.join("summary.json"), &json)?;
    if traces {
        let mut out = String::new();
        for r in results {
            for (d, trace) in r.traces.iter().enumerate() {
                for record in &trace.records {
                    let line = json!({ "item_id": r.item_id, "method": r.method, "decode": d, "record": record });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
        }
        write_output(&dir.join("traces.jsonl"), &out)?;
    }
    Ok(())
}

fn parse_results(path: &Path, text: &str) -> CliResult<Vec<MethodResult>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| usage(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

pub fn cmd_report(a: ReportArgs) -> CliResult {
    let results = parse_results(&a.results, &read_input(&a.results)?)?;
    // run metadata comes from the neighbouring summary when present
    let previous: Option<RunSummary> = a
        .results
        .parent()
        .map(|d| d.join("summary.json"))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str(&t).ok());
    let mut methods: Vec<Method> = Vec::new();
    for r in &results {
        let m: Method = r.method.parse().map_err(usage)?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let mut items: Vec<&str> = results.iter().map(|r| r.item_id.as_str()).collect();
    items.sort_unstable();
    items.dedup();
    let frames = a
        .frames
        .or(previous.as_ref().map(|s| s.frames_per_stream))
        .ok_or_else(|| usage("--frames is required without a summary.json next to the results"))?;
    let (strategy, seed) = previous
        .as_ref()
        .map_or(("unknown".to_string(), 0), |s| (s.strategy.clone(), s.seed));
    let mut summary = RunSummary::build(&results, items.len(), &methods, frames, &strategy, seed);
    summary.error = previous.and_then(|s| s.error);
    write_reports(&a.out, &results, &summary, false)?;
    print!("{}", accuracy_csv(&summary.accuracy));
    Ok(())
}
