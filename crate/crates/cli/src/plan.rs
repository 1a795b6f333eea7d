use std::path::PathBuf;

use clap::Args;
use vps_core::eval::Strategy;
use vps_core::frame_selection::{
    bolt_plan, dense_chunk_plan, uniform_offset_plan, validate_plan, BoltConfig, FrameSelectionPlan, PlanError,
};

use crate::{read_input, usage, write_output, CliResult};

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Frames in the video. Taken from the scores file for bolt when omitted.
    #[arg(long = "T")]
    total_frames: Option<usize>,
    /// Frames per stream.
    #[arg(long = "k")]
    frames: usize,
    /// Number of streams.
    #[arg(long = "J", default_value_t = 1)]
    streams: usize,
    #[arg(long, default_value = "uniform")]
    strategy: Strategy,
    /// Per-frame relevance scores for bolt: numbers separated by commas or whitespace.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the plan text to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn parse_scores(text: &str) -> CliResult<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("bad score `{s}`"))))
        .collect()
}

fn build(a: &PlanArgs) -> CliResult<FrameSelectionPlan> {
    let plan_err = |e: PlanError| usage(e.to_string());
    match a.strategy {
        Strategy::Uniform | Strategy::Dense => {
            let t = a
                .total_frames
                .ok_or_else(|| usage(format!("--T is required for the {} strategy", a.strategy)))?;
            let f = if a.strategy == Strategy::Uniform {
                uniform_offset_plan
            } else {
                dense_chunk_plan
            };
            f(t, a.frames, a.streams).map_err(plan_err)
        }
        Strategy::Bolt => {
            let path = a.scores.as_ref().ok_or_else(|| usage("--scores is required for bolt"))?;
            let scores = parse_scores(&read_input(path)?)?;
            if let Some(t) = a.total_frames.filter(|&t| t != scores.len()) {
                return Err(usage(format!("--T {t} but the scores file has {} entries", scores.len())));
            }
            bolt_plan(&BoltConfig::new(scores), a.frames, a.streams, a.seed).map_err(plan_err)
        }
    }
}

pub fn cmd_plan(a: PlanArgs) -> CliResult {
    let plan = build(&a)?;
    let text = plan.to_text();
    if let Some(out) = &a.out {
        write_output(out, &text)?;
    }
    print!("{text}");
    match validate_plan(&plan, true) {
        Ok(()) => println!("# audit: {} streams, pairwise disjoint", plan.streams()),
        Err(v) => println!("# audit: {v}"),
    }
    Ok(())
}
